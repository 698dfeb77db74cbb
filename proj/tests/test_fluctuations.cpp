#include <doctest.h>

#include "kerrcool/errors.hpp"
#include "kerrcool/fluctuations.hpp"
#include "oracles.hpp"

#include <cmath>
#include <random>

using namespace kerrcool;

namespace {

SystemParams cold_device()
{
  auto p = reference_device();
  p.mech.n_thermal = thermal_occupation(0.040, p.mech.omega_m);
  return p;
}

oracle::LinearOptomech as_oracle(const LinearizedParams& l)
{
  return {l.delta_tilde, l.lambda, l.g_mag, l.kappa, l.omega_m, l.gamma_m, l.n_thermal, l.n_cav_thermal};
}

LinearizedParams random_lin(std::mt19937_64& rng, bool kerr)
{
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LinearizedParams l;
  l.omega_m = hz_to_rad(1e4 + 1e6 * u(rng));
  l.kappa = l.omega_m * std::pow(10.0, -1.0 + 2.5 * u(rng));
  l.gamma_m = l.omega_m * std::pow(10.0, -7.0 + 4.0 * u(rng));
  l.g_mag = l.kappa * std::pow(10.0, -3.0 + 2.5 * u(rng));
  l.delta_tilde = -l.kappa * (0.05 + 3.0 * u(rng));
  l.lambda = kerr ? -l.kappa * 0.4 * u(rng) : 0.0;
  l.lambda_mag = std::abs(l.lambda);
  l.n_thermal = std::pow(10.0, 4.0 * u(rng));
  l.n_cav_thermal = u(rng) < 0.3 ? 0.5 * u(rng) : 0.0;
  return l;
}

} // namespace

TEST_SUITE("fluctuations")
{
  TEST_CASE("linearize")
  {
    auto p = reference_device();
    p.coupling.g0 = 0.0;
    const DriveSpec d{hz_to_rad(-1e6), 1e9};
    auto l = linearize(d, 100.0, p);
    CHECK(rad_to_hz(l.lambda_mag) == doctest::Approx(1.22e6).epsilon(1e-12));
    CHECK(rad_to_hz(l.delta_tilde - d.detuning) == doctest::Approx(2.44e6).epsilon(1e-12));
    CHECK(l.lambda < 0.0);
    CHECK(l.phi == 0.0);

    p = reference_device();
    l = linearize(d, 100.0, p);
    CHECK(l.lambda_mag == doctest::Approx(std::abs(p.cavity.kerr) * l.g_mag * l.g_mag /
                                           (p.coupling.g0 * p.coupling.g0)));
    // Delta~ + Lambda is the effective detuning of the steady-state cubic.
    CHECK(l.delta_tilde + l.lambda == doctest::Approx(d.detuning - effective_kerr(p) * 100.0));

    p.cavity.kerr = 0.0;
    p.coupling.g0 = 0.0;
    l = linearize(d, 100.0, p);
    CHECK(l.delta_tilde == d.detuning);
    CHECK(l.lambda == 0.0);

    l = linearize(d, 0.0, reference_device());
    CHECK(l.g_mag == 0.0);
    CHECK(l.lambda == 0.0);
    CHECK(l.delta_tilde == d.detuning);
  }

  TEST_CASE("cavity susceptibility")
  {
    LinearizedParams l;
    l.kappa = 3.0;
    l.delta_tilde = -7.0;
    const cplx x = cavity_susceptibility(7.0, l);
    CHECK(x.real() == doctest::Approx(2.0 / 3.0));
    CHECK(x.imag() == doctest::Approx(0.0));
    CHECK(std::norm(cavity_susceptibility(7.0 + 1.5, l)) == doctest::Approx(0.5 * std::norm(x)));
    CHECK(std::abs(cavity_susceptibility(1e15, l)) < 1e-14);
  }

  TEST_CASE("self energy special cases")
  {
    LinearizedParams l;
    l.kappa = 2.0;
    l.omega_m = 1.0;
    l.delta_tilde = -1.3;
    l.lambda = 0.4;
    CHECK(self_energy(0.7, l) == cplx(0.0, 0.0));
    l.g_mag = 0.2;
    l.delta_tilde = -0.4;
    CHECK(std::abs(self_energy(0.7, l)) == 0.0);

    // X~^{-1}(0) = kappa^2/4 + delta^2 - lambda^2 vanishes for lambda^2 = 1 + delta^2.
    l.delta_tilde = 0.0;
    l.lambda = 1.0;
    CHECK_THROWS_AS(self_energy(0.0, l), NumericalError);
  }

  TEST_CASE("linear self energy matches the textbook rates")
  {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 200; ++i) {
      const auto l = random_lin(rng, false);
      const auto r = mechanical_response(l);
      const double g = oracle::textbook_damping(l.g_mag, l.delta_tilde, l.kappa, l.omega_m);
      const double s = oracle::textbook_spring(l.g_mag, l.delta_tilde, l.kappa, l.omega_m);
      CHECK(r.gamma_opt == doctest::Approx(g).epsilon(1e-10));
      CHECK(r.delta_omega == doctest::Approx(s).epsilon(1e-10));
      // sign law at K = 0
      CHECK(r.gamma_opt > 0.0);
    }
  }

  TEST_CASE("resolved-sideband limit")
  {
    LinearizedParams l;
    l.omega_m = 1e7;
    l.kappa = 1e4;
    l.gamma_m = 1.0;
    l.g_mag = 10.0;
    l.delta_tilde = -l.omega_m;
    const auto r = mechanical_response(l);
    CHECK(r.gamma_opt == doctest::Approx(4.0 * l.g_mag * l.g_mag / l.kappa).epsilon(1e-5));
    l.delta_tilde = 0.0;
    CHECK(mechanical_response(l).gamma_opt == 0.0);
  }

  TEST_CASE("self-consistent evaluation differs only at second order")
  {
    LinearizedParams l = linearize_effective(hz_to_rad(-1.5e6), 5e5, cold_device());
    const auto a = mechanical_response(l, SigmaEvaluation::BareFrequency);
    const auto b = mechanical_response(l, SigmaEvaluation::SelfConsistent);
    CHECK(b.gamma_opt == doctest::Approx(a.gamma_opt).epsilon(1e-2));
    CHECK(b.omega_eff == doctest::Approx(a.omega_eff).epsilon(1e-6));
  }

  TEST_CASE("Kerr sign flip mirrors the damping")
  {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 50; ++i) {
      auto l = random_lin(rng, true);
      l.delta_tilde = -l.delta_tilde * (i % 2 == 0 ? 1.0 : -1.0);
      auto m = l;
      m.lambda = -l.lambda;
      m.delta_tilde = -l.delta_tilde;
      const cplx a = self_energy(l.omega_m, l);
      const cplx b = self_energy(l.omega_m, m);
      CHECK(b.real() == doctest::Approx(-a.real()).epsilon(1e-12));
      CHECK(b.imag() == doctest::Approx(-a.imag()).epsilon(1e-12));
    }
  }

  TEST_CASE("uncoupled oscillator stays thermal")
  {
    auto l = linearize_effective(-1e6, 0.0, cold_device());
    CHECK(phonon_occupation(l) == l.n_thermal);
    // tiny but nonzero coupling goes through the quadrature
    l.g_mag = 1e-6;
    CHECK(phonon_occupation(l) == doctest::Approx(l.n_thermal).epsilon(1e-9));
  }

  TEST_CASE("occupation matches the covariance oracle")
  {
    std::mt19937_64 rng(3);
    int checked = 0;
    for (int i = 0; i < 300; ++i) {
      const bool kerr = i % 2 == 1;
      const auto l = random_lin(rng, kerr);
      const auto o = as_oracle(l);
      if (oracle::max_growth_rate(o) >= 0.0 || mechanical_response(l).unstable) {
        CHECK_THROWS_AS(phonon_occupation(l), InstabilityError);
        continue;
      }
      CHECK(phonon_occupation(l) == doctest::Approx(oracle::lyapunov_occupation(o)).epsilon(1e-8));
      ++checked;
    }
    CHECK(checked > 200);
  }

  TEST_CASE("frozen occupations")
  {
    // Covariance-oracle values at the 40 mK device with |G|/2pi = 117.4 kHz.
    auto p = cold_device();
    p.cavity.kerr = 0.0;
    const double G = hz_to_rad(166e3);
    const double nc = 0.5 * G * G / (p.coupling.g0 * p.coupling.g0);
    CHECK(phonon_occupation(linearize_effective(hz_to_rad(-1.5e6), nc, p)) ==
          doctest::Approx(3.30332869335).epsilon(1e-10));
    CHECK(phonon_occupation(linearize_effective(hz_to_rad(-3e6), nc, p)) ==
          doctest::Approx(4.38805919527).epsilon(1e-10));
  }

  TEST_CASE("weak-coupling rate equation")
  {
    auto p = cold_device();
    p.cavity.kerr = 0.0;
    for (double f : {-3e6, -1.5e6, -0.5e6}) {
      const auto l = linearize_effective(hz_to_rad(f), 50.0, p);
      const double ref = oracle::rate_equation_occupation(l.g_mag, l.delta_tilde, l.kappa, l.omega_m,
                                                          l.gamma_m, l.n_thermal);
      CHECK(phonon_occupation(l) == doctest::Approx(ref).epsilon(1e-2));
    }
  }

  TEST_CASE("backaction floor")
  {
    auto p = cold_device();
    p.cavity.kerr = 0.0;
    p.mech.n_thermal = 0.0;
    // Zero bath, |G| << kappa and optical damping far above gamma_m: the occupation is the
    // backaction occupation, minimized at Delta^2 = kappa^2/4 + omega_m^2.
    const double nc = std::pow(20e3 / 201.0, 2);
    double best = 1e9;
    for (double f = -2.5e6; f <= -0.8e6; f += 0.01e6) {
      best = std::min(best, phonon_occupation(linearize_effective(hz_to_rad(f), nc, p)));
    }
    const double k = p.cavity.kappa;
    const double w = p.mech.omega_m;
    const double floor = std::sqrt(k * k / 4 + w * w) / (2 * w) - 0.5;
    CHECK(best == doctest::Approx(floor).epsilon(1e-2));
  }

  TEST_CASE("instability is reported")
  {
    auto p = cold_device();
    p.cavity.kerr = 0.0;
    auto l = linearize_effective(hz_to_rad(1e6), 5e5, p);
    CHECK(mechanical_response(l).unstable);
    CHECK_THROWS_AS(phonon_occupation(l), InstabilityError);
    CHECK_THROWS_AS(mechanical_spectrum({0.0, 1.0}, l), InstabilityError);
  }

  TEST_CASE("thermal spectrum")
  {
    const auto p = cold_device();
    const auto l = linearize_effective(-1e6, 0.0, p);
    const auto grid = spectrum_grid(l);
    const auto s = mechanical_spectrum(grid, l);
    CHECK(integrate_trace(s) == doctest::Approx(p.mech.n_thermal).epsilon(1e-3));
    const double f0 = rad_to_hz(p.mech.omega_m);
    const double half = rad_to_hz(p.mech.gamma_m) / 2.0;
    const double peak = interpolate(s, f0);
    CHECK(peak == doctest::Approx(4.0 * p.mech.n_thermal / p.mech.gamma_m).epsilon(1e-6));
    CHECK(interpolate(s, f0 + half) == doctest::Approx(0.5 * peak).epsilon(1e-3));
  }

  TEST_CASE("spectrum area equals occupation")
  {
    std::mt19937_64 rng(23);
    for (int i = 0; i < 20; ++i) {
      const auto l = random_lin(rng, i % 2 == 1);
      if (oracle::max_growth_rate(as_oracle(l)) >= 0.0 || mechanical_response(l).unstable) {
        continue;
      }
      const auto s = mechanical_spectrum(spectrum_grid(l), l);
      CHECK(integrate_trace(s) == doctest::Approx(phonon_occupation(l)).epsilon(1e-4));
    }
  }

  TEST_CASE("cooling trace at low power is antisymmetric in the damping")
  {
    auto p = cold_device();
    p.coupling.g0 = hz_to_rad(1.0);
    std::vector<double> grid;
    for (double f = -5e6; f <= 5e6; f += 0.5e6) {
      grid.push_back(hz_to_rad(f));
    }
    const auto t = cooling_trace(grid, 1e-4 * bistability_threshold(p), p);
    REQUIRE(t.size() == grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto& a = t[i];
      const auto& b = t[grid.size() - 1 - i];
      CHECK(a.gamma_opt == doctest::Approx(-b.gamma_opt).epsilon(1e-4));
      CHECK(a.delta == grid[i]);
    }
  }

  TEST_CASE("high power narrows the cooling window and pushes it red")
  {
    const auto p = cold_device();
    std::vector<double> grid;
    for (double f = -6e6; f <= 1e6; f += 10e3) {
      grid.push_back(hz_to_rad(f));
    }
    auto summary = [&](double frac) {
      const auto t = cooling_trace(grid, frac * bistability_threshold(p), p);
      double best = 1e300;
      double best_delta = 0.0;
      int cooled = 0;
      for (const auto& c : t) {
        if (std::isfinite(c.n_m) && c.n_m < p.mech.n_thermal) {
          ++cooled;
          if (c.n_m < best) {
            best = c.n_m;
            best_delta = c.delta;
          }
        }
      }
      return std::pair{cooled, best_delta};
    };
    const auto low = summary(0.05);
    const auto high = summary(0.99);
    CHECK(high.first < low.first);
    CHECK(high.second < low.second);
  }

  TEST_CASE("unstable points are flagged, not dropped")
  {
    const auto p = reference_device();
    std::vector<double> grid{hz_to_rad(-2.8e6), hz_to_rad(-2e6), hz_to_rad(-0.5e6)};
    const auto t = cooling_trace(grid, 0.99 * bistability_threshold(p), p);
    REQUIRE(t.size() == 3);
    CHECK(std::isfinite(t[0].n_m));
    CHECK(t[0].status.empty());
    CHECK(std::isnan(t[1].n_m));
    CHECK_FALSE(t[1].mech_stable);
    CHECK(t[1].gamma_eff < 0.0);
    CHECK(std::isfinite(t[2].n_m));
  }
}

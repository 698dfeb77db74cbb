#include <doctest.h>

#include "kerrcool/analysis.hpp"
#include "kerrcool/errors.hpp"
#include "kerrcool/fluctuations.hpp"
#include "oracles.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace kerrcool;
using namespace kerrcool::analysis;

namespace {

std::vector<double> span_grid(const NotchParams& p, double linewidths, std::size_t n)
{
  const double fc = rad_to_hz(p.omega_c);
  const double half = linewidths * fc / p.q_loaded;
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) {
    f[i] = fc - half + 2.0 * half * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return f;
}

SpectrumTrace lorentz_trace(double amp, double f0, double fwhm, double offset, double lo, double hi,
                            std::size_t n)
{
  SpectrumTrace s;
  DHOFitResult m;
  m.amplitude = amp;
  m.center = f0;
  m.linewidth = fwhm;
  m.offset = offset;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    s.freq.push_back(f);
    s.psd.push_back(lorentzian(f, m));
  }
  return s;
}

CalibrationScene scene()
{
  CalibrationScene sc;
  sc.cavity = reference_notch();
  sc.pump_detuning = 0.0;
  sc.pump_power = 1e-9;
  sc.g0 = hz_to_rad(201.0);
  sc.n_m = 4000.0;
  sc.omega_m = hz_to_rad(274.41e3);
  sc.gamma_m = hz_to_rad(5.0);
  sc.dev = hz_to_rad(3e3);
  sc.omega_mod = hz_to_rad(274.41e3 + 400.0);
  sc.enbw = 0.1;
  sc.noise_floor = 1e-22;
  return sc;
}

} // namespace

TEST_SUITE("analysis")
{
  TEST_CASE("ideal notch is recovered exactly")
  {
    NotchParams p;
    p.omega_c = hz_to_rad(6e9);
    p.q_loaded = 5000.0;
    p.q_coupling_abs = 8000.0;
    const auto t = synthesize_s21(span_grid(p, 6.0, 801), p, INFINITY, 1);
    const auto r = circle_fit(t);
    CHECK(r.converged);
    CHECK(r.p.q_loaded == doctest::Approx(5000.0).epsilon(1e-7));
    CHECK(r.p.q_coupling_abs == doctest::Approx(8000.0).epsilon(1e-7));
    CHECK(r.p.omega_c == doctest::Approx(p.omega_c).epsilon(1e-12));
    CHECK(r.p.a == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(std::abs(r.p.phi_0) < 1e-7);
    CHECK(std::abs(r.p.tau) < 1e-15);
    CHECK(r.rms_residual < 1e-9);
  }

  TEST_CASE("reference device round trip at 60 dB")
  {
    const auto p = reference_notch();
    const auto t = synthesize_s21(span_grid(p, 5.0, 2001), p, 60.0, 7);
    const auto r = circle_fit(t);
    CHECK(r.converged);
    CHECK(r.p.q_loaded == doctest::Approx(2349.0).epsilon(0.005));
    CHECK(r.p.q_coupling_abs == doctest::Approx(3485.0).epsilon(0.005));
    CHECK(r.p.omega_c == doctest::Approx(p.omega_c).epsilon(0.005));
    CHECK(r.q_internal == doctest::Approx(7209.0).epsilon(0.02));
    CHECK(r.p.tau == doctest::Approx(73.7e-9).epsilon(1e-3));
    CHECK(r.p.a == doctest::Approx(10.1).epsilon(1e-3));
    CHECK(std::abs(std::remainder(r.p.alpha_env + 2.33, 2.0 * M_PI)) < 0.05);
    CHECK(r.p.phi_0 == doctest::Approx(0.02).epsilon(0.5));
    CHECK(r.rms_residual == doctest::Approx(1e-3).epsilon(0.2));
  }

  TEST_CASE("quality-factor identity")
  {
    const double qi = 1.0 / (1.0 / 2349.0 - 1.0 / 3485.0);
    CHECK(qi == doctest::Approx(7206.4).epsilon(1e-4));
    CHECK(qi == doctest::Approx(7209.0).epsilon(1e-3));
  }

  TEST_CASE("randomized circle fits at 40 dB")
  {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
      NotchParams p;
      p.a = 0.1 + 20.0 * u(rng);
      p.alpha_env = -M_PI + 2.0 * M_PI * u(rng);
      p.tau = 120e-9 * u(rng);
      p.omega_c = hz_to_rad(4e9 + 4e9 * u(rng));
      p.phi_0 = -0.4 + 0.8 * u(rng);
      p.q_loaded = std::pow(10.0, 3.0 + 1.5 * u(rng));
      p.q_coupling_abs = p.q_loaded * (1.1 + 2.0 * u(rng));
      const auto t = synthesize_s21(span_grid(p, 5.0, 2001), p, 40.0, 1000 + i);
      const auto r = circle_fit(t);
      INFO("draw " << i << " Ql " << p.q_loaded << " Qc " << p.q_coupling_abs << " phi " << p.phi_0
                   << " tau " << p.tau << " a " << p.a << " -> Ql " << r.p.q_loaded << " Qc "
                   << r.p.q_coupling_abs << " phi " << r.p.phi_0 << " tau " << r.p.tau << " rms "
                   << r.rms_residual << " conv " << r.converged);
      CHECK(r.p.q_loaded == doctest::Approx(p.q_loaded).epsilon(0.01));
      CHECK(r.p.omega_c == doctest::Approx(p.omega_c).epsilon(0.01));
      CHECK(r.p.q_coupling_abs == doctest::Approx(p.q_coupling_abs).epsilon(0.02));
      CHECK(r.p.q_loaded <= std::min(r.p.q_coupling_abs, r.q_internal) * 1.02);
    }
  }

  TEST_CASE("pure noise has no resonance")
  {
    NotchParams p;
    p.omega_c = hz_to_rad(6e9);
    p.q_loaded = 5000.0;
    p.q_coupling_abs = 1e9; // no visible dip
    const auto t = synthesize_s21(span_grid(p, 5.0, 801), p, 20.0, 3);
    CHECK_THROWS_AS(circle_fit(t), FitRejected);
  }

  TEST_CASE("s21 csv round trip")
  {
    const auto p = reference_notch();
    const auto t = synthesize_s21(span_grid(p, 3.0, 50), p, 50.0, 4);
    std::stringstream ss;
    write_s21_csv(ss, t);
    const auto back = read_s21_csv(ss);
    REQUIRE(back.size() == t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      CHECK(back.freq[i] == t.freq[i]);
      CHECK(back.s21[i] == t.s21[i]);
    }
    std::istringstream bad("freq_hz,re_s21,im_s21\n1,2\n");
    CHECK_THROWS_AS(read_s21_csv(bad), DomainError);
  }

  TEST_CASE("cavity slope")
  {
    NotchParams p = reference_notch();
    p.phi_0 = 0.0;
    const auto s = cavity_slope(p, p.omega_c);
    const double d = p.q_loaded / p.q_coupling_abs;
    CHECK(std::abs(s.slope_mag) < 1e-20);
    CHECK(s.slope_phase == doctest::Approx(2.0 * p.q_loaded * d / (p.omega_c * (1.0 - d))).epsilon(1e-12));
    // finite differences away from resonance
    p.phi_0 = 0.1;
    const double w = p.omega_c * (1.0 + 0.3 / p.q_loaded);
    const double h = p.omega_c * 1e-7 / p.q_loaded;
    const auto sl = cavity_slope(p, w);
    const cplx up = notch_s21_normalized(w + h, p);
    const cplx dn = notch_s21_normalized(w - h, p);
    CHECK(sl.slope_mag == doctest::Approx((std::abs(up) - std::abs(dn)) / (2.0 * h)).epsilon(1e-6));
    CHECK(sl.slope_phase == doctest::Approx((std::arg(up) - std::arg(dn)) / (2.0 * h)).epsilon(1e-6));
  }

  TEST_CASE("noise-free Lorentzian is recovered exactly")
  {
    const auto s = lorentz_trace(3.0, 274410.0, 2.5, 0.2, 274380.0, 274440.0, 601);
    const auto r = dho_fit(s, {274380.0, 274440.0});
    CHECK(r.amplitude == doctest::Approx(3.0).epsilon(1e-8));
    CHECK(r.center == doctest::Approx(274410.0).epsilon(1e-12));
    CHECK(r.linewidth == doctest::Approx(2.5).epsilon(1e-8));
    CHECK(r.offset == doctest::Approx(0.2).epsilon(1e-7));
    CHECK(r.snr_db == doctest::Approx(10.0 * std::log10(16.0)).epsilon(1e-6));
  }

  TEST_CASE("thermal spectrum fit gives the bare mechanics")
  {
    auto p = reference_device();
    const auto l = linearize_effective(-1e6, 0.0, p);
    const auto s = mechanical_spectrum(spectrum_grid(l), l);
    const double f0 = rad_to_hz(p.mech.omega_m);
    const double w = rad_to_hz(p.mech.gamma_m);
    const auto r = dho_fit(s, {f0 - 20.0 * w, f0 + 20.0 * w});
    CHECK(r.center == doctest::Approx(f0).epsilon(1e-8));
    CHECK(r.linewidth == doctest::Approx(w).epsilon(0.01));
  }

  TEST_CASE("fit and numerical integration agree on noisy data")
  {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 1.0);
    for (double snr : {3.5, 6.0, 10.0, 20.0}) {
      const double offset = 1.0;
      const double amp = offset * (std::pow(10.0, snr / 10.0) - 1.0);
      auto s = lorentz_trace(amp, 1000.0, 4.0, offset, 900.0, 1100.0, 4001);
      for (double& v : s.psd) {
        v += 0.05 * offset * g(rng);
      }
      const auto fit = dho_fit(s, {960.0, 1040.0});
      const auto num = integrate_peak(s, {980.0, 1020.0}, {900.0, 950.0}, 4.0);
      const double ratio = lorentzian_area(fit) / num.corrected_area;
      CHECK(ratio == doctest::Approx(1.0).epsilon(0.05));
      CHECK(ratio < 1.5);
      CHECK(ratio > 1.0 / 1.5);
    }
  }

  TEST_CASE("fit rejection")
  {
    auto weak = lorentz_trace(0.5, 1000.0, 4.0, 1.0, 900.0, 1100.0, 2001);
    CHECK_THROWS_AS(dho_fit(weak, {900.0, 1100.0}), FitRejected);
    auto wide = lorentz_trace(5.0, 1000.0, 400.0, 1.0, 0.0, 4000.0, 2001);
    CHECK_THROWS_AS(dho_fit(wide, {0.0, 4000.0}), FitRejected);
    FitCriteria loose;
    loose.max_linewidth_hz = 1000.0;
    CHECK(dho_fit(wide, {0.0, 4000.0}, loose).linewidth == doctest::Approx(400.0).epsilon(1e-6));
  }

  TEST_CASE("peak integration")
  {
    SpectrumTrace flat;
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g(0.0, 0.01);
    for (int i = 0; i <= 2000; ++i) {
      flat.freq.push_back(i * 0.5);
      flat.psd.push_back(1.0 + g(rng));
    }
    const auto f = integrate_peak(flat, {400.0, 600.0}, {0.0, 300.0});
    CHECK(std::abs(f.area) < 3.0 * f.uncertainty);
    CHECK(f.floor == doctest::Approx(1.0).epsilon(1e-3));

    // unit-area Lorentzian: amplitude = 2 / (pi fwhm)
    const double fwhm = 2.0;
    const auto l = lorentz_trace(2.0 / (M_PI * fwhm), 500.0, fwhm, 0.0, 0.0, 1000.0, 200001);
    const auto all = integrate_peak(l, {0.0, 1000.0}, {0.0, 0.0});
    CHECK(all.area == doctest::Approx(2.0 / M_PI * std::atan(1000.0 / fwhm)).epsilon(1e-6));
    CHECK(all.area == doctest::Approx(1.0).epsilon(0.01));
    const auto clipped = integrate_peak(l, {500.0 - 5.0 * fwhm, 500.0 + 5.0 * fwhm}, {0.0, 0.0}, fwhm);
    CHECK(clipped.captured_fraction == doctest::Approx(0.9365).epsilon(1e-4));
    CHECK(clipped.area == doctest::Approx(0.9365).epsilon(1e-3));
    CHECK(clipped.corrected_area == doctest::Approx(1.0).epsilon(1e-6));

    CHECK_THROWS_AS(integrate_peak(l, {-10.0, 10.0}, {500.0, 600.0}), DomainError);
    CHECK_THROWS_AS(integrate_peak(l, {400.0, 600.0}, {500.0, 700.0}), DomainError);
  }

  TEST_CASE("outlier removal")
  {
    SpectrumTrace s;
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int i = 0; i < 3000; ++i) {
      s.freq.push_back(i);
      s.psd.push_back(10.0 + g(rng));
    }
    const FrequencyBand protect{1400.0, 1600.0};
    const auto clean = remove_outliers(s, protect);
    CHECK(clean.removed == 0);
    CHECK(clean.trace.psd == s.psd);

    auto spiky = s;
    spiky.psd[300] += 10.0;
    spiky.psd[1500] += 10.0;
    const auto r = remove_outliers(spiky, protect);
    CHECK(r.removed == 1);
    CHECK(r.trace.psd[300] < 13.0);
    CHECK(r.trace.psd[1500] == spiky.psd[1500]);

    // a comb of spikes shrinks the spread once removed; iteration reaches a fixed point
    auto comb = s;
    for (int i = 0; i < 3000; i += 37) {
      comb.psd[i] += 6.0 + 30.0 * (i % 3);
    }
    const auto once = remove_outliers(comb, protect);
    const auto twice = remove_outliers(once.trace, protect);
    CHECK(once.removed > 0);
    CHECK(twice.removed == 0);
    CHECK(twice.trace.psd == once.trace.psd);
  }

  TEST_CASE("k-means binning")
  {
    const std::vector<double> v{8.1761, 8.1760, 8.17605, 8.1790, 8.1791, 8.17895};
    const auto b = kmeans_bin(v, 2);
    CHECK(b.labels == std::vector<std::size_t>{0, 0, 0, 1, 1, 1});
    CHECK(b.counts == std::vector<std::size_t>{3, 3});
    CHECK_FALSE(b.degenerate);

    const auto each = kmeans_bin(v, v.size());
    CHECK(each.within_ss == 0.0);
    CHECK(each.labels == std::vector<std::size_t>{2, 0, 1, 4, 5, 3});

    const auto same = kmeans_bin({1.0, 1.0, 1.0, 2.0}, 3);
    CHECK(same.degenerate);
    CHECK(same.effective_bins == 2);
    CHECK(same.labels == std::vector<std::size_t>{0, 0, 0, 1});

    CHECK_THROWS_AS(kmeans_bin(v, 0), DomainError);
    CHECK_THROWS_AS(kmeans_bin(v, 7), DomainError);

    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 60; ++trial) {
      const std::size_t n = 2 + trial % 19;
      std::vector<double> x(n);
      for (auto& e : x) {
        e = 8.176e9 + 1e5 * u(rng) * (u(rng) < 0.5 ? 1.0 : 3.0);
      }
      const std::size_t k = 1 + trial % std::min<std::size_t>(n, 6);
      const auto r = kmeans_bin(x, k);
      auto sorted = x;
      std::sort(sorted.begin(), sorted.end());
      for (auto& e : sorted) {
        e -= x.front();
      }
      const double best = oracle::kmeans_brute_force(sorted, k);
      CHECK(r.within_ss == doctest::Approx(best).epsilon(1e-9).scale(1.0));
      std::size_t total = 0;
      for (auto c : r.counts) {
        total += c;
      }
      CHECK(total == n);
    }
  }

  TEST_CASE("calibration forward model")
  {
    const auto sc = scene();
    const auto in = synthesize_calibration(sc);
    const auto dho = dho_fit(in.spectrum, in.mech_window);
    CHECK(dho.linewidth == doctest::Approx(5.0).epsilon(1e-4));
    const auto g = gorodetsky_g0(in, sc.n_m, dho);
    CHECK(g.g0 == doctest::Approx(sc.g0).epsilon(0.005));
    const double slope = slope_calibration_g0sq_nm(in);
    CHECK(slope == doctest::Approx(sc.g0 * sc.g0 * sc.n_m).epsilon(0.005));
    CHECK(std::sqrt(slope / sc.n_m) == doctest::Approx(g.g0).epsilon(0.01));
  }

  TEST_CASE("calibration methods agree on random scenes")
  {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 50; ++i) {
      auto sc = scene();
      sc.g0 = hz_to_rad(50.0 + 5000.0 * u(rng));
      sc.n_m = std::pow(10.0, 1.0 + 3.0 * u(rng));
      sc.pump_detuning = sc.cavity.omega_c / sc.cavity.q_loaded * (-1.5 + 3.0 * u(rng));
      const auto in = synthesize_calibration(sc);
      const auto dho = dho_fit(in.spectrum, in.mech_window);
      const double a = gorodetsky_g0(in, sc.n_m, dho).g0;
      const double b = std::sqrt(slope_calibration_g0sq_nm(in, dho) / sc.n_m);
      CHECK(a == doctest::Approx(b).epsilon(0.01));
      CHECK(a == doctest::Approx(sc.g0).epsilon(0.005));
    }
  }

  TEST_CASE("calibration homogeneity and edge cases")
  {
    auto sc = scene();
    const auto in1 = synthesize_calibration(sc);
    sc.dev *= 2.0;
    const auto in2 = synthesize_calibration(sc);
    const auto dho = dho_fit(in1.spectrum, in1.mech_window);
    CHECK(gorodetsky_g0(in2, sc.n_m, dho).g0 == doctest::Approx(gorodetsky_g0(in1, sc.n_m, dho).g0).epsilon(1e-6));

    DHOFitResult none;
    CHECK(slope_calibration_g0sq_nm(in1, none) == 0.0);

    auto dark = in1;
    dark.s21_at_pump = 0.0;
    CHECK_THROWS_AS(slope_calibration_g0sq_nm(dark, dho), NumericalError);

    auto no_tone = scene();
    no_tone.dev = 0.0;
    CHECK_THROWS_AS(gorodetsky_g0(synthesize_calibration(no_tone), 100.0, dho), FitRejected);
  }

  TEST_CASE("temperature ramp gives a constant g0")
  {
    auto sc = scene();
    double lo = INFINITY;
    double hi = 0.0;
    for (double t : {0.03, 0.06, 0.1, 0.2, 0.4}) {
      sc.n_m = thermal_occupation(t, sc.omega_m);
      const auto in = synthesize_calibration(sc);
      const double g = gorodetsky_g0(in, sc.n_m, dho_fit(in.spectrum, in.mech_window)).g0;
      lo = std::min(lo, g);
      hi = std::max(hi, g);
    }
    CHECK((hi - lo) / sc.g0 < 0.005);
  }

  TEST_CASE("rescaling to zero-point units")
  {
    const auto sc = scene();
    const auto in = synthesize_calibration(sc);
    const auto zpm = rescale_to_zpm(in.spectrum, in, sc.g0);
    const auto back = rescale_from_zpm(zpm, in, sc.g0);
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back.psd[i] == doctest::Approx(in.spectrum.psd[i]).epsilon(1e-12));
    }
    // one-sided convention: the sideband integrates to 2 n_m
    const auto fit = dho_fit(zpm, in.mech_window);
    CHECK(lorentzian_area(fit) == doctest::Approx(2.0 * sc.n_m).epsilon(0.005));

    const auto z2 = rescale_to_zpm(in.spectrum, in, 2.0 * sc.g0);
    CHECK(z2.psd[10] == doctest::Approx(zpm.psd[10] / 4.0).epsilon(1e-12));
  }
}

#include "kerrcool/fluctuations.hpp"

#include "kerrcool/errors.hpp"
#include "kerrcool/parallel.hpp"

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <tuple>

namespace kerrcool {

namespace {

constexpr cplx I{0.0, 1.0};

struct Inverses {
  cplx A; // X_c^{-1}[omega]
  cplx B; // X_c^{*-1}[-omega]
  cplx D; // X~_c^{-1}
};

Inverses inverses(double omega, const LinearizedParams& lin)
{
  const double hk = 0.5 * lin.kappa;
  const cplx A{hk, -(omega + lin.delta_tilde)};
  const cplx B{hk, -omega + lin.delta_tilde};
  return {A, B, A * B - lin.lambda * lin.lambda};
}

bool at_pole(const Inverses& v, const LinearizedParams& lin)
{
  const double scale = std::abs(v.A * v.B) + lin.lambda * lin.lambda;
  return std::abs(v.D) <= 64.0 * std::numeric_limits<double>::epsilon() * scale;
}

cplx sigma_from(const Inverses& v, const LinearizedParams& lin)
{
  return -2.0 * lin.g_mag * lin.g_mag * (lin.delta_tilde + lin.lambda) / v.D;
}

} // namespace

SystemParams with_kerr(SystemParams params, double kerr)
{
  params.cavity.kerr = kerr;
  return params;
}

LinearizedParams linearize(const DriveSpec& drive, double n_c, const SystemParams& params,
                           bool from_unstable_branch)
{
  if (!(n_c >= 0.0)) {
    throw DomainError("linearize: n_c must be >= 0");
  }
  const double k_eff = effective_kerr(params);
  const double effective_detuning = drive.detuning - k_eff * n_c;
  LinearizedParams lin = linearize_effective(effective_detuning, n_c, params);
  lin.from_unstable_branch = from_unstable_branch;
  return lin;
}

LinearizedParams linearize(const DriveSpec& drive, const SteadyState& state,
                           const SystemParams& params)
{
  return linearize(drive, state.n_c(), params, !state.stable.at(state.selected));
}

LinearizedParams linearize_effective(double effective_detuning, double n_c,
                                     const SystemParams& params)
{
  const double K = params.cavity.kerr;
  LinearizedParams lin;
  lin.n_c = n_c;
  lin.lambda = K * n_c;
  lin.lambda_mag = std::abs(lin.lambda);
  lin.delta_tilde = effective_detuning - lin.lambda;
  lin.g_mag = params.coupling.g0 * std::sqrt(n_c);
  lin.phi = 0.0;
  lin.kappa = params.cavity.kappa;
  lin.gamma_m = params.mech.gamma_m;
  lin.omega_m = params.mech.omega_m;
  lin.n_thermal = params.mech.n_thermal;
  lin.n_cav_thermal = params.cavity.n_cav_thermal;
  return lin;
}

cplx cavity_susceptibility(double omega, const LinearizedParams& lin)
{
  return 1.0 / cplx{0.5 * lin.kappa, -(omega + lin.delta_tilde)};
}

cplx self_energy(double omega, const LinearizedParams& lin)
{
  if (lin.g_mag == 0.0) {
    return {0.0, 0.0};
  }
  const Inverses v = inverses(omega, lin);
  if (at_pole(v, lin)) {
    std::ostringstream msg;
    msg << "self_energy: parametric-instability pole at omega = " << omega;
    throw NumericalError(msg.str());
  }
  return sigma_from(v, lin);
}

MechanicalResponse mechanical_response(const LinearizedParams& lin, SigmaEvaluation mode)
{
  double omega = lin.omega_m;
  cplx sigma = self_energy(omega, lin);
  if (mode == SigmaEvaluation::SelfConsistent) {
    for (int it = 0; it < 100; ++it) {
      const double next = lin.omega_m - sigma.real();
      if (std::abs(next - omega) <= 1e-13 * std::abs(lin.omega_m)) {
        break;
      }
      omega = next;
      sigma = self_energy(omega, lin);
    }
  }
  MechanicalResponse r;
  r.sigma_re = sigma.real();
  r.sigma_im = sigma.imag();
  r.gamma_opt = 2.0 * sigma.imag();
  // The pole of b[omega] sits at omega_m - Sigma_c - i gamma_m/2, so the spring shift is
  // -Re Sigma_c and the damping +2 Im Sigma_c.
  r.delta_omega = -sigma.real();
  r.gamma_eff = lin.gamma_m + r.gamma_opt;
  r.omega_eff = lin.omega_m + r.delta_omega;
  r.unstable = !(r.gamma_eff > 0.0);
  return r;
}

bool dynamically_stable(const LinearizedParams& lin)
{
  // Drift matrix of (d, d^dagger, b, b^dagger).
  const double G = lin.g_mag;
  const double L = lin.lambda;
  const double dt = lin.delta_tilde;
  const double hk = 0.5 * lin.kappa;
  const double hg = 0.5 * lin.gamma_m;
  Eigen::Matrix4cd M;
  M << I * dt - hk, -I * L, -I * G, -I * G,
      I * L, -I * dt - hk, I * G, I * G,
      -I * G, -I * G, -I * lin.omega_m - hg, 0.0,
      I * G, I * G, 0.0, I * lin.omega_m - hg;
  const Eigen::ComplexEigenSolver<Eigen::Matrix4cd> es(M, false);
  if (es.info() != Eigen::Success) {
    throw NumericalError("dynamically_stable: eigenvalue solver failed");
  }
  for (int i = 0; i < 4; ++i) {
    if (!(es.eigenvalues()[i].real() < 0.0)) {
      return false;
    }
  }
  return true;
}

double phonon_spectral_density(double omega, const LinearizedParams& lin)
{
  const double gm = lin.gamma_m;
  const double sg = std::sqrt(gm);
  const Inverses v = inverses(omega, lin);
  const cplx xt = 1.0 / v.D;
  const cplx sigma = -2.0 * lin.g_mag * lin.g_mag * (lin.delta_tilde + lin.lambda) * xt;

  const cplx m11 = -I * (omega - lin.omega_m) + 0.5 * gm - I * sigma;
  const cplx m12 = -I * sigma;
  const cplx m22 = -I * (omega + lin.omega_m) + 0.5 * gm + I * sigma;
  const cplx det = m11 * m22 - sigma * sigma;

  const cplx c_b = -sg * m22 / det;
  const cplx c_bd = sg * m12 / det;
  const cplx opt = I * lin.g_mag * std::sqrt(lin.kappa) * xt * (m22 + m12) / det;
  const cplx c_d = opt * (v.B + I * lin.lambda);
  const cplx c_dd = opt * (v.A - I * lin.lambda);

  return std::norm(c_b) * lin.n_thermal + std::norm(c_bd) * (lin.n_thermal + 1.0) +
         std::norm(c_d) * lin.n_cav_thermal + std::norm(c_dd) * (lin.n_cav_thermal + 1.0);
}

namespace {

struct Segment {
  double a;
  double b;
  double value;
  double error;
  int kind;

  bool operator<(const Segment& o) const { return error < o.error; }
};

// 61-point Gauss-Kronrod on one segment. The rule is applied on [-1, 1] with the map done
// here, because the library's own interval scaling misreports the error on short intervals.
template <class F>
void gk_rule(const F& g, Segment& s)
{
  using boost::math::quadrature::gauss_kronrod;
  const double mid = 0.5 * (s.a + s.b);
  const double half = 0.5 * (s.b - s.a);
  double err = 0.0;
  const double v = gauss_kronrod<double, 61>::integrate(
      [&](double x) { return g(mid + half * x); }, -1.0, 1.0, 0, 0.0, &err);
  s.value = half * v;
  s.error = std::abs(half) * err;
}

std::vector<double> breakpoints(const LinearizedParams& lin, const MechanicalResponse& r)
{
  const double p = std::max(std::abs(r.omega_eff), 1e-6 * lin.omega_m);
  const double w = std::max(std::abs(r.gamma_eff), 1e-12 * p);
  std::vector<double> pts{0.0};
  for (double c : {p, -p}) {
    pts.push_back(c);
    for (double d = 0.5 * w; d < 0.5 * p; d *= 4.0) {
      pts.push_back(c - d);
      pts.push_back(c + d);
    }
  }
  const double reach = 50.0 * lin.kappa + std::abs(lin.delta_tilde) + lin.lambda_mag + 2.0 * lin.g_mag;
  for (double d = 0.5 * p; d < reach; d *= 2.0) {
    pts.push_back(p + d);
    pts.push_back(-p - d);
  }
  // Cavity-scale features.
  for (double c : {lin.delta_tilde, -lin.delta_tilde}) {
    for (double s : {-1.0, -0.25, 0.0, 0.25, 1.0}) {
      pts.push_back(c + s * lin.kappa);
    }
  }
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](double a, double b) {
                          return std::abs(a - b) <= 1e-13 * std::max(std::abs(a), std::abs(b));
                        }),
            pts.end());
  return pts;
}

} // namespace

double phonon_occupation(const LinearizedParams& lin, QuadratureReport* report)
{
  if (lin.g_mag == 0.0) {
    if (report) {
      *report = {lin.n_thermal, 0.0, 0};
    }
    return lin.n_thermal;
  }
  const MechanicalResponse r = mechanical_response(lin);
  if (r.unstable || !dynamically_stable(lin)) {
    std::ostringstream msg;
    msg << "mechanical instability: gamma_eff/2pi = " << rad_to_hz(r.gamma_eff) << " Hz";
    throw InstabilityError(msg.str());
  }

  const auto f = [&](double w) { return phonon_spectral_density(w, lin); };
  const auto pts = breakpoints(lin, r);

  // Global adaptive bisection. Segment kind 0 integrates f directly; kinds +1 and -1 are
  // the tails in u = 1/omega, where the integrand decays like u^2.
  auto integrand = [&](int kind, double x) {
    if (kind == 0) {
      return f(x);
    }
    return x == 0.0 ? 0.0 : f(kind / x) / (x * x);
  };
  std::vector<Segment> heap;
  auto push = [&](int kind, double a, double b) {
    Segment s{a, b, 0.0, 0.0, kind};
    gk_rule([&](double x) { return integrand(kind, x); }, s);
    if (!std::isfinite(s.value)) {
      throw NumericalError("phonon_occupation: non-finite quadrature result");
    }
    heap.push_back(s);
    std::push_heap(heap.begin(), heap.end());
  };
  for (std::size_t i = 1; i < pts.size(); ++i) {
    push(0, pts[i - 1], pts[i]);
  }
  push(1, 0.0, 1.0 / pts.back());
  push(-1, 0.0, -1.0 / pts.front());

  auto sums = [&] {
    double v = 0.0;
    double e = 0.0;
    for (const auto& s : heap) {
      v += s.value;
      e += s.error;
    }
    return std::pair{v, e};
  };
  auto [total, err_total] = sums();
  constexpr std::size_t max_segments = 20000;
  while (err_total > 1e-11 * std::abs(total) && heap.size() < max_segments) {
    std::pop_heap(heap.begin(), heap.end());
    const Segment worst = heap.back();
    heap.pop_back();
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(mid > std::min(worst.a, worst.b) && mid < std::max(worst.a, worst.b))) {
      heap.push_back(worst);
      std::push_heap(heap.begin(), heap.end());
      break;
    }
    push(worst.kind, worst.a, mid);
    push(worst.kind, mid, worst.b);
    std::tie(total, err_total) = sums();
  }
  const std::size_t segments = heap.size();

  total /= two_pi;
  err_total /= two_pi;
  if (!(err_total <= 1e-9 * std::abs(total) + 1e-14)) {
    std::ostringstream msg;
    msg << "phonon_occupation: quadrature did not converge (value " << total << ", error estimate "
        << err_total << ", " << segments << " segments)";
    throw NumericalError(msg.str());
  }
  if (report) {
    *report = {total, err_total, segments};
  }
  return total;
}

std::vector<double> spectrum_grid(const LinearizedParams& lin, double ratio)
{
  if (!(ratio > 0.0 && ratio < 0.5)) {
    throw DomainError("spectrum_grid: ratio must lie in (0, 0.5)");
  }
  const MechanicalResponse r = mechanical_response(lin);
  const double fp = rad_to_hz(std::max(std::abs(r.omega_eff), 1e-6 * lin.omega_m));
  const double w = rad_to_hz(std::max(std::abs(r.gamma_eff), 1e-12 * lin.omega_m));
  const double reach =
      rad_to_hz(6000.0 * lin.kappa + std::abs(lin.delta_tilde) + lin.lambda_mag + 2.0 * lin.g_mag);
  const double core = w / 40.0;

  std::vector<double> grid;
  for (double c : {-fp, fp}) {
    grid.push_back(c);
    double o = 0.0;
    while (o < reach) {
      o += std::max(core, ratio * o);
      grid.push_back(c - o);
      grid.push_back(c + o);
    }
  }
  std::sort(grid.begin(), grid.end());
  const double lo = -fp - reach;
  const double hi = fp + reach;
  grid.erase(std::remove_if(grid.begin(), grid.end(), [&](double f) { return f < lo || f > hi; }),
             grid.end());
  return merge_grids(grid, {});
}

SpectrumTrace mechanical_spectrum(const std::vector<double>& grid_hz, const LinearizedParams& lin)
{
  const MechanicalResponse r = mechanical_response(lin);
  if (lin.g_mag != 0.0 && (r.unstable || !dynamically_stable(lin))) {
    throw InstabilityError("mechanical_spectrum: mechanical instability");
  }
  SpectrumTrace t;
  t.freq = grid_hz;
  t.psd.reserve(grid_hz.size());
  for (double f : grid_hz) {
    t.psd.push_back(phonon_spectral_density(hz_to_rad(f), lin));
  }
  t.units = PsdUnits::QuantaPerHz;
  t.enbw = 0.0;
  check_trace(t);
  return t;
}

CoolingPoint cooling_point(const DriveSpec& drive, const SteadyState& state,
                           const SystemParams& params)
{
  CoolingPoint p;
  p.delta = drive.detuning;
  p.n_in = drive.n_in;
  p.n_c = state.n_c();
  p.bistable = state.bistable();
  p.branch_stable = state.stable.at(state.selected);
  p.n_m = std::numeric_limits<double>::quiet_NaN();
  try {
    const LinearizedParams lin = linearize(drive, state, params);
    const MechanicalResponse r = mechanical_response(lin);
    p.gamma_opt = r.gamma_opt;
    p.gamma_eff = r.gamma_eff;
    p.omega_eff = r.omega_eff;
    p.mech_stable = !r.unstable && dynamically_stable(lin);
    if (!p.branch_stable) {
      p.status = "unstable steady-state branch";
    } else if (!p.mech_stable) {
      p.status = "mechanical instability";
    } else {
      p.n_m = phonon_occupation(lin);
    }
  } catch (const InstabilityError& e) {
    p.mech_stable = false;
    p.status = e.what();
  } catch (const NumericalError& e) {
    p.status = e.what();
  }
  return p;
}

std::vector<CoolingPoint> cooling_trace(const std::vector<double>& delta_grid, double n_in,
                                        const SystemParams& params, BranchPolicy policy)
{
  const auto states = sweep_steady_state(delta_grid, n_in, params, policy);
  std::vector<CoolingPoint> out(delta_grid.size());
  parallel_for(delta_grid.size(), [&](std::size_t i) {
    out[i] = cooling_point(DriveSpec{delta_grid[i], n_in}, states[i], params);
  });
  return out;
}

} // namespace kerrcool

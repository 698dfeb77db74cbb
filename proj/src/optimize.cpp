#include "kerrcool/optimize.hpp"

#include "kerrcool/errors.hpp"
#include "kerrcool/fluctuations.hpp"
#include "kerrcool/parallel.hpp"
#include "kerrcool/steady_state.hpp"

#include <boost/math/tools/minima.hpp>

#include <cmath>
#include <limits>
#include <sstream>

namespace kerrcool {

namespace {

constexpr double unusable = 1e300;

struct Probe {
  double n_m = unusable;
  double n_c = 0.0;
  double detuning = 0.0;
};

Probe probe(double effective_detuning, double n_in, const SystemParams& params, double k_eff)
{
  const double kappa = params.cavity.kappa;
  Probe p;
  p.n_c = kappa * n_in / (effective_detuning * effective_detuning + 0.25 * kappa * kappa);
  p.detuning = effective_detuning + k_eff * p.n_c;
  if (!(cubic_slope(p.n_c, p.detuning, kappa, k_eff) > 0.0)) {
    return p;
  }
  const LinearizedParams lin = linearize_effective(effective_detuning, p.n_c, params);
  if (mechanical_response(lin).unstable || !dynamically_stable(lin)) {
    return p;
  }
  try {
    p.n_m = phonon_occupation(lin);
  } catch (const NumericalError&) {
    p.n_m = unusable;
  }
  return p;
}

} // namespace

CoolingOptimum optimize_detuning(double n_in, const SystemParams& params, std::size_t grid)
{
  if (!(n_in > 0.0) || grid < 3) {
    throw DomainError("optimize_detuning: need n_in > 0 and at least 3 grid points");
  }
  const double kappa = params.cavity.kappa;
  const double k_eff = effective_kerr(params);
  const double lo = -6.0 * kappa;
  const double hi = 1.0 * kappa;
  const double step = (hi - lo) / static_cast<double>(grid - 1);
  std::size_t best = 0;
  double best_n = unusable;
  for (std::size_t i = 0; i < grid; ++i) {
    const double n = probe(lo + step * static_cast<double>(i), n_in, params, k_eff).n_m;
    if (n < best_n) {
      best_n = n;
      best = i;
    }
  }
  if (!(best_n < unusable)) {
    std::ostringstream msg;
    msg << "optimize_detuning: no stable detuning at n_in = " << n_in;
    throw InstabilityError(msg.str());
  }
  const double centre = lo + step * static_cast<double>(best);
  auto f = [&](double d) { return probe(d, n_in, params, k_eff).n_m; };
  const auto m = boost::math::tools::brent_find_minima(f, centre - step, centre + step, 40);
  const double d_opt = m.second < best_n ? m.first : centre;
  const Probe p = probe(d_opt, n_in, params, k_eff);

  CoolingOptimum out;
  out.n_in = n_in;
  out.n_m = p.n_m;
  out.detuning = p.detuning;
  out.effective_detuning = d_opt;
  out.n_c = p.n_c;
  return out;
}

CoolingOptimum optimize_power(const SystemParams& params, const OptimizeOptions& opt)
{
  if (opt.power_grid < 3) {
    throw DomainError("optimize_power: need at least 3 power grid points");
  }
  const double kappa = params.cavity.kappa;
  const double g0 = params.coupling.g0;
  if (!(g0 > 0.0)) {
    throw DomainError("optimize_power: g0 must be > 0");
  }
  if (opt.cap_fraction > 1.0) {
    throw DomainError("optimize_power: cap fraction must be in (0, 1]");
  }
  const double k_eff = effective_kerr(params);
  const bool capped = opt.cap_fraction > 0.0 && k_eff != 0.0;
  double n_hi = 0.0;
  if (capped) {
    n_hi = opt.cap_fraction * bistability_threshold(kappa, k_eff);
  } else {
    // beyond G ~ kappa the linearized dynamics is long unstable
    n_hi = opt.n_in_max > 0.0 ? opt.n_in_max : kappa * kappa * kappa / (2.0 * g0 * g0);
  }
  double n_lo = opt.n_in_min > 0.0 ? opt.n_in_min : (capped ? 1e-4 * n_hi / opt.cap_fraction : 1e-6 * n_hi);
  if (!(n_lo < n_hi)) {
    throw DomainError("optimize_power: empty power range");
  }

  const double a = std::log(n_lo);
  const double b = std::log(n_hi);
  const std::size_t N = opt.power_grid;
  std::vector<double> value(N, unusable);
  for (std::size_t i = 0; i < N; ++i) {
    const double x = a + (b - a) * static_cast<double>(i) / static_cast<double>(N - 1);
    try {
      value[i] = optimize_detuning(std::exp(x), params, opt.detuning_grid).n_m;
    } catch (const InstabilityError&) {
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < N; ++i) {
    if (value[i] < value[best]) {
      best = i;
    }
  }
  if (!(value[best] < unusable)) {
    throw InstabilityError("optimize_power: every input power is unstable");
  }
  const double h = (b - a) / static_cast<double>(N - 1);
  const double x0 = a + h * static_cast<double>(best);
  auto f = [&](double x) {
    try {
      return optimize_detuning(std::exp(x), params, opt.detuning_grid).n_m;
    } catch (const InstabilityError&) {
      return unusable;
    }
  };
  const auto m = boost::math::tools::brent_find_minima(f, std::max(a, x0 - h), std::min(b, x0 + h), 30);
  const double x_opt = m.second < value[best] ? m.first : x0;
  CoolingOptimum out = optimize_detuning(std::exp(x_opt), params, opt.detuning_grid);
  out.at_cap = capped && x_opt > b - 1e-6 * h;
  return out;
}

CoolingOptimum optimize_power(double g0, const SystemParams& params, double cap_fraction)
{
  SystemParams p = params;
  p.coupling.g0 = g0;
  OptimizeOptions opt;
  opt.cap_fraction = cap_fraction;
  return optimize_power(p, opt);
}

SystemParams fig4c_device()
{
  SystemParams p = reference_device();
  p.cavity.kerr = hz_to_rad(-12e3);
  p.mech.n_thermal = thermal_occupation(0.040, p.mech.omega_m);
  return p;
}

std::vector<Fig4cRow> fig4c_sweep(const std::vector<double>& g0_grid, const SystemParams& params,
                                  const OptimizeOptions& options)
{
  std::vector<Fig4cRow> rows(g0_grid.size());
  parallel_for(g0_grid.size(), [&](std::size_t i) {
    SystemParams p = params;
    p.coupling.g0 = g0_grid[i];
    const SystemParams lin = with_kerr(p, 0.0);
    Fig4cRow& r = rows[i];
    r.g0 = g0_grid[i];
    r.nonlinear = optimize_power(p, options);
    r.linear_same_power = optimize_detuning(r.nonlinear.n_in, lin, options.detuning_grid);
    OptimizeOptions free = options;
    free.cap_fraction = 0.0;
    free.n_in_min = 0.0;
    free.n_in_max = 0.0;
    r.linear_ideal = optimize_power(lin, free);
  });
  return rows;
}

} // namespace kerrcool

#include "kerrcool/steady_state.hpp"

#include "kerrcool/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kerrcool {

namespace {

constexpr double merge_tolerance = 1e-8;

// Scaled cubic g(u) = u[(s u - d)^2 + 1/4] - p with u = n|K|/kappa, d = Delta/kappa,
// p = n_in |K| / kappa^2, s = sign(K). Evaluated in factored form to keep the small-root
// branch accurate far off resonance.
struct ScaledCubic {
  double s;
  double d;
  double p;

  double operator()(double u) const
  {
    const double w = s * u - d;
    return u * (w * w + 0.25) - p;
  }
  double slope(double u) const
  {
    const double w = s * u - d;
    return w * w + 0.25 + 2.0 * s * u * w;
  }
};

double polish(const ScaledCubic& g, double u)
{
  double best = u;
  double best_res = std::abs(g(u));
  for (int it = 0; it < 8; ++it) {
    const double fp = g.slope(u);
    if (fp == 0.0) {
      break;
    }
    const double next = u - g(u) / fp;
    const double res = std::abs(g(next));
    if (!(res < best_res) && it > 0) {
      break;
    }
    if (res < best_res) {
      best = next;
      best_res = res;
    }
    if (std::abs(next - u) <= 1e-16 * std::abs(next)) {
      break;
    }
    u = next;
  }
  return best;
}

// Real roots of the monic cubic u^3 + a u^2 + b u + c.
std::vector<double> real_cubic_roots(double a, double b, double c)
{
  const double shift = a / 3.0;
  const double P = b - a * a / 3.0;
  const double Q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
  std::vector<double> t;
  if (P == 0.0) {
    t.push_back(std::cbrt(-Q));
  } else if (P < 0.0) {
    const double m = std::sqrt(-P / 3.0);
    const double disc = 4.0 * P * P * P + 27.0 * Q * Q;
    if (disc < 0.0) {
      const double arg = std::clamp(3.0 * Q / (2.0 * P) * std::sqrt(-3.0 / P), -1.0, 1.0);
      const double phi = std::acos(arg) / 3.0;
      for (int k = 0; k < 3; ++k) {
        t.push_back(2.0 * m * std::cos(phi - two_pi * k / 3.0));
      }
    } else {
      const double arg = std::max(1.0, -3.0 * std::abs(Q) / (2.0 * P) * std::sqrt(-3.0 / P));
      t.push_back(-2.0 * std::copysign(1.0, Q) * m * std::cosh(std::acosh(arg) / 3.0));
    }
  } else {
    const double m = std::sqrt(P / 3.0);
    t.push_back(-2.0 * m * std::sinh(std::asinh(3.0 * Q / (2.0 * P) * std::sqrt(3.0 / P)) / 3.0));
  }
  for (double& x : t) {
    x -= shift;
  }
  return t;
}

} // namespace

double effective_kerr(const SystemParams& p)
{
  const double wm = p.mech.omega_m;
  const double gm = p.mech.gamma_m;
  const double g0 = p.coupling.g0;
  return p.cavity.kerr - 2.0 * g0 * g0 * wm / (wm * wm + 0.25 * gm * gm);
}

double cubic_response(double n_c, double detuning, double kappa, double k_eff)
{
  const double w = k_eff * n_c - detuning;
  return n_c * (w * w + 0.25 * kappa * kappa);
}

double cubic_slope(double n_c, double detuning, double kappa, double k_eff)
{
  const double w = k_eff * n_c - detuning;
  return w * w + 0.25 * kappa * kappa + 2.0 * k_eff * n_c * w;
}

SteadyState intracavity_roots(double detuning, double n_in, double kappa, double k_eff)
{
  if (!(n_in >= 0.0) || !std::isfinite(n_in)) {
    throw DomainError("intracavity_roots: n_in must be finite and >= 0");
  }
  if (!(kappa > 0.0)) {
    throw DomainError("intracavity_roots: kappa must be > 0");
  }
  SteadyState st;
  st.k_eff = k_eff;
  if (n_in == 0.0) {
    st.roots = {0.0};
    st.stable = {true};
    return st;
  }
  if (k_eff == 0.0) {
    st.roots = {kappa * n_in / (detuning * detuning + 0.25 * kappa * kappa)};
    st.stable = {true};
    return st;
  }

  const double scale = std::abs(k_eff) / kappa;
  const ScaledCubic g{std::copysign(1.0, k_eff), detuning / kappa, n_in * scale / kappa};
  auto us = real_cubic_roots(-2.0 * g.s * g.d, g.d * g.d + 0.25, -g.p);
  for (double& u : us) {
    u = polish(g, u);
  }
  std::sort(us.begin(), us.end());

  if (us.size() == 3) {
    auto close = [](double x, double y) {
      return std::abs(x - y) <= merge_tolerance * std::max(std::abs(x), std::abs(y));
    };
    if (close(us[0], us[1]) || close(us[1], us[2])) {
      st.near_degenerate = true;
      if (close(us[0], us[1]) && close(us[1], us[2])) {
        us = {(us[0] + us[1] + us[2]) / 3.0};
      } else if (close(us[0], us[1])) {
        us = {0.5 * (us[0] + us[1]), us[2]};
      } else {
        us = {us[0], 0.5 * (us[1] + us[2])};
      }
    }
  }

  for (double u : us) {
    if (!(u >= 0.0)) {
      throw NumericalError("intracavity_roots: negative photon-number root");
    }
    const double n = u / scale;
    const double res = std::abs(cubic_response(n, detuning, kappa, k_eff) - kappa * n_in);
    if (res > 1e-8 * kappa * n_in && !st.near_degenerate) {
      throw NumericalError("intracavity_roots: root residual above tolerance");
    }
    st.roots.push_back(n);
    st.stable.push_back(cubic_slope(n, detuning, kappa, k_eff) > 0.0);
  }
  if (st.roots.empty()) {
    throw NumericalError("intracavity_roots: no real root");
  }
  // Default branch: lowest stable root.
  st.selected = 0;
  for (std::size_t i = 0; i < st.roots.size(); ++i) {
    if (st.stable[i]) {
      st.selected = i;
      break;
    }
  }
  return st;
}

SteadyState intracavity_roots(const DriveSpec& drive, const SystemParams& params)
{
  return intracavity_roots(drive.detuning, drive.n_in, params.cavity.kappa, effective_kerr(params));
}

double bistability_threshold(double kappa, double k_eff)
{
  if (k_eff == 0.0) {
    throw NoBistabilityError("linear cavity, no bistability");
  }
  return kappa * kappa / (3.0 * std::sqrt(3.0) * std::abs(k_eff));
}

double bistability_threshold(const SystemParams& params)
{
  return bistability_threshold(params.cavity.kappa, effective_kerr(params));
}

double select_branch(SteadyState& st, BranchPolicy policy, std::optional<double> previous)
{
  if (st.roots.empty()) {
    throw DomainError("select_branch: no roots");
  }
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < st.roots.size(); ++i) {
    if (st.stable[i]) {
      candidates.push_back(i);
    }
  }
  if (candidates.empty()) {
    candidates.resize(st.roots.size());
    std::iota(candidates.begin(), candidates.end(), std::size_t{0});
  }

  auto lowest = [&] { return candidates.front(); };
  auto highest = [&] { return candidates.back(); };

  switch (policy) {
  case BranchPolicy::Lowest:
    st.selected = lowest();
    break;
  case BranchPolicy::Highest:
    st.selected = highest();
    break;
  case BranchPolicy::SweepFromRed:
  case BranchPolicy::SweepFromBlue:
    if (previous) {
      st.selected = *std::min_element(candidates.begin(), candidates.end(), [&](auto a, auto b) {
        return std::abs(st.roots[a] - *previous) < std::abs(st.roots[b] - *previous);
      });
    } else {
      // For K < 0 the resonance leans to the red: entering from the red side the cavity
      // sits on the low branch, entering from the blue side on the high one.
      const bool from_red = policy == BranchPolicy::SweepFromRed;
      const bool low = (st.k_eff < 0.0) == from_red;
      st.selected = low ? lowest() : highest();
    }
    break;
  }
  return st.roots[st.selected];
}

double steady_displacement(double n_c, const SystemParams& p)
{
  const double wm = p.mech.omega_m;
  const double gm = p.mech.gamma_m;
  return -std::sqrt(2.0) * p.coupling.g0 * wm * n_c / (wm * wm + 0.25 * gm * gm);
}

std::vector<SteadyState> sweep_steady_state(const std::vector<double>& detunings, double n_in,
                                            const SystemParams& params, BranchPolicy policy)
{
  std::vector<std::size_t> order(detunings.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const bool descending = policy == BranchPolicy::SweepFromBlue;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) {
    return descending ? detunings[a] > detunings[b] : detunings[a] < detunings[b];
  });

  std::vector<SteadyState> out(detunings.size());
  std::optional<double> previous;
  for (auto idx : order) {
    SteadyState st = intracavity_roots(DriveSpec{detunings[idx], n_in}, params);
    const double n = select_branch(st, policy, previous);
    if (policy == BranchPolicy::SweepFromRed || policy == BranchPolicy::SweepFromBlue) {
      previous = n;
    }
    out[idx] = std::move(st);
  }
  return out;
}

} // namespace kerrcool

#include "kerrcool/workcycle.hpp"

#include "kerrcool/errors.hpp"

#include <boost/numeric/odeint.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace kerrcool {

namespace odeint = boost::numeric::odeint;

namespace {

using State = std::array<double, 2>;

struct CavityOde {
  double delta;
  double kappa;
  double kerr;
  double g0;
  double drive;     // sqrt(kappa) alpha_in
  double amplitude; // 2 sqrt(n_m)
  double omega_m;

  void operator()(const State& s, State& ds, double t) const
  {
    const double n = s[0] * s[0] + s[1] * s[1];
    const double w = delta - g0 * amplitude * std::cos(omega_m * t) - kerr * n;
    // (i w - kappa/2)(re + i im) - drive
    ds[0] = -w * s[1] - 0.5 * kappa * s[0] - drive;
    ds[1] = w * s[0] - 0.5 * kappa * s[1];
  }
};

} // namespace

std::vector<double> Trajectory::x_metres(double x_zpm) const
{
  if (!(x_zpm > 0.0)) {
    throw DomainError("Trajectory::x_metres: x_zpm unknown");
  }
  std::vector<double> out(x_over_zpm.size());
  std::transform(x_over_zpm.begin(), x_over_zpm.end(), out.begin(),
                 [x_zpm](double v) { return v * x_zpm; });
  return out;
}

Trajectory integrate_cavity(const DriveSpec& drive, const SystemParams& params, double n_m_coherent,
                            const WorkcycleOptions& opt)
{
  if (opt.cycles < 1) {
    throw DomainError("integrate_cavity: need at least one recorded cycle");
  }
  if (!(n_m_coherent >= 0.0) || !(drive.n_in >= 0.0)) {
    throw DomainError("integrate_cavity: n_m and n_in must be >= 0");
  }
  if (!(opt.steps_per_scale >= 4.0)) {
    throw DomainError("integrate_cavity: steps_per_scale must be >= 4");
  }
  const double kappa = params.cavity.kappa;
  const double wm = params.mech.omega_m;
  const double period = two_pi / wm;

  double scale = std::min(period, two_pi / kappa);
  if (drive.detuning != 0.0) {
    scale = std::min(scale, two_pi / std::abs(drive.detuning));
  }
  const auto steps = static_cast<std::size_t>(std::ceil(period / (scale / opt.steps_per_scale)));
  const double dt = period / static_cast<double>(steps);

  std::size_t settle = opt.settle_cycles;
  if (settle == 0) {
    settle = std::max<std::size_t>(3, static_cast<std::size_t>(std::ceil(10.0 / (kappa * period))));
  }

  const CavityOde ode{drive.detuning,         kappa, params.cavity.kerr, params.coupling.g0,
                      std::sqrt(kappa * drive.n_in), 2.0 * std::sqrt(n_m_coherent), wm};

  // Start on the static response of the chosen branch.
  SteadyState st = intracavity_roots(drive.detuning, drive.n_in, kappa, params.cavity.kerr);
  const double n0 = select_branch(st, opt.branch);
  const std::complex<double> a0 =
      -ode.drive / std::complex<double>(0.5 * kappa, -drive.detuning + params.cavity.kerr * n0);
  State s{a0.real(), a0.imag()};

  Trajectory tr;
  tr.n_m_coherent = n_m_coherent;
  tr.omega_m = wm;
  tr.samples_per_cycle = steps;
  tr.cycles = opt.cycles;
  const std::size_t first = settle * steps;
  const std::size_t last = (settle + opt.cycles) * steps;
  tr.t.reserve(last - first + 1);

  auto record = [&](const State& x, double t) {
    tr.t.push_back(t);
    tr.alpha.emplace_back(x[0], x[1]);
    tr.x_over_zpm.push_back(ode.amplitude * std::cos(wm * t));
    tr.n_c.push_back(x[0] * x[0] + x[1] * x[1]);
  };

  if (!opt.adaptive) {
    odeint::runge_kutta4<State> rk4;
    for (std::size_t k = 0; k < last; ++k) {
      if (k >= first) {
        record(s, static_cast<double>(k) * dt);
      }
      rk4.do_step(ode, s, static_cast<double>(k) * dt, dt);
    }
    record(s, static_cast<double>(last) * dt);
  } else {
    std::vector<double> times;
    times.reserve(last + 1);
    for (std::size_t k = 0; k <= last; ++k) {
      times.push_back(static_cast<double>(k) * dt);
    }
    State good = s;
    double good_t = 0.0;
    try {
      auto stepper = odeint::make_controlled<odeint::runge_kutta_dopri5<State>>(opt.abs_tol, opt.rel_tol);
      odeint::integrate_times(stepper, ode, s, times.begin(), times.end(), dt,
                              [&](const State& x, double t) {
                                good = x;
                                good_t = t;
                                if (t >= times[first] - 0.5 * dt) {
                                  record(x, t);
                                }
                              });
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << "integrate_cavity: adaptive step failed at t = " << good_t << " s (alpha = " << good[0]
          << (good[1] < 0 ? " - " : " + ") << std::abs(good[1]) << "i): " << e.what();
      throw NumericalError(msg.str());
    }
  }
  return tr;
}

WorkResult work_per_cycle(const Trajectory& tr, const SystemParams& params)
{
  const std::size_t N = tr.samples_per_cycle;
  if (tr.cycles < 1 || N < 2 || tr.t.size() < tr.cycles * N + 1) {
    throw DomainError("work_per_cycle: trajectory holds no complete cycle");
  }
  const double wm = tr.omega_m;
  const double amp = 2.0 * std::sqrt(tr.n_m_coherent);
  // F * xdot with F = -hbar g0 n_c / x_zpm and xdot = -x_zpm amp omega_m sin(omega_m t)
  auto power = [&](std::size_t k) {
    return hbar * params.coupling.g0 * tr.n_c[k] * amp * wm * std::sin(wm * tr.t[k]);
  };
  WorkResult r;
  for (std::size_t c = 0; c < tr.cycles; ++c) {
    double w = 0.0;
    for (std::size_t k = c * N; k < (c + 1) * N; ++k) {
      w += 0.5 * (power(k) + power(k + 1)) * (tr.t[k + 1] - tr.t[k]);
    }
    r.per_cycle.push_back(w);
  }
  for (double w : r.per_cycle) {
    r.work += w;
  }
  r.work /= static_cast<double>(tr.cycles);

  double scale = 0.0;
  for (const auto& a : tr.alpha) {
    scale = std::max(scale, std::abs(a));
  }
  const std::size_t end = tr.cycles * N;
  r.drift = scale > 0.0 ? std::abs(tr.alpha[end] - tr.alpha[0]) / scale : 0.0;
  r.periodic = r.drift <= 0.01;
  return r;
}

double damping_from_work(double work, double n_m_coherent, const SystemParams& params)
{
  if (!(n_m_coherent > 0.0)) {
    throw DomainError("damping_from_work: n_m must be > 0");
  }
  const double wm = params.mech.omega_m;
  return -work / ((two_pi / wm) * hbar * wm * n_m_coherent);
}

} // namespace kerrcool

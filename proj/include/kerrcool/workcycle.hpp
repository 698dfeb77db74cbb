#pragma once

#include "kerrcool/model.hpp"
#include "kerrcool/steady_state.hpp"

#include <complex>
#include <vector>

namespace kerrcool {

/// Cavity response to a prescribed coherent mechanical oscillation.
struct Trajectory {
  std::vector<double> t;                     // s
  std::vector<std::complex<double>> alpha;   // intracavity amplitude, sqrt(photons)
  std::vector<double> x_over_zpm;            // x(t) / x_zpm
  std::vector<double> n_c;                   // |alpha|^2
  double n_m_coherent = 0.0;
  double omega_m = 0.0;
  std::size_t samples_per_cycle = 0;         // recorded cycles start at t[0]
  std::size_t cycles = 0;

  /// x(t) in metres; requires x_zpm > 0.
  std::vector<double> x_metres(double x_zpm) const;
};

struct WorkcycleOptions {
  std::size_t cycles = 1;
  std::size_t settle_cycles = 0;   // 0: max(3, ceil(10 / (kappa T_m)))
  double steps_per_scale = 200.0;  // dt = min(T_m, 2pi/kappa, 2pi/|Delta|) / steps_per_scale
  bool adaptive = false;           // Dormand-Prince with error control instead of fixed RK4
  double rel_tol = 1e-10;
  double abs_tol = 1e-10;
  BranchPolicy branch = BranchPolicy::Lowest; // initial condition on the static response
};

/// Integrates d alpha/dt = [i(Delta - g0 x/x_zpm - K|alpha|^2) - kappa/2] alpha - sqrt(kappa) alpha_in
/// with x/x_zpm = 2 sqrt(n_m) cos(omega_m t). The mechanics is prescribed, so the bare K is used.
/// Throws NumericalError (with the last good state in the message) when the adaptive step
/// underflows.
Trajectory integrate_cavity(const DriveSpec& drive, const SystemParams& params, double n_m_coherent,
                            const WorkcycleOptions& options = {});

struct WorkResult {
  double work = 0.0;                 // J per cycle, averaged; negative = cooling
  std::vector<double> per_cycle;     // J
  double drift = 0.0;                // relative spread between cycles / endpoints
  bool periodic = true;              // drift <= 1%
};

/// Work done by the radiation-pressure force F = -hbar (g0/x_zpm) n_c on the mechanics per
/// cycle, using the analytic velocity of the prescribed motion. x_zpm cancels.
WorkResult work_per_cycle(const Trajectory& traj, const SystemParams& params);

/// Gamma = -W / (T_m hbar omega_m n_m).
double damping_from_work(double work, double n_m_coherent, const SystemParams& params);

} // namespace kerrcool

#pragma once

#include "kerrcool/model.hpp"
#include "kerrcool/spectrum.hpp"
#include "kerrcool/steady_state.hpp"

#include <complex>
#include <string>
#include <vector>

namespace kerrcool {

using cplx = std::complex<double>;

/// Coefficients of the Hamiltonian linearized around the classical amplitude alpha.
struct LinearizedParams {
  double delta_tilde = 0.0; ///< Delta - 2 K |alpha|^2 (plus the static mechanical shift), rad/s
  double lambda = 0.0;      ///< squeezing strength K |alpha|^2 carrying the sign of K, rad/s
  double lambda_mag = 0.0;  ///< |Lambda| = |K| |alpha|^2
  double g_mag = 0.0;       ///< |G| = g0 |alpha|
  double phi = 0.0;         ///< relative phase 2 phi_G - phi_Lambda; always 0
  double n_c = 0.0;
  double kappa = 0.0;
  double gamma_m = 0.0;
  double omega_m = 0.0;
  double n_thermal = 0.0;
  double n_cav_thermal = 0.0;
  bool from_unstable_branch = false;
};

enum class SigmaEvaluation {
  BareFrequency, ///< Sigma_c at omega_m (weak-coupling convention)
  SelfConsistent ///< Sigma_c at omega_m + delta_omega, iterated
};

struct MechanicalResponse {
  double sigma_re = 0.0;
  double sigma_im = 0.0;
  double gamma_opt = 0.0;   ///< optical damping, positive = cooling
  double delta_omega = 0.0; ///< optical spring shift, -Re Sigma_c
  double gamma_eff = 0.0;
  double omega_eff = 0.0;
  bool unstable = false; ///< gamma_eff <= 0
};

/// Linearization at the steady state n_c for the probe detuning of `drive`. The squeezing
/// term carries the sign of K, and the modified detuning includes the static shift of the
/// mechanics so that delta_tilde + lambda equals Delta - K_eff n_c.
LinearizedParams linearize(const DriveSpec& drive, double n_c, const SystemParams& params,
                           bool from_unstable_branch = false);
LinearizedParams linearize(const DriveSpec& drive, const SteadyState& state,
                           const SystemParams& params);

/// Linearization parameterized by the effective detuning Delta - K_eff n_c directly.
LinearizedParams linearize_effective(double effective_detuning, double n_c,
                                     const SystemParams& params);

/// X_c[omega] = 1 / (-i(omega + delta_tilde) + kappa/2).
cplx cavity_susceptibility(double omega, const LinearizedParams& lin);

/// Sigma_c[omega] = -2|G|^2 (delta_tilde + Lambda) X~_c[omega],
/// X~_c^{-1} = X_c^{-1}[omega] X_c^{*-1}[-omega] - |Lambda|^2.
/// Throws NumericalError at the parametric-instability pole.
cplx self_energy(double omega, const LinearizedParams& lin);

MechanicalResponse mechanical_response(const LinearizedParams& lin,
                                       SigmaEvaluation mode = SigmaEvaluation::BareFrequency);

/// True when every eigenvalue of the linearized drift matrix has negative real part.
bool dynamically_stable(const LinearizedParams& lin);

/// Spectral density S(omega) of <b^dagger b> with n_m = integral S dOmega / 2pi.
double phonon_spectral_density(double omega, const LinearizedParams& lin);

struct QuadratureReport {
  double value = 0.0;
  double error_estimate = 0.0;
  std::size_t segments = 0;
};

/// Mechanical occupation from the full frequency integral. Throws InstabilityError when the
/// linearized dynamics is unstable, NumericalError when the quadrature does not converge.
double phonon_occupation(const LinearizedParams& lin, QuadratureReport* report = nullptr);

/// Nonuniform frequency grid (Hz) resolving the mechanical peaks at +/- omega_eff and the
/// broad cavity pedestal. `ratio` bounds the relative spacing away from the peak cores.
std::vector<double> spectrum_grid(const LinearizedParams& lin, double ratio = 0.004);

/// PSD in quanta/Hz sampled on `grid_hz`; integrates to phonon_occupation over the full line.
SpectrumTrace mechanical_spectrum(const std::vector<double>& grid_hz, const LinearizedParams& lin);

struct CoolingPoint {
  double delta = 0.0; ///< probe detuning, rad/s
  double n_in = 0.0;
  double n_c = 0.0;
  double n_m = 0.0; ///< NaN when not computed
  double gamma_opt = 0.0;
  double gamma_eff = 0.0;
  double omega_eff = 0.0;
  bool bistable = false;      ///< three roots at this detuning
  bool branch_stable = true;  ///< selected root on a stable branch
  bool mech_stable = true;    ///< linearized dynamics stable
  std::string status;         ///< empty when ok, otherwise the reason n_m is missing
};

/// Steady state, linearization, response and occupation at one drive point on the
/// branch already chosen in `state`.
CoolingPoint cooling_point(const DriveSpec& drive, const SteadyState& state,
                           const SystemParams& params);

/// Cooling trace over `delta_grid`; the branch follows `policy`. Unstable points are
/// flagged, not dropped. Results are in the order of `delta_grid`.
std::vector<CoolingPoint> cooling_trace(const std::vector<double>& delta_grid, double n_in,
                                        const SystemParams& params,
                                        BranchPolicy policy = BranchPolicy::SweepFromRed);

/// Copy of `params` with the Kerr constant replaced.
SystemParams with_kerr(SystemParams params, double kerr);

} // namespace kerrcool

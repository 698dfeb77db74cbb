#pragma once

#include <numbers>
#include <string>
#include <vector>

namespace kerrcool {

// Internally every frequency is angular (rad/s). Hz only appears at I/O boundaries.
inline constexpr double two_pi = 2.0 * std::numbers::pi;
inline constexpr double hbar = 1.054571817e-34;  // J s
inline constexpr double k_boltzmann = 1.380649e-23; // J/K

constexpr double hz_to_rad(double f_hz) { return two_pi * f_hz; }
constexpr double rad_to_hz(double omega) { return omega / two_pi; }

struct CavityParams {
  double omega_c = 0.0;       // rad/s
  double kappa = 0.0;         // total linewidth, rad/s
  double kerr = 0.0;          // frequency shift per photon, rad/s (signed)
  double n_cav_thermal = 0.0; // bath occupation
};

struct MechParams {
  double omega_m = 0.0;   // rad/s
  double gamma_m = 0.0;   // intrinsic linewidth, rad/s
  double x_zpm = 0.0;     // m; 0 when unknown
  double n_thermal = 0.0; // bath occupation
};

struct CouplingParams {
  double g0 = 0.0;           // rad/s
  double flux_per_zpm = 0.0; // flux change per zero-point motion, in flux quanta; 0 when unknown
};

struct SystemParams {
  CavityParams cavity;
  MechParams mech;
  CouplingParams coupling;
};

/// Probe tone. detuning = omega_probe - omega_c.
struct DriveSpec {
  double detuning = 0.0; // rad/s
  double n_in = 0.0;     // input photon flux |alpha_in|^2, photons/s
};

/// Bose-Einstein occupation 1/(exp(hbar*omega/(k_B*T)) - 1). Throws DomainError for
/// non-positive arguments.
double thermal_occupation(double temperature_k, double omega);

/// Input photon flux for a drive power given in dBm at the top of a line with
/// `attenuation_db` of loss, at angular frequency `omega`.
double photon_flux_from_dbm(double power_dbm, double attenuation_db, double omega);

struct Violation {
  std::string field;
  std::string message;
};

/// Every violated invariant of `params`; empty when the parameter set is usable.
std::vector<Violation> validate(const SystemParams& params);

/// Device parameters quoted for the 201 Hz cooling measurement (100 mK bath).
SystemParams reference_device();

} // namespace kerrcool

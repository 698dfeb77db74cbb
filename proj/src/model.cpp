#include "kerrcool/model.hpp"

#include "kerrcool/errors.hpp"

#include <cmath>

namespace kerrcool {

double thermal_occupation(double temperature_k, double omega)
{
  if (!(temperature_k > 0.0) || !(omega > 0.0)) {
    throw DomainError("thermal_occupation: temperature and frequency must be positive");
  }
  const double x = hbar * omega / (k_boltzmann * temperature_k);
  return 1.0 / std::expm1(x);
}

double photon_flux_from_dbm(double power_dbm, double attenuation_db, double omega)
{
  if (!(omega > 0.0)) {
    throw DomainError("photon_flux_from_dbm: frequency must be positive");
  }
  const double watts = 1e-3 * std::pow(10.0, (power_dbm - attenuation_db) / 10.0);
  return watts / (hbar * omega);
}

namespace {

bool finite(double v) { return std::isfinite(v); }

} // namespace

std::vector<Violation> validate(const SystemParams& p)
{
  std::vector<Violation> out;
  auto check = [&out](bool ok, const char* field, const char* msg) {
    if (!ok) {
      out.push_back({field, msg});
    }
  };
  check(finite(p.cavity.omega_c) && p.cavity.omega_c >= 0.0, "cavity.omega_c", "must be finite and >= 0");
  check(finite(p.cavity.kappa) && p.cavity.kappa > 0.0, "cavity.kappa", "must be > 0");
  check(finite(p.cavity.kerr), "cavity.kerr", "must be finite");
  check(finite(p.cavity.n_cav_thermal) && p.cavity.n_cav_thermal >= 0.0, "cavity.n_cav_thermal",
        "must be >= 0");
  check(finite(p.mech.omega_m) && p.mech.omega_m > 0.0, "mech.omega_m", "must be > 0");
  check(finite(p.mech.gamma_m) && p.mech.gamma_m > 0.0, "mech.gamma_m", "must be > 0");
  check(finite(p.mech.x_zpm) && p.mech.x_zpm >= 0.0, "mech.x_zpm", "must be >= 0");
  check(finite(p.mech.n_thermal) && p.mech.n_thermal >= 0.0, "mech.n_thermal", "must be >= 0");
  check(finite(p.coupling.g0) && p.coupling.g0 >= 0.0, "coupling.g0", "must be >= 0");
  check(finite(p.coupling.flux_per_zpm) && p.coupling.flux_per_zpm >= 0.0, "coupling.flux_per_zpm",
        "must be >= 0");
  return out;
}

SystemParams reference_device()
{
  SystemParams p;
  p.cavity.omega_c = hz_to_rad(8.176e9);
  p.cavity.kappa = hz_to_rad(3.5e6);
  p.cavity.kerr = hz_to_rad(-12.2e3);
  p.cavity.n_cav_thermal = 0.0;
  p.mech.omega_m = hz_to_rad(274.41e3);
  p.mech.gamma_m = hz_to_rad(0.4);
  p.mech.n_thermal = thermal_occupation(0.1, p.mech.omega_m);
  p.coupling.g0 = hz_to_rad(201.0);
  p.coupling.flux_per_zpm = 0.38e-6;
  return p;
}

} // namespace kerrcool

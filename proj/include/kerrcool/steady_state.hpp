#pragma once

#include "kerrcool/model.hpp"

#include <optional>
#include <vector>

namespace kerrcool {

/// Classical steady state of the driven Kerr cavity.
struct SteadyState {
  std::vector<double> roots; ///< intracavity photon numbers, ascending (1 or 3 entries)
  std::vector<bool> stable;  ///< per root
  std::size_t selected = 0;  ///< index into roots chosen by the caller's branch policy
  double k_eff = 0.0;        ///< effective Kerr used for the cubic, rad/s
  bool near_degenerate = false; ///< two roots merged at a fold point

  double n_c() const { return roots.at(selected); }
  bool bistable() const { return roots.size() == 3; }
};

enum class BranchPolicy { SweepFromRed, SweepFromBlue, Lowest, Highest };

/// K_eff = K - 2 g0^2 omega_m / (omega_m^2 + gamma_m^2/4).
double effective_kerr(const SystemParams& params);

/// Left-hand side of the photon-number cubic, n [(-Delta + K n)^2 + (kappa/2)^2].
double cubic_response(double n_c, double detuning, double kappa, double k_eff);

/// d/dn of cubic_response; negative on the unstable middle branch.
double cubic_slope(double n_c, double detuning, double kappa, double k_eff);

/// All real roots of n [(-Delta + K_eff n)^2 + (kappa/2)^2] = kappa n_in, ascending and
/// Newton-polished. `selected` defaults to the lowest stable root.
SteadyState intracavity_roots(const DriveSpec& drive, const SystemParams& params);

/// Same cubic with an explicit Kerr constant (used when the mechanics is not static).
SteadyState intracavity_roots(double detuning, double n_in, double kappa, double k_eff);

/// kappa^2 / (3 sqrt(3) |K_eff|). Throws NoBistabilityError when K_eff == 0.
double bistability_threshold(const SystemParams& params);
double bistability_threshold(double kappa, double k_eff);

/// Picks a root. Sweep policies follow `previous` by continuity when given; without it
/// they start on the branch a sweep entering from that side would be on.
double select_branch(SteadyState& state, BranchPolicy policy,
                     std::optional<double> previous = std::nullopt);

/// Static mechanical position quadrature <q>_s = -sqrt(2) g0 omega_m n_c / (omega_m^2 + gamma_m^2/4).
double steady_displacement(double n_c, const SystemParams& params);

/// Photon number on a detuning sweep, carrying the branch along the sweep direction.
/// Returned in the order of `detunings`.
std::vector<SteadyState> sweep_steady_state(const std::vector<double>& detunings, double n_in,
                                            const SystemParams& params, BranchPolicy policy);

} // namespace kerrcool

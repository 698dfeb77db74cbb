#pragma once

#include "kerrcool/model.hpp"

#include <vector>

namespace kerrcool {

struct CoolingOptimum {
  double n_in = 0.0;
  double n_m = 0.0;
  double detuning = 0.0;           ///< probe detuning, rad/s
  double effective_detuning = 0.0; ///< Delta - K_eff n_c, rad/s
  double n_c = 0.0;
  bool at_cap = false;             ///< optimum sits on the power limit
};

struct OptimizeOptions {
  double cap_fraction = 0.99; ///< power limit as a fraction of the bistability threshold; <= 0: none
  double n_in_min = 0.0;      ///< 0: automatic
  double n_in_max = 0.0;      ///< used when uncapped; 0: automatic
  std::size_t power_grid = 24;
  std::size_t detuning_grid = 121;
};

/// Lowest occupation over the probe detuning at fixed input flux. The scan runs over the
/// effective detuning, where the photon number is single valued; points on the unstable
/// middle branch or with unstable mechanics are skipped. Throws InstabilityError when no
/// detuning is usable.
CoolingOptimum optimize_detuning(double n_in, const SystemParams& params,
                                 std::size_t grid = 121);

/// Outer minimization over the input flux (log grid, then Brent) of the inner optimum.
CoolingOptimum optimize_power(const SystemParams& params, const OptimizeOptions& options = {});
CoolingOptimum optimize_power(double g0, const SystemParams& params, double cap_fraction = 0.99);

/// Device used for the optimal-power comparison: the reference cavity and mechanics with
/// K/2pi = -12 kHz and a 40 mK mechanical bath.
SystemParams fig4c_device();

struct Fig4cRow {
  double g0 = 0.0;                 ///< rad/s
  CoolingOptimum nonlinear;        ///< with Kerr, capped power
  CoolingOptimum linear_same_power;///< K = 0 at the nonlinear optimum's input flux
  CoolingOptimum linear_ideal;     ///< K = 0, unconstrained power
};

/// Best reachable occupation against g0 for the Kerr cavity and its linear counterparts.
/// Rows are computed in parallel and returned in the order of `g0_grid`.
std::vector<Fig4cRow> fig4c_sweep(const std::vector<double>& g0_grid, const SystemParams& params,
                                  const OptimizeOptions& options = {});

} // namespace kerrcool

#pragma once

#include "kerrcool/analysis.hpp"
#include "kerrcool/model.hpp"
#include "kerrcool/spectrum.hpp"
#include "kerrcool/steady_state.hpp"

#include <vector>

namespace kerrcool {

/// Quasi-static Gaussian spread of the probe-cavity detuning.
struct FluxNoiseSpec {
  double sigma = 0.0;         // rad/s
  std::size_t n_samples = 50;
  double span = 2.0;          // half-width of the sampled interval in units of sigma
};

/// sigma = delta_phi / flux_per_zpm * g0 (flux in flux quanta).
double sigma_from_flux(double delta_phi, double flux_per_zpm, double g0);

struct DetuningSamples {
  std::vector<double> detunings; // rad/s, ascending
  std::vector<double> weights;   // sum to 1
};

/// Equally spaced detunings on delta_0 +/- span sigma with normalized Gaussian weights.
/// sigma = 0 collapses to the single point delta_0.
DetuningSamples gaussian_weights(const FluxNoiseSpec& spec, double delta_0);

struct CompositeResult {
  SpectrumTrace spectrum;          ///< weighted sum of the component spectra (empty if not requested)
  std::vector<double> detunings;   ///< rad/s
  std::vector<double> weights;     ///< renormalized over the stable samples; 0 when excluded
  std::vector<double> n_m;         ///< per sample; NaN when excluded
  double n_m_composite = 0.0;      ///< sum w_i n_m(delta_i)
  double excluded_weight = 0.0;    ///< Gaussian weight dropped for unstable samples
  std::size_t excluded = 0;
};

/// Components are computed on the branch a sweep in `policy` direction would follow.
/// Samples on an unstable branch or with unstable mechanics are dropped and the remaining
/// weights renormalized. Throws InstabilityError when no sample is stable.
CompositeResult composite_spectrum(double delta_0, double n_in, const SystemParams& params,
                                   const FluxNoiseSpec& spec,
                                   BranchPolicy policy = BranchPolicy::SweepFromRed,
                                   bool with_spectrum = true);

double composite_phonon_number(double delta_0, double n_in, const SystemParams& params,
                               const FluxNoiseSpec& spec,
                               BranchPolicy policy = BranchPolicy::SweepFromRed);

struct LinewidthFrequency {
  double gamma_hz = 0.0;
  double freq_hz = 0.0;
  analysis::DHOFitResult fit;
};

/// Lorentzian fit to the positive-frequency peak of a composite spectrum.
/// Throws DomainError when the peak is not resolvable (max <= 3 x median).
LinewidthFrequency composite_linewidth_frequency(const SpectrumTrace& composite);

} // namespace kerrcool

#include "kerrcool/fluxnoise.hpp"

#include "kerrcool/errors.hpp"
#include "kerrcool/fluctuations.hpp"
#include "kerrcool/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace kerrcool {

double sigma_from_flux(double delta_phi, double flux_per_zpm, double g0)
{
  if (!(flux_per_zpm > 0.0)) {
    throw DomainError("sigma_from_flux: flux per zero-point motion must be > 0");
  }
  if (!(delta_phi >= 0.0)) {
    throw DomainError("sigma_from_flux: flux noise must be >= 0");
  }
  return delta_phi / flux_per_zpm * g0;
}

DetuningSamples gaussian_weights(const FluxNoiseSpec& spec, double delta_0)
{
  if (!(spec.sigma >= 0.0) || spec.n_samples < 1 || !(spec.span > 0.0)) {
    throw DomainError("gaussian_weights: need sigma >= 0, n_samples >= 1, span > 0");
  }
  DetuningSamples s;
  if (spec.sigma == 0.0 || spec.n_samples == 1) {
    s.detunings = {delta_0};
    s.weights = {1.0};
    return s;
  }
  const std::size_t n = spec.n_samples;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = -spec.span + 2.0 * spec.span * static_cast<double>(i) / static_cast<double>(n - 1);
    s.detunings.push_back(delta_0 + u * spec.sigma);
    s.weights.push_back(std::exp(-0.5 * u * u));
    total += s.weights.back();
  }
  for (double& w : s.weights) {
    w /= total;
  }
  return s;
}

CompositeResult composite_spectrum(double delta_0, double n_in, const SystemParams& params,
                                   const FluxNoiseSpec& spec, BranchPolicy policy,
                                   bool with_spectrum)
{
  const DetuningSamples ds = gaussian_weights(spec, delta_0);
  const std::size_t n = ds.detunings.size();
  const auto states = sweep_steady_state(ds.detunings, n_in, params, policy);

  std::vector<LinearizedParams> lin(n);
  std::vector<bool> ok(n, false);
  CompositeResult out;
  out.detunings = ds.detunings;
  out.n_m.assign(n, std::numeric_limits<double>::quiet_NaN());
  parallel_for(n, [&](std::size_t i) {
    const DriveSpec drive{ds.detunings[i], n_in};
    const CoolingPoint p = cooling_point(drive, states[i], params);
    if (std::isfinite(p.n_m)) {
      out.n_m[i] = p.n_m;
      lin[i] = linearize(drive, states[i], params);
      ok[i] = true;
    }
  });

  double kept = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (ok[i]) {
      kept += ds.weights[i];
    } else {
      ++out.excluded;
      out.excluded_weight += ds.weights[i];
    }
  }
  if (out.excluded == n) {
    std::ostringstream msg;
    msg << "composite_spectrum: all " << n << " detuning samples are unstable";
    throw InstabilityError(msg.str());
  }
  out.weights.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (ok[i]) {
      out.weights[i] = ds.weights[i] / kept;
      out.n_m_composite += out.weights[i] * out.n_m[i];
    }
  }
  if (!with_spectrum) {
    return out;
  }

  std::vector<double> grid;
  for (std::size_t i = 0; i < n; ++i) {
    if (ok[i]) {
      grid = merge_grids(grid, spectrum_grid(lin[i]));
    }
  }
  out.spectrum.freq = grid;
  out.spectrum.psd.assign(grid.size(), 0.0);
  std::vector<SpectrumTrace> parts(n);
  parallel_for(n, [&](std::size_t i) {
    if (ok[i]) {
      parts[i] = mechanical_spectrum(grid, lin[i]);
    }
  });
  // fixed summation order keeps the result independent of scheduling
  for (std::size_t i = 0; i < n; ++i) {
    if (!ok[i]) {
      continue;
    }
    for (std::size_t k = 0; k < grid.size(); ++k) {
      out.spectrum.psd[k] += out.weights[i] * parts[i].psd[k];
    }
  }
  out.spectrum.units = PsdUnits::QuantaPerHz;
  std::ostringstream meta;
  meta << out.excluded_weight;
  out.spectrum.metadata["excluded_weight"] = meta.str();
  return out;
}

double composite_phonon_number(double delta_0, double n_in, const SystemParams& params,
                               const FluxNoiseSpec& spec, BranchPolicy policy)
{
  return composite_spectrum(delta_0, n_in, params, spec, policy, false).n_m_composite;
}

LinewidthFrequency composite_linewidth_frequency(const SpectrumTrace& s)
{
  check_trace(s);
  std::vector<double> positive;
  std::size_t ipk = s.size();
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.freq[i] > 0.0) {
      positive.push_back(s.psd[i]);
      if (ipk == s.size() || s.psd[i] > s.psd[ipk]) {
        ipk = i;
      }
    }
  }
  if (positive.size() < 8) {
    throw DomainError("composite_linewidth_frequency: no positive-frequency samples");
  }
  auto mid = positive.begin() + static_cast<std::ptrdiff_t>(positive.size() / 2);
  std::nth_element(positive.begin(), mid, positive.end());
  if (!(s.psd[ipk] > 3.0 * *mid)) {
    throw DomainError("composite_linewidth_frequency: no resolvable peak (max <= 3 x median)");
  }
  const double half = 0.5 * s.psd[ipk];
  std::size_t lo = ipk;
  while (lo > 0 && s.psd[lo] > half) {
    --lo;
  }
  std::size_t hi = ipk;
  while (hi + 1 < s.size() && s.psd[hi] > half) {
    ++hi;
  }
  const double fwhm = s.freq[hi] - s.freq[lo];
  const double f0 = s.freq[ipk];
  LinewidthFrequency out;
  out.fit = analysis::lorentzian_fit(s, {std::max(f0 - 10.0 * fwhm, 0.5 * f0), f0 + 10.0 * fwhm});
  out.gamma_hz = out.fit.linewidth;
  out.freq_hz = out.fit.center;
  return out;
}

} // namespace kerrcool

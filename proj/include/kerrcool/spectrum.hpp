#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace kerrcool {

enum class PsdUnits { QuantaPerHz, ZpmSquaredPerHz, DetectorPower };

std::string to_string(PsdUnits u);
PsdUnits psd_units_from_string(const std::string& s);

/// Power spectral density samples on an increasing grid of ordinary frequencies.
struct SpectrumTrace {
  std::vector<double> freq; // Hz, strictly increasing
  std::vector<double> psd;
  double enbw = 0.0; // Hz; 0 for synthetic (noise-free) traces
  PsdUnits units = PsdUnits::QuantaPerHz;
  std::map<std::string, std::string> metadata;

  std::size_t size() const { return freq.size(); }
};

/// Throws DomainError if the grid is not strictly increasing or a sample is not finite.
void check_trace(const SpectrumTrace& trace);

/// Trapezoidal integral of psd over freq.
double integrate_trace(const SpectrumTrace& trace);

/// Trapezoidal integral restricted to [f_lo, f_hi] (linear interpolation at the edges).
double integrate_trace(const SpectrumTrace& trace, double f_lo, double f_hi);

/// Linear interpolation of the trace at f (clamped to the end values outside the grid).
double interpolate(const SpectrumTrace& trace, double f);

/// CSV with header `freq_hz,psd`; lines starting with '#' are comments. Metadata and
/// ENBW are written as `# key=value` lines.
void write_csv(std::ostream& os, const SpectrumTrace& trace);
SpectrumTrace read_csv(std::istream& is);

/// Reads `<path>` and, when present, the JSON sidecar `<path>.json` carrying
/// `enbw_hz` and `units`.
SpectrumTrace load_spectrum(const std::string& path);

/// Sorted union of two grids with duplicates (within a relative 1e-14) removed.
std::vector<double> merge_grids(const std::vector<double>& a, const std::vector<double>& b);

} // namespace kerrcool

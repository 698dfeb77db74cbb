#include "kerrcool/spectrum.hpp"

#include "kerrcool/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace kerrcool {

std::string to_string(PsdUnits u)
{
  switch (u) {
  case PsdUnits::QuantaPerHz:
    return "quanta_per_hz";
  case PsdUnits::ZpmSquaredPerHz:
    return "xzpm2_per_hz";
  case PsdUnits::DetectorPower:
    return "detector_power";
  }
  return "unknown";
}

PsdUnits psd_units_from_string(const std::string& s)
{
  if (s == "quanta_per_hz") {
    return PsdUnits::QuantaPerHz;
  }
  if (s == "xzpm2_per_hz") {
    return PsdUnits::ZpmSquaredPerHz;
  }
  if (s == "detector_power" || s == "W" || s == "W/Hz") {
    return PsdUnits::DetectorPower;
  }
  throw DomainError("unknown PSD units '" + s + "'");
}

void check_trace(const SpectrumTrace& t)
{
  if (t.freq.size() != t.psd.size()) {
    throw DomainError("spectrum: freq and psd lengths differ");
  }
  for (std::size_t i = 0; i < t.freq.size(); ++i) {
    if (!std::isfinite(t.freq[i]) || !std::isfinite(t.psd[i])) {
      throw DomainError("spectrum: non-finite sample");
    }
    if (i > 0 && !(t.freq[i] > t.freq[i - 1])) {
      throw DomainError("spectrum: frequency grid not strictly increasing");
    }
  }
}

double integrate_trace(const SpectrumTrace& t)
{
  double acc = 0.0;
  for (std::size_t i = 1; i < t.freq.size(); ++i) {
    acc += 0.5 * (t.psd[i] + t.psd[i - 1]) * (t.freq[i] - t.freq[i - 1]);
  }
  return acc;
}

double interpolate(const SpectrumTrace& t, double f)
{
  if (t.freq.empty()) {
    throw DomainError("interpolate: empty trace");
  }
  if (f <= t.freq.front()) {
    return t.psd.front();
  }
  if (f >= t.freq.back()) {
    return t.psd.back();
  }
  const auto it = std::upper_bound(t.freq.begin(), t.freq.end(), f);
  const auto i = static_cast<std::size_t>(it - t.freq.begin());
  const double w = (f - t.freq[i - 1]) / (t.freq[i] - t.freq[i - 1]);
  return (1.0 - w) * t.psd[i - 1] + w * t.psd[i];
}

double integrate_trace(const SpectrumTrace& t, double f_lo, double f_hi)
{
  if (t.freq.size() < 2 || f_lo >= f_hi) {
    return 0.0;
  }
  f_lo = std::max(f_lo, t.freq.front());
  f_hi = std::min(f_hi, t.freq.back());
  if (f_lo >= f_hi) {
    return 0.0;
  }
  double acc = 0.0;
  double prev_f = f_lo;
  double prev_p = interpolate(t, f_lo);
  auto it = std::upper_bound(t.freq.begin(), t.freq.end(), f_lo);
  for (; it != t.freq.end() && *it < f_hi; ++it) {
    const auto i = static_cast<std::size_t>(it - t.freq.begin());
    acc += 0.5 * (prev_p + t.psd[i]) * (t.freq[i] - prev_f);
    prev_f = t.freq[i];
    prev_p = t.psd[i];
  }
  acc += 0.5 * (prev_p + interpolate(t, f_hi)) * (f_hi - prev_f);
  return acc;
}

void write_csv(std::ostream& os, const SpectrumTrace& t)
{
  os << "# enbw_hz=" << std::setprecision(17) << t.enbw << '\n';
  os << "# units=" << to_string(t.units) << '\n';
  for (const auto& [k, v] : t.metadata) {
    os << "# " << k << '=' << v << '\n';
  }
  os << "freq_hz,psd\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < t.size(); ++i) {
    os << t.freq[i] << ',' << t.psd[i] << '\n';
  }
}

SpectrumTrace read_csv(std::istream& is)
{
  SpectrumTrace t;
  std::string line;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty()) {
      continue;
    }
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        continue;
      }
      auto key = line.substr(1, eq - 1);
      key.erase(0, key.find_first_not_of(' '));
      const auto value = line.substr(eq + 1);
      if (key == "enbw_hz") {
        t.enbw = std::stod(value);
      } else if (key == "units") {
        t.units = psd_units_from_string(value);
      } else {
        t.metadata[key] = value;
      }
      continue;
    }
    if (!header_seen) {
      header_seen = true;
      if (line.rfind("freq_hz", 0) != 0) {
        throw DomainError("spectrum CSV: expected header 'freq_hz,psd'");
      }
      continue;
    }
    std::istringstream ss(line);
    std::string a;
    std::string b;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',')) {
      throw DomainError("spectrum CSV: malformed row '" + line + "'");
    }
    t.freq.push_back(std::stod(a));
    t.psd.push_back(std::stod(b));
  }
  check_trace(t);
  return t;
}

SpectrumTrace load_spectrum(const std::string& path)
{
  std::ifstream in(path);
  if (!in) {
    throw DomainError("cannot open spectrum file '" + path + "'");
  }
  SpectrumTrace t = read_csv(in);
  std::ifstream side(path + ".json");
  if (side) {
    const auto j = nlohmann::json::parse(side);
    if (j.contains("enbw_hz")) {
      t.enbw = j.at("enbw_hz").get<double>();
    }
    if (j.contains("units")) {
      t.units = psd_units_from_string(j.at("units").get<std::string>());
    }
  }
  return t;
}

std::vector<double> merge_grids(const std::vector<double>& a, const std::vector<double>& b)
{
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  std::vector<double> uniq;
  uniq.reserve(out.size());
  for (double f : out) {
    if (uniq.empty() || std::abs(f - uniq.back()) > 1e-14 * std::max(std::abs(f), 1.0)) {
      uniq.push_back(f);
    }
  }
  return uniq;
}

} // namespace kerrcool

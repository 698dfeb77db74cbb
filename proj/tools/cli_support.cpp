#include "cli_support.hpp"

#include "kerrcool/errors.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#ifndef KERRCOOL_VERSION
#define KERRCOOL_VERSION "0.0.0"
#endif

namespace kerrcool::cli {

namespace {

double number(const json& j, const char* key)
{
  const json& v = j.at(key);
  if (!v.is_number()) {
    throw ConfigError(std::string("expected a number for '") + key + "'");
  }
  return v.get<double>();
}

std::vector<double> number_list(const json& v, const std::string& key)
{
  if (v.is_number()) {
    return {v.get<double>()};
  }
  if (v.is_string()) {
    return parse_grid(v.get<std::string>());
  }
  if (!v.is_array() || v.empty()) {
    throw ConfigError("'" + key + "' must be a number, a non-empty array or a grid string");
  }
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) {
      throw ConfigError("'" + key + "' contains a non-numeric entry");
    }
    out.push_back(x.get<double>());
  }
  return out;
}

BranchPolicy branch_from(const std::string& s)
{
  if (s == "red") return BranchPolicy::SweepFromRed;
  if (s == "blue") return BranchPolicy::SweepFromBlue;
  if (s == "lowest") return BranchPolicy::Lowest;
  if (s == "highest") return BranchPolicy::Highest;
  throw ConfigError("sweep.branch must be one of red, blue, lowest, highest (got '" + s + "')");
}

// merges `patch` into `base`, rejecting keys the defaults do not know about
void merge_known(json& base, const json& patch, const std::string& where)
{
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) {
      throw ConfigError("unknown configuration key '" + path + "'");
    }
    json& slot = base[it.key()];
    if (slot.is_object() && it.value().is_object()) {
      merge_known(slot, it.value(), path);
    } else {
      slot = it.value();
    }
  }
}

} // namespace

json default_config()
{
  return json::parse(R"({
    "system": {
      "cavity_freq_hz": 8.176e9,
      "kappa_hz": 3.5e6,
      "kerr_hz": -12.2e3,
      "cavity_bath_occupation": 0.0,
      "mech_freq_hz": 274.41e3,
      "mech_linewidth_hz": 0.4,
      "mech_bath_temperature_k": 0.1,
      "mech_bath_occupation": null,
      "x_zpm_m": 0.0,
      "g0_hz": 201.0,
      "flux_per_zpm": 0.38e-6
    },
    "sweep": {
      "detuning_hz": "-6e6:1e6:141",
      "power": {"kind": "bistability_fraction", "values": [0.99], "attenuation_db": 0.0},
      "branch": "red",
      "g0_hz": "500:15000:30",
      "cap_fraction": 0.99
    },
    "fluxnoise": {
      "enabled": false,
      "delta_phi": 76.8e-6,
      "sigma_hz": null,
      "n_samples": 50,
      "span": 2.0
    },
    "output": {"directory": "out", "format": "csv"},
    "seed": 1
  })");
}

json load_config_file(const std::string& path)
{
  std::ifstream is(path);
  if (!is) {
    throw ConfigError("cannot open config file '" + path + "'");
  }
  json patch;
  try {
    patch = json::parse(is, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
  if (!patch.is_object()) {
    throw ConfigError("config file '" + path + "' must hold a JSON object");
  }
  json config = default_config();
  merge_known(config, patch, "");
  return config;
}

void apply_override(json& config, const std::string& assignment)
{
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key.path=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while ((pos = rest.find('.')) != std::string::npos) {
    parts.push_back(rest.substr(0, pos));
    rest = rest.substr(pos + 1);
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    json wrap = json::object();
    wrap[*it] = patch;
    patch = wrap;
  }
  merge_known(config, patch, "");
}

std::vector<double> parse_grid(const std::string& text)
{
  auto to_double = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      throw ConfigError("bad number '" + s + "' in grid '" + text + "'");
    }
    if (used != s.size() || !std::isfinite(v)) {
      throw ConfigError("bad number '" + s + "' in grid '" + text + "'");
    }
    return v;
  };
  if (text.empty()) {
    throw ConfigError("empty grid");
  }
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ':')) {
      parts.push_back(item);
    }
    if (parts.size() != 3) {
      throw ConfigError("grid '" + text + "' must be start:stop:count");
    }
    const double a = to_double(parts[0]);
    const double b = to_double(parts[1]);
    const double c = to_double(parts[2]);
    if (c < 1 || c != std::floor(c)) {
      throw ConfigError("grid '" + text + "' needs a positive integer count");
    }
    const auto n = static_cast<std::size_t>(c);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    return out;
  }
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(to_double(item));
  }
  return out;
}

std::vector<double> parse_grid(const json& value) { return number_list(value, "grid"); }

RunConfig parse_config(const json& config)
{
  RunConfig rc;
  rc.raw = config;
  try {
    const json& s = config.at("system");
    SystemParams& p = rc.system;
    p.cavity.omega_c = hz_to_rad(number(s, "cavity_freq_hz"));
    p.cavity.kappa = hz_to_rad(number(s, "kappa_hz"));
    p.cavity.kerr = hz_to_rad(number(s, "kerr_hz"));
    p.cavity.n_cav_thermal = number(s, "cavity_bath_occupation");
    p.mech.omega_m = hz_to_rad(number(s, "mech_freq_hz"));
    p.mech.gamma_m = hz_to_rad(number(s, "mech_linewidth_hz"));
    p.mech.x_zpm = number(s, "x_zpm_m");
    p.coupling.g0 = hz_to_rad(number(s, "g0_hz"));
    p.coupling.flux_per_zpm = number(s, "flux_per_zpm");
    if (s.at("mech_bath_occupation").is_null()) {
      p.mech.n_thermal = thermal_occupation(number(s, "mech_bath_temperature_k"), p.mech.omega_m);
    } else {
      p.mech.n_thermal = number(s, "mech_bath_occupation");
    }
    const auto violations = validate(p);
    if (!violations.empty()) {
      std::string msg = "invalid system parameters:";
      for (const auto& v : violations) {
        msg += " " + v.field + " (" + v.message + ")";
      }
      throw ConfigError(msg);
    }

    const json& sw = config.at("sweep");
    rc.detuning_hz = number_list(sw.at("detuning_hz"), "sweep.detuning_hz");
    const json& pw = sw.at("power");
    const std::string kind = pw.at("kind").get<std::string>();
    if (kind == "n_in") {
      rc.power.kind = PowerSpec::Kind::Flux;
    } else if (kind == "dbm") {
      rc.power.kind = PowerSpec::Kind::Dbm;
    } else if (kind == "bistability_fraction") {
      rc.power.kind = PowerSpec::Kind::BistabilityFraction;
    } else {
      throw ConfigError("sweep.power.kind must be n_in, dbm or bistability_fraction");
    }
    rc.power.values = number_list(pw.at("values"), "sweep.power.values");
    rc.power.attenuation_db = number(pw, "attenuation_db");
    rc.branch = branch_from(sw.at("branch").get<std::string>());
    rc.g0_hz = number_list(sw.at("g0_hz"), "sweep.g0_hz");
    rc.cap_fraction = number(sw, "cap_fraction");
    if (!(rc.cap_fraction > 0.0 && rc.cap_fraction <= 1.0)) {
      throw ConfigError("sweep.cap_fraction must lie in (0, 1]");
    }
    for (double g : rc.g0_hz) {
      if (!(g > 0.0)) {
        throw ConfigError("sweep.g0_hz entries must be positive");
      }
    }

    const json& fn = config.at("fluxnoise");
    rc.fluxnoise = fn.at("enabled").get<bool>();
    rc.noise.n_samples = fn.at("n_samples").get<std::size_t>();
    rc.noise.span = number(fn, "span");
    if (fn.at("sigma_hz").is_null()) {
      rc.noise.sigma = sigma_from_flux(number(fn, "delta_phi"), p.coupling.flux_per_zpm, p.coupling.g0);
    } else {
      rc.noise.sigma = hz_to_rad(number(fn, "sigma_hz"));
    }
    if (rc.noise.n_samples < 1 || !(rc.noise.span > 0.0) || !(rc.noise.sigma >= 0.0)) {
      throw ConfigError("fluxnoise: need n_samples >= 1, span > 0 and sigma >= 0");
    }

    const json& out = config.at("output");
    rc.output_dir = out.at("directory").get<std::string>();
    const std::string fmt = out.at("format").get<std::string>();
    if (fmt == "csv") {
      rc.format = OutputFormat::Csv;
    } else if (fmt == "json") {
      rc.format = OutputFormat::Json;
    } else {
      throw ConfigError("output.format must be csv or json");
    }
    rc.seed = config.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("configuration: ") + e.what());
  } catch (const DomainError& e) {
    throw ConfigError(std::string("configuration: ") + e.what());
  }
  return rc;
}

std::vector<double> input_fluxes(const RunConfig& config)
{
  std::vector<double> out;
  for (double v : config.power.values) {
    double n_in = 0.0;
    switch (config.power.kind) {
    case PowerSpec::Kind::Flux:
      n_in = v;
      break;
    case PowerSpec::Kind::Dbm:
      n_in = photon_flux_from_dbm(v, config.power.attenuation_db, config.system.cavity.omega_c);
      break;
    case PowerSpec::Kind::BistabilityFraction:
      try {
        n_in = v * bistability_threshold(config.system);
      } catch (const NoBistabilityError&) {
        throw ConfigError("power given as a bistability fraction but the cavity is linear");
      }
      break;
    }
    if (!(n_in >= 0.0) || !std::isfinite(n_in)) {
      throw ConfigError("input power must be non-negative");
    }
    out.push_back(n_in);
  }
  return out;
}

std::string config_hash(const json& config)
{
  // where and how results are written does not change them
  json hashed = config;
  hashed.erase("output");
  const std::string text = hashed.dump();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return os.str();
}

std::string version() { return KERRCOOL_VERSION; }

// ---------------------------------------------------------------- tables

void Table::add(std::vector<Cell> row)
{
  if (row.size() != columns.size()) {
    throw std::logic_error("table " + name + ": row width does not match the header");
  }
  rows.push_back(std::move(row));
}

const std::vector<std::pair<std::string, std::vector<Column>>>& table_schemas()
{
  static const std::vector<std::pair<std::string, std::vector<Column>>> schemas = {
      {"steady",
       {{"delta_hz", "probe detuning omega_p - omega_c, Hz"},
        {"n_in", "input photon flux, photons/s"},
        {"n_c", "intracavity photon number on the selected branch"},
        {"n_roots", "number of real roots of the photon-number cubic (1 or 3)"},
        {"root_low", "smallest root"},
        {"root_mid", "middle root (NaN when monostable)"},
        {"root_high", "largest root (NaN when monostable)"},
        {"branch_stable", "1 when the selected root is on a stable branch"}}},
      {"cool_trace",
       {{"delta_hz", "probe detuning, Hz"},
        {"n_in", "input photon flux, photons/s"},
        {"n_c", "intracavity photon number"},
        {"n_m", "mechanical occupation (NaN when unstable)"},
        {"gamma_opt_hz", "optical damping 2 Im Sigma_c(omega_m), Hz"},
        {"gamma_eff_hz", "total mechanical linewidth, Hz"},
        {"f_eff_hz", "shifted mechanical frequency, Hz"},
        {"bistable", "1 when three roots exist at this detuning"},
        {"branch_stable", "1 when the selected root is stable"},
        {"mech_stable", "1 when the linearized dynamics is stable"},
        {"n_m_composite", "flux-noise averaged occupation (NaN when disabled or unstable)"},
        {"status", "empty when ok, otherwise why n_m is missing"}}},
      {"spectrum",
       {{"freq_hz", "Fourier frequency relative to omega_m sidebands, Hz (both signs)"},
        {"psd", "phonon spectral density, quanta/Hz; integrates to n_m"}}},
      {"summary",
       {{"quantity", "name of the reported quantity"},
        {"value", "value"},
        {"unit", "unit of the value"}}},
      {"workcycle",
       {{"t_s", "time since the start of the recorded cycles, s"},
        {"x_over_xzpm", "prescribed mechanical displacement in units of x_zpm"},
        {"n_c", "intracavity photon number |alpha|^2"},
        {"re_alpha", "real part of the intracavity amplitude"},
        {"im_alpha", "imaginary part of the intracavity amplitude"}}},
      {"fluxnoise",
       {{"delta_hz", "centre probe detuning, Hz"},
        {"n_in", "input photon flux, photons/s"},
        {"n_m_noiseless", "occupation without flux noise (NaN when unstable)"},
        {"n_m_composite", "weighted occupation over the detuning distribution"},
        {"excluded_weight", "Gaussian weight of samples dropped as unstable"},
        {"excluded", "number of dropped samples"}}},
      {"fit_cavity",
       {{"quantity", "fitted parameter or derived quality factor"},
        {"value", "value"},
        {"unit", "unit of the value"}}},
      {"fit_spectrum",
       {{"bin", "bin index (input index without binning)"},
        {"traces", "number of averaged traces"},
        {"cavity_freq_hz", "mean cavity frequency of the bin, Hz (NaN when unknown)"},
        {"amplitude", "Lorentzian peak height above the offset"},
        {"center_hz", "peak frequency, Hz"},
        {"linewidth_hz", "FWHM, Hz"},
        {"offset", "flat background"},
        {"amplitude_err", "one-sigma error of amplitude"},
        {"center_err_hz", "one-sigma error of center_hz"},
        {"linewidth_err_hz", "one-sigma error of linewidth_hz"},
        {"snr_db", "10 log10((amplitude + offset) / offset)"},
        {"area_fit", "Lorentzian area, psd*Hz"},
        {"area_numeric", "trapezoid area above the floor, tail-corrected, psd*Hz"},
        {"area_numeric_err", "uncertainty of area_numeric"},
        {"outliers_removed", "samples replaced by the outlier filter"},
        {"accepted", "1 when the fit passed the SNR and linewidth checks"},
        {"reason", "rejection reason, empty when accepted"}}},
      {"calibrate",
       {{"quantity", "calibration result"},
        {"value", "value"},
        {"unit", "unit of the value"}}},
      {"calibrated_spectrum",
       {{"freq_hz", "absolute frequency, Hz"},
        {"psd", "displacement spectrum in x_zpm^2/Hz, single-sided, area 2 n_m"}}},
      {"fig4c",
       {{"g0_hz", "single-photon coupling, Hz"},
        {"n_m_kerr", "best occupation with Kerr, power capped at cap_fraction of bistability"},
        {"n_in_kerr", "input flux of that optimum, photons/s"},
        {"delta_kerr_hz", "probe detuning of that optimum, Hz"},
        {"at_cap", "1 when the Kerr optimum sits on the power cap"},
        {"n_m_linear_same_power", "best occupation with K = 0 at n_in_kerr"},
        {"n_m_linear_ideal", "best occupation with K = 0 at its own optimal power"},
        {"n_in_linear_ideal", "input flux of the linear optimum, photons/s"}}},
  };
  return schemas;
}

json schema_json()
{
  json out = json::object();
  out["version"] = version();
  json tables = json::object();
  for (const auto& [name, cols] : table_schemas()) {
    json c = json::array();
    for (const auto& col : cols) {
      c.push_back({{"name", col.name}, {"doc", col.doc}});
    }
    tables[name] = c;
  }
  out["tables"] = tables;
  return out;
}

std::string columns_help(const std::vector<std::string>& tables)
{
  std::ostringstream os;
  os << "\nOutput columns:\n";
  for (const auto& t : tables) {
    for (const auto& [name, cols] : table_schemas()) {
      if (name != t) {
        continue;
      }
      os << "  " << name << ":\n";
      for (const auto& c : cols) {
        os << "    " << std::left << std::setw(22) << c.name << c.doc << "\n";
      }
    }
  }
  return os.str();
}

std::string format_number(double v)
{
  if (std::isnan(v)) {
    return "nan";
  }
  if (std::isinf(v)) {
    return v > 0 ? "inf" : "-inf";
  }
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::filesystem::path write_table(const Table& table, const RunConfig& config,
                                  const Provenance& prov)
{
  const std::string key = table.schema.empty() ? table.name : table.schema;
  const std::vector<Column>* cols = nullptr;
  for (const auto& [name, c] : table_schemas()) {
    if (name == key) {
      cols = &c;
    }
  }
  if (cols == nullptr || cols->size() != table.columns.size()) {
    throw std::logic_error("table " + table.name + " does not match a registered schema");
  }
  for (std::size_t i = 0; i < cols->size(); ++i) {
    if ((*cols)[i].name != table.columns[i]) {
      throw std::logic_error("table " + table.name + ": column " + table.columns[i] +
                             " is not in the schema");
    }
  }

  std::filesystem::create_directories(config.output_dir);
  const bool as_json = table.force_format.value_or(config.format) == OutputFormat::Json;
  const auto path = config.output_dir / (table.name + (as_json ? ".json" : ".csv"));
  std::ofstream os(path);
  if (!os) {
    throw ConfigError("cannot write " + path.string());
  }
  if (as_json) {
    json rows = json::array();
    for (const auto& r : table.rows) {
      json row = json::array();
      for (const auto& c : r) {
        if (const double* d = std::get_if<double>(&c)) {
          // JSON has no NaN/inf
          row.push_back(std::isfinite(*d) ? json(*d) : json(nullptr));
        } else {
          row.push_back(std::get<std::string>(c));
        }
      }
      rows.push_back(row);
    }
    json doc = {{"provenance",
                 {{"tool", "kerrcool"},
                  {"version", version()},
                  {"command", prov.command},
                  {"config_sha256", prov.config_sha256},
                  {"seed", prov.seed}}},
                {"table", key},
                {"columns", table.columns},
                {"rows", rows}};
    os << doc.dump(1) << "\n";
  } else {
    os << "# kerrcool " << version() << "\n";
    os << "# command: " << prov.command << "\n";
    os << "# config_sha256: " << prov.config_sha256 << "\n";
    os << "# seed: " << prov.seed << "\n";
    os << "# table: " << key << "\n";
    for (std::size_t i = 0; i < table.columns.size(); ++i) {
      os << (i ? "," : "") << table.columns[i];
    }
    os << "\n";
    for (const auto& r : table.rows) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        os << (i ? "," : "");
        if (const double* d = std::get_if<double>(&r[i])) {
          os << format_number(*d);
        } else {
          std::string s = std::get<std::string>(r[i]);
          for (char& ch : s) {
            if (ch == ',' || ch == '\n') {
              ch = ';';
            }
          }
          os << s;
        }
      }
      os << "\n";
    }
  }
  if (!os) {
    throw ConfigError("write failed for " + path.string());
  }
  return path;
}

} // namespace kerrcool::cli

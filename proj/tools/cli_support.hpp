#pragma once

// Configuration, table output and provenance for the command-line front end.

#include "kerrcool/fluxnoise.hpp"
#include "kerrcool/model.hpp"
#include "kerrcool/steady_state.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace kerrcool::cli {

using json = nlohmann::json;

/// Bad configuration or command-line input (exit code 1).
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class OutputFormat { Csv, Json };

struct PowerSpec {
  enum class Kind { Flux, Dbm, BistabilityFraction } kind = Kind::BistabilityFraction;
  std::vector<double> values;
  double attenuation_db = 0.0;
};

struct RunConfig {
  SystemParams system;
  std::vector<double> detuning_hz;
  PowerSpec power;
  BranchPolicy branch = BranchPolicy::SweepFromRed;
  std::vector<double> g0_hz;  // fig4c grid
  double cap_fraction = 0.99;
  bool fluxnoise = false;
  FluxNoiseSpec noise;        // sigma in rad/s
  std::filesystem::path output_dir = "out";
  OutputFormat format = OutputFormat::Csv;
  std::uint64_t seed = 1;
  json raw;                   // effective configuration after overrides
};

/// Configuration with every default filled in (reference device, 100 mK bath).
json default_config();

/// Reads a JSON configuration; missing keys keep their defaults.
json load_config_file(const std::string& path);

/// Applies `a.b.c=value`; value is parsed as JSON, falling back to a plain string.
void apply_override(json& config, const std::string& assignment);

/// Validates and converts to internal units. Throws ConfigError.
RunConfig parse_config(const json& config);

/// `start:stop:count` (inclusive, linear), a single number, or a comma list.
std::vector<double> parse_grid(const std::string& text);
/// Grid from a JSON string (as above) or array of numbers.
std::vector<double> parse_grid(const json& value);

/// Input fluxes (photons/s) for the configured power values.
std::vector<double> input_fluxes(const RunConfig& config);

/// Hex SHA-256 of the canonical (sorted, compact) JSON text, without the output section.
std::string config_hash(const json& config);

std::string version();

// ---------------------------------------------------------------- tables

using Cell = std::variant<double, std::string>;

struct Column {
  std::string name;
  std::string doc;
};

struct Table {
  std::string name;               // file stem
  std::string schema;             // registered schema; empty: same as name
  std::optional<OutputFormat> force_format;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
  void add(std::vector<Cell> row);
};

/// Column documentation for every table the tool writes.
const std::vector<std::pair<std::string, std::vector<Column>>>& table_schemas();
json schema_json();
/// Help text listing the columns of the given tables.
std::string columns_help(const std::vector<std::string>& tables);

struct Provenance {
  std::string command;
  std::string config_sha256;
  std::uint64_t seed = 0;
};

/// Writes `<dir>/<name>.csv` or `.json` with the provenance header. Columns must match the
/// registered schema. Returns the path written.
std::filesystem::path write_table(const Table& table, const RunConfig& config,
                                  const Provenance& prov);

/// Shortest round-trip decimal text of a double.
std::string format_number(double v);

} // namespace kerrcool::cli

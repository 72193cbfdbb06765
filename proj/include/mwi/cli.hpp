#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mwi/array.hpp"
#include "mwi/entangle.hpp"
#include "mwi/montecarlo.hpp"
#include "mwi/noisefield.hpp"
#include "mwi/oracle.hpp"

// Command-line surface. A run is fully described by a RunConfig; physical
// inputs are dimensionless (units of x0 and 1/omega) except in scenario mode,
// which is SI.

namespace mwi::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

inline constexpr const char* kOutDirVariable = "MWI_OUT_DIR";
inline constexpr const char* kCsvHeader = "bin_center,density";

// A config that fails validation. The message names the failing precondition.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode { single, pair, array, entangle, oracle, scenario };

const char* to_string(Mode mode);
Mode parse_mode(const std::string& name);

struct RunConfig {
  Mode mode = Mode::pair;
  std::uint64_t seed = 1;
  std::uint64_t shots = 100000;
  int order = 1;
  unsigned threads = 1;
  double tolerance_eta = kDefaultEtaTolerance;

  // single, pair, array, oracle
  std::vector<InterferometerSpec> devices;
  double spacing = 1.0;
  Construction construction = Construction::independent_tree;
  NoiseModel noise;
  double path_step = 0.0;
  std::vector<double> injected_polynomial;
  double bins_per_period = 64.0;
  double half_width_sigmas = 6.0;

  // entangle
  std::vector<int> copies{1, 2, 4};
  PhaseDistribution phi = PhaseDistribution::uniform();
  PhaseDistribution dphi = PhaseDistribution::uniform();

  // oracle
  int paths = 20;
  GridParameters grid;
  int steps = 0;  // 0 picks minimum_split_steps

  // scenario (SI)
  double source_mass = 1.0;
  double site_spacing = 0.1;
  double delta_a = 6.67e-17;
  double reference_distance = 1000.0;
  std::vector<int> orders{0, 1, 2};

  std::filesystem::path out_dir;  // not echoed
};

// Built-in configuration of a mode before any user input is applied.
nlohmann::json default_config(Mode mode);

// Validates every precondition the run depends on. Throws ConfigError.
RunConfig parse_config(const nlohmann::json& config);

// Canonical form: parse_config(to_json(c)) reproduces c (out_dir and threads excepted).
nlohmann::json to_json(const RunConfig& config);

struct RunResult {
  nlohmann::json summary;  // deterministic in (config, seed)
  nlohmann::json timing;
  std::vector<std::filesystem::path> files;
};

// Runs the mode and writes CSVs, summary.json and timing.json into out_dir.
// Throws mwi::Error for numerical failures and ConfigError for bad input.
RunResult run(const RunConfig& config, std::ostream& log);

std::string format_number(double value);
void write_density_csv(const std::filesystem::path& path, const std::vector<double>& centers,
                       const std::vector<double>& values);

// Full command line: [mode] --config --seed --shots --order --out --tolerance-eta --threads.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mwi::cli

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "geoprob/error.hpp"
#include "geoprob/experiments.hpp"
#include "geoprob/functionals.hpp"
#include "geoprob/measures.hpp"
#include "geoprob/processes.hpp"

namespace geoprob {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kCodeVersion = "geoprob 0.1.0";

/// One violation per entry, each prefixed by its field path.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> issues);
  const std::vector<std::string>& issues() const { return issues_; }

 private:
  std::vector<std::string> issues_;
};

struct RunConfig {
  std::string experiment;
  int dimension = 1;
  FunctionalSpec model;
  DensitySpec density;
  TestFunction test_function;

  std::vector<double> lambda;
  std::vector<double> n;
  std::vector<double> t;
  std::vector<double> tau;
  std::vector<double> separation;
  std::vector<double> u;

  double beta = 0.25;
  long reps = 1000;
  long calibration_reps = 0;
  std::uint64_t master_seed = 0;
  Tolerances tolerances;
  std::optional<std::string> output_dir;

  // Driver-specific knobs.
  bool s_scaling = false;
  std::optional<double> expected_slope;
  std::vector<double> table_tau;
  long table_reps = 4000;
  int shells = 48;
  std::optional<double> direct_side;
  double rho = 2.0;
  int k_max = 10;
  int seeds = 100;
  double box_width = 4.0;
  int lil_seeds = 0;
  long lil_n_max = 65536;
  long sandwich_reps = 1000;

  /// The document as given (with any seed override applied).
  nlohmann::json document;
};

/// Names accepted in "experiment".
const std::vector<std::string>& experiment_names();

/// Typed config or ConfigError listing every violation.
RunConfig validate_config(const nlohmann::json& raw);

/// A manifest document is unwrapped to its "config" entry.
nlohmann::json load_config_document(const std::filesystem::path& path);

ExperimentReport run_report(const RunConfig& cfg, int jobs = 0);

/// Writes report.json, cells/*.csv and manifest.json under out_dir.
/// Returns 0 when every verdict passes, 2 otherwise. Throws Error(Io) on
/// unwritable output.
int run_experiment(const RunConfig& cfg, const std::filesystem::path& out_dir, int jobs = 0);

void write_report_files(const RunConfig& cfg, const ExperimentReport& report,
                        const std::filesystem::path& out_dir);

}  // namespace geoprob

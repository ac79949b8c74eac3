#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoprob/estimators.hpp"
#include "geoprob/functionals.hpp"
#include "geoprob/gibbs.hpp"
#include "geoprob/measures.hpp"
#include "geoprob/processes.hpp"

namespace geoprob {

/// Named tolerances. Every verdict looks its threshold up here.
class Tolerances {
 public:
  Tolerances() = default;
  Tolerances(std::map<std::string, double> values) : values_(std::move(values)) {}  // NOLINT
  double at(const std::string& key) const;
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, double v) { values_[key] = v; }
  const std::map<std::string, double>& values() const { return values_; }

 private:
  std::map<std::string, double> values_;
};

struct Verdict {
  std::string name;
  bool pass = false;
  double statistic = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct ReportCell {
  std::string name;
  std::map<std::string, double> params;
  Estimate estimate;
  std::string status = "ok";
};

/// Plain numeric table written to cells/<name>.csv.
struct CsvTable {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

struct ExperimentReport {
  std::string experiment;
  nlohmann::json parameters = nlohmann::json::object();
  std::vector<ReportCell> cells;
  std::vector<Verdict> verdicts;
  std::vector<CsvTable> tables;
  std::uint64_t master_seed = 0;

  bool passed() const;
  const ReportCell* cell(const std::string& name) const;
  const Verdict* verdict(const std::string& name) const;
  nlohmann::json to_json() const;
  void add_verdict(std::string name, bool pass, double statistic, double tolerance,
                   std::string detail = {});
};

void write_csv_table(std::ostream& out, const CsvTable& table);

/// Inputs shared by every driver.
struct ModelSetup {
  FunctionalSpec spec;
  TestFunction f;
  DensitySpec kappa;
  long reps = 1000;
  /// Replicates of the independent centering run (0: same as reps).
  long calibration_reps = 0;
  SeedSpec seed;
  Tolerances tol;
  int jobs = 0;
};

/// How a driver obtains V (and delta) tables when a quadrature target is needed.
struct TableSource {
  std::vector<double> tau;  // empty: derived from the density range
  long reps = 4000;
  int shells = 48;
};

/// <f, mu> under P_{lambda kappa} for replicate streams seed.child(r).
std::vector<double> sample_pairings(const ModelSetup& m, double lambda, long reps,
                                    const SeedSpec& seed);

/// Independent estimate of E<f, mu>: exact for TrivialOne, Monte Carlo otherwise.
Estimate calibration_mean(const ModelSetup& m, double lambda);

VTable build_vtable(const ModelSetup& m, const TableSource& src);
DeltaTable build_delta_table(const ModelSetup& m, const TableSource& src);

// ---------------------------------------------------------------------------
// Drivers

ExperimentReport log_laplace_convergence(const ModelSetup& m, const std::vector<double>& lambdas,
                                         double beta, const TableSource& tables,
                                         bool s_scaling = false);

ExperimentReport cumulant_scaling(const ModelSetup& m, const std::vector<double>& lambdas,
                                  std::optional<double> expected_slope = std::nullopt);

ExperimentReport mdp_tail(const ModelSetup& m, double lambda, double beta,
                          const std::vector<double>& t_grid, const TableSource& tables);

/// LIL trajectories over several master seeds (seed.child(s)).
ExperimentReport lil_trajectory(const ModelSetup& m, double rho, int k_max, int seeds);

ExperimentReport mixing_decay(const ModelSetup& m, double lambda, double box_width,
                              const std::vector<double>& separations);

/// lil_seeds > 0 adds the classical Poisson(1) running-LIL calibration.
ExperimentReport depoissonization(const ModelSetup& m, const std::vector<double>& n_grid,
                                  const TableSource& tables, int lil_seeds = 0,
                                  long lil_n_max = 1 << 16);

ExperimentReport estimate_v_table(const ModelSetup& m, int dim, const std::vector<double>& taus,
                                  int shells, std::optional<double> direct_side);

ExperimentReport estimate_delta_table(const ModelSetup& m, int dim,
                                      const std::vector<double>& taus, int shells);

ExperimentReport gibbs_check(const ModelSetup& m, double lambda, const std::vector<double>& u_grid,
                             long sandwich_reps);

// ---------------------------------------------------------------------------
// Small statistics helpers shared with tests.

double normal_upper_tail(double z);
/// Wilson score interval for k successes in n trials at z.
std::pair<double, double> wilson_interval(long k, long n, double z);
/// Chi-square goodness of fit of integer counts against Poisson(mean), with
/// bins pooled to expected >= 5. Returns the p-value.
double poisson_chi_square_p(const std::vector<long>& counts, double mean);

struct SlopeFit {
  double slope = 0.0;
  double slope_se = 0.0;
  double intercept = 0.0;
};
/// Weighted least squares y = a + b x with weights w.
SlopeFit weighted_fit(const std::vector<double>& x, const std::vector<double>& y,
                      const std::vector<double>& w);

}  // namespace geoprob

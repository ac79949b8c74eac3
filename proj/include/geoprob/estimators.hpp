#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "geoprob/estimate.hpp"
#include "geoprob/functionals.hpp"
#include "geoprob/measures.hpp"
#include "geoprob/processes.hpp"

namespace geoprob {

// ---------------------------------------------------------------------------
// Stationary estimators at intensity tau (unscaled coordinates)

/// Options shared by the shell estimators. Radii default per model.
struct ShellOptions {
  int dim = 1;
  double tau = 1.0;
  std::optional<double> r_max;
  /// Radius of the neighbourhood kept around each scored point.
  std::optional<double> margin;
  int shells = 48;
  long reps = 1000;
  SeedSpec seed;
  int jobs = 0;
};

/// Default outer shell radius and stabilization margin for a model.
std::pair<double, double> default_shell_radii(const FunctionalSpec& spec, int dim, double tau);

/// E[xi(0; P_tau + 0)].
Estimate estimate_mean_score(const FunctionalSpec& spec, const ShellOptions& opt);

/// V(tau) = E[xi(0)^2] + tau * int (E[xi(0; P+y) xi(y; P+0)] - m^2) dy by
/// radial shells. Metadata: mean, truncation_radius, shells_used.
Estimate estimate_v(const FunctionalSpec& spec, const ShellOptions& opt);

/// Var(H) / (tau * side^d) on a torus of the given side.
Estimate estimate_v_direct(const FunctionalSpec& spec, int dim, double tau, double side,
                           long reps, const SeedSpec& seed, int jobs = 0);

enum class DeltaRoute { Window, Insertion };
const char* to_string(DeltaRoute route);

/// Mean add-one cost. Window route uses a ball of radius r_max + margin.
Estimate estimate_delta(const FunctionalSpec& spec, DeltaRoute route, const ShellOptions& opt);

// ---------------------------------------------------------------------------
// Tables and quadrature

/// Pointwise estimates on an increasing tau grid, interpolated by monotone
/// cubic (PCHIP) in tau. Evaluation outside the grid throws.
struct TauTable {
  std::vector<double> tau;
  std::vector<Estimate> values;
  std::string label;

  void validate() const;
  double operator()(double t) const;
  TauTable perturbed(std::size_t node, double delta) const;
  static TauTable constant(double value, std::vector<double> grid, std::string label = {});
};
using VTable = TauTable;
using DeltaTable = TauTable;

/// CSV columns tau,value,se,reps.
void write_table_csv(std::ostream& out, const TauTable& table);

/// Monotone cubic Hermite interpolation (Fritsch-Carlson).
double pchip(const std::vector<double>& x, const std::vector<double>& y, double at);

/// Tensor midpoint rule on [0,1]^d with n nodes per axis.
double midpoint_rule(const std::function<double(const Vec&)>& g, int dim, int n);

struct QuadratureResult {
  double value = 0.0;
  int nodes = 0;
  bool converged = false;
};

/// Starts at n0 nodes per axis and doubles until the relative change is below tol.
QuadratureResult refined_quadrature(const std::function<double(const Vec&)>& g, int dim,
                                    double tol = 1e-4, int n0 = 64);

/// int f^2 V(kappa) kappa dx with se propagated from the table.
Estimate estimate_sigma_limit(const TestFunction& f, const DensitySpec& kappa,
                              const VTable& vtable);

/// int f^2 V(kappa) kappa - (int f delta(kappa) kappa)^2, clamped at 0.
Estimate estimate_sigma2_binomial(const TestFunction& f, const DensitySpec& kappa,
                                  const VTable& vtable, const DeltaTable& dtable);

/// int f delta(kappa) kappa dx.
Estimate estimate_gamma(const TestFunction& f, const DensitySpec& kappa, const DeltaTable& dtable);

// ---------------------------------------------------------------------------
// Sample statistics

/// k-statistics of orders 1..4 with leave-one-out jackknife standard errors.
struct CumulantSet {
  std::array<Estimate, 4> k;
  long n = 0;
  const Estimate& order(int j) const { return k.at(static_cast<std::size_t>(j - 1)); }
};

CumulantSet empirical_cumulants(const std::vector<double>& samples);

/// alpha^{-2} log mean exp(alpha lambda^{-1/2} x) over centered samples x.
/// Metadata holds ess; a warning "unreliable-estimate" marks ess < 30.
/// calibration_se is the standard error of the centering mean.
Estimate empirical_log_laplace(const std::vector<double>& centered, double lambda, double alpha,
                               double calibration_se = 0.0);

// ---------------------------------------------------------------------------
// Rate functions

double rate_scalar(double t, double sigma);

/// Density of nu against V(kappa) kappa dx on the midpoint grid, first axis fastest.
struct DensityGrid {
  int n = 16;
  std::vector<double> values;
};
using RateInput = std::variant<DensityGrid, EmpiricalMeasure>;

/// 1/2 int rho^2 dmu; +inf for atomic input.
double rate_measure(const RateInput& nu, const VTable& vtable, const DensitySpec& kappa);

/// C_ij = int f_i f_j V(kappa) kappa dx.
Eigen::MatrixXd covariance_matrix(const std::vector<TestFunction>& fs, const DensitySpec& kappa,
                                  const VTable& vtable, int nodes = 64);

/// 1/2 <t, C^{-1} t>; throws LinearDependence when C is near singular.
double rate_from_covariance(const Eigen::VectorXd& t, const Eigen::MatrixXd& c);

double rate_multivariate(const Eigen::VectorXd& t, const std::vector<TestFunction>& fs,
                         const DensitySpec& kappa, const VTable& vtable);

}  // namespace geoprob

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "geoprob/functionals.hpp"
#include "geoprob/measures.hpp"
#include "geoprob/processes.hpp"

namespace geoprob {

/// Exponential tilt exp(u <f, mu>) of P_{lambda kappa}.
struct TiltParams {
  double u = 0.0;
  TestFunction f;
  FunctionalSpec functional;

  void validate() const;
  /// ||f|| * C: the bound on |Delta_f|.
  double increment_bound(int dim) const;
};

struct BirthDeathEvent {
  enum class Kind { Regular, Exceptional };
  double birth = 0.0;
  Vec position = Vec::Zero();
  double lifetime = 0.0;
  double beta = 0.0;
  Kind kind = Kind::Regular;
  std::int64_t id = 0;
};

/// Dominating birth-death history on (-horizon, 0].
struct BirthDeathTrajectory {
  std::vector<BirthDeathEvent> events;
  double horizon = 0.0;
  /// Latest instant in (-horizon, 0] at which the dominating process was empty.
  std::optional<double> empty_epoch;
  double a = 0.0;
  double b = 0.0;
  int doublings = 0;
};

struct SandwichSample {
  PointConfiguration low;
  PointConfiguration mid;
  PointConfiguration high;
  BirthDeathTrajectory trajectory;
};

/// One dominating trajectory trimmed three ways: threshold a/b (low), the
/// tilted acceptance (mid, exact by coupling from the past) and 1 (high).
SandwichSample sandwich_triple(const TiltParams& tilt, double lambda, const DensitySpec& kappa,
                               const SeedSpec& seed, double horizon_cap = 65536.0);

PointConfiguration sample_tilted(const TiltParams& tilt, double lambda, const DensitySpec& kappa,
                                 const SeedSpec& seed, double horizon_cap = 65536.0);

/// <f, mu> for a configuration on [0,1]^d scored at scale lambda.
double pairing(const FunctionalSpec& spec, const TestFunction& f, const PointConfiguration& config,
               double lambda, const SeedSpec& seed);

struct DerivativeRow {
  double u = 0.0;
  std::string quantity;  // "first" or "second"
  double lhs = 0.0;      // finite difference of the empirical log-MGF
  double rhs = 0.0;      // moment under the tilted sampler (0 for the centered identity)
  double se = 0.0;       // combined standard error
};

struct DerivativeReport {
  std::vector<DerivativeRow> rows;
  double epsilon = 0.0;
};

/// Compares finite differences of log E exp(h <f, mu>) with the mean and
/// variance of <f, mu> under the tilted sampler at each u.
DerivativeReport tilt_derivative_check(const TiltParams& base, const std::vector<double>& u_grid,
                                       double lambda, const DensitySpec& kappa, long reps,
                                       const SeedSpec& seed, double epsilon = 0.02, int jobs = 0);

}  // namespace geoprob

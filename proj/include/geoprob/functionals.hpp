#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "geoprob/processes.hpp"

namespace geoprob {

// Model families. Lengths (radii, thresholds) are in rescaled units, i.e. the
// coordinates lambda^{1/d} x in which the point process has unit intensity.

struct TrivialOne {};
/// Random sequential packing of unit-volume balls.
struct RsaPacking {};
/// Seeds with initial radius rho (grain_radius mark) growing at speed v up to
/// radius_cap. Accepted cells are balls of radius min(rho + v (t - T), cap).
struct BirthGrowth {
  MarkDistribution radius = MarkDistribution::fixed(0.5);
  MarkDistribution speed = MarkDistribution::fixed(1.0);
  double radius_cap = 1.0;
};
/// Volume of (union of grain balls) inside the Voronoi cell, clipped to the window.
struct GermGrainVolume {
  MarkDistribution grain = MarkDistribution::fixed(0.5);
  long volume_mc_samples = 2000;
};
/// 1 iff the nearest-neighbour distance is strictly below t.
struct NnThreshold {
  double t = 1.0;
};
/// 1 iff the k-NN degree equals m. Directed uses in-degree in NG'.
struct NnDegree {
  int k = 1;
  int m = 1;
  bool directed = false;
};

using Model = std::variant<TrivialOne, RsaPacking, BirthGrowth, GermGrainVolume, NnThreshold,
                           NnDegree>;

struct FunctionalSpec {
  Model model = TrivialOne{};
  /// Deterministic bound C on the total absolute change sum_y |xi(y; X u x) - xi(y; X)|
  /// (including x itself) caused by one insertion.
  std::optional<double> increment_bound;

  void validate() const;
  std::string name() const;
  bool is_indicator() const;
  bool needs_times() const;
  /// Marks this functional reads, drawn from its own distributions.
  MarkPlan mark_plan() const;
  /// increment_bound when set, otherwise a model default for dimension d
  /// (throws for packing models, which have no bounded-increment constant).
  double increment_bound_for(int d) const;
};

/// Per-point scores, aligned with the configuration order.
struct ScoreVector {
  std::vector<std::int64_t> ids;
  std::vector<double> values;
  double lambda = 1.0;

  double total() const;
};

/// xi_lambda(x; X) = xi(lambda^{1/d} x; lambda^{1/d} X) for every x in X.
ScoreVector score_configuration(const FunctionalSpec& spec, const PointConfiguration& config,
                                double lambda, const SeedSpec& seed);

/// Scores of an already rescaled configuration (lambda = 1).
std::vector<double> score_rescaled(const FunctionalSpec& spec, const PointConfiguration& config,
                                   const SeedSpec& seed);

/// H(X) = sum of scores on a rescaled configuration.
double total_score(const FunctionalSpec& spec, const PointConfiguration& config,
                   const SeedSpec& seed);

/// Sequential packing in arrival-time order (ties by id) with cell lists.
std::vector<std::uint8_t> rsa_pack(const PointConfiguration& config, double r);
/// Quadratic reference implementation.
std::vector<std::uint8_t> rsa_pack_naive(const PointConfiguration& config, double r);

std::vector<std::uint8_t> birth_growth_accept(const PointConfiguration& config,
                                              double radius_cap);

/// Monte Carlo estimate of L_lambda(x; X) for the point at `index`.
Estimate germ_grain_volume(const PointConfiguration& config, std::size_t index, double lambda,
                           long n_mc, const SeedSpec& seed);
std::vector<double> germ_grain_scores(const PointConfiguration& rescaled, long n_mc,
                                      const SeedSpec& seed);

struct KnnGraph {
  /// out[i]: indices of the min(k, n-1) nearest neighbours of i, nearest first.
  std::vector<std::vector<std::size_t>> out;
  /// Undirected edges (i < j), sorted.
  std::vector<std::pair<std::size_t, std::size_t>> edges;

  std::vector<int> undirected_degree() const;
  std::vector<int> in_degree() const;
};

KnnGraph knn_graph(const PointConfiguration& config, int k);

ScoreVector nn_indicator(const PointConfiguration& config, double t, double lambda);
std::vector<double> nn_threshold_scores(const PointConfiguration& rescaled, double t);
std::vector<double> nn_degree_scores(const PointConfiguration& rescaled, const NnDegree& model);

/// H(X u {x}) - H(X) on the lambda-rescaled configuration.
double add_one_increment(const FunctionalSpec& spec, const MarkedPoint& x,
                         const PointConfiguration& config, double lambda, const SeedSpec& seed);

struct CausalCluster {
  std::vector<std::int64_t> ids;
  double diameter = 0.0;
};

/// Points linked to `index` by chains of strictly overlapping balls of radius r
/// with monotone arrival times, in both time directions.
CausalCluster causal_cluster(const PointConfiguration& config, std::size_t index, double r);

}  // namespace geoprob

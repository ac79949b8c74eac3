#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "geoprob/geometry.hpp"
#include "geoprob/rng.hpp"

namespace geoprob {

struct MarkedPoint {
  Vec position = Vec::Zero();
  std::optional<double> time;
  std::optional<double> grain_radius;
  std::optional<double> growth_speed;
  std::int64_t id = 0;
};

struct PointConfiguration {
  Window window;
  std::vector<MarkedPoint> points;
  std::optional<double> intensity;

  int dim() const { return window.dim; }
  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  std::vector<Vec> positions() const;
  std::vector<std::int64_t> ids() const;
  /// Throws unless every point is inside the window and ids are distinct.
  void validate() const;
  /// Copy with positions and window multiplied by s (marks untouched).
  PointConfiguration rescaled(double s) const;
};

/// Continuous density kappa on [0,1]^d.
class DensitySpec {
 public:
  struct Constant {
    double c = 1.0;
  };
  /// kappa(x) = prod_i p_i(x_i), p_i given by ascending coefficients.
  struct ProductPolynomial {
    std::vector<std::vector<double>> coeffs;
  };
  /// Values on a regular grid including both endpoints, multilinear in between.
  struct GridTable {
    std::vector<int> shape;
    std::vector<double> values;  // first axis fastest
  };
  using Variant = std::variant<Constant, ProductPolynomial, GridTable>;

  DensitySpec() : DensitySpec(Constant{1.0}, 1) {}
  /// Polynomial and grid variants are renormalized to unit mass; Constant is
  /// kept as given (it doubles as a homogeneous intensity multiplier).
  DensitySpec(Variant v, int dim);

  static DensitySpec constant(double c, int dim) { return DensitySpec(Constant{c}, dim); }

  double operator()(const Vec& x) const;
  int dim() const { return dim_; }
  const Variant& variant() const { return variant_; }
  /// Upper bound: exact for Constant/GridTable, 64^d grid max x 1.05 otherwise.
  double max_bound() const { return max_bound_; }
  /// Lower bound: exact for Constant/GridTable, 64^d grid min / 1.05 otherwise.
  double min_bound() const { return min_bound_; }
  double integral() const { return integral_; }
  bool is_constant() const { return std::holds_alternative<Constant>(variant_); }

 private:
  double raw(const Vec& x) const;

  Variant variant_;
  int dim_;
  double scale_ = 1.0;
  double max_bound_ = 1.0;
  double min_bound_ = 1.0;
  double integral_ = 1.0;
};

/// Mark distribution. Exponential exists so unbounded requests can be rejected.
struct MarkDistribution {
  enum class Kind { Fixed, Uniform, Exponential };
  Kind kind = Kind::Fixed;
  double a = 1.0;  // Fixed: value; Uniform: lower; Exponential: rate
  double b = 1.0;  // Uniform: upper

  static MarkDistribution fixed(double v) { return {Kind::Fixed, v, v}; }
  static MarkDistribution uniform(double lo, double hi) { return {Kind::Uniform, lo, hi}; }
  static MarkDistribution exponential(double rate) { return {Kind::Exponential, rate, 0.0}; }

  double sample(Rng& rng) const;
  std::optional<double> upper_bound() const;
  double lower_bound() const;
  double mean() const;
  double moment(int k) const;
};

struct MarkPlan {
  bool times = false;
  std::optional<MarkDistribution> grain_radius;
  std::optional<MarkDistribution> growth_speed;
  double radius_cap = 1e300;
};

PointConfiguration sample_homogeneous_poisson(double tau, const Window& window,
                                              const SeedSpec& seed);

/// P_{lambda kappa} on [0,1]^d by thinning a homogeneous process of intensity
/// lambda * max kappa.
PointConfiguration sample_inhomogeneous_poisson(double lambda, const DensitySpec& kappa,
                                                const SeedSpec& seed);

/// Exactly n i.i.d. points with density kappa (rejection against max kappa).
PointConfiguration sample_binomial(long n, const DensitySpec& kappa, const SeedSpec& seed);

/// Unit-intensity process on (R+)^d x R+ restricted to the region
/// [0, lambda^{1/d}]^d x [0, kappa(lambda^{-1/d} x)], unscaled. Each unit
/// lattice cell (and unit height layer) draws from its own stream, so calls with
/// different lambda share every cell they have in common. Arrival times are
/// attached per point from the same cell stream.
PointConfiguration nested_window_coupling_unscaled(const SeedSpec& master, double lambda,
                                                   const DensitySpec& kappa);

/// The same set mapped back to [0,1]^d: a realization of P_{lambda kappa}.
PointConfiguration nested_window_coupling(const SeedSpec& master, double lambda,
                                          const DensitySpec& kappa);

PointConfiguration attach_marks(const PointConfiguration& config, const MarkPlan& plan,
                                const SeedSpec& seed);

/// CSV with columns id,x1..xd,time,grain_radius,growth_speed[,xi].
void write_csv(std::ostream& out, const PointConfiguration& config,
               const std::vector<double>* scores = nullptr);
PointConfiguration read_csv(std::istream& in, const Window& window);

/// Locale-independent shortest round-trip formatting.
std::string format_double(double v);

}  // namespace geoprob

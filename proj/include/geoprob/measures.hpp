#pragma once

#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "geoprob/functionals.hpp"
#include "geoprob/geometry.hpp"
#include "geoprob/processes.hpp"

namespace geoprob {

/// Continuous test function on [0,1]^d.
class TestFunction {
 public:
  struct Constant {
    double c = 1.0;
  };
  struct Coordinate {
    int axis = 0;
  };
  /// prod_i cos(pi k_i x_i)
  struct CosineProduct {
    std::vector<int> frequency;
  };
  /// Product of smooth bumps supported in [delta, 1 - delta] per axis; sup 1.
  struct BoundaryBump {
    double delta = 0.25;
  };
  using Variant = std::variant<Constant, Coordinate, CosineProduct, BoundaryBump>;

  TestFunction() : TestFunction(Constant{1.0}) {}
  TestFunction(Variant v);  // NOLINT(google-explicit-constructor)

  static TestFunction constant(double c) { return TestFunction(Constant{c}); }
  static TestFunction coordinate(int axis) { return TestFunction(Coordinate{axis}); }
  static TestFunction cosine(std::vector<int> k) { return TestFunction(CosineProduct{std::move(k)}); }
  static TestFunction bump(double delta) { return TestFunction(BoundaryBump{delta}); }

  double operator()(const Vec& x, int dim) const;
  double sup_norm() const { return sup_norm_; }
  const Variant& variant() const { return variant_; }
  std::string describe() const;

  /// Returns a copy multiplied by s (Constant only stores the product; other
  /// variants carry the factor separately).
  TestFunction scaled(double s) const;
  double factor() const { return factor_; }

 private:
  Variant variant_;
  double factor_ = 1.0;
  double sup_norm_ = 1.0;
};

/// Weighted atoms; weights may be signed when used as a difference measure.
struct EmpiricalMeasure {
  int dim = 1;
  std::vector<Vec> positions;
  std::vector<double> weights;
  double lambda = 1.0;

  std::size_t size() const { return weights.size(); }
  double total_mass() const;
};

EmpiricalMeasure build_measure(const ScoreVector& scores, const PointConfiguration& config);

double integrate_test_function(const TestFunction& f, const EmpiricalMeasure& mu);

/// alpha^{-1} lambda^{-1/2} (raw - calibration_mean), elementwise.
std::vector<double> center_and_scale(const std::vector<double>& raw, double calibration_mean,
                                     double lambda, double alpha);

/// sum_k 2^{-k} |<f_k, a> - <f_k, b>| / ||f_k||, k = 1..|W|.
double dist_w(const EmpiricalMeasure& a, const EmpiricalMeasure& b,
              const std::vector<TestFunction>& family);

/// The family used by the LIL driver: constant, first three coordinates, first
/// three cosine products and one boundary bump.
std::vector<TestFunction> default_w_family(int dim, double bump_delta);

/// CSV columns lambda,alpha,value.
void write_series_csv(std::ostream& out, const std::vector<double>& lambdas,
                      const std::vector<double>& alphas, const std::vector<double>& values);

}  // namespace geoprob

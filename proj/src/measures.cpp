#include "geoprob/measures.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <unordered_map>

namespace geoprob {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double bump1(double s, double delta) {
  const double u = (s - delta) / (1.0 - 2.0 * delta);
  if (u <= 0.0 || u >= 1.0) return 0.0;
  const double z = 2.0 * u - 1.0;
  return std::exp(1.0 - 1.0 / (1.0 - z * z));
}

}  // namespace

TestFunction::TestFunction(Variant v) : variant_(std::move(v)) {
  std::visit(overloaded{
                 [&](const Constant& c) { sup_norm_ = std::abs(c.c); },
                 [&](const Coordinate& c) {
                   require(c.axis >= 0 && c.axis < 3, ErrorCode::InvalidParameter,
                           "coordinate axis must be 0, 1 or 2");
                   sup_norm_ = 1.0;
                 },
                 [&](const CosineProduct& c) {
                   require(!c.frequency.empty() && c.frequency.size() <= 3,
                           ErrorCode::InvalidParameter, "cosine frequency needs 1..3 entries");
                   sup_norm_ = 1.0;
                 },
                 [&](const BoundaryBump& b) {
                   require(b.delta > 0.0 && b.delta < 0.5, ErrorCode::InvalidParameter,
                           "bump margin must lie in (0, 1/2)");
                   sup_norm_ = 1.0;
                 },
             },
             variant_);
}

double TestFunction::operator()(const Vec& x, int dim) const {
  const double v = std::visit(
      overloaded{
          [](const Constant& c) { return c.c; },
          [&](const Coordinate& c) { return c.axis < dim ? x[c.axis] : 0.0; },
          [&](const CosineProduct& c) {
            double p = 1.0;
            for (std::size_t i = 0; i < c.frequency.size() && static_cast<int>(i) < dim; ++i)
              p *= std::cos(std::numbers::pi * c.frequency[i] * x[static_cast<int>(i)]);
            return p;
          },
          [&](const BoundaryBump& b) {
            double p = 1.0;
            for (int i = 0; i < dim; ++i) p *= bump1(x[i], b.delta);
            return p;
          },
      },
      variant_);
  return factor_ * v;
}

TestFunction TestFunction::scaled(double s) const {
  TestFunction out = *this;
  if (auto* c = std::get_if<Constant>(&out.variant_)) {
    c->c *= s;
    out.sup_norm_ = std::abs(c->c) * std::abs(out.factor_);
  } else {
    out.factor_ *= s;
    out.sup_norm_ = sup_norm_ * std::abs(s);
  }
  return out;
}

std::string TestFunction::describe() const {
  std::string base = std::visit(
      overloaded{
          [](const Constant& c) { return "constant(" + format_double(c.c) + ")"; },
          [](const Coordinate& c) { return "coordinate(" + std::to_string(c.axis) + ")"; },
          [](const CosineProduct& c) {
            std::string s = "cosine(";
            for (std::size_t i = 0; i < c.frequency.size(); ++i)
              s += (i ? "," : "") + std::to_string(c.frequency[i]);
            return s + ")";
          },
          [](const BoundaryBump& b) { return "bump(" + format_double(b.delta) + ")"; },
      },
      variant_);
  if (factor_ != 1.0) base = format_double(factor_) + "*" + base;
  return base;
}

double EmpiricalMeasure::total_mass() const {
  double s = 0.0;
  for (double w : weights) s += w;
  return s;
}

EmpiricalMeasure build_measure(const ScoreVector& scores, const PointConfiguration& config) {
  require(scores.ids.size() == config.size() && scores.values.size() == config.size(),
          ErrorCode::InconsistentInput, "scores do not cover the configuration");
  std::unordered_map<std::int64_t, std::size_t> where;
  where.reserve(scores.ids.size());
  for (std::size_t i = 0; i < scores.ids.size(); ++i) where.emplace(scores.ids[i], i);
  EmpiricalMeasure mu;
  mu.dim = config.dim();
  mu.lambda = scores.lambda;
  mu.positions.reserve(config.size());
  mu.weights.reserve(config.size());
  for (const auto& p : config.points) {
    auto it = where.find(p.id);
    require(it != where.end(), ErrorCode::InconsistentInput,
            "score vector lacks id " + std::to_string(p.id));
    mu.positions.push_back(p.position);
    mu.weights.push_back(scores.values[it->second]);
  }
  return mu;
}

double integrate_test_function(const TestFunction& f, const EmpiricalMeasure& mu) {
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) s += mu.weights[i] * f(mu.positions[i], mu.dim);
  return s;
}

std::vector<double> center_and_scale(const std::vector<double>& raw, double calibration_mean,
                                     double lambda, double alpha) {
  require(alpha > 0.0 && lambda > 0.0, ErrorCode::InvalidParameter,
          "alpha and lambda must be > 0");
  const double c = 1.0 / (alpha * std::sqrt(lambda));
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = c * (raw[i] - calibration_mean);
  return out;
}

double dist_w(const EmpiricalMeasure& a, const EmpiricalMeasure& b,
              const std::vector<TestFunction>& family) {
  require(!family.empty(), ErrorCode::InvalidParameter, "test-function family is empty");
  double s = 0.0;
  double w = 1.0;
  for (const auto& f : family) {
    require(f.sup_norm() > 0.0, ErrorCode::InvalidParameter, "test function with zero sup norm");
    w *= 0.5;
    s += w / f.sup_norm() *
         std::abs(integrate_test_function(f, a) - integrate_test_function(f, b));
  }
  return s;
}

std::vector<TestFunction> default_w_family(int dim, double bump_delta) {
  std::vector<TestFunction> w;
  w.push_back(TestFunction::constant(1.0));
  for (int a = 0; a < 3; ++a) w.push_back(TestFunction::coordinate(a < dim ? a : 0));
  for (int k = 1; k <= 3; ++k) w.push_back(TestFunction::cosine(std::vector<int>(dim, k)));
  w.push_back(TestFunction::bump(bump_delta));
  return w;
}

void write_series_csv(std::ostream& out, const std::vector<double>& lambdas,
                      const std::vector<double>& alphas, const std::vector<double>& values) {
  require(lambdas.size() == values.size() && alphas.size() == values.size(),
          ErrorCode::InconsistentInput, "series columns differ in length");
  out << "lambda,alpha,value\n";
  for (std::size_t i = 0; i < values.size(); ++i)
    out << format_double(lambdas[i]) << ',' << format_double(alphas[i]) << ','
        << format_double(values[i]) << '\n';
}

}  // namespace geoprob

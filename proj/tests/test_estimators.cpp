#include <doctest.h>

#include <numbers>

#include "geoprob/estimators.hpp"
#include "test_util.hpp"

using namespace geoprob;

namespace {

// Reference values from tests/oracles/compute_oracles.py.
constexpr double kNnDeltaTau1T05D1 = 1.0;
constexpr double kNnDeltaTau1T05D2 = 0.9021548404042884;
constexpr double kNnDeltaTau2T03D2 = 0.7531601050353178;
constexpr double kNnVTau1T05D1 = 1.2727986285218513;
constexpr double kNnVTau1T05D2 = 1.1551729703786875;
constexpr double kRsaCoverage1d = 0.47142463390858739;

ShellOptions options(int dim, double tau, long reps, std::uint64_t seed) {
  ShellOptions o;
  o.dim = dim;
  o.tau = tau;
  o.reps = reps;
  o.seed = SeedSpec{seed, {}};
  return o;
}

}  // namespace

TEST_CASE("mean score of the trivial functional is one") {
  const auto e = estimate_mean_score(FunctionalSpec{TrivialOne{}, {}}, options(2, 1.0, 50, 1));
  CHECK(e.value == 1.0);
  CHECK(e.std_error == 0.0);
}

TEST_CASE("trivial functional has V = delta = 1") {
  const FunctionalSpec spec{TrivialOne{}, {}};
  const auto v = estimate_v(spec, options(1, 1.0, 100, 2));
  CHECK(v.value == doctest::Approx(1.0));
  const auto d = estimate_delta(spec, DeltaRoute::Insertion, options(1, 1.0, 100, 3));
  CHECK(d.value == doctest::Approx(1.0));
}

TEST_CASE("nn threshold mean score matches the void probability") {
  const auto e = estimate_mean_score(FunctionalSpec{NnThreshold{0.5}, {}}, options(2, 1.0, 20000, 4));
  const double want = 1.0 - std::exp(-std::numbers::pi * 0.25);
  CHECK(std::abs(e.value - want) < 4 * e.std_error);
}

TEST_CASE("rsa coverage in one dimension matches the quadrature oracle") {
  const auto e = estimate_mean_score(FunctionalSpec{RsaPacking{}, {}}, options(1, 1.0, 20000, 5));
  CHECK(std::abs(e.value - kRsaCoverage1d) < 4 * e.std_error);
}

TEST_CASE("nn threshold delta matches the closed form on both routes") {
  struct Case {
    double tau, t;
    int d;
    double want;
  };
  for (const Case c : {Case{1.0, 0.5, 1, kNnDeltaTau1T05D1}, Case{1.0, 0.5, 2, kNnDeltaTau1T05D2},
                       Case{2.0, 0.3, 2, kNnDeltaTau2T03D2}}) {
    const FunctionalSpec spec{NnThreshold{c.t}, {}};
    for (auto route : {DeltaRoute::Window, DeltaRoute::Insertion}) {
      const auto e = estimate_delta(spec, route, options(c.d, c.tau, 3000, 6));
      CAPTURE(to_string(route));
      CAPTURE(c.d);
      CHECK(std::abs(e.value - c.want) < 4 * std::max(e.std_error, 1e-12));
    }
  }
}

TEST_CASE("nn threshold V matches the closed form") {
  const FunctionalSpec spec{NnThreshold{0.5}, {}};
  const auto v1 = estimate_v(spec, options(1, 1.0, 3000, 7));
  CHECK(std::abs(v1.value - kNnVTau1T05D1) < 4 * v1.std_error);
  const auto v2 = estimate_v(spec, options(2, 1.0, 3000, 8));
  CHECK(std::abs(v2.value - kNnVTau1T05D2) < 4 * v2.std_error);
  const auto d1 = estimate_v_direct(spec, 1, 1.0, 40.0, 3000, SeedSpec{9, {}});
  CHECK(std::abs(d1.value - kNnVTau1T05D1) < 4 * d1.std_error);
}

TEST_CASE("pchip interpolates monotone data without overshoot") {
  const std::vector<double> x{0.0, 1.0, 2.0, 3.0};
  const std::vector<double> y{0.0, 0.1, 5.0, 5.1};
  double prev = -1.0;
  for (double t = 0.0; t <= 3.0; t += 0.01) {
    const double v = pchip(x, y, t);
    CHECK(v >= prev - 1e-12);
    CHECK(v <= 5.1 + 1e-12);
    prev = v;
  }
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(pchip(x, y, x[i]) == doctest::Approx(y[i]));
  CHECK(pchip({0.0, 1.0, 2.0}, {1.0, 3.0, 5.0}, 1.5) == doctest::Approx(4.0));
}

TEST_CASE("tau tables refuse to extrapolate") {
  const auto t = TauTable::constant(2.0, {0.5, 1.0, 2.0});
  CHECK(t(0.7) == 2.0);
  CHECK_THROWS_AS(t(0.4), Error);
  CHECK_THROWS_AS(t(2.1), Error);
  TauTable bad{{1.0, 0.5}, {Estimate{}, Estimate{}}, "x"};
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("quadrature is exact on low-degree polynomials") {
  CHECK(midpoint_rule([](const Vec&) { return 1.0; }, 3, 8) == doctest::Approx(1.0));
  CHECK(midpoint_rule([](const Vec& x) { return x[0] + x[1]; }, 2, 8) == doctest::Approx(1.0));
  const auto q = refined_quadrature([](const Vec& x) { return x[0] * x[0]; }, 1);
  CHECK(q.converged);
  CHECK(q.value == doctest::Approx(1.0 / 3.0).epsilon(1e-4));
}

TEST_CASE("sigma limit for the trivial functional is the L2 norm") {
  const auto v = TauTable::constant(1.0, {0.5, 1.0, 2.0});
  const auto s = estimate_sigma_limit(TestFunction::coordinate(0), DensitySpec::constant(1.0, 1), v);
  CHECK(s.value == doctest::Approx(1.0 / 3.0).epsilon(1e-4));
  const auto g = estimate_gamma(TestFunction::constant(1.0), DensitySpec::constant(1.0, 2), v);
  CHECK(g.value == doctest::Approx(1.0));
  const auto b = estimate_sigma2_binomial(TestFunction::constant(1.0), DensitySpec::constant(1.0, 1), v, v);
  CHECK(b.value == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("k-statistics recover poisson cumulants") {
  Rng rng(10);
  std::vector<double> xs;
  for (int i = 0; i < 40000; ++i) xs.push_back(static_cast<double>(rng.poisson(20.0)));
  const auto k = empirical_cumulants(xs);
  for (int j = 1; j <= 4; ++j) {
    CAPTURE(j);
    CHECK(std::abs(k.order(j).value - 20.0) < 4 * k.order(j).std_error);
  }
  CHECK_THROWS_AS(empirical_cumulants({1.0, 2.0}), Error);
}

TEST_CASE("k-statistics are shift-invariant beyond the first order") {
  Rng rng(11);
  std::vector<double> xs, ys;
  for (int i = 0; i < 500; ++i) {
    xs.push_back(rng.exponential());
    ys.push_back(xs.back() + 1e6);
  }
  const auto a = empirical_cumulants(xs), b = empirical_cumulants(ys);
  for (int j = 2; j <= 4; ++j) CHECK(a.order(j).value == doctest::Approx(b.order(j).value).epsilon(1e-6));
}

TEST_CASE("log-laplace of gaussian samples") {
  Rng rng(12);
  const double lambda = 1024.0, alpha = 2.0;
  std::vector<double> xs;
  for (int i = 0; i < 50000; ++i) xs.push_back(std::sqrt(lambda) * rng.normal());
  const auto a = empirical_log_laplace(xs, lambda, alpha);
  CHECK(std::abs(a.value - 0.5) < 4 * a.std_error);
  CHECK_FALSE(a.has_warning("unreliable-estimate"));
  const auto wild = empirical_log_laplace(xs, lambda, 40.0);
  CHECK(wild.has_warning("unreliable-estimate"));
}

TEST_CASE("rate functions") {
  CHECK(rate_scalar(1.0, 0.5) == doctest::Approx(1.0));
  CHECK(rate_scalar(0.0, 2.0) == 0.0);
  const auto v = TauTable::constant(1.0, {0.5, 1.0, 2.0});
  const auto kappa = DensitySpec::constant(1.0, 1);
  const std::vector<TestFunction> fs{TestFunction::constant(1.0), TestFunction::coordinate(0)};
  const auto c = covariance_matrix(fs, kappa, v);
  CHECK(c(0, 0) == doctest::Approx(1.0));
  CHECK(c(0, 1) == doctest::Approx(0.5));
  CHECK(c(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-3));
  Eigen::VectorXd t(2);
  t << 1.0, 0.0;
  // 1/2 t' C^{-1} t with C = [[1, 1/2], [1/2, 1/3]]: C^{-1}_{00} = 4.
  CHECK(rate_from_covariance(t, c) == doctest::Approx(2.0).epsilon(1e-3));
  const std::vector<TestFunction> dup{TestFunction::constant(1.0), TestFunction::constant(2.0)};
  CHECK_THROWS_AS(rate_multivariate(t, dup, kappa, v), Error);
  EmpiricalMeasure atom;
  atom.positions.push_back(Vec(0.5, 0, 0));
  atom.weights.push_back(1.0);
  CHECK(std::isinf(rate_measure(atom, v, kappa)));
  DensityGrid g{16, std::vector<double>(16, 2.0)};
  CHECK(rate_measure(g, v, kappa) == doctest::Approx(2.0));
}

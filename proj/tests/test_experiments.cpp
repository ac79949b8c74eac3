#include <doctest.h>

#include <sstream>

#include "geoprob/experiments.hpp"
#include "test_util.hpp"

using namespace geoprob;

namespace {

ModelSetup trivial(long reps, std::map<std::string, double> tol, int dim = 1) {
  ModelSetup m;
  m.spec = FunctionalSpec{TrivialOne{}, {}};
  m.f = TestFunction::constant(1.0);
  m.kappa = DensitySpec::constant(1.0, dim);
  m.reps = reps;
  m.seed = SeedSpec{99, {}};
  m.tol = Tolerances(std::move(tol));
  return m;
}

}  // namespace

TEST_CASE("wilson interval") {
  const auto [lo, hi] = wilson_interval(0, 100, 1.96);
  CHECK(lo == 0.0);
  CHECK(hi == doctest::Approx(0.037).epsilon(0.02));
  const auto [a, b] = wilson_interval(50, 100, 1.96);
  CHECK(a < 0.5);
  CHECK(b > 0.5);
  CHECK(b - 0.5 == doctest::Approx(0.5 - a));
}

TEST_CASE("normal tail") {
  CHECK(normal_upper_tail(0.0) == doctest::Approx(0.5));
  CHECK(normal_upper_tail(1.959963984540054) == doctest::Approx(0.025));
}

TEST_CASE("weighted fit recovers an exact line") {
  const auto f = weighted_fit({1, 2, 3, 4}, {3, 5, 7, 9}, {1, 1, 1, 1});
  CHECK(f.slope == doctest::Approx(2.0));
  CHECK(f.intercept == doctest::Approx(1.0));
  CHECK_THROWS_AS(weighted_fit({1, 1, 1}, {1, 2, 3}, {1, 1, 1}), Error);
}

TEST_CASE("poisson chi-square rejects the wrong mean") {
  Rng rng(4);
  std::vector<long> c;
  for (int i = 0; i < 5000; ++i) c.push_back(static_cast<long>(rng.poisson(10.0)));
  CHECK(poisson_chi_square_p(c, 10.0) > 0.001);
  CHECK(poisson_chi_square_p(c, 11.0) < 1e-6);
}

TEST_CASE("tolerances must be declared") {
  Tolerances t({{"a", 1.0}});
  CHECK(t.at("a") == 1.0);
  CHECK_THROWS_AS(t.at("b"), Error);
}

TEST_CASE("trivial pairings are poisson") {
  const auto m = trivial(5000, {});
  const auto xs = sample_pairings(m, 1024.0, 5000, m.seed);
  const double se = std::sqrt(2.0 * 1024 * 1024 / 5000.0);
  CHECK(std::abs(testing::sample_variance(xs) - 1024.0) < 4 * se);
  CHECK(calibration_mean(m, 1024.0).value == doctest::Approx(1024.0));
}

TEST_CASE("log-laplace driver on the trivial functional") {
  const auto m = trivial(4000, {{"within_se", 4.0}, {"trend_se", 2.0}, {"scaling_se", 4.0}});
  const auto r = log_laplace_convergence(m, {256.0, 1024.0}, 0.05, TableSource{}, true);
  CHECK(r.passed());
  const auto* c = r.cell("A_lambda=1024");
  REQUIRE(c != nullptr);
  const double exact = c->estimate.metadata.at("exact");
  CHECK(std::abs(c->estimate.value - exact) < 4 * c->estimate.std_error);
  CHECK(r.verdict("s_scaling") != nullptr);
}

TEST_CASE("impossible tolerance fails the verdict") {
  const auto m = trivial(500, {{"within_se", 1e-9}});
  const auto r = log_laplace_convergence(m, {256.0}, 0.05, TableSource{}, false);
  CHECK_FALSE(r.passed());
  CHECK_FALSE(r.verdict("final_within_se")->pass);
}

TEST_CASE("cumulant slopes of the trivial functional are one") {
  const auto m = trivial(10000, {{"slope_se", 2.0}});
  const auto r = cumulant_scaling(m, {64.0, 128.0, 256.0}, 1.0);
  CHECK(r.verdict("k2_slope")->pass);
  REQUIRE(r.tables.size() == 1);
  CHECK(r.tables[0].rows.size() == 3);
}

TEST_CASE("mdp control gates the model cells") {
  // Reachable regime: Sigma = 1, alpha = 2, t = 0.5.
  const auto m = trivial(100000, {{"wilson_z", 3.0}, {"relative", 0.25}});
  const auto r = mdp_tail(m, 16.0, 0.25, {0.0, 0.5}, TableSource{});
  CHECK(r.verdict("control_gate")->pass);
  CHECK(r.cell("model_t=0")->status == "centering-artifact");
  CHECK(r.cell("model_t=0.5")->status == "ok");
  // Unreachable regime: every control cell is unestimable, so the gate fails.
  const auto u = mdp_tail(trivial(1000, {{"wilson_z", 3.0}, {"relative", 0.25}}), 65536.0, 0.25, {3.0},
                          TableSource{});
  CHECK(u.cell("control_t=3")->status == "unestimable");
  CHECK_FALSE(u.verdict("control_gate")->pass);
  CHECK(u.cell("model_t=3")->status == "gated");
}

TEST_CASE("lil driver on the trivial functional") {
  auto m = trivial(10, {{"bound_factor", 2.0}, {"coverage", 0.95}});
  m.f = TestFunction::bump(1.0 / 3.0);
  const auto r = lil_trajectory(m, 2.0, 10, 30);
  CHECK(r.verdict("nested_subsets")->pass);
  CHECK(r.verdict("running_max_monotone")->pass);
  const auto& t = r.tables.at(0);
  for (const auto& row : t.rows) CHECK(row[5] >= row[4]);
  // lambda = 2^k >= e^e starts at k = 4.
  CHECK(t.rows.front()[1] == 4.0);
  auto wrong = m;
  wrong.f = TestFunction::bump(0.25);
  CHECK_THROWS_AS(lil_trajectory(wrong, 2.0, 10, 3), Error);
}

TEST_CASE("trivial lil values match the shared counts") {
  auto m = trivial(10, {{"bound_factor", 2.0}, {"coverage", 0.95}});
  m.f = TestFunction::bump(1.0 / 3.0);
  const auto r = lil_trajectory(m, 2.0, 8, 1);
  const SeedSpec master = m.seed.child({6, 0});
  for (const auto& row : r.tables.at(0).rows) {
    const double lambda = row[2];
    const auto c = nested_window_coupling(master, lambda, m.kappa);
    double s = 0.0;
    for (const auto& p : c.points) s += m.f(p.position, 1);
    const double centre = calibration_mean(m, lambda).value;
    const double alpha = std::sqrt(std::log(std::log(lambda)));
    CHECK(row[4] == doctest::Approx((s - centre) / (alpha * std::sqrt(lambda))));
  }
}

TEST_CASE("mixing on the trivial functional has no covariance") {
  const auto m = trivial(4000, {{"zero_se", 3.0}, {"p_value", 0.01}});
  const auto r = mixing_decay(m, 256.0, 20.0, {0.0, 10.0, 40.0});
  CHECK(r.verdict("zero_covariance")->pass);
  CHECK_THROWS_AS(mixing_decay(m, 256.0, 200.0, {0.0}), Error);
}

TEST_CASE("depoissonization of the trivial count is exactly zero") {
  const auto m = trivial(200, {{"zero_abs", 1e-12}, {"lil_bound", 2.0}, {"coverage", 0.95}});
  const auto r = depoissonization(m, {64.0, 256.0}, TableSource{}, 50, 4096);
  CHECK(r.verdict("identically_zero")->pass);
  CHECK(r.verdict("identically_zero")->statistic == 0.0);
  CHECK(r.verdict("classical_lil") != nullptr);
}

TEST_CASE("report json has no paths or timings and is stable") {
  const auto m = trivial(200, {{"within_se", 4.0}});
  const auto a = log_laplace_convergence(m, {128.0}, 0.05, TableSource{}, false).to_json().dump();
  const auto b = log_laplace_convergence(m, {128.0}, 0.05, TableSource{}, false).to_json().dump();
  CHECK(a == b);
  CHECK(a.find("time") == std::string::npos);
  std::ostringstream csv;
  write_csv_table(csv, CsvTable{"x", {"a", "b"}, {{1.0, 0.5}}});
  CHECK(csv.str() == "a,b\n1,0.5\n");
}

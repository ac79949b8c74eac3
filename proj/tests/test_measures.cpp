#include <doctest.h>

#include <sstream>

#include "geoprob/measures.hpp"
#include "test_util.hpp"

using namespace geoprob;

TEST_CASE("test function values") {
  const Vec x(0.25, 0.5, 0.75);
  CHECK(TestFunction::constant(2.5)(x, 3) == 2.5);
  CHECK(TestFunction::coordinate(2)(x, 3) == 0.75);
  CHECK(TestFunction::cosine({1, 2})(x, 2) == doctest::Approx(std::cos(M_PI * 0.25) * std::cos(M_PI)));
  const auto b = TestFunction::bump(0.25);
  CHECK(b(Vec(0.5, 0.5, 0), 2) == doctest::Approx(1.0));
  CHECK(b(Vec(0.2, 0.5, 0), 2) == 0.0);
  CHECK(b(Vec(0.5, 0.76, 0), 2) == 0.0);
  CHECK(b(Vec(0.3, 0.5, 0), 2) > 0.0);
  CHECK(b.sup_norm() == 1.0);
  CHECK_THROWS_AS(TestFunction::bump(0.5), Error);
  CHECK_THROWS_AS(TestFunction::coordinate(3), Error);
}

TEST_CASE("scaled test functions") {
  const auto f = TestFunction::coordinate(0).scaled(-3.0);
  CHECK(f(Vec(0.5, 0, 0), 1) == doctest::Approx(-1.5));
  CHECK(f.sup_norm() == doctest::Approx(3.0));
  CHECK(TestFunction::constant(2.0).scaled(2.0)(Vec::Zero(), 1) == 4.0);
}

TEST_CASE("measure integration") {
  Rng rng(2);
  const auto c = testing::random_config(Window::unit(2), 50, rng, false);
  ScoreVector s;
  s.lambda = 50.0;
  for (const auto& p : c.points) {
    s.ids.push_back(p.id);
    s.values.push_back(2.0);
  }
  const auto mu = build_measure(s, c);
  CHECK(mu.total_mass() == doctest::Approx(100.0));
  double want = 0.0;
  for (const auto& p : c.points) want += 2.0 * p.position[1];
  CHECK(integrate_test_function(TestFunction::coordinate(1), mu) == doctest::Approx(want));
  s.ids.pop_back();
  s.values.pop_back();
  CHECK_THROWS_AS(build_measure(s, c), Error);
  PointConfiguration empty;
  empty.window = Window::unit(1);
  CHECK(build_measure(ScoreVector{}, empty).size() == 0);
}

TEST_CASE("center and scale") {
  const auto z = center_and_scale({10.0, 14.0}, 12.0, 16.0, 2.0);
  CHECK(z[0] == doctest::Approx(-0.25));
  CHECK(z[1] == doctest::Approx(0.25));
}

TEST_CASE("dist_w is a metric on the family projections") {
  Rng rng(6);
  auto random_measure = [&] {
    EmpiricalMeasure m;
    m.dim = 2;
    for (int i = 0; i < 20; ++i) {
      m.positions.push_back(Window::unit(2).sample(rng));
      m.weights.push_back(rng.uniform(-1.0, 1.0));
    }
    return m;
  };
  const auto w = default_w_family(2, 0.25);
  CHECK(w.size() == 8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_measure(), b = random_measure(), c = random_measure();
    CHECK(dist_w(a, a, w) == 0.0);
    CHECK(dist_w(a, b, w) == doctest::Approx(dist_w(b, a, w)));
    CHECK(dist_w(a, c, w) <= dist_w(a, b, w) + dist_w(b, c, w) + 1e-12);
  }
  CHECK_THROWS_AS(dist_w(random_measure(), random_measure(), {}), Error);
  CHECK_THROWS_AS(dist_w(random_measure(), random_measure(), {TestFunction::constant(0.0)}), Error);
}

TEST_CASE("series csv") {
  std::ostringstream out;
  write_series_csv(out, {1.0, 2.0}, {0.5, 0.25}, {3.0, 4.5});
  CHECK(out.str() == "lambda,alpha,value\n1,0.5,3\n2,0.25,4.5\n");
}

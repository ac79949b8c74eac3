#include <doctest.h>

#include <algorithm>

#include "geoprob/experiments.hpp"
#include "geoprob/gibbs.hpp"
#include "test_util.hpp"

using namespace geoprob;

namespace {

bool subset(const PointConfiguration& a, const PointConfiguration& b) {
  std::vector<std::int64_t> x = a.ids(), y = b.ids();
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  return std::includes(y.begin(), y.end(), x.begin(), x.end());
}

}  // namespace

TEST_CASE("untilted sandwich collapses") {
  const TiltParams t{0.0, TestFunction::constant(0.0), FunctionalSpec{NnThreshold{0.5}, {}}};
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto w = sandwich_triple(t, 25.0, DensitySpec::constant(1.0, 2), SeedSpec{s, {}});
    CHECK(w.trajectory.a == 1.0);
    CHECK(w.trajectory.b == 1.0);
    CHECK(w.low.ids() == w.mid.ids());
    CHECK(w.mid.ids() == w.high.ids());
  }
}

TEST_CASE("sandwich inclusions hold under tilting") {
  const TiltParams t{0.3, TestFunction::coordinate(0), FunctionalSpec{NnThreshold{0.6}, {}}};
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto w = sandwich_triple(t, 30.0, DensitySpec::constant(1.0, 1), SeedSpec{s, {}});
    CHECK(subset(w.low, w.mid));
    CHECK(subset(w.mid, w.high));
    CHECK(w.trajectory.a <= w.trajectory.b);
    CHECK(w.trajectory.horizon >= 1.0);
  }
}

TEST_CASE("tilted sampler is deterministic") {
  const TiltParams t{0.2, TestFunction::constant(1.0), FunctionalSpec{NnThreshold{0.6}, {}}};
  const auto a = sample_tilted(t, 30.0, DensitySpec::constant(1.0, 1), SeedSpec{5, {}});
  const auto b = sample_tilted(t, 30.0, DensitySpec::constant(1.0, 1), SeedSpec{5, {}});
  CHECK(a.ids() == b.ids());
}

TEST_CASE("untilted sampler reproduces the poisson count law") {
  const TiltParams t{0.0, TestFunction::constant(1.0), FunctionalSpec{NnThreshold{0.6}, {}}};
  std::vector<long> counts;
  for (std::uint64_t s = 0; s < 3000; ++s)
    counts.push_back(static_cast<long>(sample_tilted(t, 20.0, DensitySpec::constant(1.0, 2), SeedSpec{s, {}}).size()));
  CHECK(poisson_chi_square_p(counts, 20.0) > 0.001);
}

TEST_CASE("positive tilt raises the mean pairing") {
  const FunctionalSpec spec{NnThreshold{0.6}, {}};
  const TiltParams t{0.5, TestFunction::constant(1.0), spec};
  const DensitySpec kappa = DensitySpec::constant(1.0, 1);
  double plain = 0, tilted = 0;
  const int n = 1500;
  for (std::uint64_t s = 0; s < n; ++s) {
    const auto p = sample_inhomogeneous_poisson(30.0, kappa, SeedSpec{s, {0}});
    plain += pairing(spec, t.f, p, 30.0, SeedSpec{});
    tilted += pairing(spec, t.f, sample_tilted(t, 30.0, kappa, SeedSpec{s, {1}}), 30.0, SeedSpec{});
  }
  CHECK(tilted / n > plain / n + 1.0);
}

TEST_CASE("tilt validation") {
  CHECK_THROWS_AS((TiltParams{1.5, TestFunction::constant(1.0), FunctionalSpec{NnThreshold{0.5}, {}}}.validate()), Error);
  CHECK_THROWS_AS((TiltParams{0.5, TestFunction::constant(1.0), FunctionalSpec{RsaPacking{}, {}}}.validate()), Error);
  const TiltParams ok{0.5, TestFunction::constant(2.0), FunctionalSpec{NnThreshold{0.5}, {}}};
  CHECK(ok.increment_bound(2) == doctest::Approx(12.0));
  CHECK_THROWS_AS(sandwich_triple(ok, 10.0, DensitySpec(DensitySpec::GridTable{{3}, {0.0, 1.0, 2.0}}, 1), SeedSpec{}), Error);
}

TEST_CASE("derivative identity at zero tilt") {
  const TiltParams base{0.0, TestFunction::constant(1.0), FunctionalSpec{NnThreshold{0.6}, {}}};
  const auto r = tilt_derivative_check(base, {0.0}, 20.0, DensitySpec::constant(1.0, 1), 4000, SeedSpec{3, {}});
  REQUIRE(r.rows.size() == 2);
  for (const auto& row : r.rows) {
    CAPTURE(row.quantity);
    CHECK(std::abs(row.lhs - row.rhs) < 4 * row.se);
  }
}

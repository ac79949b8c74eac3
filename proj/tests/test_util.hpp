#pragma once

#include <cmath>
#include <vector>

#include "geoprob/processes.hpp"
#include "geoprob/rng.hpp"

namespace geoprob::testing {

// n uniform points in the window with uniform arrival times and ids 0..n-1.
inline PointConfiguration random_config(const Window& w, std::size_t n, Rng& rng,
                                        bool times = true) {
  PointConfiguration c;
  c.window = w;
  for (std::size_t i = 0; i < n; ++i) {
    MarkedPoint p;
    p.position = w.sample(rng);
    if (times) p.time = rng.uniform();
    p.id = static_cast<std::int64_t>(i);
    c.points.push_back(p);
  }
  return c;
}

inline double sample_mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline double sample_variance(const std::vector<double>& xs) {
  const double m = sample_mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

}  // namespace geoprob::testing

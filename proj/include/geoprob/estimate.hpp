#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace geoprob {

/// A Monte Carlo value with its standard error. Every estimator returns one.
struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  long replications = 1;
  std::map<std::string, double> metadata;
  std::vector<std::string> warnings;

  bool has_warning(const std::string& w) const {
    for (const auto& x : warnings)
      if (x == w) return true;
    return false;
  }
};

/// |a - b| <= k * sqrt(se_a^2 + se_b^2)
inline bool agree_within(const Estimate& a, const Estimate& b, double k) {
  return std::abs(a.value - b.value) <= k * std::hypot(a.std_error, b.std_error);
}

inline bool agree_within(const Estimate& a, double exact, double k) {
  return std::abs(a.value - exact) <= k * a.std_error;
}

/// Streaming mean and variance (Welford), folded in a fixed order.
class RunningStats {
 public:
  void add(double x) {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
  }
  long count() const { return n_; }
  double mean() const { return mean_; }
  double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double std_error() const {
    return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0;
  }
  Estimate estimate() const { return Estimate{mean(), std_error(), n_, {}, {}}; }

 private:
  long n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

}  // namespace geoprob

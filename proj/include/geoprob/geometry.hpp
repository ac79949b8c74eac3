#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include "geoprob/error.hpp"
#include "geoprob/estimate.hpp"
#include "geoprob/rng.hpp"

namespace geoprob {

/// Positions are stored in a fixed 3-vector; coordinates past the window
/// dimension are kept at zero.
using Vec = Eigen::Vector3d;

enum class Boundary { HardWall, Torus };

/// Axis-aligned box in dimension 1, 2 or 3.
struct Window {
  int dim = 1;
  Vec lower = Vec::Zero();
  Vec upper = Vec(1.0, 0.0, 0.0);
  /// Torus is a diagnostic option only; the models live on hard-wall windows.
  Boundary boundary = Boundary::HardWall;

  static Window unit(int d);
  static Window cube(int d, double lo, double hi, Boundary b = Boundary::HardWall);

  double volume() const;
  double side(int axis) const { return upper[axis] - lower[axis]; }
  bool contains(const Vec& x) const;
  Vec sample(Rng& rng) const;
  Window scaled(double s) const;

  /// Squared distance, minimum-image on a torus.
  double distance_squared(const Vec& a, const Vec& b) const {
    double s = 0.0;
    for (int i = 0; i < dim; ++i) {
      double delta = a[i] - b[i];
      if (boundary == Boundary::Torus) {
        const double len = upper[i] - lower[i];
        delta -= len * std::nearbyint(delta / len);
      }
      s += delta * delta;
    }
    return s;
  }
  double distance(const Vec& a, const Vec& b) const { return std::sqrt(distance_squared(a, b)); }

  void validate() const;
};

template <typename Scalar = double>
constexpr Scalar unit_ball_volume(int d) {
  switch (d) {
    case 1: return Scalar(2);
    case 2: return std::numbers::pi_v<Scalar>;
    case 3: return Scalar(4) * std::numbers::pi_v<Scalar> / Scalar(3);
    default: return Scalar(0);
  }
}

/// Surface measure of the unit sphere in R^d.
template <typename Scalar = double>
constexpr Scalar unit_sphere_area(int d) {
  return Scalar(d) * unit_ball_volume<Scalar>(d);
}

template <typename Scalar = double>
Scalar ball_volume(Scalar r, int d) {
  return unit_ball_volume<Scalar>(d) * std::pow(r, Scalar(d));
}

/// Radius r with v_d r^d = 1/lambda.
double ball_radius_from_volume(double lambda, int d);

/// Two balls overlap only when the centre distance is strictly below r1 + r2.
inline bool balls_overlap(double dist_sq, double r1, double r2) {
  const double s = r1 + r2;
  return dist_sq < s * s;
}

/// Uniform bucket grid over a window. Built once; immutable afterwards.
class CellIndex {
 public:
  CellIndex(const Window& window, std::span<const Vec> positions, double cell_size);
  CellIndex(const Window& window, double cell_size);

  /// Adds a point. Only used while building incremental structures.
  void insert(std::size_t id, const Vec& x);

  const Window& window() const { return window_; }
  double cell_size() const { return cell_size_; }
  std::size_t occupied_buckets() const;
  std::size_t size() const { return count_; }
  /// Integer cell coordinates of x.
  Eigen::Vector3i cell_of(const Vec& x) const;
  const std::vector<std::size_t>& bucket(const Eigen::Vector3i& cell) const;

  /// Ids within closed distance r of x, ascending.
  std::vector<std::size_t> range_query(const Vec& x, double r) const;

  /// Visits every id whose bucket may hold points within r of x.
  template <typename F>
  void for_each_candidate(const Vec& x, double r, F&& visit) const {
    Eigen::Vector3i lo, hi;
    candidate_range(x, r, lo, hi);
    Eigen::Vector3i c;
    for (int k = lo[2]; k <= hi[2]; ++k) {
      c[2] = wrap(k, 2);
      for (int j = lo[1]; j <= hi[1]; ++j) {
        c[1] = wrap(j, 1);
        for (int i = lo[0]; i <= hi[0]; ++i) {
          c[0] = wrap(i, 0);
          for (std::size_t id : buckets_[linear(c)]) visit(id);
        }
      }
    }
  }

 private:
  void candidate_range(const Vec& x, double r, Eigen::Vector3i& lo, Eigen::Vector3i& hi) const;
  int wrap(int c, int axis) const {
    if (window_.boundary != Boundary::Torus) return c;
    const int n = ncell_[axis];
    return ((c % n) + n) % n;
  }
  std::size_t linear(const Eigen::Vector3i& c) const {
    return static_cast<std::size_t>(c[0]) +
           static_cast<std::size_t>(ncell_[0]) *
               (static_cast<std::size_t>(c[1]) + static_cast<std::size_t>(ncell_[1]) * c[2]);
  }

  Window window_;
  double cell_size_;
  Vec axis_cell_ = Vec::Ones();
  Eigen::Vector3i ncell_;
  std::vector<std::vector<std::size_t>> buckets_;
  std::vector<Vec> positions_;
  std::size_t count_ = 0;
};

/// Index of the position nearest to y; ties go to the lowest id.
std::size_t voronoi_owner(const Vec& y, std::span<const Vec> positions,
                          std::span<const std::int64_t> ids, const Window& window);

/// Hit-or-miss volume of {x in window : membership(x)}.
Estimate mc_region_volume(const std::function<bool(const Vec&)>& membership, const Window& window,
                          long n_samples, const SeedSpec& seed);

}  // namespace geoprob

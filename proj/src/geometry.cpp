#include "geoprob/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace geoprob {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidParameter: return "invalid-parameter";
    case ErrorCode::EmptyConfiguration: return "empty-configuration";
    case ErrorCode::DegenerateDensity: return "degenerate-density";
    case ErrorCode::MissingMark: return "missing-mark";
    case ErrorCode::TooFewPoints: return "too-few-points";
    case ErrorCode::DuplicatePoint: return "duplicate-point";
    case ErrorCode::InconsistentInput: return "inconsistent-input";
    case ErrorCode::InsufficientData: return "insufficient-data";
    case ErrorCode::Extrapolation: return "extrapolation";
    case ErrorCode::LinearDependence: return "linear-dependence";
    case ErrorCode::HorizonExceeded: return "horizon-exceeded";
    case ErrorCode::InvariantViolation: return "internal-invariant-violation";
    case ErrorCode::Io: return "io-error";
    case ErrorCode::Config: return "config-error";
  }
  return "unknown";
}

Window Window::unit(int d) { return cube(d, 0.0, 1.0); }

Window Window::cube(int d, double lo, double hi, Boundary b) {
  require(d >= 1 && d <= 3, ErrorCode::InvalidParameter, "dimension must be 1, 2 or 3");
  Window w;
  w.dim = d;
  w.lower = Vec::Zero();
  w.upper = Vec::Zero();
  for (int i = 0; i < d; ++i) {
    w.lower[i] = lo;
    w.upper[i] = hi;
  }
  w.boundary = b;
  w.validate();
  return w;
}

void Window::validate() const {
  require(dim >= 1 && dim <= 3, ErrorCode::InvalidParameter, "dimension must be 1, 2 or 3");
  for (int i = 0; i < dim; ++i)
    require(upper[i] > lower[i], ErrorCode::InvalidParameter, "window upper must exceed lower");
}

double Window::volume() const {
  double v = 1.0;
  for (int i = 0; i < dim; ++i) v *= upper[i] - lower[i];
  return v;
}

bool Window::contains(const Vec& x) const {
  for (int i = 0; i < dim; ++i)
    if (x[i] < lower[i] || x[i] > upper[i]) return false;
  return true;
}

Vec Window::sample(Rng& rng) const {
  Vec x = Vec::Zero();
  for (int i = 0; i < dim; ++i) x[i] = lower[i] + (upper[i] - lower[i]) * rng.uniform();
  return x;
}

Window Window::scaled(double s) const {
  Window w = *this;
  w.lower *= s;
  w.upper *= s;
  return w;
}

double ball_radius_from_volume(double lambda, int d) {
  require(lambda > 0.0 && std::isfinite(lambda), ErrorCode::InvalidParameter,
          "ball volume intensity must be positive");
  require(d >= 1 && d <= 3, ErrorCode::InvalidParameter, "dimension must be 1, 2 or 3");
  return std::pow(1.0 / (lambda * unit_ball_volume(d)), 1.0 / d);
}

// ---------------------------------------------------------------------------

CellIndex::CellIndex(const Window& window, double cell_size) : window_(window) {
  require(cell_size > 0.0 && std::isfinite(cell_size), ErrorCode::InvalidParameter,
          "cell size must be positive");
  window_.validate();
  // Cap the bucket count; coarser cells keep queries exact, only slower.
  constexpr double kMaxCells = 1 << 22;
  double total = 1.0;
  for (int i = 0; i < window_.dim; ++i) total *= std::ceil(window_.side(i) / cell_size);
  if (total > kMaxCells) cell_size *= std::pow(total / kMaxCells, 1.0 / window_.dim) * 1.0001;
  cell_size_ = cell_size;
  ncell_ = Eigen::Vector3i::Ones();
  axis_cell_ = Vec::Ones();
  // Whole cells per axis, so wrapped indices line up on a torus.
  for (int i = 0; i < window_.dim; ++i) {
    ncell_[i] = std::max(1, static_cast<int>(std::floor(window_.side(i) / cell_size_)));
    axis_cell_[i] = window_.side(i) / ncell_[i];
  }
  buckets_.resize(static_cast<std::size_t>(ncell_[0]) * ncell_[1] * ncell_[2]);
}

CellIndex::CellIndex(const Window& window, std::span<const Vec> positions, double cell_size)
    : CellIndex(window, cell_size) {
  for (std::size_t i = 0; i < positions.size(); ++i) insert(i, positions[i]);
}

void CellIndex::insert(std::size_t id, const Vec& x) {
  if (positions_.size() <= id) positions_.resize(id + 1, Vec::Zero());
  positions_[id] = x;
  buckets_[linear(cell_of(x))].push_back(id);
  ++count_;
}

Eigen::Vector3i CellIndex::cell_of(const Vec& x) const {
  Eigen::Vector3i c = Eigen::Vector3i::Zero();
  for (int i = 0; i < window_.dim; ++i) {
    int k = static_cast<int>(std::floor((x[i] - window_.lower[i]) / axis_cell_[i]));
    c[i] = std::clamp(k, 0, ncell_[i] - 1);
  }
  return c;
}

const std::vector<std::size_t>& CellIndex::bucket(const Eigen::Vector3i& cell) const {
  return buckets_[linear(cell)];
}

std::size_t CellIndex::occupied_buckets() const {
  return static_cast<std::size_t>(
      std::count_if(buckets_.begin(), buckets_.end(), [](const auto& b) { return !b.empty(); }));
}

void CellIndex::candidate_range(const Vec& x, double r, Eigen::Vector3i& lo,
                                Eigen::Vector3i& hi) const {
  lo = Eigen::Vector3i::Zero();
  hi = Eigen::Vector3i::Zero();
  for (int i = 0; i < window_.dim; ++i) {
    const double rel = (x[i] - window_.lower[i]) / axis_cell_[i];
    const double span = r / axis_cell_[i];
    int a = static_cast<int>(std::floor(rel - span));
    int b = static_cast<int>(std::floor(rel + span));
    if (window_.boundary == Boundary::Torus) {
      if (b - a + 1 >= ncell_[i]) {
        a = 0;
        b = ncell_[i] - 1;
      }
    } else {
      a = std::clamp(a, 0, ncell_[i] - 1);
      b = std::clamp(b, 0, ncell_[i] - 1);
    }
    lo[i] = a;
    hi[i] = b;
  }
}

std::vector<std::size_t> CellIndex::range_query(const Vec& x, double r) const {
  std::vector<std::size_t> out;
  if (r < 0.0) return out;
  const double r2 = r * r;
  for_each_candidate(x, r, [&](std::size_t id) {
    if (window_.distance_squared(positions_[id], x) <= r2) out.push_back(id);
  });
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t voronoi_owner(const Vec& y, std::span<const Vec> positions,
                          std::span<const std::int64_t> ids, const Window& window) {
  require(!positions.empty(), ErrorCode::EmptyConfiguration, "voronoi owner of empty set");
  std::size_t best = 0;
  double best_d = window.distance_squared(y, positions[0]);
  for (std::size_t i = 1; i < positions.size(); ++i) {
    const double d = window.distance_squared(y, positions[i]);
    if (d < best_d || (d == best_d && ids[i] < ids[best])) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

Estimate mc_region_volume(const std::function<bool(const Vec&)>& membership, const Window& window,
                          long n_samples, const SeedSpec& seed) {
  require(n_samples >= 1, ErrorCode::InvalidParameter, "n_samples must be >= 1");
  Rng rng(seed);
  long hits = 0;
  for (long i = 0; i < n_samples; ++i)
    if (membership(window.sample(rng))) ++hits;
  const double n = static_cast<double>(n_samples);
  const double p = hits / n;
  const double vol = window.volume();
  Estimate e;
  e.value = p * vol;
  e.std_error = vol * std::sqrt(p * (1.0 - p) / n);
  e.replications = n_samples;
  return e;
}

}  // namespace geoprob

#include "geoprob/processes.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_set>

namespace geoprob {

std::vector<Vec> PointConfiguration::positions() const {
  std::vector<Vec> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(p.position);
  return out;
}

std::vector<std::int64_t> PointConfiguration::ids() const {
  std::vector<std::int64_t> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(p.id);
  return out;
}

void PointConfiguration::validate() const {
  window.validate();
  std::unordered_set<std::int64_t> seen;
  seen.reserve(points.size());
  for (const auto& p : points) {
    require(window.contains(p.position), ErrorCode::InconsistentInput,
            "point " + std::to_string(p.id) + " lies outside the window");
    require(seen.insert(p.id).second, ErrorCode::InconsistentInput,
            "duplicate point id " + std::to_string(p.id));
    if (p.time)
      require(*p.time >= 0.0 && *p.time <= 1.0, ErrorCode::InconsistentInput,
              "arrival time outside [0,1]");
    if (p.grain_radius)
      require(*p.grain_radius > 0.0, ErrorCode::InconsistentInput, "grain radius must be positive");
    if (p.growth_speed)
      require(*p.growth_speed > 0.0, ErrorCode::InconsistentInput, "growth speed must be positive");
  }
}

PointConfiguration PointConfiguration::rescaled(double s) const {
  PointConfiguration out = *this;
  out.window = window.scaled(s);
  for (auto& p : out.points) p.position *= s;
  return out;
}

// ---------------------------------------------------------------------------
// DensitySpec

namespace {

double poly_eval(const std::vector<double>& c, double x) {
  double v = 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) v = v * x + *it;
  return v;
}

double poly_integral(const std::vector<double>& c) {
  double s = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k) s += c[k] / static_cast<double>(k + 1);
  return s;
}

template <typename F>
void for_each_grid_node(int dim, int n, F&& f) {
  const int nz = dim >= 3 ? n : 1;
  const int ny = dim >= 2 ? n : 1;
  Vec x = Vec::Zero();
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < n; ++i) {
        x[0] = static_cast<double>(i) / (n - 1);
        if (dim >= 2) x[1] = static_cast<double>(j) / (n - 1);
        if (dim >= 3) x[2] = static_cast<double>(k) / (n - 1);
        f(x);
      }
}

}  // namespace

DensitySpec::DensitySpec(Variant v, int dim) : variant_(std::move(v)), dim_(dim) {
  require(dim >= 1 && dim <= 3, ErrorCode::InvalidParameter, "density dimension must be 1..3");
  if (auto* c = std::get_if<Constant>(&variant_)) {
    require(c->c >= 0.0 && std::isfinite(c->c), ErrorCode::InvalidParameter,
            "constant density must be nonnegative");
    scale_ = 1.0;
    integral_ = c->c;
    max_bound_ = min_bound_ = c->c;
    return;
  }
  if (auto* p = std::get_if<ProductPolynomial>(&variant_)) {
    require(static_cast<int>(p->coeffs.size()) == dim, ErrorCode::InvalidParameter,
            "product polynomial needs one coefficient list per axis");
    double mass = 1.0;
    for (const auto& c : p->coeffs) {
      require(!c.empty(), ErrorCode::InvalidParameter, "empty polynomial");
      mass *= poly_integral(c);
    }
    require(mass > 0.0, ErrorCode::DegenerateDensity, "density has non-positive mass");
    scale_ = 1.0 / mass;
    double hi = 0.0, lo = std::numeric_limits<double>::infinity();
    for_each_grid_node(dim, 64, [&](const Vec& x) {
      const double v = raw(x);
      require(v >= -1e-12, ErrorCode::InvalidParameter, "density takes negative values");
      hi = std::max(hi, v);
      lo = std::min(lo, v);
    });
    max_bound_ = hi * 1.05;
    min_bound_ = std::max(0.0, lo) / 1.05;
    integral_ = 1.0;
    return;
  }
  auto& g = std::get<GridTable>(variant_);
  require(static_cast<int>(g.shape.size()) == dim, ErrorCode::InvalidParameter,
          "grid table needs one extent per axis");
  std::size_t count = 1;
  for (int s : g.shape) {
    require(s >= 2, ErrorCode::InvalidParameter, "grid table needs >= 2 nodes per axis");
    count *= static_cast<std::size_t>(s);
  }
  require(g.values.size() == count, ErrorCode::InvalidParameter, "grid table size mismatch");
  double mass = 0.0;
  for (std::size_t idx = 0; idx < count; ++idx) {
    const double v = g.values[idx];
    require(v >= 0.0 && std::isfinite(v), ErrorCode::InvalidParameter,
            "grid table values must be nonnegative");
    // Trapezoid weights integrate the multilinear interpolant exactly.
    std::size_t rest = idx;
    double w = 1.0;
    for (int a = 0; a < dim; ++a) {
      const int n = g.shape[a];
      const int i = static_cast<int>(rest % n);
      rest /= n;
      w *= (i == 0 || i == n - 1 ? 0.5 : 1.0) / (n - 1);
    }
    mass += w * v;
  }
  require(mass > 0.0, ErrorCode::DegenerateDensity, "density has zero mass");
  scale_ = 1.0 / mass;
  max_bound_ = *std::max_element(g.values.begin(), g.values.end()) * scale_;
  min_bound_ = *std::min_element(g.values.begin(), g.values.end()) * scale_;
  integral_ = 1.0;
}

double DensitySpec::raw(const Vec& x) const {
  if (auto* c = std::get_if<Constant>(&variant_)) return c->c;
  if (auto* p = std::get_if<ProductPolynomial>(&variant_)) {
    double v = 1.0;
    for (int i = 0; i < dim_; ++i) v *= poly_eval(p->coeffs[i], x[i]);
    return v;
  }
  const auto& g = std::get<GridTable>(variant_);
  int base[3] = {0, 0, 0};
  double frac[3] = {0, 0, 0};
  for (int a = 0; a < dim_; ++a) {
    const int n = g.shape[a];
    const double u = std::clamp(x[a], 0.0, 1.0) * (n - 1);
    int i = std::min(static_cast<int>(std::floor(u)), n - 2);
    base[a] = i;
    frac[a] = u - i;
  }
  double v = 0.0;
  for (int corner = 0; corner < (1 << dim_); ++corner) {
    double w = 1.0;
    std::size_t idx = 0, stride = 1;
    for (int a = 0; a < dim_; ++a) {
      const int bit = (corner >> a) & 1;
      w *= bit ? frac[a] : 1.0 - frac[a];
      idx += static_cast<std::size_t>(base[a] + bit) * stride;
      stride *= static_cast<std::size_t>(g.shape[a]);
    }
    if (w != 0.0) v += w * g.values[idx];
  }
  return v;
}

double DensitySpec::operator()(const Vec& x) const { return raw(x) * scale_; }

// ---------------------------------------------------------------------------
// Marks

double MarkDistribution::sample(Rng& rng) const {
  switch (kind) {
    case Kind::Fixed: return a;
    case Kind::Uniform: return a + (b - a) * rng.uniform();
    case Kind::Exponential: return rng.exponential() / a;
  }
  return a;
}

std::optional<double> MarkDistribution::upper_bound() const {
  switch (kind) {
    case Kind::Fixed: return a;
    case Kind::Uniform: return b;
    case Kind::Exponential: return std::nullopt;
  }
  return std::nullopt;
}

double MarkDistribution::lower_bound() const {
  return kind == Kind::Exponential ? 0.0 : a;
}

double MarkDistribution::mean() const { return moment(1); }

double MarkDistribution::moment(int k) const {
  switch (kind) {
    case Kind::Fixed: return std::pow(a, k);
    case Kind::Uniform:
      if (b == a) return std::pow(a, k);
      return (std::pow(b, k + 1) - std::pow(a, k + 1)) / ((k + 1) * (b - a));
    case Kind::Exponential: return std::tgamma(k + 1.0) / std::pow(a, k);
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Samplers

PointConfiguration sample_homogeneous_poisson(double tau, const Window& window,
                                              const SeedSpec& seed) {
  require(tau > 0.0 && std::isfinite(tau), ErrorCode::InvalidParameter, "intensity must be > 0");
  window.validate();
  Rng rng(seed);
  const auto n = rng.poisson(tau * window.volume());
  PointConfiguration c;
  c.window = window;
  c.intensity = tau;
  c.points.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    c.points[i].position = window.sample(rng);
    c.points[i].id = static_cast<std::int64_t>(i);
  }
  return c;
}

PointConfiguration sample_inhomogeneous_poisson(double lambda, const DensitySpec& kappa,
                                                const SeedSpec& seed) {
  require(lambda > 0.0 && std::isfinite(lambda), ErrorCode::InvalidParameter,
          "intensity must be > 0");
  const double bound = kappa.max_bound();
  require(bound > 0.0, ErrorCode::DegenerateDensity, "max kappa is zero");
  Rng rng(seed);
  const Window w = Window::unit(kappa.dim());
  const auto n = rng.poisson(lambda * bound);
  PointConfiguration c;
  c.window = w;
  c.intensity = lambda;
  c.points.reserve(n);
  std::int64_t next_id = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    const Vec x = w.sample(rng);
    const double u = rng.uniform();
    const double k = kappa(x);
    require(k <= bound, ErrorCode::InvariantViolation, "density exceeds its thinning bound");
    if (u * bound < k) {
      MarkedPoint p;
      p.position = x;
      p.id = next_id++;
      c.points.push_back(p);
    }
  }
  return c;
}

PointConfiguration sample_binomial(long n, const DensitySpec& kappa, const SeedSpec& seed) {
  require(n >= 1, ErrorCode::InvalidParameter, "binomial sample size must be >= 1");
  const double bound = kappa.max_bound();
  require(bound > 0.0, ErrorCode::DegenerateDensity, "max kappa is zero");
  Rng rng(seed);
  const Window w = Window::unit(kappa.dim());
  PointConfiguration c;
  c.window = w;
  c.intensity = static_cast<double>(n);
  c.points.reserve(static_cast<std::size_t>(n));
  while (static_cast<long>(c.points.size()) < n) {
    const Vec x = w.sample(rng);
    const double k = kappa(x);
    require(k <= bound, ErrorCode::InvariantViolation, "density exceeds its rejection bound");
    if (rng.uniform() * bound < k) {
      MarkedPoint p;
      p.position = x;
      p.id = static_cast<std::int64_t>(c.points.size());
      c.points.push_back(p);
    }
  }
  return c;
}

PointConfiguration nested_window_coupling_unscaled(const SeedSpec& master, double lambda,
                                                   const DensitySpec& kappa) {
  require(lambda > 0.0 && std::isfinite(lambda), ErrorCode::InvalidParameter,
          "intensity must be > 0");
  const int d = kappa.dim();
  const double side = std::pow(lambda, 1.0 / d);
  const int ncell = static_cast<int>(std::ceil(side));
  const int layers = std::max(1, static_cast<int>(std::ceil(kappa.max_bound())));
  const int coord_bits = 51 / d;
  require(ncell < (1 << std::min(coord_bits, 30)), ErrorCode::InvalidParameter,
          "lambda too large for the nested coupling id space");
  require(layers <= 16, ErrorCode::InvalidParameter, "kappa bound too large for nesting layers");

  PointConfiguration c;
  c.window = Window::cube(d, 0.0, side);
  c.intensity = lambda;
  const int nz = d >= 3 ? ncell : 1;
  const int ny = d >= 2 ? ncell : 1;
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < ncell; ++i)
        for (int layer = 0; layer < layers; ++layer) {
          Rng rng(master.child({static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j),
                                static_cast<std::uint64_t>(k),
                                static_cast<std::uint64_t>(layer)}));
          const auto count = rng.poisson(1.0);
          require(count < 256, ErrorCode::InvariantViolation, "too many points in one lattice cell");
          const std::int64_t cell_key =
              static_cast<std::int64_t>(i) |
              (static_cast<std::int64_t>(j) << coord_bits) |
              (d >= 3 ? static_cast<std::int64_t>(k) << (2 * coord_bits) : 0);
          for (std::uint64_t m = 0; m < count; ++m) {
            Vec x = Vec::Zero();
            x[0] = i + rng.uniform();
            if (d >= 2) x[1] = j + rng.uniform();
            if (d >= 3) x[2] = k + rng.uniform();
            const double height = layer + rng.uniform();
            const double time = rng.uniform();
            bool inside = true;
            for (int a = 0; a < d; ++a) inside = inside && x[a] <= side;
            if (!inside) continue;
            if (!(height <= kappa(x / side))) continue;
            MarkedPoint p;
            p.position = x;
            p.time = time;
            p.id = (((cell_key << 4) | layer) << 8) | static_cast<std::int64_t>(m);
            c.points.push_back(p);
          }
        }
  return c;
}

PointConfiguration nested_window_coupling(const SeedSpec& master, double lambda,
                                          const DensitySpec& kappa) {
  PointConfiguration c = nested_window_coupling_unscaled(master, lambda, kappa);
  const double side = std::pow(lambda, 1.0 / kappa.dim());
  PointConfiguration out = c.rescaled(1.0 / side);
  out.window = Window::unit(kappa.dim());
  for (auto& p : out.points)
    for (int a = 0; a < kappa.dim(); ++a) p.position[a] = std::min(p.position[a], 1.0);
  return out;
}

PointConfiguration attach_marks(const PointConfiguration& config, const MarkPlan& plan,
                                const SeedSpec& seed) {
  if (plan.grain_radius) {
    const auto ub = plan.grain_radius->upper_bound();
    require(ub.has_value(), ErrorCode::InvalidParameter,
            "grain radius distribution must be bounded");
    require(*ub <= plan.radius_cap, ErrorCode::InvalidParameter,
            "grain radius distribution exceeds the declared cap");
    require(plan.grain_radius->lower_bound() > 0.0 ||
                plan.grain_radius->kind == MarkDistribution::Kind::Exponential,
            ErrorCode::InvalidParameter, "grain radii must be positive");
  }
  if (plan.growth_speed) {
    require(plan.growth_speed->upper_bound().has_value(), ErrorCode::InvalidParameter,
            "growth speed distribution must be bounded");
    require(plan.growth_speed->lower_bound() > 0.0, ErrorCode::InvalidParameter,
            "growth speeds must be positive");
  }
  Rng rng(seed);
  PointConfiguration out = config;
  for (auto& p : out.points) {
    if (plan.times) p.time = rng.uniform();
    if (plan.grain_radius) p.grain_radius = plan.grain_radius->sample(rng);
    if (plan.growth_speed) p.growth_speed = plan.growth_speed->sample(rng);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_csv(std::ostream& out, const PointConfiguration& config,
               const std::vector<double>* scores) {
  require(scores == nullptr || scores->size() == config.size(), ErrorCode::InconsistentInput,
          "score column length differs from point count");
  out << "id";
  for (int a = 0; a < config.dim(); ++a) out << ",x" << (a + 1);
  out << ",time,grain_radius,growth_speed";
  if (scores) out << ",xi";
  out << '\n';
  auto opt = [&](const std::optional<double>& v) {
    out << ',';
    if (v) out << format_double(*v);
  };
  for (std::size_t i = 0; i < config.size(); ++i) {
    const auto& p = config.points[i];
    out << p.id;
    for (int a = 0; a < config.dim(); ++a) out << ',' << format_double(p.position[a]);
    opt(p.time);
    opt(p.grain_radius);
    opt(p.growth_speed);
    if (scores) out << ',' << format_double((*scores)[i]);
    out << '\n';
  }
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorCode::InconsistentInput,
          "malformed number '" + s + "'");
  return v;
}

}  // namespace

PointConfiguration read_csv(std::istream& in, const Window& window) {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::InconsistentInput, "empty csv");
  const auto header = split(line);
  const int d = window.dim;
  require(static_cast<int>(header.size()) >= 4 + d && header[0] == "id",
          ErrorCode::InconsistentInput, "unexpected csv header");
  PointConfiguration c;
  c.window = window;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line);
    require(f.size() == header.size(), ErrorCode::InconsistentInput, "ragged csv row");
    MarkedPoint p;
    {
      auto res = std::from_chars(f[0].data(), f[0].data() + f[0].size(), p.id);
      require(res.ec == std::errc(), ErrorCode::InconsistentInput, "malformed id '" + f[0] + "'");
    }
    for (int a = 0; a < d; ++a) p.position[a] = parse_double(f[1 + a]);
    auto opt = [&](const std::string& s) -> std::optional<double> {
      if (s.empty()) return std::nullopt;
      return parse_double(s);
    };
    p.time = opt(f[1 + d]);
    p.grain_radius = opt(f[2 + d]);
    p.growth_speed = opt(f[3 + d]);
    c.points.push_back(p);
  }
  c.validate();
  return c;
}

}  // namespace geoprob

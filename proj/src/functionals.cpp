#include "geoprob/functionals.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

namespace geoprob {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

/// Processing order: arrival time, then id.
std::vector<std::size_t> arrival_order(const PointConfiguration& config) {
  std::vector<std::size_t> order(config.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (const auto& p : config.points)
    require(p.time.has_value(), ErrorCode::MissingMark, "arrival time required");
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& pa = config.points[a];
    const auto& pb = config.points[b];
    if (*pa.time != *pb.time) return *pa.time < *pb.time;
    return pa.id < pb.id;
  });
  return order;
}

bool earlier(const MarkedPoint& a, const MarkedPoint& b) {
  if (*a.time != *b.time) return *a.time < *b.time;
  return a.id < b.id;
}

int kissing_number(int d) { return d == 1 ? 2 : d == 2 ? 6 : 12; }

}  // namespace

// ---------------------------------------------------------------------------
// FunctionalSpec

void FunctionalSpec::validate() const {
  if (increment_bound)
    require(*increment_bound > 0.0, ErrorCode::InvalidParameter, "increment_bound must be > 0");
  std::visit(overloaded{
                 [](const TrivialOne&) {},
                 [](const RsaPacking&) {},
                 [](const BirthGrowth& m) {
                   require(m.radius_cap > 0.0, ErrorCode::InvalidParameter,
                           "birth-growth radius cap must be > 0");
                   require(m.radius.kind != MarkDistribution::Kind::Exponential &&
                               m.radius.lower_bound() > 0.0 &&
                               *m.radius.upper_bound() <= m.radius_cap,
                           ErrorCode::InvalidParameter,
                           "birth-growth radii must lie in [rho_min, radius_cap], rho_min > 0");
                   require(m.speed.kind != MarkDistribution::Kind::Exponential &&
                               m.speed.lower_bound() > 0.0,
                           ErrorCode::InvalidParameter, "growth speeds must be bounded and > 0");
                 },
                 [](const GermGrainVolume& m) {
                   require(m.grain.upper_bound().has_value(), ErrorCode::InvalidParameter,
                           "grain distribution must be bounded");
                   require(m.grain.lower_bound() > 0.0, ErrorCode::InvalidParameter,
                           "grain radii must be positive");
                   require(m.volume_mc_samples >= 100, ErrorCode::InvalidParameter,
                           "volume_mc_samples must be >= 100");
                 },
                 [](const NnThreshold& m) {
                   require(m.t > 0.0 && std::isfinite(m.t), ErrorCode::InvalidParameter,
                           "NnThreshold requires t > 0");
                 },
                 [](const NnDegree& m) {
                   require(m.k >= 1, ErrorCode::InvalidParameter, "NnDegree requires k >= 1");
                   require(m.m >= 0, ErrorCode::InvalidParameter, "NnDegree requires m >= 0");
                 },
             },
             model);
}

std::string FunctionalSpec::name() const {
  return std::visit(overloaded{
                        [](const TrivialOne&) { return std::string("TrivialOne"); },
                        [](const RsaPacking&) { return std::string("RsaPacking"); },
                        [](const BirthGrowth&) { return std::string("BirthGrowth"); },
                        [](const GermGrainVolume&) { return std::string("GermGrainVolume"); },
                        [](const NnThreshold&) { return std::string("NnThreshold"); },
                        [](const NnDegree&) { return std::string("NnDegree"); },
                    },
                    model);
}

bool FunctionalSpec::is_indicator() const {
  return !std::holds_alternative<GermGrainVolume>(model);
}

bool FunctionalSpec::needs_times() const {
  return std::holds_alternative<RsaPacking>(model) || std::holds_alternative<BirthGrowth>(model);
}

MarkPlan FunctionalSpec::mark_plan() const {
  MarkPlan plan;
  plan.times = needs_times();
  if (auto* m = std::get_if<BirthGrowth>(&model)) {
    plan.grain_radius = m->radius;
    plan.growth_speed = m->speed;
    plan.radius_cap = m->radius_cap;
  } else if (auto* g = std::get_if<GermGrainVolume>(&model)) {
    plan.grain_radius = g->grain;
  }
  return plan;
}

double FunctionalSpec::increment_bound_for(int d) const {
  if (increment_bound) return *increment_bound;
  return std::visit(
      overloaded{
          [](const TrivialOne&) { return 1.0; },
          [](const RsaPacking&) -> double {
            throw Error(ErrorCode::InvalidParameter,
                        "packing functionals have no bounded-increment constant");
          },
          [](const BirthGrowth&) -> double {
            throw Error(ErrorCode::InvalidParameter,
                        "packing functionals have no bounded-increment constant");
          },
          // The new point's share plus what it takes from its neighbours.
          [d](const GermGrainVolume& m) { return 2.0 * ball_volume(*m.grain.upper_bound(), d); },
          // x itself plus neighbours within t whose nearest neighbour was >= t;
          // those are pairwise >= t apart, so fewer than a kissing configuration.
          [d](const NnThreshold&) { return 1.0 + (d == 1 ? 2.0 : d == 2 ? 5.0 : 12.0); },
          [d](const NnDegree& m) { return 1.0 + 3.0 * m.k * kissing_number(d); },
      },
      model);
}

double ScoreVector::total() const {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

// ---------------------------------------------------------------------------
// Packing

std::vector<std::uint8_t> rsa_pack(const PointConfiguration& config, double r) {
  const std::size_t n = config.size();
  std::vector<std::uint8_t> accepted(n, 0);
  if (n == 0) return accepted;
  const auto order = arrival_order(config);
  CellIndex grid(config.window, 2.0 * r);
  const double reach = 2.0 * r;
  for (std::size_t idx : order) {
    const Vec& x = config.points[idx].position;
    bool blocked = false;
    grid.for_each_candidate(x, reach, [&](std::size_t j) {
      if (!blocked && balls_overlap(config.window.distance_squared(x, config.points[j].position), r,
                                    r))
        blocked = true;
    });
    if (!blocked) {
      accepted[idx] = 1;
      grid.insert(idx, x);
    }
  }
  return accepted;
}

std::vector<std::uint8_t> rsa_pack_naive(const PointConfiguration& config, double r) {
  const std::size_t n = config.size();
  std::vector<std::uint8_t> accepted(n, 0);
  const auto order = arrival_order(config);
  std::vector<std::size_t> packed;
  for (std::size_t idx : order) {
    bool ok = true;
    for (std::size_t j : packed)
      if (balls_overlap(
              config.window.distance_squared(config.points[idx].position, config.points[j].position),
              r, r)) {
        ok = false;
        break;
      }
    if (ok) {
      accepted[idx] = 1;
      packed.push_back(idx);
    }
  }
  return accepted;
}

std::vector<std::uint8_t> birth_growth_accept(const PointConfiguration& config,
                                              double radius_cap) {
  const std::size_t n = config.size();
  std::vector<std::uint8_t> accepted(n, 0);
  if (n == 0) return accepted;
  for (const auto& p : config.points) {
    require(p.grain_radius.has_value() && p.growth_speed.has_value(), ErrorCode::MissingMark,
            "birth-growth needs seed radius and growth speed marks");
    require(*p.grain_radius <= radius_cap, ErrorCode::InvalidParameter,
            "seed radius exceeds the cap");
  }
  const auto order = arrival_order(config);
  const double reach = 2.0 * radius_cap;
  CellIndex grid(config.window, reach);
  for (std::size_t idx : order) {
    const auto& p = config.points[idx];
    const double rho = *p.grain_radius;
    bool blocked = false;
    grid.for_each_candidate(p.position, reach, [&](std::size_t j) {
      if (blocked) return;
      const auto& q = config.points[j];
      const double cell = std::min(*q.grain_radius + *q.growth_speed * (*p.time - *q.time),
                                   radius_cap);
      if (balls_overlap(config.window.distance_squared(p.position, q.position), rho, cell))
        blocked = true;
    });
    if (!blocked) {
      accepted[idx] = 1;
      grid.insert(idx, p.position);
    }
  }
  return accepted;
}

// ---------------------------------------------------------------------------
// Germ-grain

std::vector<double> germ_grain_scores(const PointConfiguration& config, long n_mc,
                                      const SeedSpec& seed) {
  require(n_mc >= 100, ErrorCode::InvalidParameter, "n_mc must be >= 100");
  const std::size_t n = config.size();
  std::vector<double> out(n, 0.0);
  if (n == 0) return out;
  double rmax = 0.0;
  for (const auto& p : config.points) {
    require(p.grain_radius.has_value(), ErrorCode::MissingMark, "grain radius required");
    rmax = std::max(rmax, *p.grain_radius);
  }
  const Window& w = config.window;
  const auto pos = config.positions();
  CellIndex index(w, pos, rmax);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec& x = pos[i];
    const std::int64_t xid = config.points[i].id;
    // Covered points of the Voronoi cell of x are within rmax of x.
    Window box = w;
    box.boundary = Boundary::HardWall;
    for (int a = 0; a < w.dim; ++a) {
      box.lower[a] = std::max(w.lower[a], x[a] - rmax);
      box.upper[a] = std::min(w.upper[a], x[a] + rmax);
    }
    Rng rng(seed.child(static_cast<std::uint64_t>(i)));
    long hits = 0;
    for (long s = 0; s < n_mc; ++s) {
      const Vec y = box.sample(rng);
      const double dx = w.distance_squared(y, x);
      if (dx > rmax * rmax) continue;
      bool owner = true;
      bool covered = false;
      index.for_each_candidate(y, rmax, [&](std::size_t j) {
        if (!owner) return;
        const double dj = w.distance_squared(y, pos[j]);
        if (j != i && (dj < dx || (dj == dx && config.points[j].id < xid))) {
          owner = false;
          return;
        }
        const double rj = *config.points[j].grain_radius;
        if (dj <= rj * rj) covered = true;
      });
      if (owner && covered) ++hits;
    }
    out[i] = box.volume() * static_cast<double>(hits) / static_cast<double>(n_mc);
  }
  return out;
}

Estimate germ_grain_volume(const PointConfiguration& config, std::size_t index, double lambda,
                           long n_mc, const SeedSpec& seed) {
  require(!config.empty(), ErrorCode::EmptyConfiguration, "germ-grain volume of empty set");
  require(index < config.size(), ErrorCode::InvalidParameter, "point index out of range");
  require(n_mc >= 100, ErrorCode::InvalidParameter, "n_mc must be >= 100");
  require(lambda > 0.0, ErrorCode::InvalidParameter, "lambda must be > 0");
  const PointConfiguration scaled = config.rescaled(std::pow(lambda, 1.0 / config.dim()));
  // Sample the box of half-width rmax around x; only its Voronoi share can be covered.
  double rmax = 0.0;
  for (const auto& p : scaled.points) {
    require(p.grain_radius.has_value(), ErrorCode::MissingMark, "grain radius required");
    rmax = std::max(rmax, *p.grain_radius);
  }
  const Window& w = scaled.window;
  const auto pos = scaled.positions();
  CellIndex grid(w, pos, rmax);
  const Vec& x = pos[index];
  const std::int64_t xid = scaled.points[index].id;
  Window box = w;
  box.boundary = Boundary::HardWall;
  for (int a = 0; a < w.dim; ++a) {
    box.lower[a] = std::max(w.lower[a], x[a] - rmax);
    box.upper[a] = std::min(w.upper[a], x[a] + rmax);
  }
  Rng rng(seed);
  long hits = 0;
  for (long s = 0; s < n_mc; ++s) {
    const Vec y = box.sample(rng);
    const double dx = w.distance_squared(y, x);
    if (dx > rmax * rmax) continue;
    bool owner = true, covered = false;
    grid.for_each_candidate(y, rmax, [&](std::size_t j) {
      if (!owner) return;
      const double dj = w.distance_squared(y, pos[j]);
      if (j != index && (dj < dx || (dj == dx && scaled.points[j].id < xid))) {
        owner = false;
        return;
      }
      const double rj = *scaled.points[j].grain_radius;
      if (dj <= rj * rj) covered = true;
    });
    if (owner && covered) ++hits;
  }
  const double p = static_cast<double>(hits) / static_cast<double>(n_mc);
  Estimate e;
  e.value = box.volume() * p;
  e.std_error = box.volume() * std::sqrt(p * (1.0 - p) / static_cast<double>(n_mc));
  e.replications = n_mc;
  return e;
}

// ---------------------------------------------------------------------------
// Nearest neighbours

std::vector<double> nn_threshold_scores(const PointConfiguration& config, double t) {
  const std::size_t n = config.size();
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  const auto pos = config.positions();
  CellIndex index(config.window, pos, t);
  const double t2 = t * t;
  for (std::size_t i = 0; i < n; ++i) {
    bool near = false;
    index.for_each_candidate(pos[i], t, [&](std::size_t j) {
      if (!near && j != i && config.window.distance_squared(pos[i], pos[j]) < t2) near = true;
    });
    out[i] = near ? 1.0 : 0.0;
  }
  return out;
}

ScoreVector nn_indicator(const PointConfiguration& config, double t, double lambda) {
  require(config.size() >= 2, ErrorCode::TooFewPoints, "nearest neighbours need >= 2 points");
  require(t > 0.0, ErrorCode::InvalidParameter, "t must be > 0");
  require(lambda > 0.0, ErrorCode::InvalidParameter, "lambda must be > 0");
  ScoreVector s;
  s.ids = config.ids();
  s.lambda = lambda;
  if (std::isinf(t)) {
    s.values.assign(config.size(), 1.0);
    return s;
  }
  s.values = nn_threshold_scores(config.rescaled(std::pow(lambda, 1.0 / config.dim())), t);
  return s;
}

namespace {

std::vector<std::size_t> k_nearest_brute(const PointConfiguration& c, std::size_t i,
                                         std::size_t k) {
  std::vector<std::pair<double, std::size_t>> d;
  d.reserve(c.size());
  for (std::size_t j = 0; j < c.size(); ++j)
    if (j != i) d.emplace_back(c.window.distance_squared(c.points[i].position, c.points[j].position), j);
  auto cmp = [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return c.points[a.second].id < c.points[b.second].id;
  };
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end(), cmp);
  std::vector<std::size_t> out;
  for (std::size_t m = 0; m < k; ++m) out.push_back(d[m].second);
  return out;
}

}  // namespace

std::vector<int> KnnGraph::undirected_degree() const {
  std::vector<int> deg(out.size(), 0);
  for (const auto& [a, b] : edges) {
    ++deg[a];
    ++deg[b];
  }
  return deg;
}

std::vector<int> KnnGraph::in_degree() const {
  std::vector<int> deg(out.size(), 0);
  for (const auto& nb : out)
    for (std::size_t j : nb) ++deg[j];
  return deg;
}

KnnGraph knn_graph(const PointConfiguration& config, int k) {
  require(config.size() >= 2, ErrorCode::TooFewPoints, "k-NN graph needs >= 2 points");
  require(k >= 1, ErrorCode::InvalidParameter, "k must be >= 1");
  const std::size_t n = config.size();
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), n - 1);
  KnnGraph g;
  g.out.resize(n);
  if (n <= 64) {
    for (std::size_t i = 0; i < n; ++i) g.out[i] = k_nearest_brute(config, i, kk);
  } else {
    const auto pos = config.positions();
    const double spacing =
        std::pow(config.window.volume() * static_cast<double>(kk + 1) / static_cast<double>(n),
                 1.0 / config.dim());
    CellIndex index(config.window, pos, spacing);
    double diam2 = 0.0;
    for (int a = 0; a < config.dim(); ++a) diam2 += config.window.side(a) * config.window.side(a);
    const double diam = std::sqrt(diam2);
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t i = 0; i < n; ++i) {
      double r = spacing;
      for (;;) {
        cand.clear();
        const double r2 = r * r;
        index.for_each_candidate(pos[i], r, [&](std::size_t j) {
          if (j == i) return;
          const double dd = config.window.distance_squared(pos[i], pos[j]);
          if (dd <= r2) cand.emplace_back(dd, j);
        });
        if (cand.size() >= kk || r > diam) break;
        r *= 2.0;
      }
      auto cmp = [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return config.points[a.second].id < config.points[b.second].id;
      };
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kk), cand.end(),
                        cmp);
      for (std::size_t m = 0; m < kk; ++m) g.out[i].push_back(cand[m].second);
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j : g.out[i]) g.edges.emplace_back(std::min(i, j), std::max(i, j));
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  return g;
}

std::vector<double> nn_degree_scores(const PointConfiguration& config, const NnDegree& model) {
  std::vector<double> out(config.size(), 0.0);
  if (config.size() < 2) return out;
  const KnnGraph g = knn_graph(config, model.k);
  const auto deg = model.directed ? g.in_degree() : g.undirected_degree();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = deg[i] == model.m ? 1.0 : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Dispatch

std::vector<double> score_rescaled(const FunctionalSpec& spec, const PointConfiguration& config,
                                   const SeedSpec& seed) {
  const int d = config.dim();
  const std::size_t n = config.size();
  auto from_flags = [](const std::vector<std::uint8_t>& f) {
    return std::vector<double>(f.begin(), f.end());
  };
  return std::visit(
      overloaded{
          [&](const TrivialOne&) { return std::vector<double>(n, 1.0); },
          [&](const RsaPacking&) { return from_flags(rsa_pack(config, ball_radius_from_volume(1.0, d))); },
          [&](const BirthGrowth& m) { return from_flags(birth_growth_accept(config, m.radius_cap)); },
          [&](const GermGrainVolume& m) {
            return germ_grain_scores(config, m.volume_mc_samples, seed);
          },
          [&](const NnThreshold& m) { return nn_threshold_scores(config, m.t); },
          [&](const NnDegree& m) { return nn_degree_scores(config, m); },
      },
      spec.model);
}

double total_score(const FunctionalSpec& spec, const PointConfiguration& config,
                   const SeedSpec& seed) {
  if (std::holds_alternative<TrivialOne>(spec.model)) return static_cast<double>(config.size());
  const auto s = score_rescaled(spec, config, seed);
  return std::accumulate(s.begin(), s.end(), 0.0);
}

ScoreVector score_configuration(const FunctionalSpec& spec, const PointConfiguration& config,
                                 double lambda, const SeedSpec& seed) {
  require(lambda > 0.0 && std::isfinite(lambda), ErrorCode::InvalidParameter,
          "lambda must be > 0");
  ScoreVector s;
  s.ids = config.ids();
  s.lambda = lambda;
  if (std::holds_alternative<TrivialOne>(spec.model)) {
    s.values.assign(config.size(), 1.0);
    return s;
  }
  const double scale = std::pow(lambda, 1.0 / config.dim());
  s.values = score_rescaled(spec, config.rescaled(scale), seed);
  return s;
}

double add_one_increment(const FunctionalSpec& spec, const MarkedPoint& x,
                         const PointConfiguration& config, double lambda, const SeedSpec& seed) {
  for (const auto& p : config.points)
    require(p.position != x.position, ErrorCode::DuplicatePoint,
            "inserted point duplicates an existing position");
  PointConfiguration with = config;
  MarkedPoint added = x;
  std::int64_t max_id = -1;
  bool clash = false;
  for (const auto& p : config.points) {
    max_id = std::max(max_id, p.id);
    clash = clash || p.id == x.id;
  }
  if (clash) added.id = max_id + 1;
  with.points.push_back(added);
  const double scale = std::pow(lambda, 1.0 / config.dim());
  return total_score(spec, with.rescaled(scale), seed) -
         total_score(spec, config.rescaled(scale), seed);
}

// ---------------------------------------------------------------------------
// Causal clusters

CausalCluster causal_cluster(const PointConfiguration& config, std::size_t index, double r) {
  require(index < config.size(), ErrorCode::InvalidParameter, "point index out of range");
  for (const auto& p : config.points)
    require(p.time.has_value(), ErrorCode::MissingMark, "arrival time required");
  const auto pos = config.positions();
  CellIndex grid(config.window, pos, 2.0 * r);
  std::vector<std::uint8_t> in_cluster(config.size(), 0);
  in_cluster[index] = 1;

  auto sweep = [&](bool backward) {
    std::vector<std::uint8_t> seen(config.size(), 0);
    std::queue<std::size_t> queue;
    queue.push(index);
    seen[index] = 1;
    while (!queue.empty()) {
      const std::size_t cur = queue.front();
      queue.pop();
      grid.for_each_candidate(pos[cur], 2.0 * r, [&](std::size_t j) {
        if (seen[j]) return;
        if (!balls_overlap(config.window.distance_squared(pos[cur], pos[j]), r, r)) return;
        const bool ok = backward ? earlier(config.points[j], config.points[cur])
                                 : earlier(config.points[cur], config.points[j]);
        if (!ok) return;
        seen[j] = 1;
        in_cluster[j] = 1;
        queue.push(j);
      });
    }
  };
  sweep(true);
  sweep(false);

  CausalCluster out;
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < config.size(); ++i)
    if (in_cluster[i]) {
      members.push_back(i);
      out.ids.push_back(config.points[i].id);
    }
  double d2 = 0.0;
  for (std::size_t a = 0; a < members.size(); ++a)
    for (std::size_t b = a + 1; b < members.size(); ++b)
      d2 = std::max(d2, config.window.distance_squared(pos[members[a]], pos[members[b]]));
  out.diameter = std::sqrt(d2);
  std::sort(out.ids.begin(), out.ids.end());
  return out;
}

}  // namespace geoprob

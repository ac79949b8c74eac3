#include "geoprob/gibbs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "geoprob/parallel.hpp"

namespace geoprob {

void TiltParams::validate() const {
  require(u >= 0.0 && u <= 1.0, ErrorCode::InvalidParameter, "tilt u must lie in [0, 1]");
  functional.validate();
  require(!std::holds_alternative<RsaPacking>(functional.model) &&
              !std::holds_alternative<BirthGrowth>(functional.model),
          ErrorCode::InvalidParameter, "packing functionals cannot be tilted");
}

double TiltParams::increment_bound(int dim) const {
  return f.sup_norm() * functional.increment_bound_for(dim);
}

double pairing(const FunctionalSpec& spec, const TestFunction& f, const PointConfiguration& config,
               double lambda, const SeedSpec& seed) {
  if (config.empty()) return 0.0;
  const auto s = score_configuration(spec, config, lambda, seed);
  double acc = 0.0;
  for (std::size_t i = 0; i < config.size(); ++i)
    acc += s.values[i] * f(config.points[i].position, config.dim());
  return acc;
}

namespace {

struct DomPoint {
  MarkedPoint point;
  double birth = 0.0;
  double death = std::numeric_limits<double>::infinity();
  double beta = 0.0;
};

/// Draws the dominating points that die in (lo, hi] (or, for segment 0, those
/// alive at 0). Each segment has its own stream so doubling only adds points.
void draw_segment(std::vector<DomPoint>& out, int segment, double rate, int dim,
                  const MarkPlan& plan, const SeedSpec& seed) {
  Rng rng(seed.child(static_cast<std::uint64_t>(segment)));
  double lo = 0.0, hi = 0.0;
  if (segment >= 1) {
    hi = segment == 1 ? 0.0 : -std::ldexp(1.0, segment - 2);
    lo = -std::ldexp(1.0, segment - 1);
  }
  const double mean = segment == 0 ? rate : rate * (hi - lo);
  const auto n = rng.poisson(mean);
  const Window w = Window::unit(dim);
  for (std::uint64_t i = 0; i < n; ++i) {
    DomPoint p;
    p.point.position = w.sample(rng);
    p.point.id = (static_cast<std::int64_t>(segment) << 32) | static_cast<std::int64_t>(i);
    if (plan.times) p.point.time = rng.uniform();
    if (plan.grain_radius) p.point.grain_radius = plan.grain_radius->sample(rng);
    if (plan.growth_speed) p.point.growth_speed = plan.growth_speed->sample(rng);
    p.beta = rng.uniform();
    if (segment == 0) {
      p.birth = -rng.exponential();
    } else {
      p.death = rng.uniform(lo, hi);
      p.birth = p.death - rng.exponential();
    }
    out.push_back(p);
  }
}

/// Bounds on Delta_f(x, X) over all L <= X <= U.
class IncrementBounds {
 public:
  IncrementBounds(const TiltParams& tilt, double lambda, int dim, const SeedSpec& seed)
      : tilt_(tilt), lambda_(lambda), dim_(dim), seed_(seed),
        cap_(tilt.increment_bound(dim)) {
    if (auto* m = std::get_if<NnThreshold>(&tilt.functional.model))
      t_unit_ = m->t / std::pow(lambda, 1.0 / dim);
  }

  std::pair<double, double> operator()(const MarkedPoint& x, const std::vector<const MarkedPoint*>& low,
                                       const std::vector<const MarkedPoint*>& up, bool equal) const {
    std::pair<double, double> r;
    if (t_unit_) {
      r = nn_threshold(x, low, up);
    } else if (equal) {
      const double v = exact(x, low);
      r = {v, v};
    } else {
      r = {-cap_, cap_};
    }
    if (equal && std::abs(r.first) > cap_ * (1.0 + 1e-12))
      throw Error(ErrorCode::InvariantViolation,
                  "add-one increment exceeds the declared bound ||f|| C");
    return {std::max(r.first, -cap_), std::min(r.second, cap_)};
  }

 private:
  double exact(const MarkedPoint& x, const std::vector<const MarkedPoint*>& set) const {
    PointConfiguration c;
    c.window = Window::unit(dim_);
    for (const auto* p : set) c.points.push_back(*p);
    const double before = pairing(tilt_.functional, tilt_.f, c, lambda_, seed_);
    c.points.push_back(x);
    return pairing(tilt_.functional, tilt_.f, c, lambda_, seed_) - before;
  }

  bool has_neighbour(const MarkedPoint& y, const std::vector<const MarkedPoint*>& set) const {
    const double t2 = *t_unit_ * *t_unit_;
    for (const auto* p : set)
      if (p->id != y.id && (p->position - y.position).squaredNorm() < t2) return true;
    return false;
  }

  std::pair<double, double> nn_threshold(const MarkedPoint& x,
                                         const std::vector<const MarkedPoint*>& low,
                                         const std::vector<const MarkedPoint*>& up) const {
    const double t2 = *t_unit_ * *t_unit_;
    const double fx = tilt_.f(x.position, dim_);
    const double t1_lo = has_neighbour(x, low) ? fx : 0.0;
    const double t1_up = has_neighbour(x, up) ? fx : 0.0;
    double lo = std::min(t1_lo, t1_up);
    double hi = std::max(t1_lo, t1_up);
    std::unordered_set<std::int64_t> in_low;
    for (const auto* p : low) in_low.insert(p->id);
    // y within t of x gains a neighbour; its score moves 0 -> 1 iff it was isolated.
    for (const auto* y : up) {
      if ((y->position - x.position).squaredNorm() >= t2) continue;
      const double fy = tilt_.f(y->position, dim_);
      const bool certain_member = in_low.count(y->id) > 0;
      const bool maybe_isolated = !has_neighbour(*y, low);
      if (!maybe_isolated) continue;
      const bool surely_isolated = !has_neighbour(*y, up);
      if (certain_member && surely_isolated) {
        lo += fy;
        hi += fy;
      } else {
        lo += std::min(0.0, fy);
        hi += std::max(0.0, fy);
      }
    }
    return {lo, hi};
  }

  const TiltParams& tilt_;
  double lambda_;
  int dim_;
  SeedSpec seed_;
  double cap_;
  std::optional<double> t_unit_;
};

struct Replay {
  std::vector<std::size_t> low;
  std::vector<std::size_t> up;
  std::optional<double> empty_epoch;
};

}  // namespace

SandwichSample sandwich_triple(const TiltParams& tilt, double lambda, const DensitySpec& kappa,
                               const SeedSpec& seed, double horizon_cap) {
  tilt.validate();
  require(lambda > 0.0 && std::isfinite(lambda), ErrorCode::InvalidParameter, "lambda must be > 0");
  require(kappa.min_bound() > 0.0, ErrorCode::DegenerateDensity,
          "kappa must be bounded away from zero");
  const int d = kappa.dim();
  const double bound = tilt.u * tilt.increment_bound(d);
  const double a = std::exp(-bound) * kappa.min_bound();
  const double b = std::exp(bound) * kappa.max_bound();
  const double rate = lambda * b;
  const MarkPlan plan = tilt.functional.mark_plan();
  const IncrementBounds bounds(tilt, lambda, d, seed.child(purpose::kScoring));
  const SeedSpec dom = seed.child(purpose::kPositions);

  std::vector<DomPoint> points;
  draw_segment(points, 0, rate, d, plan, dom);
  double horizon = 1.0;
  int segments = 1;
  int doublings = 0;
  Replay result;
  for (;;) {
    while (segments == 1 || std::ldexp(1.0, segments - 2) < horizon) draw_segment(points, segments++, rate, d, plan, dom);
    // Events on (-horizon, 0]: +index for births, -(index+1) for deaths.
    std::vector<std::pair<double, std::ptrdiff_t>> events;
    std::vector<std::uint8_t> in_low(points.size(), 0), in_up(points.size(), 0);
    std::size_t alive = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto& p = points[i];
      if (p.death <= -horizon) continue;
      if (p.birth <= -horizon) {
        in_up[i] = 1;
        ++alive;
      } else {
        events.emplace_back(p.birth, static_cast<std::ptrdiff_t>(i));
      }
      if (p.death <= 0.0) events.emplace_back(p.death, -static_cast<std::ptrdiff_t>(i) - 1);
    }
    std::sort(events.begin(), events.end());
    std::optional<double> empty_epoch;
    if (alive == 0) empty_epoch = -horizon;
    std::vector<const MarkedPoint*> low_set, up_set;
    for (const auto& [time, code] : events) {
      if (code < 0) {
        const auto i = static_cast<std::size_t>(-code - 1);
        in_low[i] = 0;
        in_up[i] = 0;
        if (--alive == 0) empty_epoch = time;
        continue;
      }
      const auto i = static_cast<std::size_t>(code);
      ++alive;
      const auto& x = points[i];
      low_set.clear();
      up_set.clear();
      for (std::size_t j = 0; j < points.size(); ++j) {
        if (in_up[j]) up_set.push_back(&points[j].point);
        if (in_low[j]) low_set.push_back(&points[j].point);
      }
      const double k = kappa(x.point.position);
      double p_min = k / b, p_max = k / b;
      if (tilt.u != 0.0 && tilt.f.sup_norm() != 0.0) {
        const auto [lo, hi] = bounds(x.point, low_set, up_set, low_set.size() == up_set.size());
        p_min = k * std::exp(tilt.u * lo) / b;
        p_max = k * std::exp(tilt.u * hi) / b;
      }
      require(p_min >= 0.0 && p_max <= 1.0 + 1e-12 && p_min <= p_max,
              ErrorCode::InvariantViolation, "acceptance probability outside [0, 1]");
      if (x.beta < p_max) in_up[i] = 1;
      if (x.beta < p_min) in_low[i] = 1;
    }
    if (in_low == in_up) {
      for (std::size_t i = 0; i < points.size(); ++i)
        if (in_low[i]) result.low.push_back(i);
      result.empty_epoch = empty_epoch;
      break;
    }
    require(horizon * 2.0 <= horizon_cap, ErrorCode::HorizonExceeded,
            "coupling from the past did not coalesce within the horizon cap");
    horizon *= 2.0;
    ++doublings;
  }

  SandwichSample out;
  const Window w = Window::unit(d);
  out.low.window = out.mid.window = out.high.window = w;
  std::unordered_set<std::int64_t> mid_ids;
  for (std::size_t i : result.low) {
    out.mid.points.push_back(points[i].point);
    mid_ids.insert(points[i].point.id);
  }
  std::unordered_set<std::int64_t> high_ids;
  for (const auto& p : points) {
    if (p.death <= 0.0) continue;
    out.high.points.push_back(p.point);
    high_ids.insert(p.point.id);
    if (p.beta < a / b) out.low.points.push_back(p.point);
  }
  for (const auto& p : out.low.points)
    require(mid_ids.count(p.id) > 0, ErrorCode::InvariantViolation, "low process escapes mid");
  for (std::int64_t id : mid_ids)
    require(high_ids.count(id) > 0, ErrorCode::InvariantViolation, "mid process escapes high");
  for (auto* c : {&out.low, &out.mid, &out.high})
    std::sort(c->points.begin(), c->points.end(),
              [](const MarkedPoint& x, const MarkedPoint& y) { return x.id < y.id; });

  auto& tr = out.trajectory;
  tr.horizon = horizon;
  tr.empty_epoch = result.empty_epoch;
  tr.a = a;
  tr.b = b;
  tr.doublings = doublings;
  for (const auto& p : points) {
    if (p.death <= -horizon) continue;
    BirthDeathEvent e;
    e.birth = p.birth;
    e.position = p.point.position;
    e.lifetime = p.death - p.birth;
    e.beta = p.beta;
    e.kind = p.beta < a / b ? BirthDeathEvent::Kind::Regular : BirthDeathEvent::Kind::Exceptional;
    e.id = p.point.id;
    tr.events.push_back(e);
  }
  std::sort(tr.events.begin(), tr.events.end(), [](const auto& x, const auto& y) {
    return x.birth != y.birth ? x.birth < y.birth : x.id < y.id;
  });
  return out;
}

PointConfiguration sample_tilted(const TiltParams& tilt, double lambda, const DensitySpec& kappa,
                                 const SeedSpec& seed, double horizon_cap) {
  return sandwich_triple(tilt, lambda, kappa, seed, horizon_cap).mid;
}

namespace {

/// Self-normalized tilted mean and variance of s under weights exp(h s), with
/// delta-method standard errors.
struct TiltedMoments {
  double mean, mean_se, var, var_se;
};

TiltedMoments reweighted(const std::vector<double>& s, double h) {
  double top = -std::numeric_limits<double>::infinity();
  for (double x : s) top = std::max(top, h * x);
  std::vector<double> w(s.size());
  double sw = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) sw += (w[i] = std::exp(h * s[i] - top));
  double m = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) m += w[i] * s[i];
  m /= sw;
  double v = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) v += w[i] * (s[i] - m) * (s[i] - m);
  v /= sw;
  double em = 0.0, ev = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double c = (s[i] - m) * (s[i] - m);
    em += w[i] * w[i] * c;
    ev += w[i] * w[i] * (c - v) * (c - v);
  }
  return {m, std::sqrt(em) / sw, v, std::sqrt(ev) / sw};
}

double log_mgf(const std::vector<double>& s, double h, double shift) {
  double top = -std::numeric_limits<double>::infinity();
  for (double x : s) top = std::max(top, h * (x - shift));
  double acc = 0.0;
  for (double x : s) acc += std::exp(h * (x - shift) - top);
  return top + std::log(acc / static_cast<double>(s.size()));
}

}  // namespace

DerivativeReport tilt_derivative_check(const TiltParams& base, const std::vector<double>& u_grid,
                                       double lambda, const DensitySpec& kappa, long reps,
                                       const SeedSpec& seed, double epsilon, int jobs) {
  require(reps >= 8, ErrorCode::InvalidParameter, "reps must be >= 8");
  require(epsilon > 0.0, ErrorCode::InvalidParameter, "epsilon must be > 0");
  const auto plain = parallel_map(static_cast<std::size_t>(reps), jobs, [&](std::size_t r) {
    const SeedSpec rep = seed.child({0, r});
    auto c = sample_inhomogeneous_poisson(lambda, kappa, rep.child(purpose::kPositions));
    c = attach_marks(c, base.functional.mark_plan(), rep.child(purpose::kMarks));
    return pairing(base.functional, base.f, c, lambda, rep.child(purpose::kScoring));
  });
  RunningStats ps;
  for (double x : plain) ps.add(x);
  const double mean0 = ps.mean();
  DerivativeReport report;
  report.epsilon = epsilon;
  for (std::size_t g = 0; g < u_grid.size(); ++g) {
    const double u = u_grid[g];
    TiltParams tilt = base;
    tilt.u = u;
    tilt.validate();
    const double lp = log_mgf(plain, u + epsilon, 0.0);
    const double l0 = log_mgf(plain, u, 0.0);
    const double lm = log_mgf(plain, u - epsilon, 0.0);
    const TiltedMoments tm = reweighted(plain, u);
    std::vector<double> tilted;
    if (u == 0.0) {
      tilted = plain;
    } else {
      tilted = parallel_map(static_cast<std::size_t>(reps), jobs, [&](std::size_t r) {
        const SeedSpec rep = seed.child({1 + g, r});
        const auto c = sample_tilted(tilt, lambda, kappa, rep);
        return pairing(tilt.functional, tilt.f, c, lambda, rep.child(purpose::kAuxiliary));
      });
    }
    RunningStats ts;
    for (double x : tilted) ts.add(x);
    double m4 = 0.0;
    for (double x : tilted) m4 += std::pow(x - ts.mean(), 4);
    const double n = static_cast<double>(tilted.size());
    const double var = ts.variance();
    const double var_se = std::sqrt(std::max(0.0, (m4 / n - var * var * (n - 3.0) / (n - 1.0)) / n));
    if (u == 0.0) {
      const double cp = log_mgf(plain, epsilon, mean0);
      const double cm = log_mgf(plain, -epsilon, mean0);
      report.rows.push_back({u, "first", (cp - cm) / (2.0 * epsilon), 0.0, ps.std_error()});
    } else {
      report.rows.push_back({u, "first", (lp - lm) / (2.0 * epsilon), ts.mean(),
                             std::hypot(tm.mean_se, ts.std_error())});
    }
    report.rows.push_back({u, "second", (lp - 2.0 * l0 + lm) / (epsilon * epsilon), var,
                           u == 0.0 ? var_se : std::hypot(tm.var_se, var_se)});
  }
  return report;
}

}  // namespace geoprob

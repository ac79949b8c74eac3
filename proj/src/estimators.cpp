#include "geoprob/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include "geoprob/parallel.hpp"

namespace geoprob {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

MarkedPoint inserted_point(const Vec& pos, const MarkPlan& plan, Rng& rng, std::int64_t id) {
  MarkedPoint p;
  p.position = pos;
  p.id = id;
  if (plan.times) p.time = rng.uniform();
  if (plan.grain_radius) p.grain_radius = plan.grain_radius->sample(rng);
  if (plan.growth_speed) p.growth_speed = plan.growth_speed->sample(rng);
  return p;
}

/// Uniform point in the shell r0 <= |y| < r1, direction stratified by `stratum`.
Vec shell_point(int d, double r0, double r1, std::uint64_t stratum, Rng& rng) {
  const double a = std::pow(r0, d);
  const double b = std::pow(r1, d);
  const double r = std::pow(a + rng.uniform() * (b - a), 1.0 / d);
  Vec y = Vec::Zero();
  if (d == 1) {
    y[0] = (stratum % 2 == 0) ? r : -r;
  } else if (d == 2) {
    const double phi = 2.0 * std::numbers::pi * (static_cast<double>(stratum % 8) + rng.uniform()) / 8.0;
    y[0] = r * std::cos(phi);
    y[1] = r * std::sin(phi);
  } else {
    Vec g(rng.normal(), rng.normal(), rng.normal());
    const double norm = g.norm();
    for (int i = 0; i < 3; ++i) {
      const double s = ((stratum >> i) & 1U) ? -1.0 : 1.0;
      y[i] = s * std::abs(g[i]) / norm * r;
    }
  }
  return y;
}

/// Stationary marked sample on the hard-wall cube [-half, half]^d.
PointConfiguration stationary_sample(const FunctionalSpec& spec, int d, double tau, double half,
                                     const SeedSpec& rep) {
  const Window w = Window::cube(d, -half, half);
  auto config = sample_homogeneous_poisson(tau, w, rep.child(purpose::kPositions));
  return attach_marks(config, spec.mark_plan(), rep.child(purpose::kMarks));
}

/// Points of `base` within `radius` of any of the centres.
PointConfiguration local_subset(const PointConfiguration& base, const CellIndex& index,
                                std::initializer_list<Vec> centres, double radius) {
  std::vector<std::size_t> keep;
  const double r2 = radius * radius;
  for (const Vec& c : centres)
    index.for_each_candidate(c, radius, [&](std::size_t j) {
      if (base.window.distance_squared(c, base.points[j].position) <= r2) keep.push_back(j);
    });
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  PointConfiguration out;
  out.window = base.window;
  out.intensity = base.intensity;
  out.points.reserve(keep.size() + 2);
  for (std::size_t j : keep) out.points.push_back(base.points[j]);
  return out;
}

std::vector<double> shell_edges(double r_max, int shells) {
  std::vector<double> e(static_cast<std::size_t>(shells) + 1);
  for (int k = 0; k <= shells; ++k) e[static_cast<std::size_t>(k)] = r_max * k / shells;
  return e;
}

struct ShellRep {
  double xi0 = 0.0;
  std::vector<double> shell;
};

/// Index of the first shell past the truncation point, or -1 if the integrand
/// never settles.
int truncation_index(const std::vector<double>& mean, const std::vector<double>& se) {
  const double floor = 1e-3 * std::abs(mean.front());
  int run = 0;
  for (std::size_t k = 0; k < mean.size(); ++k) {
    const double thr = std::max(floor, 2.0 * se[k]);
    run = std::abs(mean[k]) < thr ? run + 1 : 0;
    if (run == 3) return static_cast<int>(k) + 1;
  }
  return -1;
}

void check_shell_options(const FunctionalSpec& spec, const ShellOptions& opt) {
  spec.validate();
  require(opt.dim >= 1 && opt.dim <= 3, ErrorCode::InvalidParameter, "dimension must be 1, 2 or 3");
  require(opt.tau > 0.0 && std::isfinite(opt.tau), ErrorCode::InvalidParameter, "tau must be > 0");
  require(opt.shells >= 3, ErrorCode::InvalidParameter, "need at least 3 shells");
  require(opt.reps >= 2, ErrorCode::InvalidParameter, "reps must be >= 2");
  if (opt.r_max) require(*opt.r_max > 0.0, ErrorCode::InvalidParameter, "r_max must be > 0");
  if (opt.margin) require(*opt.margin > 0.0, ErrorCode::InvalidParameter, "margin must be > 0");
}

struct ShellPlan {
  double r_max;
  double margin;
  double half;
  std::vector<double> edges;
  std::vector<double> vol;
};

ShellPlan make_plan(const FunctionalSpec& spec, const ShellOptions& opt) {
  auto [r_def, m_def] = default_shell_radii(spec, opt.dim, opt.tau);
  ShellPlan p;
  p.r_max = opt.r_max.value_or(r_def);
  p.margin = opt.margin.value_or(m_def);
  p.half = p.r_max + p.margin;
  p.edges = shell_edges(p.r_max, opt.shells);
  for (int k = 0; k < opt.shells; ++k)
    p.vol.push_back(ball_volume(p.edges[k + 1], opt.dim) - ball_volume(p.edges[k], opt.dim));
  return p;
}

/// Combines per-replicate shell samples into a radial integral estimate:
/// value = base + tau sum_k vol_k (mean_k - centre), with per-replicate
/// linearization linear(rep, tau sum_k vol_k shell_k, tau sum_k vol_k).
template <typename Linear>
Estimate fold_shells(const std::vector<ShellRep>& reps, const ShellPlan& plan, double tau,
                     double centre, double base, Linear&& linear) {
  const std::size_t ks = plan.vol.size();
  const double n = static_cast<double>(reps.size());
  std::vector<RunningStats> st(ks);
  for (const auto& r : reps)
    for (std::size_t k = 0; k < ks; ++k) st[k].add(r.shell[k]);
  std::vector<double> integrand(ks), se(ks);
  for (std::size_t k = 0; k < ks; ++k) {
    integrand[k] = st[k].mean() - centre;
    se[k] = st[k].std_error();
  }
  Estimate e;
  const int cut = truncation_index(integrand, se);
  const std::size_t used = cut < 0 ? ks : static_cast<std::size_t>(cut);
  if (cut < 0) e.warnings.push_back("truncation-failure");
  double value = base;
  for (std::size_t k = 0; k < used; ++k) value += tau * plan.vol[k] * integrand[k];
  double wsum = 0.0;
  for (std::size_t k = 0; k < used; ++k) wsum += plan.vol[k];
  RunningStats z;
  for (const auto& r : reps) {
    double acc = 0.0;
    for (std::size_t k = 0; k < used; ++k) acc += plan.vol[k] * r.shell[k];
    z.add(linear(r, tau * acc, tau * wsum));
  }
  e.value = value;
  e.std_error = z.std_error();
  e.replications = static_cast<long>(n);
  e.metadata["tau"] = tau;
  e.metadata["truncation_radius"] = plan.edges[used];
  e.metadata["shells_used"] = static_cast<double>(used);
  e.metadata["window_half"] = plan.half;
  return e;
}

/// Sample variance and its standard error from the fourth central moment.
std::pair<double, double> variance_with_se(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double c = (v - mean) * (v - mean);
    m2 += c;
    m4 += c * c;
  }
  const double s2 = m2 / (n - 1.0);
  m4 /= n;
  const double var_s2 = std::max(0.0, (m4 - s2 * s2 * (n - 3.0) / (n - 1.0)) / n);
  return {s2, std::sqrt(var_s2)};
}

}  // namespace

std::pair<double, double> default_shell_radii(const FunctionalSpec& spec, int d, double tau) {
  const double spacing = std::pow(1.0 / (tau * unit_ball_volume(d)), 1.0 / d);
  const double diam = 2.0 * ball_radius_from_volume(1.0, d);
  return std::visit(
      overloaded{
          [&](const TrivialOne&) { return std::pair{diam, diam}; },
          [&](const RsaPacking&) {
            return std::pair{6.0 * diam, (d == 1 ? 10.0 : 6.0) * diam};
          },
          [&](const BirthGrowth& m) {
            return std::pair{12.0 * m.radius_cap, 8.0 * m.radius_cap};
          },
          [&](const GermGrainVolume& m) {
            const double reach = 2.0 * *m.grain.upper_bound() + 3.0 * spacing;
            return std::pair{reach, reach};
          },
          // Scores depend only on points within t, so both radii are exact.
          [&](const NnThreshold& m) { return std::pair{2.0 * m.t, m.t * (1.0 + 1e-9)}; },
          [&](const NnDegree& m) {
            const double knn = std::pow(static_cast<double>(m.k), 1.0 / d) * spacing;
            return std::pair{6.0 * knn, 5.0 * knn};
          },
      },
      spec.model);
}

Estimate estimate_mean_score(const FunctionalSpec& spec, const ShellOptions& opt) {
  check_shell_options(spec, opt);
  const ShellPlan plan = make_plan(spec, opt);
  const MarkPlan marks = spec.mark_plan();
  const auto xs = parallel_map(static_cast<std::size_t>(opt.reps), opt.jobs, [&](std::size_t r) {
    const SeedSpec rep = opt.seed.child(r);
    auto config = stationary_sample(spec, opt.dim, opt.tau, plan.margin, rep);
    Rng rng(rep.child(purpose::kInsertion));
    config.points.push_back(
        inserted_point(Vec::Zero(), marks, rng, static_cast<std::int64_t>(config.size())));
    const auto s = score_rescaled(spec, config, rep.child(purpose::kScoring));
    return s.back();
  });
  RunningStats st;
  for (double x : xs) st.add(x);
  Estimate e = st.estimate();
  e.metadata["tau"] = opt.tau;
  e.metadata["window_half"] = plan.margin;
  return e;
}

Estimate estimate_v(const FunctionalSpec& spec, const ShellOptions& opt) {
  check_shell_options(spec, opt);
  const ShellPlan plan = make_plan(spec, opt);
  const MarkPlan marks = spec.mark_plan();
  const int d = opt.dim;
  const auto reps = parallel_map(static_cast<std::size_t>(opt.reps), opt.jobs, [&](std::size_t r) {
    const SeedSpec rep = opt.seed.child(r);
    const auto base = stationary_sample(spec, d, opt.tau, plan.half, rep);
    const CellIndex index(base.window, base.positions(), plan.margin);
    Rng rng(rep.child(purpose::kInsertion));
    const auto n = static_cast<std::int64_t>(base.size());
    const MarkedPoint origin = inserted_point(Vec::Zero(), marks, rng, n);
    ShellRep out;
    {
      auto local = local_subset(base, index, {Vec::Zero()}, plan.margin);
      local.points.push_back(origin);
      out.xi0 = score_rescaled(spec, local, rep.child({purpose::kScoring, 0})).back();
    }
    out.shell.resize(plan.vol.size());
    for (std::size_t k = 0; k < plan.vol.size(); ++k) {
      const Vec y = shell_point(d, plan.edges[k], plan.edges[k + 1], r, rng);
      auto local = local_subset(base, index, {Vec::Zero(), y}, plan.margin);
      local.points.push_back(origin);
      local.points.push_back(inserted_point(y, marks, rng, n + 1));
      const auto s = score_rescaled(spec, local, rep.child({purpose::kScoring, k + 1}));
      out.shell[k] = s[s.size() - 2] * s.back();
    }
    return out;
  });
  RunningStats m, sq;
  for (const auto& r : reps) {
    m.add(r.xi0);
    sq.add(r.xi0 * r.xi0);
  }
  const double mhat = m.mean();
  // The centering m^2 linearizes to 2 m xi0 per replicate.
  Estimate e = fold_shells(reps, plan, opt.tau, mhat * mhat, sq.mean(),
                           [&](const ShellRep& r, double pair, double weight) {
                             return r.xi0 * r.xi0 + pair - 2.0 * mhat * weight * r.xi0;
                           });
  e.metadata["mean"] = mhat;
  e.metadata["mean_se"] = m.std_error();
  return e;
}

Estimate estimate_v_direct(const FunctionalSpec& spec, int dim, double tau, double side,
                           long reps, const SeedSpec& seed, int jobs) {
  spec.validate();
  require(tau > 0.0 && side > 0.0, ErrorCode::InvalidParameter, "tau and side must be > 0");
  require(reps >= 8, ErrorCode::InvalidParameter, "reps must be >= 8");
  const Window w = Window::cube(dim, 0.0, side, Boundary::Torus);
  const auto h = parallel_map(static_cast<std::size_t>(reps), jobs, [&](std::size_t r) {
    const SeedSpec rep = seed.child(r);
    auto config = sample_homogeneous_poisson(tau, w, rep.child(purpose::kPositions));
    config = attach_marks(config, spec.mark_plan(), rep.child(purpose::kMarks));
    return total_score(spec, config, rep.child(purpose::kScoring));
  });
  const auto [s2, se] = variance_with_se(h);
  const double scale = tau * w.volume();
  Estimate e;
  e.value = s2 / scale;
  e.std_error = se / scale;
  e.replications = reps;
  e.metadata["tau"] = tau;
  e.metadata["side"] = side;
  return e;
}

const char* to_string(DeltaRoute route) {
  return route == DeltaRoute::Window ? "window" : "insertion";
}

Estimate estimate_delta(const FunctionalSpec& spec, DeltaRoute route, const ShellOptions& opt) {
  check_shell_options(spec, opt);
  const ShellPlan plan = make_plan(spec, opt);
  const MarkPlan marks = spec.mark_plan();
  const int d = opt.dim;
  if (route == DeltaRoute::Window) {
    const double radius = plan.half;
    const auto diffs =
        parallel_map(static_cast<std::size_t>(opt.reps), opt.jobs, [&](std::size_t r) {
          const SeedSpec rep = opt.seed.child(r);
          auto cube = stationary_sample(spec, d, opt.tau, radius, rep);
          PointConfiguration ball;
          ball.window = cube.window;
          for (const auto& p : cube.points)
            if (p.position.squaredNorm() < radius * radius) ball.points.push_back(p);
          const double h0 = total_score(spec, ball, rep.child({purpose::kScoring, 0}));
          Rng rng(rep.child(purpose::kInsertion));
          ball.points.push_back(
              inserted_point(Vec::Zero(), marks, rng, static_cast<std::int64_t>(cube.size())));
          const double h1 = total_score(spec, ball, rep.child({purpose::kScoring, 1}));
          return h1 - h0;
        });
    RunningStats st;
    for (double x : diffs) st.add(x);
    Estimate e = st.estimate();
    e.metadata["tau"] = opt.tau;
    e.metadata["window_radius"] = radius;
    return e;
  }
  const auto reps = parallel_map(static_cast<std::size_t>(opt.reps), opt.jobs, [&](std::size_t r) {
    const SeedSpec rep = opt.seed.child(r);
    const auto base = stationary_sample(spec, d, opt.tau, plan.half, rep);
    const CellIndex index(base.window, base.positions(), plan.margin);
    Rng rng(rep.child(purpose::kInsertion));
    const auto n = static_cast<std::int64_t>(base.size());
    const MarkedPoint origin = inserted_point(Vec::Zero(), marks, rng, n);
    ShellRep out;
    {
      auto local = local_subset(base, index, {Vec::Zero()}, plan.margin);
      local.points.push_back(origin);
      out.xi0 = score_rescaled(spec, local, rep.child({purpose::kScoring, 0})).back();
    }
    out.shell.resize(plan.vol.size());
    for (std::size_t k = 0; k < plan.vol.size(); ++k) {
      const Vec y = shell_point(d, plan.edges[k], plan.edges[k + 1], r, rng);
      auto without = local_subset(base, index, {Vec::Zero(), y}, plan.margin);
      without.points.push_back(inserted_point(y, marks, rng, n + 1));
      const double before =
          score_rescaled(spec, without, rep.child({purpose::kScoring, 2 * k + 1})).back();
      PointConfiguration with = without;
      with.points.insert(with.points.end() - 1, origin);
      const double after =
          score_rescaled(spec, with, rep.child({purpose::kScoring, 2 * k + 2})).back();
      out.shell[k] = after - before;
    }
    return out;
  });
  RunningStats m;
  for (const auto& r : reps) m.add(r.xi0);
  Estimate e = fold_shells(reps, plan, opt.tau, 0.0, m.mean(),
                           [](const ShellRep& r, double pair, double) { return r.xi0 + pair; });
  e.metadata["mean"] = m.mean();
  return e;
}

// ---------------------------------------------------------------------------
// Tables

void TauTable::validate() const {
  require(tau.size() >= 2 && tau.size() == values.size(), ErrorCode::InvalidParameter,
          "table needs >= 2 nodes with one estimate each");
  for (std::size_t i = 0; i < tau.size(); ++i) {
    require(tau[i] > 0.0, ErrorCode::InvalidParameter, "tau grid must be positive");
    if (i) require(tau[i] > tau[i - 1], ErrorCode::InvalidParameter, "tau grid must increase");
    require(std::isfinite(values[i].value), ErrorCode::InvalidParameter, "table value not finite");
  }
}

double pchip(const std::vector<double>& x, const std::vector<double>& y, double at) {
  const std::size_t n = x.size();
  require(n >= 2 && y.size() == n, ErrorCode::InvalidParameter, "pchip needs >= 2 nodes");
  require(at >= x.front() && at <= x.back(), ErrorCode::Extrapolation,
          "evaluation point outside the tabulated range");
  std::size_t i = static_cast<std::size_t>(std::upper_bound(x.begin(), x.end(), at) - x.begin());
  i = std::clamp<std::size_t>(i, 1, n - 1) - 1;
  std::vector<double> h(n - 1), delta(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    h[k] = x[k + 1] - x[k];
    delta[k] = (y[k + 1] - y[k]) / h[k];
  }
  auto slope = [&](std::size_t k) {
    if (n == 2) return delta[0];
    if (k == 0 || k == n - 1) {
      // One-sided three-point estimate, limited to preserve shape.
      const std::size_t a = k == 0 ? 0 : n - 2;
      const std::size_t b = k == 0 ? 1 : n - 3;
      const double h0 = h[a], h1 = h[b];
      double m = ((2.0 * h0 + h1) * delta[a] - h0 * delta[b]) / (h0 + h1);
      if (m * delta[a] <= 0.0) m = 0.0;
      else if (delta[a] * delta[b] < 0.0 && std::abs(m) > 3.0 * std::abs(delta[a]))
        m = 3.0 * delta[a];
      return m;
    }
    if (delta[k - 1] * delta[k] <= 0.0) return 0.0;
    const double w1 = 2.0 * h[k] + h[k - 1];
    const double w2 = h[k] + 2.0 * h[k - 1];
    return (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
  };
  const double m0 = slope(i), m1 = slope(i + 1);
  const double t = (at - x[i]) / h[i];
  const double t2 = t * t, t3 = t2 * t;
  return (2 * t3 - 3 * t2 + 1) * y[i] + (t3 - 2 * t2 + t) * h[i] * m0 +
         (-2 * t3 + 3 * t2) * y[i + 1] + (t3 - t2) * h[i] * m1;
}

double TauTable::operator()(double t) const {
  std::vector<double> y(values.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = values[i].value;
  return pchip(tau, y, t);
}

TauTable TauTable::perturbed(std::size_t node, double delta) const {
  TauTable out = *this;
  out.values.at(node).value += delta;
  return out;
}

TauTable TauTable::constant(double value, std::vector<double> grid, std::string label) {
  TauTable t;
  t.tau = std::move(grid);
  t.values.assign(t.tau.size(), Estimate{value, 0.0, 1, {}, {}});
  t.label = std::move(label);
  return t;
}

void write_table_csv(std::ostream& out, const TauTable& table) {
  out << "tau,value,se,reps\n";
  for (std::size_t i = 0; i < table.tau.size(); ++i)
    out << format_double(table.tau[i]) << ',' << format_double(table.values[i].value) << ','
        << format_double(table.values[i].std_error) << ',' << table.values[i].replications << '\n';
}

// ---------------------------------------------------------------------------
// Quadrature

double midpoint_rule(const std::function<double(const Vec&)>& g, int dim, int n) {
  require(n >= 1 && dim >= 1 && dim <= 3, ErrorCode::InvalidParameter, "bad quadrature grid");
  const double h = 1.0 / n;
  const int ny = dim >= 2 ? n : 1;
  const int nz = dim >= 3 ? n : 1;
  double s = 0.0;
  Vec x = Vec::Zero();
  for (int k = 0; k < nz; ++k) {
    if (dim >= 3) x[2] = (k + 0.5) * h;
    for (int j = 0; j < ny; ++j) {
      if (dim >= 2) x[1] = (j + 0.5) * h;
      for (int i = 0; i < n; ++i) {
        x[0] = (i + 0.5) * h;
        s += g(x);
      }
    }
  }
  return s * std::pow(h, dim);
}

QuadratureResult refined_quadrature(const std::function<double(const Vec&)>& g, int dim,
                                    double tol, int n0) {
  const int cap = dim == 1 ? (1 << 16) : dim == 2 ? 1024 : 128;
  QuadratureResult r;
  r.nodes = n0;
  r.value = midpoint_rule(g, dim, n0);
  while (r.nodes * 2 <= cap) {
    const double next = midpoint_rule(g, dim, r.nodes * 2);
    const double change = std::abs(next - r.value);
    r.nodes *= 2;
    r.value = next;
    if (change <= tol * std::max(std::abs(next), 1e-300)) {
      r.converged = true;
      break;
    }
  }
  if (!r.converged && r.value == 0.0) r.converged = true;
  return r;
}

namespace {

void check_kappa_range(const DensitySpec& kappa, const TauTable& table) {
  table.validate();
  require(kappa.min_bound() >= table.tau.front() * (1.0 - 1e-12) &&
              kappa.max_bound() <= table.tau.back() * (1.0 + 1e-12),
          ErrorCode::Extrapolation, "density range exceeds the table's tau hull");
}

double kappa_clamped(const DensitySpec& kappa, const TauTable& table, const Vec& x) {
  return std::clamp(kappa(x), table.tau.front(), table.tau.back());
}

/// Integral of weight(x) * table(kappa(x)) * kappa(x), with se from
/// perturbing each node by its standard error.
Estimate table_integral(const std::function<double(const Vec&)>& weight, const DensitySpec& kappa,
                        const TauTable& table) {
  check_kappa_range(kappa, table);
  const int d = kappa.dim();
  auto integrand = [&](const TauTable& t) {
    return [&, tp = &t](const Vec& x) {
      const double k = kappa_clamped(kappa, *tp, x);
      return weight(x) * (*tp)(k) * k;
    };
  };
  const QuadratureResult q = refined_quadrature(integrand(table), d);
  double var = 0.0;
  for (std::size_t j = 0; j < table.tau.size(); ++j) {
    const double se = table.values[j].std_error;
    if (se == 0.0) continue;
    const TauTable p = table.perturbed(j, se);
    const double shifted = midpoint_rule(integrand(p), d, q.nodes);
    const double base = midpoint_rule(integrand(table), d, q.nodes);
    var += (shifted - base) * (shifted - base);
  }
  Estimate e;
  e.value = q.value;
  e.std_error = std::sqrt(var);
  e.metadata["quadrature_nodes"] = q.nodes;
  if (!q.converged) e.warnings.push_back("quadrature-not-converged");
  return e;
}

}  // namespace

Estimate estimate_sigma_limit(const TestFunction& f, const DensitySpec& kappa,
                              const VTable& vtable) {
  const int d = kappa.dim();
  return table_integral([&](const Vec& x) { const double v = f(x, d); return v * v; }, kappa,
                        vtable);
}

Estimate estimate_gamma(const TestFunction& f, const DensitySpec& kappa, const DeltaTable& dtable) {
  const int d = kappa.dim();
  return table_integral([&](const Vec& x) { return f(x, d); }, kappa, dtable);
}

Estimate estimate_sigma2_binomial(const TestFunction& f, const DensitySpec& kappa,
                                  const VTable& vtable, const DeltaTable& dtable) {
  const Estimate s = estimate_sigma_limit(f, kappa, vtable);
  const Estimate g = estimate_gamma(f, kappa, dtable);
  Estimate e;
  e.value = s.value - g.value * g.value;
  e.std_error = std::hypot(s.std_error, 2.0 * std::abs(g.value) * g.std_error);
  e.metadata["sigma"] = s.value;
  e.metadata["gamma"] = g.value;
  for (const auto& w : s.warnings) e.warnings.push_back(w);
  for (const auto& w : g.warnings) e.warnings.push_back(w);
  if (e.value < 0.0) {
    e.value = 0.0;
    e.warnings.push_back("negative-variance-clamped");
  }
  return e;
}

// ---------------------------------------------------------------------------
// Cumulants and log-Laplace

namespace {

struct PowerSums {
  double n = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0;
};

std::array<double, 4> k_statistics(const PowerSums& p) {
  const double n = p.n, s1 = p.s1, s2 = p.s2, s3 = p.s3, s4 = p.s4;
  std::array<double, 4> k{};
  k[0] = s1 / n;
  k[1] = (n * s2 - s1 * s1) / (n * (n - 1.0));
  k[2] = (2.0 * s1 * s1 * s1 - 3.0 * n * s1 * s2 + n * n * s3) / (n * (n - 1.0) * (n - 2.0));
  k[3] = (-6.0 * std::pow(s1, 4) + 12.0 * n * s1 * s1 * s2 - 3.0 * n * (n - 1.0) * s2 * s2 -
          4.0 * n * (n + 1.0) * s1 * s3 + n * n * (n + 1.0) * s4) /
         (n * (n - 1.0) * (n - 2.0) * (n - 3.0));
  return k;
}

}  // namespace

CumulantSet empirical_cumulants(const std::vector<double>& samples) {
  require(samples.size() >= 8, ErrorCode::InsufficientData, "need at least 8 samples");
  const double n = static_cast<double>(samples.size());
  double shift = 0.0;
  for (double x : samples) shift += x;
  shift /= n;
  PowerSums p;
  p.n = n;
  for (double x : samples) {
    const double c = x - shift;
    const double c2 = c * c;
    p.s1 += c;
    p.s2 += c2;
    p.s3 += c2 * c;
    p.s4 += c2 * c2;
  }
  const auto full = k_statistics(p);
  std::array<RunningStats, 4> jack;
  for (double x : samples) {
    const double c = x - shift;
    const double c2 = c * c;
    PowerSums q{n - 1.0, p.s1 - c, p.s2 - c2, p.s3 - c2 * c, p.s4 - c2 * c2};
    const auto k = k_statistics(q);
    for (int j = 0; j < 4; ++j) jack[static_cast<std::size_t>(j)].add(k[static_cast<std::size_t>(j)]);
  }
  CumulantSet out;
  out.n = static_cast<long>(samples.size());
  for (std::size_t j = 0; j < 4; ++j) {
    // Jackknife variance: (n-1)/n sum (theta_i - mean)^2 = (n-1)^2/n * sample var.
    const double var = jack[j].variance() * (n - 1.0) * (n - 1.0) / n;
    out.k[j].value = j == 0 ? full[0] + shift : full[j];
    out.k[j].std_error = std::sqrt(std::max(0.0, var));
    out.k[j].replications = out.n;
  }
  if (out.k[1].value < 0.0) out.k[1].value = 0.0;
  return out;
}

Estimate empirical_log_laplace(const std::vector<double>& centered, double lambda, double alpha,
                               double calibration_se) {
  require(!centered.empty(), ErrorCode::InsufficientData, "no samples");
  require(lambda > 0.0 && alpha > 0.0, ErrorCode::InvalidParameter, "lambda, alpha must be > 0");
  const double h = alpha / std::sqrt(lambda);
  double top = -std::numeric_limits<double>::infinity();
  for (double x : centered) top = std::max(top, h * x);
  double sw = 0.0, sw2 = 0.0;
  for (double x : centered) {
    const double w = std::exp(h * x - top);
    sw += w;
    sw2 += w * w;
  }
  const double n = static_cast<double>(centered.size());
  const double mean_w = sw / n;
  const double var_w = std::max(0.0, (sw2 / n - mean_w * mean_w) * n / std::max(1.0, n - 1.0));
  const double a2 = alpha * alpha;
  Estimate e;
  e.value = (top + std::log(mean_w)) / a2;
  const double se_mc = std::sqrt(var_w / n) / mean_w / a2;
  const double se_cal = calibration_se / (alpha * std::sqrt(lambda));
  e.std_error = std::hypot(se_mc, se_cal);
  e.replications = static_cast<long>(centered.size());
  const double ess = sw * sw / sw2;
  e.metadata["ess"] = ess;
  e.metadata["h"] = h;
  if (ess < 30.0) e.warnings.push_back("unreliable-estimate");
  return e;
}

// ---------------------------------------------------------------------------
// Rate functions

double rate_scalar(double t, double sigma) {
  require(sigma > 0.0, ErrorCode::InvalidParameter, "Sigma must be > 0");
  return t * t / (2.0 * sigma);
}

double rate_measure(const RateInput& nu, const VTable& vtable, const DensitySpec& kappa) {
  if (std::holds_alternative<EmpiricalMeasure>(nu)) return std::numeric_limits<double>::infinity();
  const auto& grid = std::get<DensityGrid>(nu);
  const int d = kappa.dim();
  require(grid.n >= 16, ErrorCode::InvalidParameter, "density grid needs >= 16 nodes per axis");
  require(grid.values.size() == static_cast<std::size_t>(std::pow(grid.n, d)),
          ErrorCode::InconsistentInput, "density grid size does not match n^d");
  check_kappa_range(kappa, vtable);
  const double h = 1.0 / grid.n;
  const int ny = d >= 2 ? grid.n : 1, nz = d >= 3 ? grid.n : 1;
  double s = 0.0;
  std::size_t idx = 0;
  Vec x = Vec::Zero();
  for (int k = 0; k < nz; ++k) {
    if (d >= 3) x[2] = (k + 0.5) * h;
    for (int j = 0; j < ny; ++j) {
      if (d >= 2) x[1] = (j + 0.5) * h;
      for (int i = 0; i < grid.n; ++i, ++idx) {
        x[0] = (i + 0.5) * h;
        const double kx = kappa_clamped(kappa, vtable, x);
        const double rho = grid.values[idx];
        s += rho * rho * vtable(kx) * kx;
      }
    }
  }
  return 0.5 * s * std::pow(h, d);
}

Eigen::MatrixXd covariance_matrix(const std::vector<TestFunction>& fs, const DensitySpec& kappa,
                                  const VTable& vtable, int nodes) {
  require(!fs.empty(), ErrorCode::InvalidParameter, "empty test-function list");
  check_kappa_range(kappa, vtable);
  const int d = kappa.dim();
  const auto l = static_cast<Eigen::Index>(fs.size());
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(l, l);
  Eigen::VectorXd fx(l);
  const double h = 1.0 / nodes;
  const int ny = d >= 2 ? nodes : 1, nz = d >= 3 ? nodes : 1;
  Vec x = Vec::Zero();
  for (int k = 0; k < nz; ++k) {
    if (d >= 3) x[2] = (k + 0.5) * h;
    for (int j = 0; j < ny; ++j) {
      if (d >= 2) x[1] = (j + 0.5) * h;
      for (int i = 0; i < nodes; ++i) {
        x[0] = (i + 0.5) * h;
        const double kx = kappa_clamped(kappa, vtable, x);
        const double w = vtable(kx) * kx;
        for (Eigen::Index a = 0; a < l; ++a) fx[a] = fs[static_cast<std::size_t>(a)](x, d);
        c.noalias() += w * fx * fx.transpose();
      }
    }
  }
  return c * std::pow(h, d);
}

double rate_from_covariance(const Eigen::VectorXd& t, const Eigen::MatrixXd& c) {
  require(c.rows() == c.cols() && c.rows() == t.size(), ErrorCode::InconsistentInput,
          "covariance and t differ in size");
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c);
  const double trace = c.trace();
  require(trace > 0.0 && eig.eigenvalues().minCoeff() > 1e-9 * trace, ErrorCode::LinearDependence,
          "test functions are (nearly) linearly dependent");
  const Eigen::VectorXd s = c.ldlt().solve(t);
  return 0.5 * t.dot(s);
}

double rate_multivariate(const Eigen::VectorXd& t, const std::vector<TestFunction>& fs,
                         const DensitySpec& kappa, const VTable& vtable) {
  return rate_from_covariance(t, covariance_matrix(fs, kappa, vtable));
}

}  // namespace geoprob

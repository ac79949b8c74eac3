// Acceptance run: one PASS/FAIL line per criterion. Tolerances, replicate
// counts and runtime budgets are pinned here.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "geoprob/config.hpp"
#include "geoprob/estimators.hpp"
#include "geoprob/experiments.hpp"
#include "geoprob/gibbs.hpp"

using namespace geoprob;

namespace {

// Independent quadrature and closed-form values from tests/oracles/compute_oracles.py.
constexpr double kRsaCoverage1d = 0.47142463390858739;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

ModelSetup setup(FunctionalSpec spec, TestFunction f, int dim, long reps, std::uint64_t seed,
                 std::map<std::string, double> tol = {}) {
  ModelSetup m;
  m.spec = std::move(spec);
  m.f = std::move(f);
  m.kappa = DensitySpec::constant(1.0, dim);
  m.reps = reps;
  m.seed = SeedSpec{seed, {}};
  m.tol = Tolerances(std::move(tol));
  m.jobs = 1;
  return m;
}

// Standard error of the sample variance from the fourth central moment.
double variance_se(const std::vector<double>& xs, double& var) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x / n;
  double m2 = 0.0, m4 = 0.0;
  for (double x : xs) {
    const double d = (x - mean) * (x - mean);
    m2 += d;
    m4 += d * d;
  }
  var = m2 / (n - 1.0);
  return std::sqrt(std::max(0.0, (m4 / n - var * var * (n - 3.0) / (n - 1.0)) / n));
}

std::string failing(const ExperimentReport& r) {
  std::string s;
  for (const auto& v : r.verdicts)
    if (!v.pass) s += (s.empty() ? "" : ", ") + v.name + "=" + num(v.statistic);
  return s.empty() ? "none" : s;
}

// 1. Campbell variance of the trivial functional.
Outcome poisson_exactness() {
  const double lambda = 1024.0;
  const long reps = 10000;
  const double k = 4.0;
  Outcome o{true, ""};
  const std::vector<std::pair<TestFunction, double>> cases = {
      {TestFunction::constant(1.0), 1.0}, {TestFunction::coordinate(0), 1.0 / 3.0}};
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto m = setup(FunctionalSpec{TrivialOne{}, {}}, cases[i].first, 1, reps, 100 + i);
    const auto xs = sample_pairings(m, lambda, reps, m.seed);
    double var = 0.0;
    const double se = variance_se(xs, var);
    const double want = lambda * cases[i].second;
    const double z = std::abs(var - want) / se;
    o.pass = o.pass && z <= k;
    o.detail += cases[i].first.describe() + ": var=" + num(var) + " exact=" + num(want) +
                " z=" + num(z) + "; ";
  }
  return o;
}

// 2. Cell-list packing against the quadratic reference.
Outcome rsa_oracle() {
  Rng rng(SeedSpec{200, {}});
  long mismatches = 0, configs = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 1 + trial % 3;
    const auto n = 1 + static_cast<std::size_t>(rng.uniform(0.0, 500.0));
    const Window w = Window::cube(d, 0.0, std::pow(static_cast<double>(n), 1.0 / d));
    PointConfiguration c;
    c.window = w;
    for (std::size_t i = 0; i < n; ++i)
      c.points.push_back({w.sample(rng), rng.uniform(), {}, {}, static_cast<std::int64_t>(i)});
    const double r = ball_radius_from_volume(1.0, d);
    mismatches += rsa_pack(c, r) == rsa_pack_naive(c, r) ? 0 : 1;
    ++configs;
  }
  // Three unit cars 0.8 apart: the middle one blocks both neighbours.
  int fixture_ok = 0;
  std::array<int, 3> order{0, 1, 2};
  do {
    PointConfiguration c;
    c.window = Window::cube(1, 0.0, 4.0);
    for (int i = 0; i < 3; ++i)
      c.points.push_back({Vec(1.0 + 0.8 * i, 0, 0), 0.1 * (1 + order[i]), {}, {}, i});
    const auto a = rsa_pack(c, 0.5);
    const int first = static_cast<int>(std::find(order.begin(), order.end(), 0) - order.begin());
    std::vector<std::uint8_t> want = first == 1 ? std::vector<std::uint8_t>{0, 1, 0}
                                                : std::vector<std::uint8_t>{1, 0, 1};
    fixture_ok += (a == rsa_pack_naive(c, 0.5) && a == want) ? 1 : 0;
  } while (std::next_permutation(order.begin(), order.end()));
  return {mismatches == 0 && fixture_ok == 6,
          std::to_string(configs) + " random configs, " + std::to_string(mismatches) +
              " mismatches; fixture orderings correct " + std::to_string(fixture_ok) + "/6"};
}

// 3. Jamming coverage of unit cars at time 1.
Outcome rsa_kinetics() {
  ShellOptions o;
  o.dim = 1;
  o.tau = 1.0;
  o.reps = 100000;
  o.seed = SeedSpec{300, {}};
  const auto e = estimate_mean_score(FunctionalSpec{RsaPacking{}, {}}, o);
  const double z = std::abs(e.value - kRsaCoverage1d) / e.std_error;
  return {z <= 3.0, "estimate=" + num(e.value) + " se=" + num(e.std_error) +
                        " oracle=" + num(kRsaCoverage1d) + " z=" + num(z)};
}

// 4. Add-one cost of the nearest-neighbour indicator.
Outcome delta_closed_form() {
  struct Case {
    double tau, t;
    int d;
  };
  Outcome out{true, ""};
  std::uint64_t seed = 400;
  for (const Case c : {Case{1.0, 0.5, 1}, Case{1.0, 0.5, 2}, Case{2.0, 0.3, 2}}) {
    const double a = c.tau * unit_ball_volume(c.d) * std::pow(c.t, c.d);
    const double want = (1.0 - std::exp(-a)) + a * std::exp(-a);
    ShellOptions o;
    o.dim = c.d;
    o.tau = c.tau;
    o.reps = 20000;
    o.seed = SeedSpec{seed++, {}};
    const auto e = estimate_delta(FunctionalSpec{NnThreshold{c.t}, {}}, DeltaRoute::Insertion, o);
    const double z = std::abs(e.value - want) / e.std_error;
    out.pass = out.pass && z <= 3.0;
    out.detail += "(" + num(c.tau) + "," + num(c.t) + "," + std::to_string(c.d) + "): " +
                  num(e.value) + " vs " + num(want) + " z=" + num(z) + "; ";
  }
  return out;
}

// 5. Voronoi-cell grain volumes add up to the union volume.
Outcome germ_grain_conservation() {
  Rng rng(SeedSpec{500, {}});
  const double side = 5.0;
  const Window w = Window::cube(2, 0.0, side);
  int ok = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    PointConfiguration c;
    c.window = w;
    for (int i = 0; i < 50; ++i)
      c.points.push_back({w.sample(rng), {}, rng.uniform(0.2, 0.6), {}, i});
    double total = 0.0, var = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      const auto e = germ_grain_volume(c, i, 1.0, 20000, SeedSpec{501, {static_cast<std::uint64_t>(trial), i}});
      total += e.value;
      var += e.std_error * e.std_error;
    }
    long hits = 0;
    const long n = 400000;
    for (long s = 0; s < n; ++s) {
      const Vec y = w.sample(rng);
      for (const auto& p : c.points)
        if (w.distance_squared(y, p.position) < *p.grain_radius * *p.grain_radius) {
          ++hits;
          break;
        }
    }
    const double p = static_cast<double>(hits) / n;
    const double area = w.volume() * p;
    const double se = std::hypot(w.volume() * std::sqrt(p * (1 - p) / n), std::sqrt(var));
    const double z = std::abs(total - area) / se;
    worst = std::max(worst, z);
    ok += z <= 3.0 ? 1 : 0;
  }
  PointConfiguration single;
  single.window = Window::cube(2, 0.0, 4.0);
  const double radius = 0.75;
  single.points.push_back({Vec(2.0, 2.0, 0), {}, radius, {}, 0});
  const auto e = germ_grain_volume(single, 0, 1.0, 400000, SeedSpec{502, {}});
  const double want = ball_volume(radius, 2);
  const double z1 = std::abs(e.value - want) / e.std_error;
  return {ok == 20 && z1 <= 3.0, std::to_string(ok) + "/20 configs within 3 se (worst z=" +
                                     num(worst) + "); single grain " + num(e.value) + " vs " +
                                     num(want) + " z=" + num(z1)};
}

// 6. Log-Laplace transforms approach half the limiting variance.
Outcome log_laplace_trend() {
  const double beta = 0.05;
  auto trivial = setup(FunctionalSpec{TrivialOne{}, {}}, TestFunction::constant(1.0), 1, 10000, 600,
                       {{"within_se", 4.0}, {"trend_se", 2.0}});
  const auto rt = log_laplace_convergence(trivial, {256, 512, 1024, 2048, 4096}, beta, TableSource{}, false);
  const auto* vt = rt.verdict("final_within_se");
  auto rsa = setup(FunctionalSpec{RsaPacking{}, {}}, TestFunction::constant(1.0), 1, 10000, 601,
                   {{"relative", 0.25}, {"trend_se", 2.0}});
  const auto rr = log_laplace_convergence(rsa, {256, 1024, 4096}, beta, TableSource{{}, 16000, 48}, false);
  const auto* vr = rr.verdict("final_relative");
  const double target = rr.cell("target")->estimate.value;
  const double final_a = rr.cell("A_lambda=4096")->estimate.value;
  return {vt->pass && vr->pass,
          "trivial z=" + num(vt->statistic) + " (tol 4); rsa A=" + num(final_a) +
              " target=" + num(target) + " rel=" + num(vr->statistic) + " (tol 0.25); beta=" +
              num(beta)};
}

// 7. Third-order cumulant proxy shrinks and the variance grows linearly.
Outcome third_order_decay() {
  auto m = setup(FunctionalSpec{RsaPacking{}, {}}, TestFunction::constant(1.0), 1, 10000, 700,
                 {{"k2_slope_min", 0.9}, {"k2_slope_max", 1.1}, {"decay_se", 2.0}});
  std::vector<double> grid;
  for (int e = 8; e <= 14; ++e) grid.push_back(std::ldexp(1.0, e));
  const auto r = cumulant_scaling(m, grid, std::nullopt);
  const auto* slope = r.verdict("k2_slope_range");
  const auto* decay = r.verdict("third_order_decay");
  const auto& p0 = r.cell("third_order_proxy_lambda=256")->estimate;
  const auto& p1 = r.cell("third_order_proxy_lambda=16384")->estimate;
  const bool unresolved = std::abs(p0.value) < 2 * p0.std_error && std::abs(p1.value) < 2 * p1.std_error;
  return {slope->pass && decay->pass,
          std::string(unresolved ? "proxy within 2 se of 0 at both ends; " : "") + "k2 slope=" + num(slope->statistic) + " in [0.9,1.1]; proxy " + num(p0.value) + "+-" +
              num(p0.std_error) + " -> " + num(p1.value) + "+-" + num(p1.std_error) +
              " gap/se=" + num(decay->statistic) + " (tol < 2)"};
}

// 8. Shell-integral V against the torus window variance.
Outcome v_cross_route() {
  int ok = 0, total = 0;
  double worst = 0.0;
  std::string detail;
  std::uint64_t seed = 800;
  for (int d : {1, 2}) {
    for (const auto& spec : {FunctionalSpec{RsaPacking{}, {}}, FunctionalSpec{NnThreshold{0.5}, {}}}) {
      for (double tau : {0.5, 1.0, 2.0}) {
        ShellOptions o;
        o.dim = d;
        o.tau = tau;
        o.reps = 16000;
        o.seed = SeedSpec{seed++, {}};
        const auto v = estimate_v(spec, o);
        const double side = d == 1 ? 60.0 : 16.0;
        const auto dv = estimate_v_direct(spec, d, tau, side, 16000, SeedSpec{seed++, {}});
        const double z = std::abs(v.value - dv.value) / std::hypot(v.std_error, dv.std_error);
        worst = std::max(worst, z);
        ok += z <= 3.0 ? 1 : 0;
        ++total;
        detail += spec.name() + " d=" + std::to_string(d) + " tau=" + num(tau) + ": " +
                  num(v.value) + "/" + num(dv.value) + " z=" + num(z) + "; ";
      }
    }
  }
  return {ok == total, std::to_string(ok) + "/" + std::to_string(total) + " within 3 se, worst z=" +
                           num(worst) + "; " + detail};
}

// 9. Moderate-deviation tails.
Outcome mdp_tails() {
  const double lambda = 4096.0, beta = 0.25;
  const std::vector<double> ts{0.5, 1.0};
  auto m = setup(FunctionalSpec{RsaPacking{}, {}}, TestFunction::constant(1.0), 1, 100000, 900,
                 {{"wilson_z", 3.0}, {"relative", 0.25}});
  m.calibration_reps = 10000;
  const auto r = mdp_tail(m, lambda, beta, ts, TableSource{{}, 16000, 48});
  const double sigma = r.cell("sigma")->estimate.value;
  const double alpha = std::pow(lambda, beta);
  std::string detail = "Sigma=" + num(sigma) + " alpha=" + num(alpha) + "; ";
  for (double t : ts) {
    const auto* c = r.cell("control_t=" + format_double(t));
    detail += "control t=" + num(t) + " " + c->status + " (P=" +
              num(normal_upper_tail(alpha * t / std::sqrt(sigma))) + "); ";
  }
  const bool gate = r.verdict("control_gate")->pass;
  bool model_ok = gate;
  if (gate) {
    for (double t : ts) {
      const auto* v = r.verdict("model_t=" + format_double(t));
      model_ok = model_ok && v && v->pass;
    }
  } else {
    // Count model tail hits directly to show the cells are unreachable, not just gated.
    const auto raw = sample_pairings(m, lambda, m.reps, m.seed.child({0, 0}));
    const double centre = calibration_mean(m, lambda).value;
    const auto zeta = center_and_scale(raw, centre, lambda, alpha);
    for (double t : ts) {
      const long hits = std::count_if(zeta.begin(), zeta.end(), [&](double z) { return z >= t; });
      detail += "model hits t=" + num(t) + ": " + std::to_string(hits) + "/" + std::to_string(m.reps) + "; ";
    }
    detail += "gate failed: tails unreachable at this scale";
  }
  return {gate && model_ok, detail};
}

// 10. Exactness of the dominated coupling sampler.
Outcome gibbs_exactness() {
  auto m = setup(FunctionalSpec{NnThreshold{0.6}, {}}, TestFunction::constant(1.0), 1, 20000, 1000,
                 {{"chi2_alpha", 0.01}, {"identity_se", 4.0}});
  const auto r = gibbs_check(m, 30.0, {0.1, 0.2}, 1000);
  const auto* chi = r.verdict("untilted_count_law");
  const auto* inc = r.verdict("sandwich_inclusions");
  const auto* d1 = r.verdict("first_derivative_u=0.1");
  const auto* d2 = r.verdict("first_derivative_u=0.2");
  return {chi->pass && inc->pass && d1->pass && d2->pass,
          "count-law p=" + num(chi->statistic) + "; inclusions on 1000 samples; first-derivative z=" +
              num(d1->statistic) + " (u=0.1), " + num(d2->statistic) + " (u=0.2); other checks failing: " +
              failing(r)};
}

// 11. Iterated-logarithm structure.
Outcome lil_structure() {
  auto m = setup(FunctionalSpec{RsaPacking{}, {}}, TestFunction::bump(1.0 / 3.0), 1, 10, 1100,
                 {{"bound_factor", 2.0}, {"coverage", 0.95}});
  m.calibration_reps = 2000;
  const auto lil = lil_trajectory(m, 2.0, 15, 100);
  auto t = setup(FunctionalSpec{TrivialOne{}, {}}, TestFunction::constant(1.0), 1, 1000, 1101,
                 {{"zero_abs", 1e-12}, {"lil_bound", 2.0}, {"coverage", 0.95}});
  const auto dep = depoissonization(t, {256, 1024, 4096}, TableSource{}, 100, 65536);
  const bool ok = lil.verdict("nested_subsets")->pass && lil.verdict("running_max_monotone")->pass &&
                  lil.verdict("bounded_fraction")->pass && dep.verdict("identically_zero")->pass &&
                  dep.verdict("classical_lil")->pass;
  return {ok, "nested=" + std::string(lil.verdict("nested_subsets")->pass ? "exact" : "broken") +
                  "; bounded fraction=" + num(lil.verdict("bounded_fraction")->statistic) +
                  " (bound " + num(lil.cell("bounded_fraction")->params.at("bound")) +
                  "); depoissonized max |D|=" + num(dep.verdict("identically_zero")->statistic) +
                  "; classical LIL fraction=" + num(dep.verdict("classical_lil")->statistic)};
}

// 12. Covariance decay between separated boxes.
Outcome mixing() {
  const std::vector<double> seps{0.0, 0.5, 1.0, 1.5, 2.0, 3.0};
  auto t = setup(FunctionalSpec{TrivialOne{}, {}}, TestFunction::constant(1.0), 1, 20000, 1200,
                 {{"zero_se", 3.0}, {"p_value", 0.01}});
  const auto rt = mixing_decay(t, 1024.0, 4.0, seps);
  auto r = setup(FunctionalSpec{RsaPacking{}, {}}, TestFunction::constant(1.0), 1, 20000, 1201,
                 {{"zero_se", 3.0}, {"p_value", 0.01}});
  const auto rr = mixing_decay(r, 1024.0, 4.0, seps);
  const auto* zero = rt.verdict("zero_covariance");
  const auto* slope = rr.verdict("decay_slope");
  const auto& fit = rr.cell("log_cov_slope")->estimate;
  return {zero->pass && slope->pass,
          "trivial max |cov|/se=" + num(zero->statistic) + " (tol 3); rsa slope=" + num(fit.value) +
              "+-" + num(fit.std_error) + " p=" + num(slope->statistic) + " (tol 0.01)"};
}

// 13. Manifest replay is byte-identical across worker counts.
std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

bool same_tree(const std::filesystem::path& a, const std::filesystem::path& b) {
  std::set<std::string> fa, fb;
  for (const auto& e : std::filesystem::recursive_directory_iterator(a))
    if (e.is_regular_file()) fa.insert(std::filesystem::relative(e.path(), a).string());
  for (const auto& e : std::filesystem::recursive_directory_iterator(b))
    if (e.is_regular_file()) fb.insert(std::filesystem::relative(e.path(), b).string());
  if (fa != fb || fa.empty()) return false;
  for (const auto& f : fa)
    if (slurp(a / f) != slurp(b / f)) return false;
  return true;
}

Outcome determinism() {
  const std::vector<std::string> docs = {
      R"({"experiment":"log_laplace","model":{"type":"rsa"},"lambda":[64,128],"beta":0.05,"table_reps":200})",
      R"({"experiment":"cumulants","model":{"type":"rsa"},"lambda":[64,128,256]})",
      R"({"experiment":"mdp","model":{"type":"trivial"},"lambda":[16],"t":[0,0.5]})",
      R"({"experiment":"lil","model":{"type":"rsa"},"test_function":{"type":"bump","delta":0.3333333333333333},"k_max":8,"seeds":6,"table_reps":200})",
      R"({"experiment":"mixing","model":{"type":"rsa"},"lambda":[256],"separation":[0,2,4],"box_width":4})",
      R"({"experiment":"depoissonize","model":{"type":"nn_threshold","t":0.5},"n":[32,64],"table_reps":200,"lil_seeds":5,"lil_n_max":1024})",
      R"({"experiment":"estimate_v","model":{"type":"rsa"},"tau":[1],"direct_side":20})",
      R"({"experiment":"estimate_delta","model":{"type":"nn_threshold","t":0.5},"tau":[1],"dimension":2})",
      R"({"experiment":"gibbs_check","model":{"type":"nn_threshold","t":0.6},"lambda":[10],"u":[0,0.1],"sandwich_reps":50})",
  };
  const auto root = std::filesystem::temp_directory_path() / "geoprob_acceptance";
  std::filesystem::remove_all(root);
  int ok = 0;
  std::string bad;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    auto doc = nlohmann::json::parse(docs[i]);
    doc["schema"] = 1;
    doc["reps"] = 200;
    doc["master_seed"] = 1300 + i;
    const auto cfg = validate_config(doc);
    const auto a = root / (std::to_string(i) + "_a"), b = root / (std::to_string(i) + "_b");
    write_report_files(cfg, run_report(cfg, 1), a);
    const auto replay = validate_config(load_config_document(a / "manifest.json"));
    write_report_files(replay, run_report(replay, 4), b);
    if (same_tree(a, b))
      ++ok;
    else
      bad += cfg.experiment + " ";
  }
  std::filesystem::remove_all(root);
  return {ok == static_cast<int>(docs.size()),
          std::to_string(ok) + "/" + std::to_string(docs.size()) +
              " experiments replay byte-identically (jobs 1 vs 4)" + (bad.empty() ? "" : "; differing: " + bad)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const std::vector<Criterion> criteria = {
      {1, "poisson exactness", 60, poisson_exactness},
      {2, "rsa oracle equivalence", 60, rsa_oracle},
      {3, "1-d rsa kinetics", 300, rsa_kinetics},
      {4, "nn threshold add-one cost closed form", 300, delta_closed_form},
      {5, "germ-grain conservation", 120, germ_grain_conservation},
      {6, "log-laplace trend", 900, log_laplace_trend},
      {7, "third-order decay", 1200, third_order_decay},
      {8, "V cross-route", 1200, v_cross_route},
      {9, "mdp tail", 1800, mdp_tails},
      {10, "gibbs sampler exactness", 900, gibbs_exactness},
      {11, "lil structure", 1200, lil_structure},
      {12, "mixing", 600, mixing},
      {13, "determinism", 300, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_budget = secs <= c.budget_seconds;
    const bool pass = o.pass && in_budget;
    failed += pass ? 0 : 1;
    while (!o.detail.empty() && (o.detail.back() == ' ' || o.detail.back() == ';')) o.detail.pop_back();
    std::printf("%s criterion %d (%s): %s [%.1fs of %.0fs budget%s]\n", pass ? "PASS" : "FAIL", c.id,
                c.name.c_str(), o.detail.c_str(), secs, c.budget_seconds,
                in_budget ? "" : ", over budget");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}

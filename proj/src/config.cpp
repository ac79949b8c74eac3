#include "geoprob/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace geoprob {

using nlohmann::json;

namespace {

std::string join_issues(const std::vector<std::string>& issues) {
  std::string s = "invalid config";
  for (const auto& i : issues) s += "\n  " + i;
  return s;
}

const std::map<std::string, std::map<std::string, double>>& default_tolerances() {
  static const std::map<std::string, std::map<std::string, double>> t = {
      {"log_laplace", {{"within_se", 4.0}, {"trend_se", 2.0}, {"scaling_se", 4.0}}},
      {"cumulants",
       {{"slope_se", 2.0}, {"k2_slope_min", 0.9}, {"k2_slope_max", 1.1}, {"decay_se", 2.0}}},
      {"mdp", {{"wilson_z", 3.0}, {"relative", 0.25}}},
      {"lil", {{"bound_factor", 2.0}, {"coverage", 0.95}, {"point_budget", 1e7}}},
      {"mixing", {{"zero_se", 3.0}, {"p_value", 0.01}}},
      {"depoissonize",
       {{"zero_abs", 1e-12}, {"trend_se", 2.0}, {"lil_bound", 2.0}, {"coverage", 0.95}}},
      {"estimate_v", {{"cross_se", 3.0}}},
      {"estimate_delta", {{"cross_se", 3.0}}},
      {"gibbs_check", {{"chi2_alpha", 0.01}, {"identity_se", 4.0}}},
  };
  return t;
}

// Keys that may be declared but have no default.
const std::map<std::string, std::set<std::string>>& optional_tolerances() {
  static const std::map<std::string, std::set<std::string>> t = {{"log_laplace", {"relative"}}};
  return t;
}

class Reader {
 public:
  Reader(const json& doc, std::vector<std::string>& issues) : doc_(doc), issues_(issues) {}

  void fail(const std::string& path, const std::string& msg) { issues_.push_back(path + ": " + msg); }

  const json* find(const json& obj, const std::string& key) {
    if (!obj.is_object()) return nullptr;
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
  }

  template <class T>
  std::optional<T> number(const json& obj, const std::string& key, const std::string& path) {
    const json* v = find(obj, key);
    if (!v) return std::nullopt;
    if (!v->is_number()) {
      fail(path, "must be a number");
      return std::nullopt;
    }
    if constexpr (std::is_integral_v<T>) {
      if (!v->is_number_integer()) {
        fail(path, "must be an integer");
        return std::nullopt;
      }
      if constexpr (std::is_unsigned_v<T>) {
        if (v->is_number_unsigned()) return v->get<T>();
        if (v->get<long long>() < 0) {
          fail(path, "must be non-negative");
          return std::nullopt;
        }
      }
    }
    return v->get<T>();
  }

  std::optional<bool> boolean(const json& obj, const std::string& key, const std::string& path) {
    const json* v = find(obj, key);
    if (!v) return std::nullopt;
    if (!v->is_boolean()) {
      fail(path, "must be a boolean");
      return std::nullopt;
    }
    return v->get<bool>();
  }

  std::optional<std::string> string(const json& obj, const std::string& key,
                                    const std::string& path) {
    const json* v = find(obj, key);
    if (!v) return std::nullopt;
    if (!v->is_string()) {
      fail(path, "must be a string");
      return std::nullopt;
    }
    return v->get<std::string>();
  }

  std::vector<double> grid(const json& obj, const std::string& key, const std::string& path) {
    std::vector<double> out;
    const json* v = find(obj, key);
    if (!v) return out;
    if (!v->is_array()) {
      fail(path, "must be an array of numbers");
      return out;
    }
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!(*v)[i].is_number()) {
        fail(path + "[" + std::to_string(i) + "]", "must be a number");
        continue;
      }
      out.push_back((*v)[i].get<double>());
    }
    return out;
  }

  const json& doc() const { return doc_; }

 private:
  const json& doc_;
  std::vector<std::string>& issues_;
};

MarkDistribution parse_dist(Reader& r, const json& j, const std::string& path) {
  if (j.is_number()) return MarkDistribution::fixed(j.get<double>());
  if (!j.is_object()) {
    r.fail(path, "must be a number or a distribution object");
    return MarkDistribution::fixed(1.0);
  }
  const auto kind = r.string(j, "kind", path + ".kind").value_or("fixed");
  if (kind == "fixed") {
    const double v = r.number<double>(j, "value", path + ".value").value_or(1.0);
    if (!(v > 0.0)) r.fail(path + ".value", "must be > 0");
    return MarkDistribution::fixed(v);
  }
  if (kind == "uniform") {
    const double lo = r.number<double>(j, "lo", path + ".lo").value_or(0.0);
    const double hi = r.number<double>(j, "hi", path + ".hi").value_or(0.0);
    if (!(lo > 0.0 && hi >= lo)) r.fail(path, "uniform requires 0 < lo <= hi");
    return MarkDistribution::uniform(lo, hi);
  }
  if (kind == "exponential") {
    const double rate = r.number<double>(j, "rate", path + ".rate").value_or(1.0);
    if (!(rate > 0.0)) r.fail(path + ".rate", "must be > 0");
    return MarkDistribution::exponential(rate);
  }
  r.fail(path + ".kind", "unknown distribution '" + kind + "'");
  return MarkDistribution::fixed(1.0);
}

FunctionalSpec parse_model(Reader& r, const json& j) {
  FunctionalSpec spec;
  if (!j.is_object()) {
    r.fail("model", "must be an object");
    return spec;
  }
  const auto type = r.string(j, "type", "model.type");
  if (!type) {
    r.fail("model.type", "is required");
    return spec;
  }
  if (*type == "trivial") {
    spec.model = TrivialOne{};
  } else if (*type == "rsa") {
    spec.model = RsaPacking{};
  } else if (*type == "birth_growth") {
    BirthGrowth m;
    if (const json* v = r.find(j, "radius")) m.radius = parse_dist(r, *v, "model.radius");
    if (const json* v = r.find(j, "speed")) m.speed = parse_dist(r, *v, "model.speed");
    m.radius_cap = r.number<double>(j, "radius_cap", "model.radius_cap").value_or(m.radius_cap);
    spec.model = m;
  } else if (*type == "germ_grain") {
    GermGrainVolume m;
    if (const json* v = r.find(j, "grain")) m.grain = parse_dist(r, *v, "model.grain");
    m.volume_mc_samples =
        r.number<long>(j, "volume_mc_samples", "model.volume_mc_samples").value_or(m.volume_mc_samples);
    spec.model = m;
  } else if (*type == "nn_threshold") {
    NnThreshold m;
    const auto t = r.number<double>(j, "t", "model.t");
    if (!t) r.fail("model.t", "is required");
    m.t = t.value_or(1.0);
    spec.model = m;
  } else if (*type == "nn_degree") {
    NnDegree m;
    m.k = r.number<int>(j, "k", "model.k").value_or(m.k);
    m.m = r.number<int>(j, "m", "model.m").value_or(m.m);
    m.directed = r.boolean(j, "directed", "model.directed").value_or(false);
    spec.model = m;
  } else {
    r.fail("model.type", "unknown model '" + *type + "'");
    return spec;
  }
  spec.increment_bound = r.number<double>(j, "increment_bound", "model.increment_bound");
  try {
    spec.validate();
  } catch (const Error& e) {
    r.fail("model", e.what());
  }
  return spec;
}

DensitySpec parse_density(Reader& r, const json* j, int dim) {
  if (!j) return DensitySpec::constant(1.0, dim);
  if (!j->is_object()) {
    r.fail("density", "must be an object");
    return DensitySpec::constant(1.0, dim);
  }
  const auto type = r.string(*j, "type", "density.type").value_or("constant");
  try {
    if (type == "constant")
      return DensitySpec::constant(r.number<double>(*j, "c", "density.c").value_or(1.0), dim);
    if (type == "polynomial") {
      DensitySpec::ProductPolynomial p;
      const json* c = r.find(*j, "coeffs");
      if (!c || !c->is_array()) {
        r.fail("density.coeffs", "must be an array of coefficient arrays");
        return DensitySpec::constant(1.0, dim);
      }
      for (const auto& axis : *c) p.coeffs.push_back(axis.get<std::vector<double>>());
      return DensitySpec(p, dim);
    }
    if (type == "grid") {
      DensitySpec::GridTable g;
      g.shape = j->value("shape", std::vector<int>{});
      g.values = j->value("values", std::vector<double>{});
      return DensitySpec(g, dim);
    }
    r.fail("density.type", "unknown density '" + type + "'");
  } catch (const Error& e) {
    r.fail("density", e.what());
  } catch (const json::exception& e) {
    r.fail("density", e.what());
  }
  return DensitySpec::constant(1.0, dim);
}

TestFunction parse_test_function(Reader& r, const json* j, int dim) {
  if (!j) return TestFunction::constant(1.0);
  if (!j->is_object()) {
    r.fail("test_function", "must be an object");
    return TestFunction::constant(1.0);
  }
  const auto type = r.string(*j, "type", "test_function.type").value_or("constant");
  try {
    if (type == "constant")
      return TestFunction::constant(r.number<double>(*j, "c", "test_function.c").value_or(1.0));
    if (type == "coordinate") {
      const int axis = r.number<int>(*j, "axis", "test_function.axis").value_or(0);
      if (axis < 0 || axis >= dim) r.fail("test_function.axis", "must lie in [0, dimension)");
      return TestFunction::coordinate(axis);
    }
    if (type == "cosine") {
      auto k = j->value("frequency", std::vector<int>(static_cast<std::size_t>(dim), 1));
      if (static_cast<int>(k.size()) != dim)
        r.fail("test_function.frequency", "needs one entry per dimension");
      return TestFunction::cosine(k);
    }
    if (type == "bump") {
      const double delta = r.number<double>(*j, "delta", "test_function.delta").value_or(0.25);
      if (!(delta > 0.0 && delta < 0.5)) r.fail("test_function.delta", "must lie in (0, 1/2)");
      return TestFunction::bump(delta);
    }
    r.fail("test_function.type", "unknown test function '" + type + "'");
  } catch (const Error& e) {
    r.fail("test_function", e.what());
  } catch (const json::exception& e) {
    r.fail("test_function", e.what());
  }
  return TestFunction::constant(1.0);
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> k = {
      "schema", "experiment", "dimension", "model", "density", "test_function", "lambda", "n", "t",
      "tau", "separation", "u", "beta", "reps", "calibration_reps", "master_seed", "tolerances",
      "output_dir", "s_scaling", "expected_slope", "table_tau", "table_reps", "shells",
      "direct_side", "rho", "k_max", "seeds", "box_width", "lil_seeds", "lil_n_max",
      "sandwich_reps"};
  return k;
}

void require_grid(Reader& r, const std::vector<double>& g, const std::string& name,
                  bool positive) {
  if (g.empty()) {
    r.fail(name, "grid must be non-empty for this experiment");
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (positive ? !(g[i] > 0.0) : !(g[i] >= 0.0))
      r.fail(name + "[" + std::to_string(i) + "]", positive ? "must be > 0" : "must be >= 0");
  }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> issues)
    : Error(ErrorCode::Config, join_issues(issues)), issues_(std::move(issues)) {}

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> n = {"log_laplace", "cumulants",      "mdp",
                                             "lil",         "mixing",         "depoissonize",
                                             "estimate_v",  "estimate_delta", "gibbs_check"};
  return n;
}

RunConfig validate_config(const json& raw) {
  std::vector<std::string> issues;
  Reader r(raw, issues);
  RunConfig c;
  c.document = raw;
  if (!raw.is_object()) throw ConfigError({"(root): must be a JSON object"});

  for (const auto& [key, _] : raw.items())
    if (!known_keys().count(key)) r.fail(key, "unknown field");

  const auto schema = r.number<int>(raw, "schema", "schema");
  if (!schema)
    r.fail("schema", "is required");
  else if (*schema != kSchemaVersion)
    r.fail("schema", "unsupported version " + std::to_string(*schema));

  const auto exp = r.string(raw, "experiment", "experiment");
  if (!exp) {
    r.fail("experiment", "is required");
  } else if (std::find(experiment_names().begin(), experiment_names().end(), *exp) ==
             experiment_names().end()) {
    r.fail("experiment", "unknown experiment '" + *exp + "'");
  } else {
    c.experiment = *exp;
  }

  c.dimension = r.number<int>(raw, "dimension", "dimension").value_or(1);
  if (c.dimension < 1 || c.dimension > 3) {
    r.fail("dimension", "must be 1, 2 or 3");
    c.dimension = 1;
  }

  if (const json* m = r.find(raw, "model"))
    c.model = parse_model(r, *m);
  else
    r.fail("model", "is required");
  c.density = parse_density(r, r.find(raw, "density"), c.dimension);
  c.test_function = parse_test_function(r, r.find(raw, "test_function"), c.dimension);

  c.lambda = r.grid(raw, "lambda", "lambda");
  c.n = r.grid(raw, "n", "n");
  c.t = r.grid(raw, "t", "t");
  c.tau = r.grid(raw, "tau", "tau");
  c.separation = r.grid(raw, "separation", "separation");
  c.u = r.grid(raw, "u", "u");
  c.table_tau = r.grid(raw, "table_tau", "table_tau");

  c.beta = r.number<double>(raw, "beta", "beta").value_or(c.beta);
  if (!(c.beta > 0.0 && c.beta < 0.5)) r.fail("beta", "must lie in (0, 1/2)");
  c.reps = r.number<long>(raw, "reps", "reps").value_or(c.reps);
  if (c.reps < 1) r.fail("reps", "must be >= 1");
  c.calibration_reps = r.number<long>(raw, "calibration_reps", "calibration_reps").value_or(0);
  if (c.calibration_reps < 0) r.fail("calibration_reps", "must be >= 0");
  if (const auto s = r.number<std::uint64_t>(raw, "master_seed", "master_seed"))
    c.master_seed = *s;
  else if (!r.find(raw, "master_seed"))
    r.fail("master_seed", "is required (no wall-clock seeding)");
  c.output_dir = r.string(raw, "output_dir", "output_dir");

  c.s_scaling = r.boolean(raw, "s_scaling", "s_scaling").value_or(false);
  c.expected_slope = r.number<double>(raw, "expected_slope", "expected_slope");
  c.table_reps = r.number<long>(raw, "table_reps", "table_reps").value_or(c.table_reps);
  if (c.table_reps < 2) r.fail("table_reps", "must be >= 2");
  c.shells = r.number<int>(raw, "shells", "shells").value_or(c.shells);
  if (c.shells < 4) r.fail("shells", "must be >= 4");
  c.direct_side = r.number<double>(raw, "direct_side", "direct_side");
  if (c.direct_side && !(*c.direct_side > 0.0)) r.fail("direct_side", "must be > 0");
  c.rho = r.number<double>(raw, "rho", "rho").value_or(c.rho);
  if (!(c.rho > 1.0)) r.fail("rho", "must be > 1");
  c.k_max = r.number<int>(raw, "k_max", "k_max").value_or(c.k_max);
  if (c.k_max < 1) r.fail("k_max", "must be >= 1");
  c.seeds = r.number<int>(raw, "seeds", "seeds").value_or(c.seeds);
  if (c.seeds < 1) r.fail("seeds", "must be >= 1");
  c.box_width = r.number<double>(raw, "box_width", "box_width").value_or(c.box_width);
  if (!(c.box_width > 0.0)) r.fail("box_width", "must be > 0");
  c.lil_seeds = r.number<int>(raw, "lil_seeds", "lil_seeds").value_or(0);
  if (c.lil_seeds < 0) r.fail("lil_seeds", "must be >= 0");
  c.lil_n_max = r.number<long>(raw, "lil_n_max", "lil_n_max").value_or(c.lil_n_max);
  if (c.lil_n_max < 16) r.fail("lil_n_max", "must be >= 16");
  c.sandwich_reps = r.number<long>(raw, "sandwich_reps", "sandwich_reps").value_or(c.sandwich_reps);
  if (c.sandwich_reps < 1) r.fail("sandwich_reps", "must be >= 1");

  if (!c.experiment.empty()) {
    std::map<std::string, double> tol = default_tolerances().at(c.experiment);
    const auto& optional = optional_tolerances();
    if (const json* t = r.find(raw, "tolerances")) {
      if (!t->is_object()) {
        r.fail("tolerances", "must be an object");
      } else {
        for (const auto& [key, value] : t->items()) {
          const std::string path = "tolerances." + key;
          const bool allowed = tol.count(key) > 0 || (optional.count(c.experiment) &&
                                                      optional.at(c.experiment).count(key));
          if (!allowed) {
            r.fail(path, "not a tolerance of experiment '" + c.experiment + "'");
            continue;
          }
          if (!value.is_number() || !(value.get<double>() > 0.0)) {
            r.fail(path, "tolerances must be positive numbers");
            continue;
          }
          tol[key] = value.get<double>();
        }
      }
    }
    c.tolerances = Tolerances(tol);

    const std::string& e = c.experiment;
    if (e == "log_laplace" || e == "cumulants") require_grid(r, c.lambda, "lambda", true);
    if (e == "cumulants" && c.lambda.size() < 2) r.fail("lambda", "needs at least 2 values");
    if (e == "mdp") {
      require_grid(r, c.lambda, "lambda", true);
      require_grid(r, c.t, "t", false);
    }
    if (e == "mixing") {
      require_grid(r, c.lambda, "lambda", true);
      require_grid(r, c.separation, "separation", false);
    }
    if (e == "depoissonize") {
      require_grid(r, c.n, "n", true);
      for (std::size_t i = 0; i < c.n.size(); ++i)
        if (c.n[i] != std::floor(c.n[i])) r.fail("n[" + std::to_string(i) + "]", "must be an integer");
    }
    if (e == "estimate_v" || e == "estimate_delta") require_grid(r, c.tau, "tau", true);
    if (e == "gibbs_check") {
      require_grid(r, c.lambda, "lambda", true);
      require_grid(r, c.u, "u", false);
      for (std::size_t i = 0; i < c.u.size(); ++i)
        if (c.u[i] > 1.0) r.fail("u[" + std::to_string(i) + "]", "must lie in [0, 1]");
    }
    if (e == "lil" && !std::holds_alternative<TestFunction::BoundaryBump>(c.test_function.variant()))
      r.fail("test_function", "lil needs a bump test function");
    for (std::size_t i = 1; i < c.lambda.size(); ++i)
      if (!(c.lambda[i] > c.lambda[i - 1])) r.fail("lambda", "must be strictly increasing");
  }
  if (!issues.empty()) throw ConfigError(issues);
  return c;
}

json load_config_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot read " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Config, path.string() + ": not valid JSON (" + e.what() + ")");
  }
  if (doc.is_object() && doc.contains("config") && doc.contains("code_version"))
    return doc.at("config");
  return doc;
}

ExperimentReport run_report(const RunConfig& cfg, int jobs) {
  ModelSetup m;
  m.spec = cfg.model;
  m.f = cfg.test_function;
  m.kappa = cfg.density;
  m.reps = cfg.reps;
  m.calibration_reps = cfg.calibration_reps;
  m.seed = SeedSpec{cfg.master_seed, {}};
  m.tol = cfg.tolerances;
  m.jobs = jobs;
  TableSource tables{cfg.table_tau, cfg.table_reps, cfg.shells};
  const std::string& e = cfg.experiment;
  ExperimentReport rep;
  if (e == "log_laplace")
    rep = log_laplace_convergence(m, cfg.lambda, cfg.beta, tables, cfg.s_scaling);
  else if (e == "cumulants")
    rep = cumulant_scaling(m, cfg.lambda, cfg.expected_slope);
  else if (e == "mdp")
    rep = mdp_tail(m, cfg.lambda.front(), cfg.beta, cfg.t, tables);
  else if (e == "lil")
    rep = lil_trajectory(m, cfg.rho, cfg.k_max, cfg.seeds);
  else if (e == "mixing")
    rep = mixing_decay(m, cfg.lambda.front(), cfg.box_width, cfg.separation);
  else if (e == "depoissonize")
    rep = depoissonization(m, cfg.n, tables, cfg.lil_seeds, cfg.lil_n_max);
  else if (e == "estimate_v")
    rep = estimate_v_table(m, cfg.dimension, cfg.tau, cfg.shells, cfg.direct_side);
  else if (e == "estimate_delta")
    rep = estimate_delta_table(m, cfg.dimension, cfg.tau, cfg.shells);
  else if (e == "gibbs_check")
    rep = gibbs_check(m, cfg.lambda.front(), cfg.u, cfg.sandwich_reps);
  else
    throw Error(ErrorCode::Config, "unknown experiment '" + e + "'");
  json params = cfg.document;
  params.erase("output_dir");
  params.erase("master_seed");
  rep.parameters = params;
  return rep;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
  out << text;
  out.flush();
  require(static_cast<bool>(out), ErrorCode::Io, "write failed for " + path.string());
}

}  // namespace

void write_report_files(const RunConfig& cfg, const ExperimentReport& report,
                        const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "cells", ec);
  require(!ec, ErrorCode::Io, "cannot create " + (out_dir / "cells").string() + ": " + ec.message());
  write_text(out_dir / "report.json", report.to_json().dump(2) + "\n");
  for (const auto& t : report.tables) {
    std::ostringstream s;
    write_csv_table(s, t);
    write_text(out_dir / "cells" / (t.name + ".csv"), s.str());
  }
  json manifest;
  manifest["config"] = cfg.document;
  manifest["code_version"] = kCodeVersion;
  manifest["seeds"] = {{"master_seed", cfg.master_seed}};
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

int run_experiment(const RunConfig& cfg, const std::filesystem::path& out_dir, int jobs) {
  const ExperimentReport report = run_report(cfg, jobs);
  write_report_files(cfg, report, out_dir);
  return report.passed() ? 0 : 2;
}

}  // namespace geoprob

#include <doctest.h>

#include <fstream>
#include <sstream>

#include "geoprob/config.hpp"

using namespace geoprob;
using nlohmann::json;

namespace {

json minimal() {
  return json::parse(R"({"schema": 1, "experiment": "log_laplace", "model": {"type": "trivial"},
                         "lambda": [64], "reps": 100, "master_seed": 7})");
}

std::vector<std::string> issues_of(const json& doc) {
  try {
    validate_config(doc);
  } catch (const ConfigError& e) {
    return e.issues();
  }
  return {};
}

bool mentions(const std::vector<std::string>& issues, const std::string& text) {
  for (const auto& i : issues)
    if (i.find(text) != std::string::npos) return true;
  return false;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("geoprob_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("minimal config gets documented defaults") {
  const auto c = validate_config(minimal());
  CHECK(c.experiment == "log_laplace");
  CHECK(c.dimension == 1);
  CHECK(c.beta == 0.25);
  CHECK(c.tolerances.at("within_se") == 4.0);
  CHECK(c.tolerances.at("trend_se") == 2.0);
  CHECK(c.density.is_constant());
}

TEST_CASE("negative reps are reported by name") {
  auto d = minimal();
  d["reps"] = -3;
  CHECK(mentions(issues_of(d), "reps"));
}

TEST_CASE("nn threshold with t = 0 cites the invariant") {
  auto d = minimal();
  d["model"] = {{"type", "nn_threshold"}, {"t", 0}};
  CHECK(mentions(issues_of(d), "t > 0"));
}

TEST_CASE("all violations are collected") {
  auto d = minimal();
  d["reps"] = 0;
  d["beta"] = 0.7;
  d.erase("master_seed");
  d["lambda"] = json::array();
  d["bogus"] = 1;
  d["tolerances"] = {{"within_se", -1.0}, {"nope", 1.0}};
  const auto issues = issues_of(d);
  CHECK(mentions(issues, "reps"));
  CHECK(mentions(issues, "beta"));
  CHECK(mentions(issues, "master_seed"));
  CHECK(mentions(issues, "lambda"));
  CHECK(mentions(issues, "bogus"));
  CHECK(mentions(issues, "tolerances.within_se"));
  CHECK(mentions(issues, "tolerances.nope"));
}

TEST_CASE("schema version is checked") {
  auto d = minimal();
  d["schema"] = 2;
  CHECK(mentions(issues_of(d), "schema"));
  d.erase("schema");
  CHECK(mentions(issues_of(d), "schema"));
}

TEST_CASE("model, density and test function parse") {
  auto d = minimal();
  d["dimension"] = 2;
  d["model"] = {{"type", "germ_grain"}, {"grain", {{"kind", "uniform"}, {"lo", 0.2}, {"hi", 0.4}}}};
  d["density"] = {{"type", "polynomial"}, {"coeffs", {{1.0, 1.0}, {2.0}}}};
  d["test_function"] = {{"type", "cosine"}, {"frequency", {1, 2}}};
  const auto c = validate_config(d);
  CHECK(std::holds_alternative<GermGrainVolume>(c.model.model));
  CHECK(c.density.integral() == doctest::Approx(1.0));
  d["test_function"] = {{"type", "coordinate"}, {"axis", 2}};
  CHECK(mentions(issues_of(d), "test_function.axis"));
}

TEST_CASE("run writes report, tables and manifest, and replays byte for byte") {
  const auto cfg = validate_config(minimal());
  const auto a = scratch("a"), b = scratch("b");
  CHECK(run_experiment(cfg, a, 1) == 0);
  CHECK(std::filesystem::exists(a / "report.json"));
  CHECK(std::filesystem::exists(a / "cells" / "log_laplace.csv"));
  const auto replay = validate_config(load_config_document(a / "manifest.json"));
  CHECK(run_experiment(replay, b, 4) == 0);
  CHECK(slurp(a / "report.json") == slurp(b / "report.json"));
  CHECK(slurp(a / "cells" / "log_laplace.csv") == slurp(b / "cells" / "log_laplace.csv"));
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  const auto report = slurp(a / "report.json");
  CHECK(report.find(a.string()) == std::string::npos);
}

TEST_CASE("impossible tolerance exits 2") {
  auto d = minimal();
  d["tolerances"] = {{"within_se", 1e-12}};
  CHECK(run_experiment(validate_config(d), scratch("c"), 1) == 2);
}

TEST_CASE("unwritable output directory is an io error") {
  const auto blocker = scratch("blocker");
  std::ofstream(blocker) << "x";
  try {
    run_experiment(validate_config(minimal()), blocker / "out", 1);
    FAIL("expected an io error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Io);
  }
}

TEST_CASE("every experiment has a runnable minimal config") {
  const std::vector<json> docs = {
      json::parse(R"({"experiment":"cumulants","lambda":[32,64,128],"expected_slope":1})"),
      json::parse(R"({"experiment":"mdp","lambda":[16],"t":[0,0.5]})"),
      json::parse(R"({"experiment":"lil","test_function":{"type":"bump","delta":0.3333333333333333},"k_max":6,"seeds":5})"),
      json::parse(R"({"experiment":"mixing","lambda":[256],"separation":[0,10,20],"box_width":20})"),
      json::parse(R"({"experiment":"depoissonize","n":[32,64]})"),
      json::parse(R"({"experiment":"estimate_v","tau":[1]})"),
      json::parse(R"({"experiment":"estimate_delta","tau":[1]})"),
      json::parse(R"({"experiment":"gibbs_check","lambda":[10],"u":[0]})"),
  };
  for (auto d : docs) {
    d["schema"] = 1;
    d["model"] = {{"type", "trivial"}};
    d["reps"] = 100;
    d["master_seed"] = 3;
    CAPTURE(d.dump());
    if (d["experiment"] == "gibbs_check") d["model"] = {{"type", "nn_threshold"}, {"t", 0.5}};
    const auto c = validate_config(d);
    CHECK_NOTHROW(run_report(c, 2));
  }
}

#include <cstdlib>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "geoprob/config.hpp"
#include "geoprob/parallel.hpp"

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
};

std::filesystem::path output_dir(const Options& o, const geoprob::RunConfig& cfg) {
  if (!o.out.empty()) return o.out;
  if (cfg.output_dir) return *cfg.output_dir;
  const char* root = std::getenv("GEOPROB_OUT");
  return std::filesystem::path(root && *root ? root : "geoprob_out") / cfg.experiment;
}

geoprob::RunConfig load(const Options& o, const std::string& forced_experiment) {
  nlohmann::json doc = geoprob::load_config_document(o.config);
  if (!forced_experiment.empty()) {
    if (doc.is_object() && doc.contains("experiment") && doc["experiment"] != forced_experiment)
      throw geoprob::ConfigError({"experiment: config names '" +
                                  doc["experiment"].get<std::string>() + "' but the verb runs '" +
                                  forced_experiment + "'"});
    if (doc.is_object()) doc["experiment"] = forced_experiment;
  }
  if (o.seed && doc.is_object()) doc["master_seed"] = *o.seed;
  return geoprob::validate_config(doc);
}

int run(const Options& o, const std::string& forced_experiment) {
  const auto cfg = load(o, forced_experiment);
  geoprob::set_default_jobs(o.jobs);
  const auto report = geoprob::run_report(cfg, o.jobs);
  const auto dir = output_dir(o, cfg);
  geoprob::write_report_files(cfg, report, dir);
  for (const auto& v : report.verdicts)
    std::cout << (v.pass ? "PASS " : "FAIL ") << v.name << " statistic=" << v.statistic
              << " tolerance=" << v.tolerance << '\n';
  std::cout << "report: " << (dir / "report.json").string() << '\n';
  if (!report.passed()) {
    for (const auto& v : report.verdicts)
      if (!v.pass) std::cerr << "failed: " << v.name << (v.detail.empty() ? "" : " (" + v.detail + ")") << '\n';
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Limit-theorem experiments for stabilizing functionals of point processes"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub, bool runs) {
    sub->add_option("--config", o.config, "JSON config or manifest")->required()->check(CLI::ExistingFile);
    if (!runs) return;
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "master seed override");
    sub->add_option("--jobs", o.jobs, "worker threads (does not change outputs)")
        ->check(CLI::Range(1, 1024));
  };
  auto* validate = app.add_subcommand("validate", "check a config and print the typed result");
  add_common(validate, false);
  auto* run_cmd = app.add_subcommand("run", "run the experiment named in the config");
  add_common(run_cmd, true);
  const std::map<std::string, std::string> verbs = {
      {"estimate-v", "estimate_v"},   {"estimate-delta", "estimate_delta"},
      {"cumulants", "cumulants"},     {"mdp", "mdp"},
      {"lil", "lil"},                 {"mixing", "mixing"},
      {"depoissonize", "depoissonize"}, {"gibbs-check", "gibbs_check"}};
  std::map<CLI::App*, std::string> verb_of;
  for (const auto& [verb, experiment] : verbs) {
    auto* sub = app.add_subcommand(verb, "run the " + experiment + " experiment");
    add_common(sub, true);
    verb_of[sub] = experiment;
  }
  CLI11_PARSE(app, argc, argv);

  try {
    if (validate->parsed()) {
      const auto cfg = load(o, "");
      std::cout << "valid: experiment=" << cfg.experiment << " model=" << cfg.model.name()
                << " reps=" << cfg.reps << " master_seed=" << cfg.master_seed << '\n';
      for (const auto& [k, v] : cfg.tolerances.values()) std::cout << "  tolerance " << k << "=" << v << '\n';
      return 0;
    }
    if (run_cmd->parsed()) return run(o, "");
    for (const auto& [sub, experiment] : verb_of)
      if (sub->parsed()) return run(o, experiment);
  } catch (const geoprob::ConfigError& e) {
    for (const auto& issue : e.issues()) std::cerr << "config error: " << issue << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

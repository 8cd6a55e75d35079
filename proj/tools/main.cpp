// Command-line driver for the experiment recipes.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "entropic/experiments.hpp"
#include "train_job.hpp"

namespace {

using entropic::ExperimentKind;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t parallelism = 1;
  std::string format = "csv";
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config {kind, parameters, output_directory}");
  sub->add_option("--seed", c.seed, "Override parameters.seed");
  sub->add_option("--out", c.out, "Output directory (overrides output_directory)");
  sub->add_option("--parallelism", c.parallelism, "Worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--format", c.format, "Data table format")->check(CLI::IsMember({"csv", "json"}));
}

nlohmann::json read_config(const Common& c) {
  if (c.config.empty()) return nlohmann::json::object();
  std::ifstream in(c.config);
  if (!in) throw std::runtime_error("cannot open config " + c.config);
  return nlohmann::json::parse(in);
}

void print_report(const entropic::ExperimentReport& rep) {
  for (const auto& v : rep.verdicts)
    std::printf("%s %s value=%.6g %s\n", v.pass ? "PASS" : "FAIL", v.name.c_str(), v.value, v.note.c_str());
  for (const auto& f : rep.failures) std::printf("cell failure: %s\n", f.c_str());
  std::printf("%s in %.1f s\n", rep.passed() ? "all checks passed" : "some checks failed", rep.wall_seconds);
}

int run_kind(const Common& c, ExperimentKind default_kind, const std::vector<ExperimentKind>& allowed,
             const nlohmann::json& defaults) {
  nlohmann::json cfg = read_config(c);
  if (!cfg.contains("kind")) cfg["kind"] = entropic::to_string(default_kind);
  entropic::ExperimentSpec spec = entropic::ExperimentSpec::from_json(cfg);
  bool ok = false;
  for (auto k : allowed) ok = ok || k == spec.kind;
  if (!ok) throw std::invalid_argument("kind '" + entropic::to_string(spec.kind) + "' does not belong to this subcommand");
  if (spec.kind == default_kind)
    for (const auto& [key, value] : defaults.items())
      if (!spec.parameters.contains(key)) spec.parameters[key] = value;
  if (c.seed) spec.parameters["seed"] = *c.seed;
  if (!c.out.empty()) spec.output_directory = c.out;
  entropic::resolve_parameters(spec.kind, spec.parameters);
  const std::filesystem::path dir = spec.output_directory;
  spec.output_directory.clear();
  const auto rep = entropic::run_experiment(spec, c.parallelism);
  if (!dir.empty())
    entropic::write_report(rep, dir, c.format == "json" ? entropic::ReportFormat::Json : entropic::ReportFormat::Csv);
  print_report(rep);
  return rep.passed() ? 0 : 1;
}

int run_train(const Common& c) {
  nlohmann::json cfg = read_config(c);
  if (cfg.contains("kind") && cfg.at("kind") != "train")
    return run_kind(c, ExperimentKind::LrDrop, {ExperimentKind::LrDrop, ExperimentKind::PolynomialBalance}, {});
  nlohmann::json params = cfg.value("parameters", nlohmann::json::object());
  if (c.seed) params["seed"] = *c.seed;
  std::filesystem::path dir = c.out.empty() ? std::filesystem::path(cfg.value("output_directory", "")) : std::filesystem::path(c.out);
  const auto job = entropic::cli::parse_train_job(params);
  const auto res = entropic::cli::run_train_job(
      job, dir, c.format == "json" ? entropic::cli::OutputFormat::Json : entropic::cli::OutputFormat::Csv);
  const auto& last = res.trajectory.back();
  std::printf("steps=%zu loss=%.6g entropy=%.6g diverged=%d wall=%.1fs\n", res.steps_done, last.loss,
              last.entropy, res.diverged ? 1 : 0, res.wall_seconds);
  return res.diverged ? 1 : 0;
}

int run_report(const Common& c) {
  if (c.out.empty()) throw std::invalid_argument("report needs --out <experiment directory>");
  std::ifstream in(std::filesystem::path(c.out) / "summary.json");
  if (!in) throw std::runtime_error("no summary.json in " + c.out);
  const auto s = nlohmann::json::parse(in);
  if (c.format == "json") {
    std::cout << s.dump(2) << '\n';
  } else {
    std::cout << "kind: " << s.at("kind").get<std::string>() << '\n';
    for (const auto& v : s.at("verdicts"))
      std::cout << (v.at("pass").get<bool>() ? "PASS " : "FAIL ") << v.at("name").get<std::string>() << " value="
                << v.at("value") << ' ' << v.at("note").get<std::string>() << '\n';
  }
  return s.at("passed").get<bool>() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entropic-force SGD laboratory"};
  app.require_subcommand(1);
  std::map<std::string, Common> opts;
  const char* names[] = {"train",   "balance",   "align",      "eos-sweep", "verify-entropic",
                         "closed-form", "sharpness", "orbit-scan", "report"};
  const char* help[] = {"Train one network and write its trajectory",
                        "Layer, neuron, weight or WU balance recipe",
                        "Representation alignment between independently trained nets",
                        "Edge-of-stability sweep over learning rate and data balance",
                        "Order of the entropic-loss approximation",
                        "Closed-form deep linear solutions and master balance",
                        "Sharpness at the entropic optimum",
                        "Free energy and sharpness along symmetry orbits",
                        "Print the verdicts of a finished experiment"};
  std::map<std::string, CLI::App*> subs;
  for (std::size_t i = 0; i < std::size(names); ++i) {
    subs[names[i]] = app.add_subcommand(names[i], help[i]);
    add_common(subs[names[i]], opts[names[i]]);
  }
  CLI11_PARSE(app, argc, argv);

  try {
    for (const auto& [name, sub] : subs) {
      if (!sub->parsed()) continue;
      const Common& c = opts[name];
      using K = ExperimentKind;
      if (name == "train") return run_train(c);
      if (name == "report") return run_report(c);
      if (name == "balance") return run_kind(c, K::Balance, {K::Balance, K::PolynomialBalance}, {});
      if (name == "align") return run_kind(c, K::Alignment, {K::Alignment}, {});
      if (name == "eos-sweep") return run_kind(c, K::EosSweep, {K::EosSweep}, {});
      if (name == "verify-entropic") return run_kind(c, K::EntropicOrder, {K::EntropicOrder}, {});
      if (name == "closed-form")
        return run_kind(c, K::SharpnessClosedForm, {K::SharpnessClosedForm}, {{"mode", "consistency"}});
      if (name == "sharpness")
        return run_kind(c, K::SharpnessClosedForm, {K::SharpnessClosedForm, K::OrbitScan},
                        {{"mode", "entropic_optimum"}});
      if (name == "orbit-scan") return run_kind(c, K::OrbitScan, {K::OrbitScan}, {});
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}

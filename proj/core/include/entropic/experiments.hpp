#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace entropic {

enum class ExperimentKind {
  Balance,
  Alignment,
  EosSweep,
  EntropicOrder,
  LrDrop,
  SharpnessClosedForm,
  OrbitScan,
  PolynomialBalance,
};

std::string to_string(ExperimentKind k);
ExperimentKind experiment_kind_from_string(const std::string& s);

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::Balance;
  nlohmann::json parameters = nlohmann::json::object();
  std::filesystem::path output_directory;

  static ExperimentSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

ExperimentSpec load_spec(const std::filesystem::path& path);

// A pass/fail check against an acceptance threshold.
struct Verdict {
  std::string name;
  bool pass = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string relation;  // "<", "<=", ">", ">=", "within"
  std::string note;
};

// One row of the long-format data table.
struct Measurement {
  std::string series;
  double step = 0.0;
  std::string metric;
  double value = 0.0;
};

struct ExperimentReport {
  ExperimentKind kind = ExperimentKind::Balance;
  nlohmann::json parameters;  // fully resolved, defaults filled in
  nlohmann::json summary = nlohmann::json::object();
  std::vector<Verdict> verdicts;
  std::vector<Measurement> rows;
  std::vector<std::string> failures;  // per-cell errors
  double wall_seconds = 0.0;

  bool passed() const;
  const Verdict& verdict(const std::string& name) const;
};

// Fills defaults and checks every parameter of the kind. Throws std::invalid_argument
// on unknown keys, wrong types or out-of-range values.
nlohmann::json resolve_parameters(ExperimentKind kind, const nlohmann::json& parameters);

// Runs the recipe. parallelism only affects wall time.
ExperimentReport run_experiment(const ExperimentSpec& spec, std::size_t parallelism = 1);

enum class ReportFormat { Csv, Json };

// data.csv (or data.json), summary.json and manifest.json under dir.
void write_report(const ExperimentReport& report, const std::filesystem::path& dir,
                  ReportFormat format = ReportFormat::Csv);
void write_long_csv(std::ostream& os, const std::vector<Measurement>& rows);
nlohmann::json summary_json(const ExperimentReport& report);
nlohmann::json manifest_json(const ExperimentReport& report);

}  // namespace entropic

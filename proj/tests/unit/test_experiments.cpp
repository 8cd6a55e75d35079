#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "entropic/experiments.hpp"

using namespace entropic;
using nlohmann::json;

namespace {

ExperimentSpec consistency_spec() {
  ExperimentSpec s;
  s.kind = ExperimentKind::SharpnessClosedForm;
  s.parameters = {{"mode", "consistency"}, {"n_batches", 200}, {"depth", 3}};
  return s;
}

}  // namespace

TEST(ExperimentKind, NamesRoundTrip) {
  for (auto k : {ExperimentKind::Balance, ExperimentKind::Alignment, ExperimentKind::EosSweep,
                 ExperimentKind::EntropicOrder, ExperimentKind::LrDrop, ExperimentKind::SharpnessClosedForm,
                 ExperimentKind::OrbitScan, ExperimentKind::PolynomialBalance})
    EXPECT_EQ(experiment_kind_from_string(to_string(k)), k);
  EXPECT_THROW(experiment_kind_from_string("nope"), std::invalid_argument);
}

TEST(ResolveParameters, FillsDefaultsAndRejectsBadInput) {
  const json r = resolve_parameters(ExperimentKind::Balance, json::object());
  EXPECT_EQ(r.at("mode"), "layer");
  EXPECT_TRUE(r.contains("seed"));
  EXPECT_THROW(resolve_parameters(ExperimentKind::Balance, {{"bogus", 1}}), std::invalid_argument);
  EXPECT_THROW(resolve_parameters(ExperimentKind::Balance, {{"mode", "sideways"}}), std::invalid_argument);
  EXPECT_THROW(resolve_parameters(ExperimentKind::Balance, {{"mode", 3}}), std::invalid_argument);
  EXPECT_THROW(resolve_parameters(ExperimentKind::SharpnessClosedForm, {{"lr", -1.0}}), std::invalid_argument);
  EXPECT_THROW(resolve_parameters(ExperimentKind::SharpnessClosedForm, {{"width", 1}}), std::invalid_argument);
}

TEST(ExperimentSpec, JsonRoundTripAndUnknownFields) {
  ExperimentSpec s = consistency_spec();
  s.output_directory = "out/run";
  const ExperimentSpec back = ExperimentSpec::from_json(s.to_json());
  EXPECT_EQ(back.kind, s.kind);
  EXPECT_EQ(back.parameters, s.parameters);
  EXPECT_EQ(back.output_directory, s.output_directory);
  json j = s.to_json();
  j["extra"] = true;
  EXPECT_THROW(ExperimentSpec::from_json(j), std::invalid_argument);
}

TEST(ExperimentSpec, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "entropic_spec_test.json";
  std::ofstream(path) << consistency_spec().to_json().dump();
  EXPECT_EQ(load_spec(path).kind, ExperimentKind::SharpnessClosedForm);
  EXPECT_ANY_THROW(load_spec(path.string() + ".missing"));
}

TEST(RunExperiment, ConsistencyIsDeterministicAndPasses) {
  const auto a = run_experiment(consistency_spec());
  const auto b = run_experiment(consistency_spec());
  ASSERT_FALSE(a.verdicts.empty());
  EXPECT_TRUE(a.passed());
  ASSERT_EQ(a.verdicts.size(), b.verdicts.size());
  for (std::size_t i = 0; i < a.verdicts.size(); ++i) EXPECT_EQ(a.verdicts[i].value, b.verdicts[i].value);
  EXPECT_EQ(a.parameters.at("n_batches"), 200);
  EXPECT_THROW(a.verdict("no_such_verdict"), std::out_of_range);
}

TEST(WriteReport, ProducesFiles) {
  const auto report = run_experiment(consistency_spec());
  const auto dir = std::filesystem::temp_directory_path() / "entropic_report_test";
  std::filesystem::remove_all(dir);
  write_report(report, dir);
  EXPECT_TRUE(std::filesystem::exists(dir / "data.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "summary.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  std::ifstream in(dir / "summary.json");
  const json s = json::parse(in);
  EXPECT_TRUE(s.contains("verdicts"));
  write_report(report, dir, ReportFormat::Json);
  EXPECT_TRUE(std::filesystem::exists(dir / "data.json"));
}

TEST(LongCsv, Format) {
  std::ostringstream os;
  write_long_csv(os, {Measurement{"a", 1, "loss", 0.5}});
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "series,step,metric,value");
}

#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "entropic/trainer.hpp"

namespace entropic::cli {

enum class OutputFormat { Csv, Json };

// A single training run described by a JSON object: architecture, data source,
// optimizer and metric options. Unknown keys are rejected.
struct TrainJob {
  Network init;
  DataModel data;
  TrainConfig config;
  nlohmann::json resolved;
};

TrainJob parse_train_job(const nlohmann::json& parameters);

// Writes trajectory.{csv,json}, manifest.json and the final checkpoint under dir.
TrainResult run_train_job(const TrainJob& job, const std::filesystem::path& dir, OutputFormat format);

}  // namespace entropic::cli

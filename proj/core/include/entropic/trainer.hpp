#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "entropic/batch.hpp"
#include "entropic/datagen.hpp"
#include "entropic/free_energy.hpp"
#include "entropic/network.hpp"

namespace entropic {

// Piecewise-constant multiplier: the value of the last breakpoint at or before the step.
struct LrSchedule {
  std::vector<std::pair<std::size_t, double>> points;

  double multiplier(std::size_t step) const;
  void validate() const;
};

enum class Sampling { WithReplacement, Epochs };

struct MetricOptions {
  bool entropy = true;
  bool balance = true;
  bool wu = false;
  std::size_t sharpness_every = 100;  // 0 disables sharpness
  std::size_t sharpness_probes = 16;
  std::size_t final_probes = 64;
  bool lambda_max = true;
  std::size_t eval_size = 1024;
  std::size_t alignment_samples = 512;
};

struct TrainConfig {
  EntropicConfig entropic;
  std::size_t steps = 1;
  LrSchedule schedule;
  std::size_t record_every = 100;
  std::uint64_t seed = 0;
  bool decoupled_decay = false;
  Sampling sampling = Sampling::WithReplacement;
  MetricOptions metrics;
  std::optional<Batch> dataset;     // train on a fixed dataset instead of sampling the model
  std::optional<Network> partner;   // alignment partner
  std::vector<std::size_t> checkpoint_steps;
  std::filesystem::path checkpoint_dir;
  // Called with the current network every observe_every steps (0 disables).
  std::function<void(std::size_t, const Network&)> observer;
  std::size_t observe_every = 0;

  void validate() const;
};

struct MetricRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double entropy = 0.0;
  double entropy_se = 0.0;
  std::vector<double> grad_traces;
  std::vector<double> weight_traces;
  double layer_residual = 0.0;
  double neuron_residual = 0.0;
  double wu_residual = 0.0;
  double sharpness = 0.0;
  double sharpness_se = 0.0;
  double lambda_max = 0.0;
  double eta_lambda_max = 0.0;
  double alignment = 0.0;
  bool has_sharpness = false;
  bool has_alignment = false;
  bool diverged = false;
};

struct TrainResult {
  Network final;
  std::vector<MetricRecord> trajectory;
  bool diverged = false;
  std::size_t steps_done = 0;
  double wall_seconds = 0.0;
};

// theta <- theta - Lambda (g + k gamma theta), k = 2 under the free-energy convention.
// With decoupled decay the decay term skips Lambda and uses its scalar norm.
Network sgd_step(const Network& net, const Batch& batch, const EntropicConfig& cfg,
                 bool decoupled = false);
// In-place variant; returns the batch loss before the step. Throws DivergenceError
// when the parameter norm exceeds 1e8 or turns non-finite.
double sgd_step_inplace(Network& net, const Batch& batch, const EntropicConfig& cfg,
                        double lr_multiplier = 1.0, bool decoupled = false);

TrainResult train(Network net, const DataModel& dm, const TrainConfig& tc);

struct SharpnessEstimate {
  double trace = 0.0;
  double trace_se = 0.0;
  double lambda_max = 0.0;
  bool converged = false;
};

// Hutchinson trace over Rademacher probes plus power iteration on the HVP.
SharpnessEstimate measure_sharpness(const Network& net, const Batch& eval, std::size_t probes,
                                    Rng& rng, bool lambda_max = true);
SharpnessEstimate measure_sharpness(const Network& net, const DataModel& dm,
                                    const EntropicConfig& cfg, std::size_t probes, Rng& rng);

struct SweepCell {
  std::map<std::string, double> coords;
  Network init;
  DataModel dm;
  TrainConfig config;
};

struct SweepGrid {
  std::vector<std::string> axes;
  std::vector<SweepCell> cells;
  std::uint64_t base_seed = 0;
};

struct CellResult {
  std::size_t index = 0;
  std::map<std::string, double> coords;
  bool ok = false;
  std::string error;
  TrainResult result;
};

// Cell i trains with seed derive_seed(base_seed, i); output order follows the grid.
std::vector<CellResult> run_sweep(const SweepGrid& grid, std::size_t parallelism);

void write_trajectory_csv(std::ostream& os, const std::vector<MetricRecord>& traj);
nlohmann::json to_json(const TrainConfig& tc);
nlohmann::json run_manifest(const TrainConfig& tc, const DataModel& dm, const Network& init,
                            const TrainResult& result);

extern const char* const kLibraryVersion;

}  // namespace entropic

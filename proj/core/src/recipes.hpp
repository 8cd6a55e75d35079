#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "entropic/experiments.hpp"
#include "entropic/trainer.hpp"

namespace entropic::recipes {

// Reads parameters with defaults and range checks, remembering every key it saw.
class ParamReader {
 public:
  ParamReader(const nlohmann::json& j, std::string kind);

  double real(const std::string& key, double def, double lo = -1e300, double hi = 1e300);
  std::size_t count(const std::string& key, std::size_t def, std::size_t lo = 0,
                    std::size_t hi = static_cast<std::size_t>(-1));
  std::uint64_t seed(const std::string& key, std::uint64_t def);
  bool flag(const std::string& key, bool def);
  std::string text(const std::string& key, const std::string& def);
  std::string choice(const std::string& key, const std::string& def,
                     const std::vector<std::string>& options);
  std::vector<double> reals(const std::string& key, std::vector<double> def, double lo = -1e300,
                            double hi = 1e300);
  std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> def,
                                  std::size_t lo = 1);

  // Throws on keys that were never read.
  void finish() const;
  const nlohmann::json& resolved() const { return resolved_; }

 private:
  [[noreturn]] void fail(const std::string& key, const std::string& what) const;
  const nlohmann::json* find(const std::string& key);

  nlohmann::json j_;
  std::string kind_;
  std::set<std::string> seen_;
  nlohmann::json resolved_ = nlohmann::json::object();
};

class Recorder {
 public:
  explicit Recorder(ExperimentReport& r) : r_(r) {}
  void add(const std::string& series, double step, const std::string& metric, double value) {
    r_.rows.push_back({series, step, metric, value});
  }
  void trajectory(const std::string& series, const std::vector<MetricRecord>& traj);
  void less(const std::string& name, double value, double threshold, const std::string& note = {});
  void greater(const std::string& name, double value, double threshold, const std::string& note = {});
  void within(const std::string& name, double value, double target, double rel_tol,
              const std::string& note = {});
  void check(const std::string& name, bool pass, double value, const std::string& note = {});

 private:
  ExperimentReport& r_;
};

// Runs f(0..n-1) on up to `parallelism` threads; rethrows the first exception.
void parallel_for(std::size_t n, std::size_t parallelism, const std::function<void(std::size_t)>& f);

std::vector<double> linspace(double a, double b, std::size_t n);
// Mean of the records whose step is at least (1 - fraction) * last step.
double tail_mean(const std::vector<MetricRecord>& traj, double fraction,
                 double MetricRecord::*field);
std::vector<double> field_series(const std::vector<MetricRecord>& traj, double MetricRecord::*field);

struct BalanceParams {
  std::string mode;
  std::uint64_t seed;
  std::vector<std::size_t> widths, teacher_widths;
  std::string activation;
  double init_scale, teacher_scale, v_scale, input_variance, noise;
  double lr, weight_decay;
  std::size_t batch_size, steps, record_every, n_batches, eval_size, observe_every;
  double tail_fraction, threshold, min_drop;
  static BalanceParams read(ParamReader& r);
};

struct PolynomialBalanceParams {
  std::uint64_t seed;
  std::vector<std::size_t> widths, teacher_widths;
  int degree;
  double init_scale, teacher_scale, noise, lr;
  std::size_t batch_size, steps, record_every, n_batches, eval_size, observe_every;
  double threshold, tail_fraction;
  static PolynomialBalanceParams read(ParamReader& r);
};

struct EntropicOrderParams {
  std::vector<double> lrs;
  std::size_t n;
  double x, y, w0, phi2_coefficient, reference_coefficient;
  double slope1, slope2, tol1, tol2;
  static EntropicOrderParams read(ParamReader& r);
};

struct AlignmentParams {
  std::uint64_t seed;
  std::size_t depth, width, d_x, d_y;
  double v_scale, noise, lr, max_cond, init_scale;
  std::vector<double> weight_decays;
  std::size_t batch_size, steps, record_every, samples;
  bool normalize;
  std::string idx_images, idx_labels;
  double align_threshold, procrustes_threshold, c0_tolerance, gap;
  static AlignmentParams read(ParamReader& r);
};

struct EosSweepParams {
  std::uint64_t seed;
  std::vector<double> lrs, phis;
  std::size_t hidden, batch_size, steps, eval_size, tail_snapshots, probes;
  double init_scale, epsilon, bound, rho_threshold;
  static EosSweepParams read(ParamReader& r);
};

struct SharpnessClosedFormParams {
  std::string mode;
  std::uint64_t seed;
  // consistency
  std::size_t depth, d_x, d_y, width, n_batches;
  double v_scale, reconstruct_tol, orthonormal_tol, trace_tol, se_multiple;
  // entropic_optimum
  std::vector<double> phis;
  std::size_t hidden, steps, record_every, probes, eval_size;
  double tail_fraction, tolerance, min_tolerance;
  double lr;
  std::size_t batch_size;
  static SharpnessClosedFormParams read(ParamReader& r);
};

struct OrbitScanParams {
  std::string mode;
  std::uint64_t seed;
  std::vector<std::size_t> widths, teacher_widths;
  std::string activation;
  double noise, lr, phi;
  std::size_t batch_size, steps, record_every, probes, eval_size, n_batches;
  std::vector<double> lambdas;
  double orbit_lambda, factor, f_se_multiple, l_se_multiple, exact_tol;
  std::size_t window, burn_in;
  static OrbitScanParams read(ParamReader& r);
};

struct LrDropParams {
  std::uint64_t seed;
  std::vector<std::size_t> widths, teacher_widths;
  std::string activation;
  double noise, input_variance, lr, weight_decay, drop_factor;
  std::size_t batch_size, steps, drop_step, window, record_every, n_batches;
  static LrDropParams read(ParamReader& r);
};

void run(const BalanceParams& p, ExperimentReport& out);
void run(const PolynomialBalanceParams& p, ExperimentReport& out);
void run(const EntropicOrderParams& p, ExperimentReport& out);
void run(const AlignmentParams& p, ExperimentReport& out, std::size_t parallelism);
void run(const EosSweepParams& p, ExperimentReport& out, std::size_t parallelism);
void run(const SharpnessClosedFormParams& p, ExperimentReport& out, std::size_t parallelism);
void run(const OrbitScanParams& p, ExperimentReport& out);
void run(const LrDropParams& p, ExperimentReport& out);

}  // namespace entropic::recipes

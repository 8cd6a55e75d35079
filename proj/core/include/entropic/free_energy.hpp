#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "entropic/batch.hpp"
#include "entropic/datagen.hpp"
#include "entropic/matrix.hpp"
#include "entropic/network.hpp"
#include "entropic/rng.hpp"

namespace entropic {

class DivergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Scalar eta, or a symmetric PSD matrix acting on the flat parameter vector.
class LearningRate {
 public:
  LearningRate(double eta = 0.0);  // NOLINT: implicit from scalar is intended
  explicit LearningRate(Matrix lambda);

  bool is_scalar() const { return !matrix_; }
  double scalar() const { return eta_; }
  const Matrix& matrix() const { return *matrix_; }

  std::vector<double> apply(std::span<const double> g) const;
  double quadratic(std::span<const double> g) const;  // g^T Lambda g
  LearningRate scaled(double s) const;
  // Scalar: |eta|; matrix: largest absolute eigenvalue.
  double norm() const;

 private:
  double eta_ = 0.0;
  std::optional<Matrix> matrix_;
};

enum class DecayConvention {
  FreeEnergy,  // F carries gamma |theta|^2, so the decay force is 2 gamma theta
  PlainDecay,   // decay force gamma theta
};

struct EntropicConfig {
  LearningRate lr = 0.0;
  double weight_decay = 0.0;
  std::size_t batch_size = 1;
  std::size_t n_batches = 100;
  std::size_t n_eval = 4096;
  DecayConvention decay = DecayConvention::FreeEnergy;
  double phi2_coefficient = 1.0 / 6.0;

  double decay_factor() const { return decay == DecayConvention::FreeEnergy ? 2.0 : 1.0; }
  void validate() const;
};

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
};

Estimate mean_estimate(std::span<const double> samples);

// 1/4 g^T Lambda g with g the per-sample gradient.
double phi1(const Network& net, std::span<const double> x, std::span<const double> y,
            const EntropicConfig& cfg);
// phi2_coefficient * g^T Lambda H Lambda g.
double phi2(const Network& net, std::span<const double> x, std::span<const double> y,
            const EntropicConfig& cfg);

std::vector<Batch> sample_batches(const DataModel& dm, Rng& rng, std::size_t batch_size,
                                  std::size_t count);

// S = 1/4 mean_k |sqrt(Lambda) g_k|^2 over the given batches.
Estimate entropy(const Network& net, std::span<const Batch> batches, const EntropicConfig& cfg);
// Draws cfg.n_batches batches of cfg.batch_size from child streams of rng.
Estimate entropy(const Network& net, const DataModel& dm, const EntropicConfig& cfg, Rng& rng);

struct FreeEnergyParts {
  Estimate loss;
  double decay = 0.0;
  Estimate entropy;
  Estimate total;
};

// Fixed evaluation set and entropy batches, so differences across parameter
// values share their random numbers.
class FreeEnergyEvaluator {
 public:
  FreeEnergyEvaluator(const DataModel& dm, const EntropicConfig& cfg, Rng& rng);
  FreeEnergyEvaluator(Batch eval, std::vector<Batch> entropy_batches, EntropicConfig cfg);

  FreeEnergyParts evaluate(const Network& net) const;
  const Batch& eval_batch() const { return eval_; }
  const std::vector<Batch>& entropy_batches() const { return batches_; }
  const EntropicConfig& config() const { return cfg_; }

 private:
  Batch eval_;
  std::vector<Batch> batches_;
  EntropicConfig cfg_;
};

Estimate free_energy(const Network& net, const DataModel& dm, const EntropicConfig& cfg, Rng& rng);

struct EquivalenceResult {
  double discrepancy = 0.0;
  bool diverged = false;
};

// |theta'_n - theta_1|: one GD step with Lambda on l versus n steps with
// Lambda/n on l + phi1 (+ phi2); phi gradients by central differences of phi.
EquivalenceResult verify_entropic_equivalence(const Network& net, std::span<const double> x,
                                              std::span<const double> y, const EntropicConfig& cfg,
                                              std::size_t n, int order);

// Explicit Euler step on the estimated gradient of F. Requires dt <= eta / 10.
Network entropic_flow_step(const Network& net, const DataModel& dm, const EntropicConfig& cfg,
                           Rng& rng, double dt);
Network entropic_flow_step(const Network& net, const Batch& eval,
                           std::span<const Batch> entropy_batches, const EntropicConfig& cfg,
                           double dt);

}  // namespace entropic

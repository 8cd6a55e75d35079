#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "entropic/batch.hpp"
#include "entropic/datagen.hpp"
#include "entropic/free_energy.hpp"
#include "entropic/matrix.hpp"
#include "entropic/network.hpp"
#include "entropic/rng.hpp"

namespace entropic {

// Generator A of an exponential symmetry theta -> exp(lambda A) theta.
// Rescaling generators are diagonal and stored sparsely.
class Generator {
 public:
  static Generator diagonal(std::size_t dim, std::vector<std::pair<std::size_t, double>> entries);
  static Generator dense(Matrix a);
  // +1 on every entry of layer i, -1 on layer j (0-based).
  static Generator layer_rescaling(const Network& net, std::size_t i, std::size_t j);
  // +1 on row `neuron` of weight[layer], -out_factor on column `neuron` of weight[layer + 1].
  static Generator neuron_rescaling(const Network& net, std::size_t layer, std::size_t neuron,
                                    double out_factor = 1.0);

  std::size_t dim() const { return dim_; }
  bool is_diagonal() const { return !dense_.has_value(); }
  const std::vector<std::pair<std::size_t, double>>& entries() const { return entries_; }
  // (A + A^T) / 2
  Matrix symmetric_part() const;

  std::vector<double> apply_symmetric(std::span<const double> v) const;
  double quadratic(std::span<const double> v) const;  // v^T A~ v
  std::vector<double> exp_apply(double lambda, std::span<const double> theta) const;
  Network act(const Network& net, double lambda) const;

 private:
  std::size_t dim_ = 0;
  std::vector<std::pair<std::size_t, double>> entries_;
  std::optional<Matrix> dense_;
  std::optional<Matrix> sym_;
};

Matrix matrix_exp(const Matrix& a);

std::vector<LayerGradients> batch_gradients(const Network& net, std::span<const Batch> batches);

// Second-moment statistics of batch-mean gradients over K batches.
class GradientCovariance {
 public:
  GradientCovariance(const Network& net, std::span<const Batch> batches);
  GradientCovariance(const Network& net, const DataModel& dm, std::size_t batch_size,
                     std::size_t n_batches, Rng& rng);

  std::size_t n_batches() const { return samples_.size(); }
  const std::vector<LayerGradients>& samples() const { return samples_; }

  Estimate layer_trace(std::size_t layer) const;                      // E Tr[g g^T]
  Estimate row_moment(std::size_t layer, std::size_t row) const;      // E |g_{layer,row,:}|^2
  Estimate col_moment(std::size_t layer, std::size_t col) const;      // E |g_{layer,:,col}|^2
  Estimate quadratic(const Generator& gen) const;                     // E g^T A~ g
  Matrix second_moment() const;

 private:
  template <typename F>
  Estimate reduce(F&& f) const;

  std::vector<LayerGradients> samples_;
};

Estimate master_balance_residual(const Network& net, std::span<const Batch> batches,
                                 const Generator& gen, const EntropicConfig& cfg);
// -eta E[g^T A~ g] + 4 gamma theta^T A~ theta over cfg.n_batches fresh batches.
Estimate master_balance_residual(const Network& net, const DataModel& dm, const Generator& gen,
                                 const EntropicConfig& cfg, Rng& rng);

// eta (E Tr g_i g_i^T - E Tr g_j g_j^T) - 4 gamma (Tr W_i W_i^T - Tr W_j W_j^T)
double layer_balance_residual(const GradientCovariance& grads, const std::vector<Matrix>& weights,
                              std::size_t i, std::size_t j, const EntropicConfig& cfg);
double neuron_balance_residual(const GradientCovariance& grads, const std::vector<Matrix>& weights,
                               std::size_t layer, std::size_t neuron, const EntropicConfig& cfg);
double polynomial_balance_residual(const GradientCovariance& grads,
                                   const std::vector<Matrix>& weights, std::size_t layer,
                                   std::size_t neuron, int degree, const EntropicConfig& cfg);

// |T_i - T_j| / (T_i + T_j) on gradient traces.
double normalized_layer_imbalance(const GradientCovariance& grads, std::size_t i, std::size_t j);
// sum_j |in_j - d out_j| / sum_j (in_j + d out_j) over the hidden neurons of a layer.
double normalized_neuron_imbalance(const GradientCovariance& grads, std::size_t layer, double degree = 1.0);

struct MatrixResidual {
  Matrix matrix;
  double frobenius = 0.0;
  double normalized = 0.0;
};

// eta E[G_W^T G_W - G_U G_U^T] - 4 gamma (W^T W - U U^T); normalized by
// eta E|G_W|^2 + 4 gamma |W|^2.
MatrixResidual wu_alignment_residual(std::span<const Matrix> gw, std::span<const Matrix> gu,
                                     const Matrix& w, const Matrix& u, const EntropicConfig& cfg);

// W1 E[G_V^T G_V] W1^T - W2^T E[G_V G_V^T] W2 for V = W2 W1; normalized by the
// trace of the first term.
MatrixResidual attention_eq11_residual(const Matrix& w1, const Matrix& w2,
                                       std::span<const Matrix> gv);

struct OrbitScan {
  std::vector<double> lambdas;
  std::vector<FreeEnergyParts> values;
  double argmin = 0.0;
};

OrbitScan free_energy_orbit_scan(const Network& net, const FreeEnergyEvaluator& eval,
                                 const Generator& gen, std::span<const double> lambdas);
OrbitScan free_energy_orbit_scan(const Network& net, const DataModel& dm, const Generator& gen,
                                 const EntropicConfig& cfg, Rng& rng,
                                 std::span<const double> lambdas);

// max |l(x, exp(lambda A) theta) - l(x, theta)| over Gaussian probes and lambda in {+-0.3, +-0.7}.
double check_symmetry(const Network& net, const Generator& gen, std::size_t probes, Rng& rng);

}  // namespace entropic

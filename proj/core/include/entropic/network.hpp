#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "entropic/batch.hpp"
#include "entropic/matrix.hpp"
#include "entropic/rng.hpp"

namespace entropic {

enum class Arch { DeepLinear, Mlp, AttentionToy, ScaleInvariantToy };

std::string to_string(Arch a);
Arch arch_from_string(const std::string& s);

struct Activation {
  enum class Kind { Identity, Relu, Tanh, Poly };
  Kind kind = Kind::Identity;
  int degree = 1;

  static Activation identity() { return {}; }
  static Activation relu() { return {Kind::Relu, 1}; }
  static Activation tanh() { return {Kind::Tanh, 1}; }
  static Activation poly(int d);

  double apply(double h) const;
  // ReLU'(0) = 0.
  double derivative(double h) const;
  std::string name() const;
  static Activation from_name(const std::string& name, int degree = 1);
};

struct ParamIndex {
  std::size_t layer;
  std::size_t row;
  std::size_t col;
};

// Flat index <-> (layer, row, col). Layers are laid out in order, each row-major.
class ParamLayout {
 public:
  ParamLayout() = default;
  explicit ParamLayout(const std::vector<Matrix>& weights);

  std::size_t size() const { return total_; }
  std::size_t layers() const { return shapes_.size(); }
  std::size_t offset(std::size_t layer) const { return offsets_.at(layer); }
  std::size_t layer_size(std::size_t layer) const;
  std::size_t flat(std::size_t layer, std::size_t row, std::size_t col) const;
  ParamIndex locate(std::size_t flat_index) const;

 private:
  std::vector<std::pair<std::size_t, std::size_t>> shapes_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

using LayerGradients = std::vector<Matrix>;

// DeepLinear / Mlp compute M1 f(M2 M3 x) with f = W_D s(W_{D-1} ... s(W_1 z)).
// AttentionToy holds {U (d x r), V (r x d), w (d x 1)} and computes (x^T U V x)(w^T x).
// ScaleInvariantToy holds {W} and computes (W / |W|_F) x.
class Network {
 public:
  Network() = default;
  Network(Arch arch, std::vector<Matrix> weights, Activation act = {});

  // widths = {d_in, h_1, ..., d_out}; entries ~ N(0, init_scale^2 / fan_in).
  static Network deep_linear(const std::vector<std::size_t>& widths, Rng& rng,
                             double init_scale = 1.0);
  static Network mlp(const std::vector<std::size_t>& widths, Activation act, Rng& rng,
                     double init_scale = 1.0);
  static Network attention_toy(std::size_t d, std::size_t r, Rng& rng, double init_scale = 1.0);
  static Network scale_invariant(std::size_t d_out, std::size_t d_in, Rng& rng);

  Arch arch() const { return arch_; }
  const Activation& activation() const { return act_; }
  std::size_t depth() const { return weights_.size(); }
  const std::vector<Matrix>& weights() const { return weights_; }
  std::vector<Matrix>& weights() { return weights_; }
  const Matrix& weight(std::size_t i) const { return weights_.at(i); }
  Matrix& weight(std::size_t i) { return weights_.at(i); }

  void set_embeddings(std::optional<Matrix> m1, std::optional<Matrix> m2, std::optional<Matrix> m3);
  const std::optional<Matrix>& m1() const { return m1_; }
  const std::optional<Matrix>& m2() const { return m2_; }
  const std::optional<Matrix>& m3() const { return m3_; }
  bool has_embeddings() const { return m1_ || m2_ || m3_; }
  // M2 M3, or nullopt when both are absent.
  const std::optional<Matrix>& input_map() const { return input_map_; }

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t param_count() const { return layout_.size(); }
  const ParamLayout& layout() const { return layout_; }

  std::vector<double> flatten() const;
  void assign(std::span<const double> theta);
  double param_norm() const;

  nlohmann::json descriptor() const;
  static Network from_descriptor(const nlohmann::json& desc, std::vector<Matrix> matrices);

 private:
  void validate() const;

  Arch arch_ = Arch::DeepLinear;
  Activation act_;
  std::vector<Matrix> weights_;
  std::optional<Matrix> m1_, m2_, m3_, input_map_;
  ParamLayout layout_;
};

void save_checkpoint(const Network& net, const std::filesystem::path& stem);
Network load_checkpoint(const std::filesystem::path& stem);

struct ForwardResult {
  std::vector<double> output;
  // Post-activation value of layers 1..D-1 followed by the output.
  std::vector<std::vector<double>> hidden;
};

ForwardResult forward(const Network& net, std::span<const double> x);
Matrix forward_batch(const Network& net, const Matrix& x);
// Rows are h^L(x) for each sample; L in 1..D, where L = D is f before M1.
Matrix hidden_batch(const Network& net, const Matrix& x, std::size_t layer);

// Squared error without the 1/2 factor.
double per_sample_loss(const Network& net, std::span<const double> x, std::span<const double> y);
double batch_loss(const Network& net, const Batch& batch);
std::vector<double> per_sample_losses(const Network& net, const Batch& batch);

struct LossAndGradient {
  double loss = 0.0;
  LayerGradients grads;
};

LayerGradients batch_gradient(const Network& net, const Batch& batch);
LossAndGradient loss_and_gradient(const Network& net, const Batch& batch);
std::vector<double> flat_gradient(const Network& net, const Batch& batch);
std::vector<double> flatten(const LayerGradients& g);

// Central difference of analytic gradients, h = 1e-4 (1 + |theta|) / |v|.
std::vector<double> hvp(const Network& net, const Batch& batch, std::span<const double> direction);
// Exact Hessian action for an embedding-free two-layer DeepLinear network.
std::vector<double> hvp_exact_two_layer_linear(const Network& net, const Batch& batch,
                                               std::span<const double> direction);

}  // namespace entropic

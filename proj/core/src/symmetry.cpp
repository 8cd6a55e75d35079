#include "entropic/symmetry.hpp"

#include <algorithm>
#include <cmath>

namespace entropic {

Generator Generator::diagonal(std::size_t dim, std::vector<std::pair<std::size_t, double>> entries) {
  Generator g;
  g.dim_ = dim;
  std::sort(entries.begin(), entries.end());
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (entries[k].first >= dim) throw DimensionError("generator index out of range");
    if (k && entries[k].first == entries[k - 1].first)
      throw std::invalid_argument("duplicate generator index");
  }
  g.entries_ = std::move(entries);
  return g;
}

Matrix Generator::symmetric_part() const {
  if (sym_) return *sym_;
  Matrix m(dim_, dim_);
  for (const auto& [i, a] : entries_) m(i, i) = a;
  return m;
}

Generator Generator::dense(Matrix a) {
  if (a.rows() != a.cols()) throw DimensionError("generator must be square");
  Generator g;
  g.dim_ = a.rows();
  g.sym_ = symmetrize(a);
  g.dense_ = std::move(a);
  return g;
}

Generator Generator::layer_rescaling(const Network& net, std::size_t i, std::size_t j) {
  if (i == j || i >= net.depth() || j >= net.depth())
    throw std::invalid_argument("layer rescaling needs two distinct valid layers");
  const ParamLayout& lay = net.layout();
  std::vector<std::pair<std::size_t, double>> e;
  for (std::size_t k = 0; k < lay.layer_size(i); ++k) e.emplace_back(lay.offset(i) + k, 1.0);
  for (std::size_t k = 0; k < lay.layer_size(j); ++k) e.emplace_back(lay.offset(j) + k, -1.0);
  return diagonal(lay.size(), std::move(e));
}

Generator Generator::neuron_rescaling(const Network& net, std::size_t layer, std::size_t neuron,
                                      double out_factor) {
  if (layer + 1 >= net.depth()) throw std::invalid_argument("neuron rescaling needs a hidden layer");
  const Matrix& win = net.weight(layer);
  const Matrix& wout = net.weight(layer + 1);
  if (neuron >= win.rows()) throw DimensionError("neuron index out of range");
  const ParamLayout& lay = net.layout();
  std::vector<std::pair<std::size_t, double>> e;
  for (std::size_t c = 0; c < win.cols(); ++c) e.emplace_back(lay.flat(layer, neuron, c), 1.0);
  for (std::size_t r = 0; r < wout.rows(); ++r)
    e.emplace_back(lay.flat(layer + 1, r, neuron), -out_factor);
  return diagonal(lay.size(), std::move(e));
}

std::vector<double> Generator::apply_symmetric(std::span<const double> v) const {
  if (v.size() != dim_) throw DimensionError("generator dimension mismatch");
  if (dense_) return matvec(*sym_, v);
  std::vector<double> out(dim_, 0.0);
  for (const auto& [i, a] : entries_) out[i] = a * v[i];
  return out;
}

double Generator::quadratic(std::span<const double> v) const {
  if (v.size() != dim_) throw DimensionError("generator dimension mismatch");
  if (dense_) return dot(v, matvec(*sym_, v));
  double s = 0.0;
  for (const auto& [i, a] : entries_) s += a * v[i] * v[i];
  return s;
}

std::vector<double> Generator::exp_apply(double lambda, std::span<const double> theta) const {
  if (theta.size() != dim_) throw DimensionError("generator dimension mismatch");
  if (dense_) return matvec(matrix_exp(*dense_ * lambda), theta);
  std::vector<double> out(theta.begin(), theta.end());
  for (const auto& [i, a] : entries_) {
    const double f = std::exp(lambda * a);
    if (!std::isfinite(f)) throw NumericalError("orbit scaling overflow");
    out[i] *= f;
  }
  return out;
}

Network Generator::act(const Network& net, double lambda) const {
  const auto t = exp_apply(lambda, net.flatten());
  if (!std::all_of(t.begin(), t.end(), [](double v) { return std::isfinite(v); }))
    throw NumericalError("orbit point overflow");
  Network out = net;
  out.assign(t);
  return out;
}

Matrix matrix_exp(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("matrix_exp needs a square matrix");
  const double n = frobenius_norm(a);
  int s = 0;
  if (n > 0.5) s = static_cast<int>(std::ceil(std::log2(n / 0.5)));
  const Matrix b = a * std::ldexp(1.0, -s);
  Matrix result = Matrix::identity(a.rows());
  Matrix term = Matrix::identity(a.rows());
  for (int k = 1; k <= 20; ++k) {
    term = term * b;
    term *= 1.0 / k;
    result += term;
  }
  for (int i = 0; i < s; ++i) result = result * result;
  return result;
}

std::vector<LayerGradients> batch_gradients(const Network& net, std::span<const Batch> batches) {
  std::vector<LayerGradients> out;
  out.reserve(batches.size());
  for (const auto& b : batches) out.push_back(batch_gradient(net, b));
  return out;
}

GradientCovariance::GradientCovariance(const Network& net, std::span<const Batch> batches)
    : samples_(batch_gradients(net, batches)) {
  if (samples_.empty()) throw std::invalid_argument("gradient covariance needs at least one batch");
}

GradientCovariance::GradientCovariance(const Network& net, const DataModel& dm,
                                       std::size_t batch_size, std::size_t n_batches, Rng& rng)
    : GradientCovariance(net, sample_batches(dm, rng, batch_size, n_batches)) {}

template <typename F>
Estimate GradientCovariance::reduce(F&& f) const {
  std::vector<double> v(samples_.size());
  for (std::size_t k = 0; k < samples_.size(); ++k) v[k] = f(samples_[k]);
  return mean_estimate(v);
}

Estimate GradientCovariance::layer_trace(std::size_t layer) const {
  return reduce([&](const LayerGradients& g) { return frobenius_sq(g.at(layer)); });
}

Estimate GradientCovariance::row_moment(std::size_t layer, std::size_t row) const {
  return reduce([&](const LayerGradients& g) {
    const auto r = g.at(layer).row(row);
    return dot(r, r);
  });
}

Estimate GradientCovariance::col_moment(std::size_t layer, std::size_t col) const {
  return reduce([&](const LayerGradients& g) {
    const Matrix& m = g.at(layer);
    double s = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) s += m(r, col) * m(r, col);
    return s;
  });
}

Estimate GradientCovariance::quadratic(const Generator& gen) const {
  return reduce([&](const LayerGradients& g) { return gen.quadratic(flatten(g)); });
}

Matrix GradientCovariance::second_moment() const {
  const std::size_t p = flatten(samples_.front()).size();
  Matrix m(p, p);
  for (const auto& g : samples_) {
    const auto f = flatten(g);
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < p; ++j) m(i, j) += f[i] * f[j];
  }
  m *= 1.0 / static_cast<double>(samples_.size());
  return m;
}

namespace {

double scalar_eta(const EntropicConfig& cfg) {
  if (!cfg.lr.is_scalar()) throw std::invalid_argument("balance residuals need a scalar learning rate");
  return cfg.lr.scalar();
}

}  // namespace

Estimate master_balance_residual(const Network& net, std::span<const Batch> batches,
                                 const Generator& gen, const EntropicConfig& cfg) {
  const double eta = scalar_eta(cfg);
  if (gen.dim() != net.param_count()) throw DimensionError("generator does not match the network");
  const GradientCovariance cov(net, batches);
  const Estimate q = cov.quadratic(gen);
  const double w = gen.quadratic(net.flatten());
  return {-eta * q.value + 4.0 * cfg.weight_decay * w, eta * q.std_error};
}

Estimate master_balance_residual(const Network& net, const DataModel& dm, const Generator& gen,
                                 const EntropicConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto batches = sample_batches(dm, rng, cfg.batch_size, cfg.n_batches);
  return master_balance_residual(net, batches, gen, cfg);
}

double layer_balance_residual(const GradientCovariance& grads, const std::vector<Matrix>& weights,
                              std::size_t i, std::size_t j, const EntropicConfig& cfg) {
  if (i == j || i >= weights.size() || j >= weights.size())
    throw std::invalid_argument("layer balance needs two distinct valid layers");
  const double eta = scalar_eta(cfg);
  return eta * (grads.layer_trace(i).value - grads.layer_trace(j).value) -
         4.0 * cfg.weight_decay * (frobenius_sq(weights[i]) - frobenius_sq(weights[j]));
}

double polynomial_balance_residual(const GradientCovariance& grads,
                                   const std::vector<Matrix>& weights, std::size_t layer,
                                   std::size_t neuron, int degree, const EntropicConfig& cfg) {
  if (degree < 1) throw std::invalid_argument("activation degree must be >= 1");
  if (layer + 1 >= weights.size()) throw std::invalid_argument("output-layer neurons have no outgoing weights");
  if (neuron >= weights[layer].rows()) throw DimensionError("neuron index out of range");
  const double eta = scalar_eta(cfg);
  const double d = degree;
  const double g_in = grads.row_moment(layer, neuron).value;
  const double g_out = grads.col_moment(layer + 1, neuron).value;
  const auto win = weights[layer].row(neuron);
  double w_out = 0.0;
  for (std::size_t r = 0; r < weights[layer + 1].rows(); ++r)
    w_out += weights[layer + 1](r, neuron) * weights[layer + 1](r, neuron);
  return eta * (g_in - d * g_out) - 4.0 * cfg.weight_decay * (dot(win, win) - d * w_out);
}

double neuron_balance_residual(const GradientCovariance& grads, const std::vector<Matrix>& weights,
                               std::size_t layer, std::size_t neuron, const EntropicConfig& cfg) {
  return polynomial_balance_residual(grads, weights, layer, neuron, 1, cfg);
}

double normalized_layer_imbalance(const GradientCovariance& grads, std::size_t i, std::size_t j) {
  const double a = grads.layer_trace(i).value, b = grads.layer_trace(j).value;
  return a + b > 0.0 ? std::abs(a - b) / (a + b) : 0.0;
}

double normalized_neuron_imbalance(const GradientCovariance& grads, std::size_t layer, double degree) {
  const auto& g = grads.samples().front();
  if (layer + 1 >= g.size()) throw std::invalid_argument("output-layer neurons have no outgoing weights");
  double num = 0.0, den = 0.0;
  for (std::size_t j = 0; j < g[layer].rows(); ++j) {
    const double a = grads.row_moment(layer, j).value;
    const double b = degree * grads.col_moment(layer + 1, j).value;
    num += std::abs(a - b);
    den += a + b;
  }
  return den > 0.0 ? num / den : 0.0;
}

MatrixResidual wu_alignment_residual(std::span<const Matrix> gw, std::span<const Matrix> gu,
                                     const Matrix& w, const Matrix& u, const EntropicConfig& cfg) {
  if (gw.empty() || gw.size() != gu.size()) throw DimensionError("need matching G_W and G_U samples");
  if (w.cols() != u.rows()) throw DimensionError("W and U do not compose");
  const double eta = scalar_eta(cfg);
  const std::size_t r = w.cols();
  Matrix a(r, r), b(r, r);
  double gw_sq = 0.0;
  for (std::size_t k = 0; k < gw.size(); ++k) {
    require_same_shape(gw[k], w, "G_W");
    require_same_shape(gu[k], u, "G_U");
    a += matmul_tn(gw[k], gw[k]);
    b += matmul_nt(gu[k], gu[k]);
    gw_sq += frobenius_sq(gw[k]);
  }
  const double inv = 1.0 / static_cast<double>(gw.size());
  MatrixResidual res;
  res.matrix = (a - b) * (eta * inv) - (matmul_tn(w, w) - matmul_nt(u, u)) * (4.0 * cfg.weight_decay);
  res.frobenius = frobenius_norm(res.matrix);
  const double scale = eta * gw_sq * inv + 4.0 * cfg.weight_decay * frobenius_sq(w);
  res.normalized = scale > 0.0 ? res.frobenius / scale : 0.0;
  return res;
}

MatrixResidual attention_eq11_residual(const Matrix& w1, const Matrix& w2, std::span<const Matrix> gv) {
  if (gv.empty()) throw DimensionError("need G_V samples");
  if (w2.cols() != w1.rows()) throw DimensionError("W2 W1 does not compose");
  Matrix a(w1.cols(), w1.cols()), b(w2.rows(), w2.rows());
  for (const auto& g : gv) {
    if (g.rows() != w2.rows() || g.cols() != w1.cols()) throw DimensionError("G_V must match W2 W1");
    a += matmul_tn(g, g);
    b += matmul_nt(g, g);
  }
  const double inv = 1.0 / static_cast<double>(gv.size());
  a *= inv;
  b *= inv;
  const Matrix left = w1 * matmul_nt(a, w1);
  const Matrix right = matmul_tn(w2, b * w2);
  MatrixResidual res;
  res.matrix = left - right;
  res.frobenius = frobenius_norm(res.matrix);
  const double scale = trace(left);
  res.normalized = scale > 0.0 ? res.frobenius / scale : 0.0;
  return res;
}

OrbitScan free_energy_orbit_scan(const Network& net, const FreeEnergyEvaluator& eval,
                                 const Generator& gen, std::span<const double> lambdas) {
  if (lambdas.empty()) throw std::invalid_argument("orbit scan needs at least one lambda");
  OrbitScan scan;
  scan.lambdas.assign(lambdas.begin(), lambdas.end());
  scan.values.reserve(lambdas.size());
  double best = INFINITY;
  for (double lam : lambdas) {
    scan.values.push_back(eval.evaluate(gen.act(net, lam)));
    if (scan.values.back().total.value < best) {
      best = scan.values.back().total.value;
      scan.argmin = lam;
    }
  }
  return scan;
}

OrbitScan free_energy_orbit_scan(const Network& net, const DataModel& dm, const Generator& gen,
                                 const EntropicConfig& cfg, Rng& rng,
                                 std::span<const double> lambdas) {
  const FreeEnergyEvaluator eval(dm, cfg, rng);
  return free_energy_orbit_scan(net, eval, gen, lambdas);
}

double check_symmetry(const Network& net, const Generator& gen, std::size_t probes, Rng& rng) {
  const double lambdas[] = {-0.7, -0.3, 0.3, 0.7};
  Batch b{gaussian_matrix(rng, probes, net.input_dim()), gaussian_matrix(rng, probes, net.output_dim())};
  const auto base = per_sample_losses(net, b);
  double worst = 0.0;
  for (double lam : lambdas) {
    const auto moved = per_sample_losses(gen.act(net, lam), b);
    for (std::size_t i = 0; i < base.size(); ++i) worst = std::max(worst, std::abs(moved[i] - base[i]));
  }
  return worst;
}

}  // namespace entropic

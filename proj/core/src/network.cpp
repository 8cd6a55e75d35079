#include "entropic/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "entropic/matrix_io.hpp"

namespace entropic {

Batch Batch::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw DimensionError("batch slice out of range");
  const std::size_t n = end - begin;
  Matrix xs(n, x.cols()), ys(n, y.cols());
  std::copy(x.data().begin() + begin * x.cols(), x.data().begin() + end * x.cols(), xs.data().begin());
  std::copy(y.data().begin() + begin * y.cols(), y.data().begin() + end * y.cols(), ys.data().begin());
  return {std::move(xs), std::move(ys)};
}

std::string to_string(Arch a) {
  switch (a) {
    case Arch::DeepLinear: return "deep_linear";
    case Arch::Mlp: return "mlp";
    case Arch::AttentionToy: return "attention_toy";
    case Arch::ScaleInvariantToy: return "scale_invariant";
  }
  return "unknown";
}

Arch arch_from_string(const std::string& s) {
  if (s == "deep_linear") return Arch::DeepLinear;
  if (s == "mlp") return Arch::Mlp;
  if (s == "attention_toy") return Arch::AttentionToy;
  if (s == "scale_invariant") return Arch::ScaleInvariantToy;
  throw std::invalid_argument("unknown architecture '" + s + "'");
}

Activation Activation::poly(int d) {
  if (d < 1) throw std::invalid_argument("Poly(d) requires d >= 1");
  return {Kind::Poly, d};
}

double Activation::apply(double h) const {
  switch (kind) {
    case Kind::Identity: return h;
    case Kind::Relu: return h > 0.0 ? h : 0.0;
    case Kind::Tanh: return std::tanh(h);
    case Kind::Poly: {
      double r = 1.0;
      for (int i = 0; i < degree; ++i) r *= h;
      return r;
    }
  }
  return h;
}

double Activation::derivative(double h) const {
  switch (kind) {
    case Kind::Identity: return 1.0;
    case Kind::Relu: return h > 0.0 ? 1.0 : 0.0;
    case Kind::Tanh: {
      const double t = std::tanh(h);
      return 1.0 - t * t;
    }
    case Kind::Poly: {
      double r = static_cast<double>(degree);
      for (int i = 1; i < degree; ++i) r *= h;
      return r;
    }
  }
  return 1.0;
}

std::string Activation::name() const {
  switch (kind) {
    case Kind::Identity: return "identity";
    case Kind::Relu: return "relu";
    case Kind::Tanh: return "tanh";
    case Kind::Poly: return "poly";
  }
  return "identity";
}

Activation Activation::from_name(const std::string& name, int degree) {
  if (name == "identity" || name == "linear") return identity();
  if (name == "relu") return relu();
  if (name == "tanh") return tanh();
  if (name == "poly") return poly(degree);
  throw std::invalid_argument("unknown activation '" + name + "'");
}

ParamLayout::ParamLayout(const std::vector<Matrix>& weights) {
  for (const auto& w : weights) {
    offsets_.push_back(total_);
    shapes_.emplace_back(w.rows(), w.cols());
    total_ += w.size();
  }
}

std::size_t ParamLayout::layer_size(std::size_t layer) const {
  const auto& s = shapes_.at(layer);
  return s.first * s.second;
}

std::size_t ParamLayout::flat(std::size_t layer, std::size_t row, std::size_t col) const {
  const auto& s = shapes_.at(layer);
  if (row >= s.first || col >= s.second) throw DimensionError("parameter index out of range");
  return offsets_[layer] + row * s.second + col;
}

ParamIndex ParamLayout::locate(std::size_t flat_index) const {
  if (flat_index >= total_) throw DimensionError("flat parameter index out of range");
  std::size_t layer = shapes_.size() - 1;
  while (offsets_[layer] > flat_index) --layer;
  const std::size_t local = flat_index - offsets_[layer];
  return {layer, local / shapes_[layer].second, local % shapes_[layer].second};
}

namespace {

Matrix init_weight(Rng& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix w(rows, cols);
  const double sd = scale / std::sqrt(static_cast<double>(cols));
  for (double& v : w.data()) v = sd * rng.normal();
  return w;
}

bool is_layered(Arch a) { return a == Arch::DeepLinear || a == Arch::Mlp; }

}  // namespace

Network::Network(Arch arch, std::vector<Matrix> weights, Activation act)
    : arch_(arch), act_(arch == Arch::DeepLinear ? Activation::identity() : act),
      weights_(std::move(weights)), layout_(weights_) {
  validate();
}

void Network::validate() const {
  if (weights_.empty()) throw DimensionError("network needs at least one weight matrix");
  switch (arch_) {
    case Arch::DeepLinear:
    case Arch::Mlp:
      for (std::size_t i = 1; i < weights_.size(); ++i)
        if (weights_[i].cols() != weights_[i - 1].rows())
          throw DimensionError("layer " + std::to_string(i) + " does not compose: " +
                               shape_string(weights_[i]) + " after " + shape_string(weights_[i - 1]));
      break;
    case Arch::AttentionToy: {
      if (weights_.size() != 3) throw DimensionError("attention toy needs {U, V, w}");
      const auto& u = weights_[0];
      const auto& v = weights_[1];
      const auto& w = weights_[2];
      if (v.rows() != u.cols() || v.cols() != u.rows() || w.rows() != u.rows() || w.cols() != 1)
        throw DimensionError("attention toy shapes must be U: d x r, V: r x d, w: d x 1");
      break;
    }
    case Arch::ScaleInvariantToy:
      if (weights_.size() != 1) throw DimensionError("scale-invariant toy has one weight matrix");
      break;
  }
}

Network Network::deep_linear(const std::vector<std::size_t>& widths, Rng& rng, double init_scale) {
  if (widths.size() < 2) throw DimensionError("deep_linear needs at least two widths");
  std::vector<Matrix> ws;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    ws.push_back(init_weight(rng, widths[i + 1], widths[i], init_scale));
  return Network(Arch::DeepLinear, std::move(ws));
}

Network Network::mlp(const std::vector<std::size_t>& widths, Activation act, Rng& rng,
                     double init_scale) {
  if (widths.size() < 2) throw DimensionError("mlp needs at least two widths");
  std::vector<Matrix> ws;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    ws.push_back(init_weight(rng, widths[i + 1], widths[i], init_scale));
  return Network(Arch::Mlp, std::move(ws), act);
}

Network Network::attention_toy(std::size_t d, std::size_t r, Rng& rng, double init_scale) {
  std::vector<Matrix> ws;
  ws.push_back(init_weight(rng, d, r, init_scale * std::sqrt(static_cast<double>(r) / d)));
  ws.push_back(init_weight(rng, r, d, init_scale * std::sqrt(static_cast<double>(d) / r)));
  ws.push_back(init_weight(rng, d, 1, init_scale / std::sqrt(static_cast<double>(d))));
  return Network(Arch::AttentionToy, std::move(ws));
}

Network Network::scale_invariant(std::size_t d_out, std::size_t d_in, Rng& rng) {
  return Network(Arch::ScaleInvariantToy, {init_weight(rng, d_out, d_in, 1.0)});
}

void Network::set_embeddings(std::optional<Matrix> m1, std::optional<Matrix> m2,
                             std::optional<Matrix> m3) {
  if (!is_layered(arch_) && (m1 || m2 || m3))
    throw std::invalid_argument("embeddings apply only to DeepLinear and Mlp networks");
  const std::size_t din = weights_.front().cols();
  const std::size_t dout = weights_.back().rows();
  if (m1 && m1->cols() != dout) throw DimensionError("M1 must have " + std::to_string(dout) + " columns");
  if (m2 && (m2->rows() != din || m2->cols() != din)) throw DimensionError("M2 must be square of input width");
  if (m3 && (m3->rows() != din || m3->cols() != din)) throw DimensionError("M3 must be square of input width");
  m1_ = std::move(m1);
  m2_ = std::move(m2);
  m3_ = std::move(m3);
  if (m2_ && m3_) input_map_ = *m2_ * *m3_;
  else if (m2_) input_map_ = m2_;
  else if (m3_) input_map_ = m3_;
  else input_map_.reset();
}

std::size_t Network::input_dim() const {
  switch (arch_) {
    case Arch::AttentionToy: return weights_[0].rows();
    default: return weights_.front().cols();
  }
}

std::size_t Network::output_dim() const {
  switch (arch_) {
    case Arch::AttentionToy: return 1;
    case Arch::ScaleInvariantToy: return weights_[0].rows();
    default: return m1_ ? m1_->rows() : weights_.back().rows();
  }
}

std::vector<double> Network::flatten() const {
  std::vector<double> theta;
  theta.reserve(layout_.size());
  for (const auto& w : weights_) theta.insert(theta.end(), w.data().begin(), w.data().end());
  return theta;
}

void Network::assign(std::span<const double> theta) {
  if (theta.size() != layout_.size())
    throw DimensionError("assign: expected " + std::to_string(layout_.size()) + " parameters");
  std::size_t k = 0;
  for (auto& w : weights_)
    for (double& v : w.data()) v = theta[k++];
}

double Network::param_norm() const {
  double s = 0.0;
  for (const auto& w : weights_) s += frobenius_sq(w);
  return std::sqrt(s);
}

nlohmann::json Network::descriptor() const {
  nlohmann::json d;
  d["arch"] = to_string(arch_);
  d["activation"] = {{"kind", act_.name()}, {"degree", act_.degree}};
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& w : weights_) shapes.push_back({w.rows(), w.cols()});
  d["shapes"] = shapes;
  d["embeddings"] = {{"m1", m1_.has_value()}, {"m2", m2_.has_value()}, {"m3", m3_.has_value()}};
  return d;
}

Network Network::from_descriptor(const nlohmann::json& desc, std::vector<Matrix> matrices) {
  const auto shapes = desc.at("shapes");
  if (matrices.size() < shapes.size()) throw DimensionError("checkpoint has too few matrices");
  std::vector<Matrix> ws(matrices.begin(), matrices.begin() + static_cast<std::ptrdiff_t>(shapes.size()));
  for (std::size_t i = 0; i < ws.size(); ++i)
    if (ws[i].rows() != shapes[i][0].get<std::size_t>() || ws[i].cols() != shapes[i][1].get<std::size_t>())
      throw DimensionError("checkpoint shape mismatch at layer " + std::to_string(i));
  const auto& a = desc.at("activation");
  Network net(arch_from_string(desc.at("arch")), std::move(ws),
              Activation::from_name(a.at("kind"), a.value("degree", 1)));
  std::size_t k = shapes.size();
  std::optional<Matrix> m[3];
  const char* names[3] = {"m1", "m2", "m3"};
  const auto emb = desc.value("embeddings", nlohmann::json::object());
  for (int i = 0; i < 3; ++i) {
    if (emb.value(names[i], false)) {
      if (k >= matrices.size()) throw DimensionError("checkpoint is missing embedding matrices");
      m[i] = matrices[k++];
    }
  }
  if (m[0] || m[1] || m[2]) net.set_embeddings(m[0], m[1], m[2]);
  return net;
}

void save_checkpoint(const Network& net, const std::filesystem::path& stem) {
  std::vector<Matrix> ms = net.weights();
  for (const auto* m : {&net.m1(), &net.m2(), &net.m3()})
    if (*m) ms.push_back(**m);
  write_matrices(std::filesystem::path(stem).concat(".bin"), ms);
  std::ofstream js(std::filesystem::path(stem).concat(".json"));
  js << net.descriptor().dump(2) << '\n';
}

Network load_checkpoint(const std::filesystem::path& stem) {
  std::ifstream js(std::filesystem::path(stem).concat(".json"));
  if (!js) throw std::runtime_error("cannot open checkpoint descriptor for " + stem.string());
  nlohmann::json desc;
  js >> desc;
  return Network::from_descriptor(desc, read_matrices(std::filesystem::path(stem).concat(".bin")));
}

namespace {

struct LayeredTrace {
  std::vector<Matrix> act;  // act[0] = network input z, act[k] = output of layer k
  std::vector<Matrix> pre;  // pre[k] = pre-activation of layer k+1
  Matrix out;
};

LayeredTrace layered_forward(const Network& net, const Matrix& x) {
  const auto& ws = net.weights();
  const bool linear = net.activation().kind == Activation::Kind::Identity;
  LayeredTrace t;
  t.act.reserve(ws.size() + 1);
  t.act.push_back(net.input_map() ? matmul_nt(x, *net.input_map()) : x);
  for (std::size_t k = 0; k < ws.size(); ++k) {
    Matrix pre = matmul_nt(t.act.back(), ws[k]);
    if (k + 1 < ws.size() && !linear) {
      Matrix a = pre;
      for (double& v : a.data()) v = net.activation().apply(v);
      t.pre.push_back(std::move(pre));
      t.act.push_back(std::move(a));
    } else {
      t.pre.push_back(pre);
      t.act.push_back(std::move(pre));
    }
  }
  t.out = net.m1() ? matmul_nt(t.act.back(), *net.m1()) : t.act.back();
  return t;
}

void check_input(const Network& net, const Matrix& x) {
  if (x.cols() != net.input_dim())
    throw DimensionError("input has " + std::to_string(x.cols()) + " features, network expects " +
                         std::to_string(net.input_dim()));
}

void check_batch(const Network& net, const Batch& b) {
  check_input(net, b.x);
  if (b.y.rows() != b.x.rows()) throw DimensionError("batch X and Y row counts differ");
  if (b.y.cols() != net.output_dim())
    throw DimensionError("labels have " + std::to_string(b.y.cols()) + " columns, network outputs " +
                         std::to_string(net.output_dim()));
}

struct AttentionTrace {
  Matrix xu, vx;
  std::vector<double> s, t;
  Matrix out;
};

AttentionTrace attention_forward(const Network& net, const Matrix& x) {
  AttentionTrace a;
  a.xu = x * net.weight(0);
  a.vx = matmul_nt(x, net.weight(1));
  const Matrix xw = x * net.weight(2);
  const std::size_t n = x.rows();
  a.s.assign(n, 0.0);
  a.t.assign(n, 0.0);
  a.out = Matrix(n, 1);
  for (std::size_t b = 0; b < n; ++b) {
    a.s[b] = dot(a.xu.row(b), a.vx.row(b));
    a.t[b] = xw(b, 0);
    a.out(b, 0) = a.s[b] * a.t[b];
  }
  return a;
}

Matrix scale_invariant_normalized(const Network& net) {
  const double n = frobenius_norm(net.weight(0));
  if (n == 0.0) throw NumericalError("scale-invariant toy with zero weights");
  return net.weight(0) * (1.0 / n);
}

double mean_sq_residual(const Matrix& r) { return r.rows() ? frobenius_sq(r) / r.rows() : 0.0; }

}  // namespace

Matrix forward_batch(const Network& net, const Matrix& x) {
  check_input(net, x);
  switch (net.arch()) {
    case Arch::AttentionToy: return attention_forward(net, x).out;
    case Arch::ScaleInvariantToy: return matmul_nt(x, scale_invariant_normalized(net));
    default: return layered_forward(net, x).out;
  }
}

Matrix hidden_batch(const Network& net, const Matrix& x, std::size_t layer) {
  check_input(net, x);
  if (net.arch() != Arch::DeepLinear && net.arch() != Arch::Mlp)
    throw std::invalid_argument("hidden_batch applies to layered networks");
  if (layer < 1 || layer > net.depth()) throw DimensionError("hidden layer index out of range");
  return layered_forward(net, x).act[layer];
}

ForwardResult forward(const Network& net, std::span<const double> x) {
  const Matrix xm(1, x.size(), std::vector<double>(x.begin(), x.end()));
  check_input(net, xm);
  ForwardResult r;
  auto row0 = [](const Matrix& m) { return std::vector<double>(m.row(0).begin(), m.row(0).end()); };
  switch (net.arch()) {
    case Arch::AttentionToy:
      r.output = row0(attention_forward(net, xm).out);
      break;
    case Arch::ScaleInvariantToy:
      r.output = row0(matmul_nt(xm, scale_invariant_normalized(net)));
      break;
    default: {
      const LayeredTrace t = layered_forward(net, xm);
      for (std::size_t k = 1; k < t.act.size() - 1; ++k) r.hidden.push_back(row0(t.act[k]));
      r.output = row0(t.out);
    }
  }
  r.hidden.push_back(r.output);
  return r;
}

double per_sample_loss(const Network& net, std::span<const double> x, std::span<const double> y) {
  const auto out = forward(net, x).output;
  if (out.size() != y.size()) throw DimensionError("label dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (out[i] - y[i]) * (out[i] - y[i]);
  return s;
}

std::vector<double> per_sample_losses(const Network& net, const Batch& batch) {
  check_batch(net, batch);
  const Matrix r = forward_batch(net, batch.x) - batch.y;
  std::vector<double> out(r.rows());
  for (std::size_t b = 0; b < r.rows(); ++b) out[b] = dot(r.row(b), r.row(b));
  return out;
}

double batch_loss(const Network& net, const Batch& batch) {
  check_batch(net, batch);
  return mean_sq_residual(forward_batch(net, batch.x) - batch.y);
}

LossAndGradient loss_and_gradient(const Network& net, const Batch& batch) {
  check_batch(net, batch);
  if (batch.size() == 0) throw DimensionError("empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  LossAndGradient res;
  switch (net.arch()) {
    case Arch::DeepLinear:
    case Arch::Mlp: {
      const LayeredTrace t = layered_forward(net, batch.x);
      Matrix delta = t.out - batch.y;
      res.loss = mean_sq_residual(delta);
      delta *= 2.0;
      if (net.m1()) delta = delta * *net.m1();
      const auto& ws = net.weights();
      const bool linear = net.activation().kind == Activation::Kind::Identity;
      res.grads.resize(ws.size());
      for (std::size_t k = ws.size(); k-- > 0;) {
        res.grads[k] = matmul_tn(delta, t.act[k]);
        res.grads[k] *= inv_n;
        if (k == 0) break;
        delta = delta * ws[k];
        if (!linear) {
          const auto& pre = t.pre[k - 1].data();
          auto& d = delta.data();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] *= net.activation().derivative(pre[i]);
        }
      }
      break;
    }
    case Arch::AttentionToy: {
      const AttentionTrace a = attention_forward(net, batch.x);
      const std::size_t n = batch.size(), r = net.weight(0).cols();
      Matrix cvx = a.vx, cxu = a.xu;
      std::vector<double> ds(n);
      for (std::size_t b = 0; b < n; ++b) {
        const double resid = a.out(b, 0) - batch.y(b, 0);
        res.loss += resid * resid;
        const double delta = 2.0 * resid;
        const double c = delta * a.t[b];
        for (std::size_t j = 0; j < r; ++j) {
          cvx(b, j) *= c;
          cxu(b, j) *= c;
        }
        ds[b] = delta * a.s[b];
      }
      res.loss *= inv_n;
      res.grads.resize(3);
      res.grads[0] = matmul_tn(batch.x, cvx) * inv_n;
      res.grads[1] = matmul_tn(cxu, batch.x) * inv_n;
      res.grads[2] = Matrix::column(matvec_t(batch.x, ds)) * inv_n;
      break;
    }
    case Arch::ScaleInvariantToy: {
      const double nrm = frobenius_norm(net.weight(0));
      const Matrix what = scale_invariant_normalized(net);
      Matrix delta = matmul_nt(batch.x, what) - batch.y;
      res.loss = mean_sq_residual(delta);
      delta *= 2.0 * inv_n;
      Matrix ghat = matmul_tn(delta, batch.x);
      const double radial = frobenius_dot(ghat, what);
      ghat -= what * radial;
      res.grads = {ghat * (1.0 / nrm)};
      break;
    }
  }
  return res;
}

LayerGradients batch_gradient(const Network& net, const Batch& batch) {
  return loss_and_gradient(net, batch).grads;
}

std::vector<double> flatten(const LayerGradients& g) {
  std::vector<double> out;
  for (const auto& m : g) out.insert(out.end(), m.data().begin(), m.data().end());
  return out;
}

std::vector<double> flat_gradient(const Network& net, const Batch& batch) {
  return flatten(batch_gradient(net, batch));
}

std::vector<double> hvp(const Network& net, const Batch& batch, std::span<const double> direction) {
  if (direction.size() != net.param_count()) throw DimensionError("hvp direction has wrong length");
  const double vn = norm2(direction);
  if (vn == 0.0) throw std::invalid_argument("hvp: zero direction");
  const std::vector<double> theta = net.flatten();
  const double h = 1e-4 * (1.0 + norm2(theta)) / vn;
  std::vector<double> tp(theta), tm(theta);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    tp[i] += h * direction[i];
    tm[i] -= h * direction[i];
  }
  Network np = net, nm = net;
  np.assign(tp);
  nm.assign(tm);
  const auto gp = flat_gradient(np, batch);
  const auto gm = flat_gradient(nm, batch);
  std::vector<double> out(theta.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * h);
  return out;
}

std::vector<double> hvp_exact_two_layer_linear(const Network& net, const Batch& batch,
                                               std::span<const double> direction) {
  if (net.arch() != Arch::DeepLinear || net.depth() != 2 || net.has_embeddings())
    throw std::invalid_argument("exact hvp needs an embedding-free two-layer linear network");
  if (direction.size() != net.param_count()) throw DimensionError("hvp direction has wrong length");
  check_batch(net, batch);
  const Matrix& w1 = net.weight(0);
  const Matrix& w2 = net.weight(1);
  const std::size_t n1 = w1.size();
  Matrix a(w1.rows(), w1.cols(), std::vector<double>(direction.begin(), direction.begin() + n1));
  Matrix b(w2.rows(), w2.cols(), std::vector<double>(direction.begin() + n1, direction.end()));
  const double scale = 2.0 / static_cast<double>(batch.size());
  const Matrix h1 = matmul_nt(batch.x, w1);
  const Matrix r = matmul_nt(h1, w2) - batch.y;
  const Matrix xa = matmul_nt(batch.x, a);
  const Matrix dr = matmul_nt(xa, w2) + matmul_nt(h1, b);
  const Matrix dg2 = (matmul_tn(dr, h1) + matmul_tn(r, xa)) * scale;
  const Matrix dg1 = matmul_tn(dr * w2 + r * b, batch.x) * scale;
  std::vector<double> out(dg1.data());
  out.insert(out.end(), dg2.data().begin(), dg2.data().end());
  return out;
}

}  // namespace entropic

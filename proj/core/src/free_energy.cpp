#include "entropic/free_energy.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "entropic/linalg.hpp"

namespace entropic {

LearningRate::LearningRate(double eta) : eta_(eta) {
  if (!std::isfinite(eta) || eta < 0.0) throw std::invalid_argument("learning rate must be finite and >= 0");
}

LearningRate::LearningRate(Matrix lambda) : matrix_(std::move(lambda)) {
  if (!is_symmetric(*matrix_, 1e-12)) throw std::invalid_argument("matrix learning rate must be symmetric");
}

std::vector<double> LearningRate::apply(std::span<const double> g) const {
  if (!matrix_) {
    std::vector<double> out(g.begin(), g.end());
    for (double& v : out) v *= eta_;
    return out;
  }
  return matvec(*matrix_, g);
}

double LearningRate::quadratic(std::span<const double> g) const {
  if (!matrix_) return eta_ * dot(g, g);
  return dot(g, matvec(*matrix_, g));
}

LearningRate LearningRate::scaled(double s) const {
  if (!matrix_) return LearningRate(eta_ * s);
  return LearningRate(*matrix_ * s);
}

double LearningRate::norm() const {
  if (!matrix_) return std::abs(eta_);
  const auto e = symmetric_eigen(*matrix_);
  double m = 0.0;
  for (double v : e.values) m = std::max(m, std::abs(v));
  return m;
}

void EntropicConfig::validate() const {
  if (weight_decay < 0.0) throw std::invalid_argument("weight decay must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (n_batches == 0) throw std::invalid_argument("n_batches must be >= 1");
  if (n_eval == 0) throw std::invalid_argument("n_eval must be >= 1");
}

Estimate mean_estimate(std::span<const double> samples) {
  Estimate e;
  const std::size_t n = samples.size();
  if (n == 0) return e;
  double s = 0.0;
  for (double v : samples) s += v;
  e.value = s / static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (double v : samples) ss += (v - e.value) * (v - e.value);
    e.std_error = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
  }
  return e;
}

namespace {

Batch single(std::span<const double> x, std::span<const double> y) {
  return {Matrix(1, x.size(), std::vector<double>(x.begin(), x.end())),
          Matrix(1, y.size(), std::vector<double>(y.begin(), y.end()))};
}

void check_lr(const Network& net, const EntropicConfig& cfg) {
  if (!cfg.lr.is_scalar() && cfg.lr.matrix().rows() != net.param_count())
    throw DimensionError("matrix learning rate must match the parameter count");
}

}  // namespace

double phi1(const Network& net, std::span<const double> x, std::span<const double> y,
            const EntropicConfig& cfg) {
  check_lr(net, cfg);
  const auto g = flat_gradient(net, single(x, y));
  return 0.25 * cfg.lr.quadratic(g);
}

double phi2(const Network& net, std::span<const double> x, std::span<const double> y,
            const EntropicConfig& cfg) {
  check_lr(net, cfg);
  const Batch b = single(x, y);
  const auto g = flat_gradient(net, b);
  const auto lg = cfg.lr.apply(g);
  if (norm2(lg) == 0.0) return 0.0;
  const auto hlg = hvp(net, b, lg);
  return cfg.phi2_coefficient * dot(lg, hlg);
}

std::vector<Batch> sample_batches(const DataModel& dm, Rng& rng, std::size_t batch_size,
                                  std::size_t count) {
  std::vector<Batch> out;
  out.reserve(count);
  const std::uint64_t base = rng.next_u64();
  for (std::size_t k = 0; k < count; ++k) {
    Rng child(derive_seed(base, k));
    out.push_back(sample_batch(dm, child, batch_size));
  }
  return out;
}

Estimate entropy(const Network& net, std::span<const Batch> batches, const EntropicConfig& cfg) {
  check_lr(net, cfg);
  if (batches.empty()) throw std::invalid_argument("entropy needs at least one batch");
  std::vector<double> q(batches.size());
  for (std::size_t k = 0; k < batches.size(); ++k)
    q[k] = 0.25 * cfg.lr.quadratic(flat_gradient(net, batches[k]));
  return mean_estimate(q);
}

Estimate entropy(const Network& net, const DataModel& dm, const EntropicConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto batches = sample_batches(dm, rng, cfg.batch_size, cfg.n_batches);
  return entropy(net, batches, cfg);
}

FreeEnergyEvaluator::FreeEnergyEvaluator(const DataModel& dm, const EntropicConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const std::uint64_t base = rng.next_u64();
  Rng eval_rng(derive_seed(base, 0));
  eval_ = sample_batch(dm, eval_rng, cfg_.n_eval);
  Rng batch_rng(derive_seed(base, 1));
  batches_ = sample_batches(dm, batch_rng, cfg_.batch_size, cfg_.n_batches);
}

FreeEnergyEvaluator::FreeEnergyEvaluator(Batch eval, std::vector<Batch> entropy_batches,
                                         EntropicConfig cfg)
    : eval_(std::move(eval)), batches_(std::move(entropy_batches)), cfg_(std::move(cfg)) {
  cfg_.validate();
}

FreeEnergyParts FreeEnergyEvaluator::evaluate(const Network& net) const {
  FreeEnergyParts p;
  const auto losses = per_sample_losses(net, eval_);
  p.loss = mean_estimate(losses);
  const double n = net.param_norm();
  p.decay = cfg_.weight_decay * n * n;
  p.entropy = entropy(net, batches_, cfg_);
  p.total.value = p.loss.value + p.decay + p.entropy.value;
  p.total.std_error = std::hypot(p.loss.std_error, p.entropy.std_error);
  return p;
}

Estimate free_energy(const Network& net, const DataModel& dm, const EntropicConfig& cfg, Rng& rng) {
  return FreeEnergyEvaluator(dm, cfg, rng).evaluate(net).total;
}

namespace {

using ScalarFn = std::function<double(const Network&)>;

std::vector<double> fd_grad_of(const ScalarFn& f, const Network& net) {
  const std::vector<double> theta = net.flatten();
  const double h = 1e-6 * (1.0 + norm2(theta));
  std::vector<double> g(theta.size());
  Network probe = net;
  std::vector<double> t = theta;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    t[i] = theta[i] + h;
    probe.assign(t);
    const double fp = f(probe);
    t[i] = theta[i] - h;
    probe.assign(t);
    const double fm = f(probe);
    t[i] = theta[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace

EquivalenceResult verify_entropic_equivalence(const Network& net, std::span<const double> x,
                                              std::span<const double> y, const EntropicConfig& cfg,
                                              std::size_t n, int order) {
  if (n < 10) throw std::invalid_argument("verify_entropic_equivalence needs n >= 10");
  if (order != 1 && order != 2) throw std::invalid_argument("order must be 1 or 2");
  check_lr(net, cfg);
  const Batch b = single(x, y);
  const std::vector<double> theta0 = net.flatten();

  std::vector<double> theta1 = theta0;
  const auto step1 = cfg.lr.apply(flat_gradient(net, b));
  for (std::size_t i = 0; i < theta1.size(); ++i) theta1[i] -= step1[i];

  const LearningRate small = cfg.lr.scaled(1.0 / static_cast<double>(n));
  const std::vector<double> xs(x.begin(), x.end()), ys(y.begin(), y.end());
  ScalarFn phi = [&](const Network& m) {
    double v = phi1(m, xs, ys, cfg);
    if (order == 2) v += phi2(m, xs, ys, cfg);
    return v;
  };

  EquivalenceResult res;
  Network cur = net;
  std::vector<double> theta = theta0;
  for (std::size_t s = 0; s < n; ++s) {
    auto g = flat_gradient(cur, b);
    const auto gphi = fd_grad_of(phi, cur);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gphi[i];
    const auto st = small.apply(g);
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= st[i];
    if (!std::all_of(theta.begin(), theta.end(), [](double v) { return std::isfinite(v); }) ||
        norm2(theta) > 1e6) {
      res.diverged = true;
      res.discrepancy = INFINITY;
      return res;
    }
    cur.assign(theta);
  }
  std::vector<double> diff(theta.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = theta[i] - theta1[i];
  res.discrepancy = norm2(diff);
  return res;
}

Network entropic_flow_step(const Network& net, const Batch& eval,
                           std::span<const Batch> entropy_batches, const EntropicConfig& cfg,
                           double dt) {
  cfg.validate();
  check_lr(net, cfg);
  const double eta = cfg.lr.norm();
  if (!(dt > 0.0) || dt > eta / 10.0 * (1.0 + 1e-12))
    throw std::invalid_argument("entropic_flow_step requires 0 < dt <= eta / 10");
  auto g = flat_gradient(net, eval);
  const std::vector<double> theta = net.flatten();
  const double k = cfg.decay_factor() * cfg.weight_decay;
  ScalarFn s = [&](const Network& m) { return entropy(m, entropy_batches, cfg).value; };
  const auto gs = fd_grad_of(s, net);
  std::vector<double> next = theta;
  for (std::size_t i = 0; i < next.size(); ++i) next[i] -= dt * (g[i] + k * theta[i] + gs[i]);
  if (!std::all_of(next.begin(), next.end(), [](double v) { return std::isfinite(v); }) ||
      norm2(next) > 1e8)
    throw DivergenceError("entropic flow diverged");
  Network out = net;
  out.assign(next);
  return out;
}

Network entropic_flow_step(const Network& net, const DataModel& dm, const EntropicConfig& cfg,
                           Rng& rng, double dt) {
  const std::uint64_t base = rng.next_u64();
  Rng eval_rng(derive_seed(base, 0));
  const Batch eval = sample_batch(dm, eval_rng, cfg.n_eval);
  Rng batch_rng(derive_seed(base, 1));
  const auto batches = sample_batches(dm, batch_rng, cfg.batch_size, cfg.n_batches);
  return entropic_flow_step(net, eval, batches, cfg, dt);
}

}  // namespace entropic

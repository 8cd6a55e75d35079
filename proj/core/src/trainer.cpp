#include "entropic/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>

#include "entropic/alignment.hpp"
#include "entropic/linalg.hpp"
#include "entropic/matrix_io.hpp"
#include "entropic/symmetry.hpp"

namespace entropic {

const char* const kLibraryVersion = "0.1.0";

double LrSchedule::multiplier(std::size_t step) const {
  double m = 1.0;
  for (const auto& [s, v] : points)
    if (s <= step) m = v;
  return m;
}

void LrSchedule::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(points[i].second > 0.0)) throw std::invalid_argument("schedule multipliers must be > 0");
    if (i && points[i].first <= points[i - 1].first)
      throw std::invalid_argument("schedule breakpoints must be increasing");
  }
}

void TrainConfig::validate() const {
  entropic.validate();
  schedule.validate();
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (record_every < 1) throw std::invalid_argument("record_every must be >= 1");
  if (dataset && dataset->size() == 0) throw std::invalid_argument("dataset is empty");
}

double sgd_step_inplace(Network& net, const Batch& batch, const EntropicConfig& cfg,
                        double lr_multiplier, bool decoupled) {
  LossAndGradient lg = loss_and_gradient(net, batch);
  const double k = cfg.decay_factor() * cfg.weight_decay;
  auto& ws = net.weights();
  double norm_sq = 0.0;
  if (cfg.lr.is_scalar()) {
    const double eta = cfg.lr.scalar() * lr_multiplier;
    for (std::size_t l = 0; l < ws.size(); ++l) {
      auto& w = ws[l].data();
      const auto& g = lg.grads[l].data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] -= eta * (g[i] + k * w[i]);
        norm_sq += w[i] * w[i];
      }
    }
  } else {
    std::vector<double> theta = net.flatten();
    std::vector<double> g = flatten(lg.grads);
    if (!decoupled)
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * theta[i];
    const auto step = cfg.lr.apply(g);
    const double decay = decoupled ? k * cfg.lr.norm() * lr_multiplier : 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      theta[i] -= lr_multiplier * step[i] + decay * theta[i];
      norm_sq += theta[i] * theta[i];
    }
    net.assign(theta);
  }
  if (!std::isfinite(norm_sq) || norm_sq > 1e16) throw DivergenceError("parameter norm exceeded 1e8");
  return lg.loss;
}

Network sgd_step(const Network& net, const Batch& batch, const EntropicConfig& cfg, bool decoupled) {
  Network out = net;
  sgd_step_inplace(out, batch, cfg, 1.0, decoupled);
  return out;
}

SharpnessEstimate measure_sharpness(const Network& net, const Batch& eval, std::size_t probes,
                                    Rng& rng, bool lambda_max) {
  if (probes < 1) throw std::invalid_argument("sharpness needs at least one probe");
  const std::size_t p = net.param_count();
  std::vector<double> samples(probes);
  std::vector<double> v(p);
  for (std::size_t k = 0; k < probes; ++k) {
    for (double& x : v) x = rng.rademacher();
    samples[k] = dot(v, hvp(net, eval, v));
  }
  const Estimate e = mean_estimate(samples);
  SharpnessEstimate out{e.value, e.std_error, 0.0, false};
  if (lambda_max) {
    LinearOperator op = [&](std::span<const double> in, std::span<double> res) {
      const auto h = hvp(net, eval, in);
      std::copy(h.begin(), h.end(), res.begin());
    };
    std::vector<double> start(p);
    for (double& x : start) x = rng.normal();
    const PowerResult pr = power_iteration(op, p, 1e-7 * std::max(1.0, std::abs(e.value)), 500, start);
    out.lambda_max = pr.lambda;
    out.converged = pr.converged;
  }
  return out;
}

SharpnessEstimate measure_sharpness(const Network& net, const DataModel& dm,
                                    const EntropicConfig& cfg, std::size_t probes, Rng& rng) {
  const Batch eval = sample_batch(dm, rng, cfg.n_eval);
  return measure_sharpness(net, eval, probes, rng, true);
}

namespace {

struct MetricContext {
  Batch eval;
  std::vector<Batch> entropy_batches;
  Rng sharp_rng{0};
  std::optional<Matrix> partner_x;
  std::vector<Matrix> partner_hidden;
};

double mean_layer_imbalance(const GradientCovariance& cov, std::size_t depth) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < depth; ++i)
    for (std::size_t j = i + 1; j < depth; ++j) {
      s += normalized_layer_imbalance(cov, i, j);
      ++n;
    }
  return n ? s / static_cast<double>(n) : 0.0;
}

MetricRecord make_record(const Network& net, std::size_t step, double lr_mult, const TrainConfig& tc,
                         MetricContext& ctx, bool final_point) {
  MetricRecord r;
  r.step = step;
  r.lr = (tc.entropic.lr.is_scalar() ? tc.entropic.lr.scalar() : tc.entropic.lr.norm()) * lr_mult;
  r.loss = batch_loss(net, ctx.eval);
  for (const auto& w : net.weights()) r.weight_traces.push_back(frobenius_sq(w));
  const auto& m = tc.metrics;
  if (m.entropy && !ctx.entropy_batches.empty()) {
    const GradientCovariance cov(net, ctx.entropy_batches);
    std::vector<double> q(cov.n_batches());
    for (std::size_t k = 0; k < q.size(); ++k) q[k] = 0.25 * tc.entropic.lr.quadratic(flatten(cov.samples()[k]));
    const Estimate s = mean_estimate(q);
    r.entropy = s.value;
    r.entropy_se = s.std_error;
    for (std::size_t l = 0; l < net.depth(); ++l) r.grad_traces.push_back(cov.layer_trace(l).value);
    const bool layered = net.arch() == Arch::DeepLinear || net.arch() == Arch::Mlp;
    if (m.balance && layered && net.depth() > 1) {
      r.layer_residual = mean_layer_imbalance(cov, net.depth());
      const double deg = net.activation().kind == Activation::Kind::Poly ? net.activation().degree : 1.0;
      double s2 = 0.0;
      for (std::size_t l = 0; l + 1 < net.depth(); ++l) s2 += normalized_neuron_imbalance(cov, l, deg);
      r.neuron_residual = s2 / static_cast<double>(net.depth() - 1);
    }
    if (m.wu && net.arch() == Arch::AttentionToy && tc.entropic.lr.is_scalar()) {
      std::vector<Matrix> gw, gu;
      for (const auto& g : cov.samples()) {
        gw.push_back(g[0]);
        gu.push_back(g[1]);
      }
      r.wu_residual = wu_alignment_residual(gw, gu, net.weight(0), net.weight(1), tc.entropic).normalized;
    }
  }
  const bool sharp_due = m.sharpness_every > 0 && (step % m.sharpness_every == 0 || final_point);
  if (sharp_due) {
    const std::size_t probes = final_point ? m.final_probes : m.sharpness_probes;
    const SharpnessEstimate se = measure_sharpness(net, ctx.eval, probes, ctx.sharp_rng, m.lambda_max);
    r.has_sharpness = true;
    r.sharpness = se.trace;
    r.sharpness_se = se.trace_se;
    r.lambda_max = se.lambda_max;
    r.eta_lambda_max = r.lr * se.lambda_max;
  }
  if (ctx.partner_x) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t l = 1; l < net.depth(); ++l) {
      const Matrix h = hidden_batch(net, *ctx.partner_x, l);
      for (const auto& hp : ctx.partner_hidden) {
        s += gram_alignment(h, hp);
        ++n;
      }
    }
    if (n) {
      r.alignment = s / static_cast<double>(n);
      r.has_alignment = true;
    }
  }
  return r;
}

class BatchSource {
 public:
  BatchSource(const DataModel& dm, const TrainConfig& tc, std::uint64_t seed)
      : dm_(dm), tc_(tc), rng_(seed) {}

  Batch next() {
    const std::size_t b = tc_.entropic.batch_size;
    if (!tc_.dataset) return sample_batch(dm_, rng_, b);
    const Batch& ds = *tc_.dataset;
    Batch out{Matrix(b, ds.x.cols()), Matrix(b, ds.y.cols())};
    for (std::size_t i = 0; i < b; ++i) {
      std::size_t idx;
      if (tc_.sampling == Sampling::WithReplacement) {
        idx = rng_.below(ds.size());
      } else {
        if (cursor_ >= order_.size()) reshuffle(ds.size());
        idx = order_[cursor_++];
      }
      std::copy(ds.x.row(idx).begin(), ds.x.row(idx).end(), out.x.row(i).begin());
      std::copy(ds.y.row(idx).begin(), ds.y.row(idx).end(), out.y.row(i).begin());
    }
    return out;
  }

 private:
  void reshuffle(std::size_t n) {
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
    cursor_ = 0;
  }

  const DataModel& dm_;
  const TrainConfig& tc_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

Batch draw_eval(const DataModel& dm, const TrainConfig& tc, Rng& rng, std::size_t n) {
  if (!tc.dataset) return sample_batch(dm, rng, n);
  const std::size_t m = std::min(n, tc.dataset->size());
  return tc.dataset->slice(0, m);
}

}  // namespace

TrainResult train(Network net, const DataModel& dm, const TrainConfig& tc) {
  tc.validate();
  const auto t0 = std::chrono::steady_clock::now();
  MetricContext ctx;
  Rng eval_rng(derive_seed(tc.seed, 2));
  ctx.eval = draw_eval(dm, tc, eval_rng, tc.metrics.eval_size);
  if (tc.metrics.entropy) {
    Rng ent_rng(derive_seed(tc.seed, 3));
    if (tc.dataset) {
      TrainConfig copy = tc;
      BatchSource src(dm, copy, derive_seed(tc.seed, 3));
      for (std::size_t k = 0; k < tc.entropic.n_batches; ++k) ctx.entropy_batches.push_back(src.next());
    } else {
      ctx.entropy_batches = sample_batches(dm, ent_rng, tc.entropic.batch_size, tc.entropic.n_batches);
    }
  }
  ctx.sharp_rng = Rng(derive_seed(tc.seed, 4));
  if (tc.partner) {
    Rng prng(derive_seed(tc.seed, 5));
    ctx.partner_x = draw_eval(dm, tc, prng, tc.metrics.alignment_samples).x;
    for (std::size_t l = 1; l < tc.partner->depth(); ++l)
      ctx.partner_hidden.push_back(hidden_batch(*tc.partner, *ctx.partner_x, l));
  }

  BatchSource source(dm, tc, derive_seed(tc.seed, 1));
  TrainResult res;
  std::size_t next_ckpt = 0;
  auto checkpoints = tc.checkpoint_steps;
  std::sort(checkpoints.begin(), checkpoints.end());
  for (std::size_t t = 0;; ++t) {
    const double mult = tc.schedule.multiplier(t);
    if (t % tc.record_every == 0 || t == tc.steps)
      res.trajectory.push_back(make_record(net, t, mult, tc, ctx, t == tc.steps));
    if (tc.observer && tc.observe_every > 0 && t % tc.observe_every == 0) tc.observer(t, net);
    while (next_ckpt < checkpoints.size() && checkpoints[next_ckpt] <= t) {
      if (checkpoints[next_ckpt] == t && !tc.checkpoint_dir.empty()) {
        std::filesystem::create_directories(tc.checkpoint_dir);
        save_checkpoint(net, tc.checkpoint_dir / ("step_" + std::to_string(t)));
      }
      ++next_ckpt;
    }
    if (t == tc.steps) break;
    const Batch b = source.next();
    try {
      sgd_step_inplace(net, b, tc.entropic, mult, tc.decoupled_decay);
    } catch (const DivergenceError&) {
      res.diverged = true;
      res.steps_done = t + 1;
      MetricRecord r;
      r.step = t + 1;
      r.diverged = true;
      r.loss = INFINITY;
      res.trajectory.push_back(r);
      break;
    }
    res.steps_done = t + 1;
  }
  res.final = std::move(net);
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

std::vector<CellResult> run_sweep(const SweepGrid& grid, std::size_t parallelism) {
  std::vector<CellResult> results(grid.cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= grid.cells.size()) return;
      const SweepCell& cell = grid.cells[i];
      CellResult& out = results[i];
      out.index = i;
      out.coords = cell.coords;
      try {
        TrainConfig tc = cell.config;
        tc.seed = derive_seed(grid.base_seed, i);
        out.result = train(cell.init, cell.dm, tc);
        out.ok = true;
      } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(parallelism, grid.cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t k = 1; k < n; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return results;
}

void write_trajectory_csv(std::ostream& os, const std::vector<MetricRecord>& traj) {
  std::size_t layers = 0;
  for (const auto& r : traj) layers = std::max({layers, r.weight_traces.size(), r.grad_traces.size()});
  os << "step,lr,loss,entropy,entropy_se";
  for (std::size_t l = 0; l < layers; ++l) os << ",grad_trace_" << l;
  for (std::size_t l = 0; l < layers; ++l) os << ",weight_trace_" << l;
  os << ",layer_residual,neuron_residual,wu_residual,sharpness,sharpness_se,lambda_max,eta_lambda_max,alignment,diverged\n";
  auto opt = [&](bool has, double v) {
    if (has) os << v;
  };
  os.precision(12);
  for (const auto& r : traj) {
    os << r.step << ',' << r.lr << ',' << r.loss << ',' << r.entropy << ',' << r.entropy_se;
    for (std::size_t l = 0; l < layers; ++l) {
      os << ',';
      opt(l < r.grad_traces.size(), l < r.grad_traces.size() ? r.grad_traces[l] : 0.0);
    }
    for (std::size_t l = 0; l < layers; ++l) {
      os << ',';
      opt(l < r.weight_traces.size(), l < r.weight_traces.size() ? r.weight_traces[l] : 0.0);
    }
    os << ',' << r.layer_residual << ',' << r.neuron_residual << ',' << r.wu_residual << ',';
    opt(r.has_sharpness, r.sharpness);
    os << ',';
    opt(r.has_sharpness, r.sharpness_se);
    os << ',';
    opt(r.has_sharpness, r.lambda_max);
    os << ',';
    opt(r.has_sharpness, r.eta_lambda_max);
    os << ',';
    opt(r.has_alignment, r.alignment);
    os << ',' << (r.diverged ? 1 : 0) << '\n';
  }
}

nlohmann::json to_json(const TrainConfig& tc) {
  nlohmann::json j;
  const auto& e = tc.entropic;
  if (e.lr.is_scalar()) j["lr"] = e.lr.scalar();
  else j["lr_matrix"] = to_json(e.lr.matrix());
  j["weight_decay"] = e.weight_decay;
  j["batch_size"] = e.batch_size;
  j["n_batches"] = e.n_batches;
  j["n_eval"] = e.n_eval;
  j["decay_convention"] = e.decay == DecayConvention::FreeEnergy ? "free_energy" : "plain_decay";
  j["steps"] = tc.steps;
  nlohmann::json sched = nlohmann::json::array();
  for (const auto& [s, m] : tc.schedule.points) sched.push_back({s, m});
  j["lr_schedule"] = sched;
  j["record_every"] = tc.record_every;
  j["seed"] = tc.seed;
  j["decoupled_decay"] = tc.decoupled_decay;
  j["sampling"] = tc.sampling == Sampling::WithReplacement ? "with_replacement" : "epochs";
  j["metrics"] = {{"sharpness_every", tc.metrics.sharpness_every},
                  {"sharpness_probes", tc.metrics.sharpness_probes},
                  {"final_probes", tc.metrics.final_probes},
                  {"eval_size", tc.metrics.eval_size}};
  return j;
}

nlohmann::json run_manifest(const TrainConfig& tc, const DataModel& dm, const Network& init,
                            const TrainResult& result) {
  nlohmann::json j;
  j["library_version"] = kLibraryVersion;
  j["config"] = to_json(tc);
  j["data_model"] = dm.to_json();
  j["network"] = init.descriptor();
  nlohmann::json ws = nlohmann::json::array();
  for (const auto& w : init.weights()) ws.push_back(to_json(w));
  j["initial_weights"] = ws;
  j["seeds"] = {{"base", tc.seed},
                {"batches", derive_seed(tc.seed, 1)},
                {"eval", derive_seed(tc.seed, 2)},
                {"entropy", derive_seed(tc.seed, 3)},
                {"sharpness", derive_seed(tc.seed, 4)}};
  j["diverged"] = result.diverged;
  j["steps_done"] = result.steps_done;
  j["wall_seconds"] = result.wall_seconds;
  return j;
}

}  // namespace entropic

#include <algorithm>
#include <cmath>
#include <limits>

#include "entropic/linalg.hpp"
#include "entropic/stats.hpp"
#include "entropic/symmetry.hpp"
#include "recipes.hpp"

namespace entropic::recipes {

BalanceParams BalanceParams::read(ParamReader& r) {
  BalanceParams p;
  p.mode = r.choice("mode", "layer", {"layer", "neuron", "weight", "wu"});
  p.seed = r.seed("seed", 7);
  const bool layer = p.mode == "layer", neuron = p.mode == "neuron", weight = p.mode == "weight";
  std::vector<std::size_t> w = layer ? std::vector<std::size_t>{4, 8, 8, 4}
                               : neuron ? std::vector<std::size_t>{100, 16, 10}
                               : weight ? std::vector<std::size_t>{3, 6, 3}
                                        : std::vector<std::size_t>{4, 4};
  p.widths = r.counts("widths", w);
  if (p.mode == "wu" ? p.widths.size() != 2 : p.widths.size() < 3)
    throw std::invalid_argument("balance: 'widths' must be {d, r} for wu and have >= 3 entries otherwise");
  p.teacher_widths = r.counts("teacher_widths", neuron ? std::vector<std::size_t>{100, 8, 10} : p.widths);
  if (p.teacher_widths.front() != p.widths.front() || p.teacher_widths.back() != p.widths.back())
    throw std::invalid_argument("balance: teacher and student must share input and output widths");
  p.activation = r.choice("activation", neuron ? "relu" : "identity", {"identity", "relu", "tanh"});
  p.init_scale = r.real("init_scale", layer || neuron || weight ? 1.0 : 0.3, 1e-6, 1e3);
  p.teacher_scale = r.real("teacher_scale", neuron ? 0.5 : 1.0, 0.0, 1e3);
  p.v_scale = r.real("v_scale", layer ? 0.5 : 1.0, 0.0, 1e3);
  p.input_variance = r.real("input_variance", neuron ? 8.0 : 1.0, 1e-12, 1e6);
  p.noise = r.real("noise", layer ? 0.3 : neuron ? 1.0 : weight ? 0.1 : 0.3, 0.0, 1e3);
  p.lr = r.real("lr", layer ? 0.05 : neuron ? 0.01 : weight ? 1e-4 : 0.01, 1e-12, 10.0);
  p.weight_decay = r.real("weight_decay", weight ? 1e-3 : 0.0, 0.0, 10.0);
  p.batch_size = r.count("batch_size", layer ? 32 : neuron ? 200 : weight ? 8 : 32, 1);
  p.steps = r.count("steps", layer ? 200000 : neuron ? 10000 : weight ? 15000000 : 1000000, 1);
  p.record_every = r.count("record_every", layer ? 2000 : neuron ? 100 : weight ? 250000 : 50000, 1);
  p.n_batches = r.count("n_batches", layer ? 30 : neuron ? 100 : weight ? 30 : 200, 2);
  p.eval_size = r.count("eval_size", 1024, 1);
  p.tail_fraction = r.real("tail_fraction", p.mode == "wu" ? 0.5 : 0.1, 0.0, 1.0);
  p.observe_every = r.count("observe_every", 10000, 1);
  p.threshold = r.real("threshold", weight ? 0.05 : 0.15, 0.0, 1e6);
  p.min_drop = r.real("min_drop", 0.5, 0.0, 1.0);
  return p;
}

PolynomialBalanceParams PolynomialBalanceParams::read(ParamReader& r) {
  PolynomialBalanceParams p;
  p.seed = r.seed("seed", 11);
  p.widths = r.counts("widths", {4, 3, 2});
  if (p.widths.size() != 3) throw std::invalid_argument("polynomial_balance: 'widths' needs 3 entries");
  p.teacher_widths = r.counts("teacher_widths", {4, 3, 2});
  if (p.teacher_widths.size() != 3 || p.teacher_widths.front() != p.widths.front() ||
      p.teacher_widths.back() != p.widths.back())
    throw std::invalid_argument("polynomial_balance: teacher must be a 2-layer net with matching ends");
  p.degree = static_cast<int>(r.count("degree", 2, 1, 8));
  p.init_scale = r.real("init_scale", 0.5, 1e-6, 1e3);
  p.teacher_scale = r.real("teacher_scale", 1.0, 0.0, 1e3);
  p.noise = r.real("noise", 0.3, 0.0, 1e3);
  p.lr = r.real("lr", 0.02, 1e-12, 10.0);
  p.batch_size = r.count("batch_size", 32, 1);
  p.steps = r.count("steps", 1000000, 1);
  p.record_every = r.count("record_every", 50000, 1);
  p.n_batches = r.count("n_batches", 100, 2);
  p.eval_size = r.count("eval_size", 1024, 1);
  p.threshold = r.real("threshold", 0.2, 0.0, 1e6);
  p.tail_fraction = r.real("tail_fraction", 0.5, 0.0, 1.0);
  p.observe_every = r.count("observe_every", 2000, 1);
  return p;
}

namespace {

Matrix scaled_identity(std::size_t n, double s) { return Matrix::identity(n) * s; }

// Per-batch gradients of the loss with respect to M = U V for the attention toy.
std::vector<Matrix> attention_product_gradients(const Network& net, std::span<const Batch> batches) {
  const Matrix m = net.weight(0) * net.weight(1);
  const Matrix& w = net.weight(2);
  const std::size_t d = m.rows();
  std::vector<Matrix> out;
  for (const auto& b : batches) {
    Matrix g(d, d);
    for (std::size_t s = 0; s < b.size(); ++s) {
      const auto x = b.x.row(s);
      const auto mx = matvec(m, x);
      double wx = 0.0;
      for (std::size_t i = 0; i < d; ++i) wx += w(i, 0) * x[i];
      const double f = dot(x, mx) * wx;
      const double c = 2.0 * (f - b.y(s, 0)) * wx / static_cast<double>(b.size());
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) g(i, j) += c * x[i] * x[j];
    }
    out.push_back(std::move(g));
  }
  return out;
}

double max_pairwise_weight_imbalance(const MetricRecord& r) {
  double worst = 0.0;
  const auto& t = r.weight_traces;
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = i + 1; j < t.size(); ++j) {
      const double m = std::max(t[i], t[j]);
      if (m > 0.0) worst = std::max(worst, std::abs(t[i] - t[j]) / m);
    }
  return worst;
}

void accumulate_residual(std::optional<Matrix>& sum, double& den, const MatrixResidual& r) {
  if (sum) *sum += r.matrix;
  else sum = r.matrix;
  if (r.normalized > 0.0) den += r.frobenius / r.normalized;
}

double average_frobenius(const std::optional<Matrix>& sum, double den) {
  if (!sum || den <= 0.0) return INFINITY;
  return frobenius_norm(*sum) / den;
}

}  // namespace

void run(const BalanceParams& p, ExperimentReport& out) {
  Recorder rec(out);
  Rng teacher_rng(derive_seed(p.seed, 101));
  Rng init_rng(derive_seed(p.seed, 102));
  const std::size_t dx = p.widths.front(), dy = p.widths.back();
  const Matrix sx = scaled_identity(dx, p.input_variance);
  const Matrix se = scaled_identity(p.mode == "wu" ? 1 : dy, p.noise * p.noise);
  const Activation act = Activation::from_name(p.activation);

  std::optional<DataModel> dm;
  Network net;
  if (p.mode == "wu") {
    Network teacher = Network::attention_toy(p.widths[0], p.widths[1], teacher_rng, p.teacher_scale);
    dm = DataModel::teacher(std::move(teacher), Matrix::identity(p.widths[0]) * p.input_variance, se, p.seed);
    net = Network::attention_toy(p.widths[0], p.widths[1], init_rng, p.init_scale);
  } else if (p.mode == "neuron" || act.kind != Activation::Kind::Identity) {
    Network teacher = Network::mlp(p.teacher_widths, act, teacher_rng);
    teacher.weight(teacher.depth() - 1) *= p.teacher_scale;
    dm = DataModel::teacher(std::move(teacher), sx, se, p.seed);
    net = Network::mlp(p.widths, act, init_rng, p.init_scale);
  } else {
    const Matrix v = gaussian_matrix(teacher_rng, dy, dx) * p.v_scale;
    dm = DataModel::linear(v, sx, se, p.seed);
    net = Network::deep_linear(p.widths, init_rng, p.init_scale);
  }

  TrainConfig tc;
  tc.entropic.lr = p.lr;
  tc.entropic.weight_decay = p.weight_decay;
  tc.entropic.batch_size = p.batch_size;
  tc.entropic.n_batches = p.n_batches;
  tc.steps = p.steps;
  tc.record_every = p.record_every;
  tc.seed = derive_seed(p.seed, 1);
  tc.metrics.entropy = p.mode != "weight";
  tc.metrics.balance = p.mode == "layer" || p.mode == "neuron";
  tc.metrics.wu = p.mode == "wu";
  tc.metrics.sharpness_every = 0;
  tc.metrics.eval_size = p.eval_size;
  // Stationary averages of the WU residual matrices over the tail of training.
  std::optional<Matrix> wu_sum, prod_sum;
  double wu_den = 0.0, prod_den = 0.0;
  std::size_t snapshots = 0;
  std::vector<std::pair<std::size_t, double>> snapshot_values;
  Rng brng(derive_seed(p.seed, 103));
  if (p.mode == "wu") {
    tc.observe_every = p.observe_every;
    const auto start = static_cast<std::size_t>(std::ceil((1.0 - p.tail_fraction) * static_cast<double>(p.steps)));
    tc.observer = [&](std::size_t step, const Network& f) {
      if (step < start) return;
      const auto batches = sample_batches(*dm, brng, p.batch_size, p.n_batches);
      const GradientCovariance cov(f, batches);
      std::vector<Matrix> gu, gv;
      for (const auto& g : cov.samples()) {
        gu.push_back(g[0]);
        gv.push_back(g[1]);
      }
      const MatrixResidual wu = wu_alignment_residual(gu, gv, f.weight(0), f.weight(1), tc.entropic);
      const MatrixResidual prod =
          attention_eq11_residual(f.weight(1), f.weight(0), attention_product_gradients(f, batches));
      accumulate_residual(wu_sum, wu_den, wu);
      accumulate_residual(prod_sum, prod_den, prod);
      snapshot_values.emplace_back(step, wu.normalized);
      ++snapshots;
    };
  }
  const TrainResult res = train(net, *dm, tc);
  rec.trajectory(p.mode, res.trajectory);
  out.summary["steps_done"] = res.steps_done;
  out.summary["diverged"] = res.diverged;
  out.summary["train_seconds"] = res.wall_seconds;
  if (res.diverged) {
    rec.check("training_stable", false, static_cast<double>(res.steps_done), "training diverged");
    return;
  }
  const auto& traj = res.trajectory;
  const auto entropy = field_series(traj, &MetricRecord::entropy);
  const auto loss = field_series(traj, &MetricRecord::loss);

  if (p.mode == "layer" || p.mode == "neuron") {
    auto field = p.mode == "layer" ? &MetricRecord::layer_residual : &MetricRecord::neuron_residual;
    const auto resid = field_series(traj, field);
    const double rho_s = spearman(resid, entropy), rho_l = spearman(resid, loss);
    out.summary["rank_corr_residual_entropy"] = rho_s;
    out.summary["rank_corr_residual_loss"] = rho_l;
    if (p.mode == "layer") {
      const double tail = tail_mean(traj, p.tail_fraction, field);
      out.summary["tail_mean_residual"] = tail;
      rec.less("layer_residual_tail_mean", tail, p.threshold);
    } else {
      const double peak = *std::max_element(resid.begin(), resid.end());
      const double final_value = resid.back();
      const double drop = peak > 0.0 ? 1.0 - final_value / peak : 0.0;
      out.summary["peak_residual"] = peak;
      out.summary["final_residual"] = final_value;
      out.summary["drop_from_peak"] = drop;
      rec.check("neuron_residual_drop_from_peak", drop >= p.min_drop, drop,
                ">= " + std::to_string(p.min_drop));
    }
    rec.greater("entropy_correlation_dominates_loss", rho_s, rho_l,
                "Spearman(residual, entropy) versus Spearman(residual, loss)");
  } else if (p.mode == "weight") {
    const double imb = max_pairwise_weight_imbalance(traj.back());
    out.summary["final_weight_imbalance"] = imb;
    for (const auto& r : traj) rec.add(p.mode, static_cast<double>(r.step), "weight_imbalance",
                                       max_pairwise_weight_imbalance(r));
    rec.less("weight_trace_imbalance", imb, p.threshold);
  } else {
    const double wu_avg = average_frobenius(wu_sum, wu_den), product_avg = average_frobenius(prod_sum, prod_den);
    out.summary["wu_residual"] = wu_avg;
    out.summary["product_residual"] = product_avg;
    out.summary["averaged_snapshots"] = snapshots;
    for (const auto& [step, v] : snapshot_values) rec.add(p.mode, static_cast<double>(step), "wu_snapshot_residual", v);
    rec.check("averaged_snapshots_present", snapshots > 0, static_cast<double>(snapshots), "> 0");
    rec.less("wu_alignment_residual", wu_avg, p.threshold);
    rec.less("attention_product_residual", product_avg, p.threshold);
  }
}

void run(const PolynomialBalanceParams& p, ExperimentReport& out) {
  Recorder rec(out);
  Rng teacher_rng(derive_seed(p.seed, 101));
  Rng init_rng(derive_seed(p.seed, 102));
  const Activation act = Activation::poly(p.degree);
  Network teacher = Network::mlp(p.teacher_widths, act, teacher_rng);
  teacher.weight(1) *= p.teacher_scale;
  const DataModel dm = DataModel::teacher(std::move(teacher), Matrix::identity(p.widths[0]),
                                          scaled_identity(p.widths[2], p.noise * p.noise), p.seed);
  const Network net = Network::mlp(p.widths, act, init_rng, p.init_scale);

  TrainConfig tc;
  tc.entropic.lr = p.lr;
  tc.entropic.batch_size = p.batch_size;
  tc.entropic.n_batches = std::min<std::size_t>(p.n_batches, 50);
  tc.steps = p.steps;
  tc.record_every = p.record_every;
  tc.seed = derive_seed(p.seed, 1);
  tc.metrics.sharpness_every = 0;
  tc.metrics.eval_size = p.eval_size;
  // Per-neuron moments averaged over snapshots in the tail of training.
  const std::size_t hidden = p.widths[1];
  std::vector<double> in_sum(hidden, 0.0), out_sum(hidden, 0.0);
  std::size_t snapshots = 0;
  Rng brng(derive_seed(p.seed, 103));
  const auto start = static_cast<std::size_t>(std::ceil((1.0 - p.tail_fraction) * static_cast<double>(p.steps)));
  tc.observe_every = p.observe_every;
  tc.observer = [&](std::size_t step, const Network& f) {
    if (step < start) return;
    const auto batches = sample_batches(dm, brng, p.batch_size, p.n_batches);
    const GradientCovariance cov(f, batches);
    for (std::size_t j = 0; j < hidden; ++j) {
      in_sum[j] += cov.row_moment(0, j).value;
      out_sum[j] += cov.col_moment(1, j).value;
    }
    ++snapshots;
  };
  const TrainResult res = train(net, dm, tc);
  rec.trajectory("poly", res.trajectory);
  out.summary["steps_done"] = res.steps_done;
  out.summary["diverged"] = res.diverged;
  out.summary["averaged_snapshots"] = snapshots;
  if (res.diverged) {
    rec.check("training_stable", false, static_cast<double>(res.steps_done), "training diverged");
    return;
  }
  if (snapshots == 0) {
    rec.check("averaged_snapshots_present", false, 0.0, "> 0");
    return;
  }

  const double d = p.degree;
  double worst = 0.0, total = 0.0;
  std::size_t active = 0;
  for (std::size_t j = 0; j < hidden; ++j) {
    const double a = in_sum[j] / static_cast<double>(snapshots);
    const double b = d * out_sum[j] / static_cast<double>(snapshots);
    const double m = std::max(a, b);
    const double rel = m > 0.0 ? std::abs(a - b) / m : 0.0;
    rec.add("neuron", static_cast<double>(j), "incoming_moment", a);
    rec.add("neuron", static_cast<double>(j), "scaled_outgoing_moment", b);
    rec.add("neuron", static_cast<double>(j), "relative_residual", rel);
    worst = std::max(worst, rel);
    total += rel;
    if (m > 0.0) ++active;
  }
  out.summary["max_neuron_residual"] = worst;
  out.summary["mean_neuron_residual"] = total / static_cast<double>(p.widths[1]);
  out.summary["active_neurons"] = active;
  out.summary["final_loss"] = res.trajectory.back().loss;
  rec.less("polynomial_neuron_residual_max", worst, p.threshold);
}

}  // namespace entropic::recipes

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "entropic/closed_form.hpp"
#include "entropic/linalg.hpp"
#include "entropic/stats.hpp"
#include "entropic/symmetry.hpp"
#include "recipes.hpp"

namespace entropic::recipes {

SharpnessClosedFormParams SharpnessClosedFormParams::read(ParamReader& r) {
  SharpnessClosedFormParams p;
  p.mode = r.choice("mode", "consistency", {"consistency", "entropic_optimum"});
  p.seed = r.seed("seed", 3);
  if (p.mode == "consistency") {
    p.depth = r.count("depth", 4, 2, 16);
    p.d_x = r.count("d_x", 3, 1, 64);
    p.d_y = r.count("d_y", 3, 1, 64);
    p.width = r.count("width", 6, 1, 256);
    if (p.width < std::min(p.d_x, p.d_y))
      throw std::invalid_argument("sharpness_closed_form: 'width' must be >= min(d_x, d_y)");
    p.n_batches = r.count("n_batches", 4000, 2);
    p.batch_size = r.count("batch_size", 8, 1);
    p.lr = r.real("lr", 0.01, 1e-12, 10.0);
    p.v_scale = r.real("v_scale", 1.0, 1e-6, 1e3);
    p.reconstruct_tol = r.real("reconstruct_tol", 1e-8, 0.0, 1.0);
    p.orthonormal_tol = r.real("orthonormal_tol", 1e-10, 0.0, 1.0);
    p.trace_tol = r.real("trace_tol", 1e-10, 0.0, 1.0);
    p.se_multiple = r.real("se_multiple", 3.0, 0.0, 100.0);
  } else {
    p.phis = r.reals("phis", {1.0, 0.5, 0.25}, 1e-6, 1e6);
    p.hidden = r.count("hidden", 10, 2, 1024);
    p.lr = r.real("lr", 0.01, 1e-12, 10.0);
    p.batch_size = r.count("batch_size", 32, 1);
    p.steps = r.count("steps", 1000000, 1);
    p.record_every = r.count("record_every", 10000, 1);
    p.probes = r.count("probes", 16, 1);
    p.eval_size = r.count("eval_size", 4096, 1);
    p.tail_fraction = r.real("tail_fraction", 0.5, 0.0, 1.0);
    p.tolerance = r.real("tolerance", 0.10, 0.0, 10.0);
    p.min_tolerance = r.real("min_tolerance", 0.05, 0.0, 10.0);
  }
  return p;
}

EosSweepParams EosSweepParams::read(ParamReader& r) {
  EosSweepParams p;
  p.seed = r.seed("seed", 5);
  p.lrs = r.reals("lrs", linspace(0.01, 0.2, 11), 1e-12, 100.0);
  std::vector<double> phis;
  for (int k = 1; k <= 12; ++k) phis.push_back(k / 13.0);
  p.phis = r.reals("phis", phis, 1e-9, 1.0);
  p.hidden = r.count("hidden", 10, 1, 1024);
  p.batch_size = r.count("batch_size", 32, 1);
  p.steps = r.count("steps", 40000, 1);
  p.eval_size = r.count("eval_size", 4096, 1);
  p.tail_snapshots = r.count("tail_snapshots", 20, 1, 1000);
  p.probes = r.count("probes", 4, 1, 4096);
  p.init_scale = r.real("init_scale", 1.0, 1e-6, 1e3);
  p.epsilon = r.real("epsilon", 0.1, 0.0, 2.0);
  p.bound = r.real("bound", 2.15, 0.0, 1e6);
  p.rho_threshold = r.real("rho_threshold", -0.5, -1.0, 1.0);
  return p;
}

OrbitScanParams OrbitScanParams::read(ParamReader& r) {
  OrbitScanParams p;
  p.mode = r.choice("mode", "sharpness_orbit", {"sharpness_orbit", "symmetry_breaking", "scale_invariance"});
  p.seed = r.seed("seed", 13);
  const bool orbit_mode = p.mode == "sharpness_orbit", breaking = p.mode == "symmetry_breaking";
  p.widths = r.counts("widths", orbit_mode ? std::vector<std::size_t>{2, 10, 2}
                                : breaking ? std::vector<std::size_t>{4, 16, 4}
                                           : std::vector<std::size_t>{5, 3});
  if (p.mode == "scale_invariance" ? p.widths.size() != 2 : p.widths.size() != 3)
    throw std::invalid_argument("orbit_scan: 'widths' must be {d_in, d_out} or a 2-layer {in, hidden, out}");
  p.teacher_widths = r.counts("teacher_widths", breaking ? std::vector<std::size_t>{4, 8, 4} : p.widths);
  if (p.teacher_widths.front() != p.widths.front() || p.teacher_widths.back() != p.widths.back())
    throw std::invalid_argument("orbit_scan: teacher and student must share input and output widths");
  p.activation = r.choice("activation", breaking ? "relu" : "identity", {"identity", "relu", "tanh"});
  p.phi = r.real("phi", 0.5, 1e-6, 1e6);
  p.noise = r.real("noise", 0.5, 0.0, 1e3);
  p.lr = r.real("lr", orbit_mode ? 0.01 : breaking ? 0.05 : 0.2, 1e-12, 100.0);
  p.batch_size = r.count("batch_size", breaking ? 16 : 32, 1);
  p.steps = r.count("steps", 20000, 1);
  p.record_every = r.count("record_every", 500, 1);
  p.probes = r.count("probes", orbit_mode ? 64 : 256, 1);
  p.eval_size = r.count("eval_size", orbit_mode ? 4096 : breaking ? 4096 : 1024, 1);
  p.n_batches = r.count("n_batches", 400, 2);
  p.lambdas = r.reals("lambdas", linspace(-3.0, 3.0, 13), -50.0, 50.0);
  p.orbit_lambda = r.real("orbit_lambda", orbit_mode ? 3.0 : 0.5, -50.0, 50.0);
  p.factor = r.real("factor", 10.0, 0.0, 1e12);
  p.f_se_multiple = r.real("f_se_multiple", 5.0, 0.0, 1e6);
  p.l_se_multiple = r.real("l_se_multiple", 2.0, 0.0, 1e6);
  p.exact_tol = r.real("exact_tol", 1e-12, 0.0, 1.0);
  p.window = r.count("window", 5, 1);
  p.burn_in = r.count("burn_in", p.mode == "scale_invariance" ? 2000 : 0);
  return p;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

// End-to-end linear map M1 W_D ... W_1 M2 M3 of a deep linear network, d_y x d_x.
Matrix end_to_end(const Network& net) {
  return forward_batch(net, Matrix::identity(net.input_dim())).transpose();
}

Matrix random_spd(Rng& rng, std::size_t n) {
  const Matrix a = random_well_conditioned(rng, n, 3.0);
  return symmetrize(matmul_nt(a, a));
}

void run_consistency(const SharpnessClosedFormParams& p, ExperimentReport& out) {
  Recorder rec(out);
  Rng rng(derive_seed(p.seed, 200));
  const Matrix v = gaussian_matrix(rng, p.d_y, p.d_x) * p.v_scale;
  const DataModel dm = DataModel::linear(v, random_spd(rng, p.d_x), random_spd(rng, p.d_y), p.seed);
  Embeddings raw;
  raw.m1 = random_well_conditioned(rng, p.d_y);
  raw.m2 = random_well_conditioned(rng, p.d_x);
  raw.m3 = random_well_conditioned(rng, p.d_x);
  const Embeddings emb = normalize_embeddings(raw, dm);
  const std::vector<std::size_t> widths(p.depth - 1, p.width);

  const DeepLinearSolution sol = deep_linear_solution(dm, emb, p.depth, widths, rng);
  const Network net = sol.network();
  const double recon = relative_error(end_to_end(net), v);
  double ortho = 0.0;
  for (const auto& u : sol.u)
    ortho = std::max(ortho, max_abs_diff(matmul_tn(u, u), Matrix::identity(u.cols())));
  out.summary["entropic_reconstruction_error"] = recon;
  out.summary["orthonormality_error"] = ortho;
  out.summary["trace_s_prime"] = sol.trace_s_prime();
  out.summary["rank"] = sol.rank;
  rec.less("entropic_solution_reconstructs_v", recon, p.reconstruct_tol);
  rec.less("hidden_bases_orthonormal", ortho, p.orthonormal_tol);

  EntropicConfig cfg;
  cfg.lr = p.lr;
  cfg.batch_size = p.batch_size;
  Rng brng(derive_seed(p.seed, 201));
  const auto batches = sample_batches(dm, brng, p.batch_size, p.n_batches);
  const GradientCovariance cov(net, batches);
  double scale = 0.0;
  for (std::size_t l = 0; l < p.depth; ++l) scale = std::max(scale, p.lr * cov.layer_trace(l).value);
  // Rounding floor for pairs whose traces agree sample by sample.
  const double floor = 1e-12 * scale;
  double worst_z = 0.0;
  for (std::size_t i = 0; i < p.depth; ++i)
    for (std::size_t j = i + 1; j < p.depth; ++j) {
      const Generator gen = Generator::layer_rescaling(net, i, j);
      const Estimate e = master_balance_residual(net, batches, gen, cfg);
      const double z = std::abs(e.value) / (e.std_error + floor);
      const std::string series = "pair_" + std::to_string(i + 1) + "_" + std::to_string(j + 1);
      rec.add(series, 0, "master_residual", e.value);
      rec.add(series, 0, "master_residual_se", e.std_error);
      rec.add(series, 0, "z", z);
      worst_z = std::max(worst_z, z);
    }
  out.summary["master_balance_max_z"] = worst_z;
  rec.check("master_balance_within_se", worst_z <= p.se_multiple, worst_z,
            "max |residual| / SE over layer pairs <= " + fmt(p.se_multiple));

  const WdSolution wd = deep_linear_wd_solution(v, emb, p.depth, widths, rng);
  const Network wnet = wd.network();
  double tmax = 0.0, tmin = INFINITY;
  for (const auto& w : wnet.weights()) {
    const double t = frobenius_sq(w);
    tmax = std::max(tmax, t);
    tmin = std::min(tmin, t);
  }
  const double spread = tmax > 0.0 ? (tmax - tmin) / tmax : 0.0;
  const double wd_recon = relative_error(end_to_end(wnet), v);
  out.summary["wd_trace_spread"] = spread;
  out.summary["wd_reconstruction_error"] = wd_recon;
  rec.less("wd_solution_reconstructs_v", wd_recon, p.reconstruct_tol);
  rec.less("wd_weight_traces_equal", spread, p.trace_tol);
}

void run_entropic_optimum(const SharpnessClosedFormParams& p, ExperimentReport& out, std::size_t par) {
  Recorder rec(out);
  const std::size_t n = p.phis.size();
  std::vector<TrainResult> results(n);
  std::vector<DataModel> models;
  for (double phi : p.phis) models.push_back(DataModel::balance(phi, p.seed));
  parallel_for(n, par, [&](std::size_t i) {
    Rng init_rng(derive_seed(p.seed, 300));
    const Network net = Network::deep_linear({2, p.hidden, 2}, init_rng);
    TrainConfig tc;
    tc.entropic.lr = p.lr;
    tc.entropic.batch_size = p.batch_size;
    tc.steps = p.steps;
    tc.record_every = p.record_every;
    tc.seed = derive_seed(p.seed, 1);
    tc.metrics.entropy = false;
    tc.metrics.balance = false;
    tc.metrics.sharpness_every = p.record_every;
    tc.metrics.sharpness_probes = p.probes;
    tc.metrics.final_probes = p.probes;
    tc.metrics.lambda_max = false;
    tc.metrics.eval_size = p.eval_size;
    results[i] = train(net, models[i], tc);
  });

  const double minimum = 2.0 * min_sharpness_paper(models.front(), 2);
  out.summary["minimum_sharpness"] = minimum;
  std::vector<std::pair<double, double>> by_phi;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string series = "phi_" + fmt(p.phis[i]);
    rec.trajectory(series, results[i].trajectory);
    if (results[i].diverged) {
      rec.check(series + "_stable", false, 0.0, "training diverged");
      continue;
    }
    const double t = tail_mean(results[i].trajectory, p.tail_fraction, &MetricRecord::sharpness);
    const double predicted = 2.0 * entropic_sharpness_paper(models[i]);
    out.summary[series] = {{"measured", t}, {"predicted", predicted}};
    rec.within("sharpness_matches_prediction_" + series, t, predicted, p.tolerance);
    if (std::abs(p.phis[i] - 1.0) < 1e-12)
      rec.within("sharpness_attains_minimum_" + series, t, minimum, p.min_tolerance);
    else
      rec.greater("sharpness_exceeds_minimum_" + series, t, minimum);
    by_phi.emplace_back(p.phis[i], t);
  }
  std::sort(by_phi.begin(), by_phi.end(), [](auto& a, auto& b) { return a.first > b.first; });
  bool monotone = by_phi.size() == n;
  double worst_step = INFINITY;
  for (std::size_t i = 1; i < by_phi.size(); ++i) {
    worst_step = std::min(worst_step, by_phi[i].second - by_phi[i - 1].second);
    if (!(by_phi[i].second > by_phi[i - 1].second)) monotone = false;
  }
  rec.check("sharpness_increases_as_phi_decreases", monotone, worst_step,
            "smallest increment between consecutive phi values");
}

}  // namespace

void run(const SharpnessClosedFormParams& p, ExperimentReport& out, std::size_t parallelism) {
  if (p.mode == "consistency")
    run_consistency(p, out);
  else
    run_entropic_optimum(p, out, parallelism);
}

void run(const EosSweepParams& p, ExperimentReport& out, std::size_t parallelism) {
  Recorder rec(out);
  Rng init_rng(derive_seed(p.seed, 400));
  const Network init = Network::deep_linear({2, p.hidden, 2}, init_rng, p.init_scale);
  SweepGrid grid;
  grid.axes = {"lr", "phi"};
  grid.base_seed = p.seed;
  // Tail snapshots of lambda_max per cell; each cell writes only its own slot.
  const std::size_t n_cells = p.lrs.size() * p.phis.size();
  std::vector<std::vector<double>> tail(n_cells);
  const std::size_t every = std::max<std::size_t>(1, p.steps / (2 * p.tail_snapshots));
  const std::size_t start = p.steps - std::min(p.steps, every * (p.tail_snapshots - 1));
  for (double lr : p.lrs)
    for (double phi : p.phis) {
      const std::size_t idx = grid.cells.size();
      SweepCell c{{{"lr", lr}, {"phi", phi}}, init, DataModel::balance(phi, p.seed), {}};
      c.config.entropic.lr = lr;
      c.config.entropic.batch_size = p.batch_size;
      c.config.steps = p.steps;
      c.config.record_every = p.steps;
      c.config.metrics.entropy = false;
      c.config.metrics.balance = false;
      c.config.metrics.sharpness_every = 0;
      c.config.metrics.eval_size = p.eval_size;
      const DataModel dm = c.dm;
      const std::uint64_t cell_seed = derive_seed(p.seed, 1000 + idx);
      c.config.observe_every = every;
      c.config.observer = [&tail, idx, start, dm, cell_seed, lr, eval_size = p.eval_size,
                           probes = p.probes](std::size_t step, const Network& net) {
        if (step < start) return;
        Rng rng(derive_seed(cell_seed, step));
        const Batch eval = sample_batch(dm, rng, eval_size);
        tail[idx].push_back(lr * measure_sharpness(net, eval, probes, rng, true).lambda_max);
      };
      grid.cells.push_back(std::move(c));
    }
  const auto cells = run_sweep(grid, parallelism);

  double worst = 0.0;
  std::size_t edge = 0, stable_cells = 0;
  std::vector<bool> lr_stable(p.lrs.size(), true);
  std::vector<std::vector<double>> elm(p.lrs.size(), std::vector<double>(p.phis.size(), NAN));
  for (const auto& c : cells) {
    const std::size_t i = c.index / p.phis.size(), j = c.index % p.phis.size();
    const std::string series = "cell_" + std::to_string(c.index);
    rec.add(series, 0, "lr", p.lrs[i]);
    rec.add(series, 0, "phi", p.phis[j]);
    const bool ok = c.ok && !c.result.diverged && !tail[c.index].empty();
    if (!c.ok) out.failures.push_back(series + ": " + c.error);
    rec.add(series, 0, "diverged", ok ? 0.0 : 1.0);
    if (!ok) {
      lr_stable[i] = false;
      continue;
    }
    const auto& t = tail[c.index];
    const double mean_elm = mean(t);
    const double max_elm = *std::max_element(t.begin(), t.end());
    elm[i][j] = mean_elm;
    rec.add(series, 0, "eta_lambda_max", mean_elm);
    rec.add(series, 0, "eta_lambda_max_tail_max", max_elm);
    rec.add(series, 0, "eta_lambda_max_final", t.back());
    rec.add(series, 0, "loss", c.result.trajectory.back().loss);
    worst = std::max(worst, max_elm);
    if (max_elm >= 2.0 - p.epsilon) ++edge;
    ++stable_cells;
  }
  out.summary["stable_cells"] = stable_cells;
  out.summary["cells"] = cells.size();
  out.summary["cells_at_edge"] = edge;
  out.summary["max_eta_lambda_max"] = worst;
  rec.check("eta_lambda_max_bounded", stable_cells > 0 && worst <= p.bound, worst, "<= " + fmt(p.bound));

  std::size_t best = p.lrs.size();
  for (std::size_t i = 0; i < p.lrs.size(); ++i)
    if (lr_stable[i] && (best == p.lrs.size() || p.lrs[i] > p.lrs[best])) best = i;
  if (best == p.lrs.size()) {
    rec.check("phi_trend_at_largest_stable_lr", false, NAN, "no fully stable learning rate");
    return;
  }
  const double rho = spearman(p.phis, elm[best]);
  out.summary["largest_stable_lr"] = p.lrs[best];
  out.summary["spearman_phi_eta_lambda_max"] = rho;
  rec.less("phi_trend_at_largest_stable_lr", rho, p.rho_threshold,
           "Spearman(phi, eta*lambda_max) at lr " + fmt(p.lrs[best]));
}

namespace {

Network permute_hidden(const Network& net, Rng& rng) {
  const std::size_t h = net.weight(0).rows();
  std::vector<std::size_t> perm(h);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = h; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  Network out = net;
  const Matrix& w1 = net.weight(0);
  const Matrix& w2 = net.weight(1);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t c = 0; c < w1.cols(); ++c) out.weight(0)(i, c) = w1(perm[i], c);
    for (std::size_t r = 0; r < w2.rows(); ++r) out.weight(1)(r, i) = w2(r, perm[i]);
  }
  return out;
}

std::vector<double> batch_entropies(const Network& net, std::span<const Batch> batches, double eta) {
  std::vector<double> s;
  s.reserve(batches.size());
  for (const auto& b : batches) {
    double q = 0.0;
    for (const auto& g : batch_gradient(net, b)) q += frobenius_sq(g);
    s.push_back(0.25 * eta * q);
  }
  return s;
}

Estimate paired(std::span<const double> a, std::span<const double> b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return mean_estimate(d);
}

void run_sharpness_orbit(const OrbitScanParams& p, ExperimentReport& out) {
  Recorder rec(out);
  const DataModel dm = DataModel::balance(p.phi, p.seed);
  Rng init_rng(derive_seed(p.seed, 500));
  TrainConfig tc;
  tc.entropic.lr = p.lr;
  tc.entropic.batch_size = p.batch_size;
  tc.steps = p.steps;
  tc.record_every = p.steps;
  tc.seed = derive_seed(p.seed, 1);
  tc.metrics.entropy = false;
  tc.metrics.balance = false;
  tc.metrics.sharpness_every = 0;
  const TrainResult res = train(Network::deep_linear(p.widths, init_rng), dm, tc);
  if (res.diverged) {
    rec.check("training_stable", false, 0.0, "training diverged");
    return;
  }
  const Network& net = res.final;
  const Generator gen = Generator::layer_rescaling(net, 0, 1);
  Rng erng(derive_seed(p.seed, 501));
  const Batch eval = sample_batch(dm, erng, p.eval_size);
  auto sharp = [&](double lambda) {
    Rng prng(derive_seed(p.seed, 502));
    return measure_sharpness(gen.act(net, lambda), eval, p.probes, prng, false).trace;
  };
  for (double l : p.lambdas) rec.add("orbit", l, "sharpness", sharp(l));
  const double t0 = sharp(0.0), tp = sharp(p.orbit_lambda), tm = sharp(-p.orbit_lambda);
  out.summary["sharpness_at_0"] = t0;
  out.summary["sharpness_at_plus"] = tp;
  out.summary["sharpness_at_minus"] = tm;
  rec.greater("orbit_sharpness_plus", tp / t0, p.factor, "T(+lambda) / T(0)");
  rec.greater("orbit_sharpness_minus", tm / t0, p.factor, "T(-lambda) / T(0)");
}

void run_breaking(const OrbitScanParams& p, ExperimentReport& out) {
  Recorder rec(out);
  Rng teacher_rng(derive_seed(p.seed, 510));
  Rng init_rng(derive_seed(p.seed, 511));
  const Activation act = Activation::from_name(p.activation);
  const DataModel dm = DataModel::teacher(Network::mlp(p.teacher_widths, act, teacher_rng),
                                          Matrix::identity(p.widths.front()),
                                          Matrix::identity(p.widths.back()) * (p.noise * p.noise), p.seed);
  TrainConfig tc;
  tc.entropic.lr = p.lr;
  tc.entropic.batch_size = p.batch_size;
  tc.steps = p.steps;
  tc.record_every = p.record_every;
  tc.seed = derive_seed(p.seed, 1);
  tc.metrics.sharpness_every = 0;
  tc.metrics.entropy = false;
  tc.metrics.balance = false;
  const TrainResult res = train(Network::mlp(p.widths, act, init_rng), dm, tc);
  if (res.diverged) {
    rec.check("training_stable", false, 0.0, "training diverged");
    return;
  }
  const Network& net = res.final;

  EntropicConfig cfg;
  cfg.lr = p.lr;
  cfg.batch_size = p.batch_size;
  Rng erng(derive_seed(p.seed, 512));
  Batch eval = sample_batch(dm, erng, p.eval_size);
  std::vector<Batch> batches = sample_batches(dm, erng, p.batch_size, p.n_batches);
  const FreeEnergyEvaluator evaluator(eval, batches, cfg);

  const Generator gen = Generator::layer_rescaling(net, 0, 1);
  const OrbitScan scan = free_energy_orbit_scan(net, evaluator, gen, p.lambdas);
  for (std::size_t k = 0; k < scan.lambdas.size(); ++k) {
    rec.add("orbit", scan.lambdas[k], "free_energy", scan.values[k].total.value);
    rec.add("orbit", scan.lambdas[k], "loss", scan.values[k].loss.value);
    rec.add("orbit", scan.lambdas[k], "entropy", scan.values[k].entropy.value);
  }
  out.summary["orbit_argmin"] = scan.argmin;

  const Network moved = gen.act(net, p.orbit_lambda);
  const auto l0 = per_sample_losses(net, eval), l1 = per_sample_losses(moved, eval);
  const auto s0 = batch_entropies(net, batches, p.lr), s1 = batch_entropies(moved, batches, p.lr);
  const Estimate dl = paired(l1, l0), ds = paired(s1, s0);
  const double df = dl.value + ds.value;
  const double df_se = std::hypot(dl.std_error, ds.std_error);
  const double l_se = mean_estimate(l0).std_error;
  const double dl_abs = std::abs(mean(l1) - mean(l0));
  out.summary["delta_free_energy"] = df;
  out.summary["delta_free_energy_se"] = df_se;
  out.summary["delta_loss"] = dl_abs;
  out.summary["loss_se"] = l_se;
  rec.greater("free_energy_changes_on_orbit", std::abs(df) / df_se, p.f_se_multiple,
              "|dF| in units of its standard error");
  rec.less("loss_invariant_on_orbit", dl_abs / l_se, p.l_se_multiple, "|dL| in units of the loss standard error");

  Rng prng(derive_seed(p.seed, 513));
  const Network permuted = permute_hidden(net, prng);
  const double f0 = evaluator.evaluate(net).total.value;
  const double fp = evaluator.evaluate(permuted).total.value;
  const double rel = std::abs(fp - f0) / std::max(std::abs(f0), 1e-300);
  out.summary["permutation_relative_change"] = rel;
  rec.check("permutation_preserves_free_energy", rel <= p.exact_tol, rel,
            "relative change <= " + fmt(p.exact_tol));
}

void run_scale_invariance(const OrbitScanParams& p, ExperimentReport& out) {
  Recorder rec(out);
  Rng teacher_rng(derive_seed(p.seed, 520));
  Rng init_rng(derive_seed(p.seed, 521));
  const std::size_t din = p.widths[0], dout = p.widths[1];
  const Matrix v = gaussian_matrix(teacher_rng, dout, din) * (1.0 / std::sqrt(static_cast<double>(din)));
  const DataModel dm = DataModel::linear(v, Matrix::identity(din), Matrix::identity(dout) * (p.noise * p.noise),
                                         p.seed);
  TrainConfig tc;
  tc.entropic.lr = p.lr;
  tc.entropic.batch_size = p.batch_size;
  tc.steps = p.steps;
  tc.record_every = p.record_every;
  tc.seed = derive_seed(p.seed, 1);
  tc.metrics.entropy = false;
  tc.metrics.balance = false;
  tc.metrics.sharpness_every = p.record_every;
  tc.metrics.sharpness_probes = p.probes;
  tc.metrics.final_probes = p.probes;
  tc.metrics.lambda_max = false;
  tc.metrics.eval_size = p.eval_size;
  const TrainResult res = train(Network::scale_invariant(dout, din, init_rng), dm, tc);
  rec.trajectory("scale_invariant", res.trajectory);
  if (res.diverged) {
    rec.check("training_stable", false, 0.0, "training diverged");
    return;
  }
  std::vector<double> t;
  std::vector<std::size_t> steps;
  for (const auto& r : res.trajectory)
    if (r.step >= p.burn_in) {
      t.push_back(r.sharpness);
      steps.push_back(r.step);
    }
  if (t.size() < 2) throw std::invalid_argument("orbit_scan: fewer than two checkpoints after burn_in");
  const auto smooth = moving_average(t, p.window);
  double worst = -INFINITY;
  for (std::size_t i = 0; i < smooth.size(); ++i) {
    if (i) worst = std::max(worst, smooth[i] - smooth[i - 1]);
    rec.add("scale_invariant", static_cast<double>(steps[i]), "sharpness_smoothed", smooth[i]);
  }
  out.summary["initial_sharpness"] = t.front();
  out.summary["final_sharpness"] = t.back();
  out.summary["max_smoothed_increase"] = worst;
  rec.check("sharpness_nonincreasing", worst <= 0.0, worst, "largest increase of the smoothed trace");
}

}  // namespace

void run(const OrbitScanParams& p, ExperimentReport& out) {
  if (p.mode == "sharpness_orbit")
    run_sharpness_orbit(p, out);
  else if (p.mode == "symmetry_breaking")
    run_breaking(p, out);
  else
    run_scale_invariance(p, out);
}

}  // namespace entropic::recipes

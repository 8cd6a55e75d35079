#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "entropic/alignment.hpp"
#include "entropic/closed_form.hpp"
#include "entropic/linalg.hpp"
#include "entropic/stats.hpp"
#include "recipes.hpp"

namespace entropic::recipes {

EntropicOrderParams EntropicOrderParams::read(ParamReader& r) {
  EntropicOrderParams p;
  p.lrs = r.reals("lrs", {0.2, 0.1, 0.05, 0.025, 0.0125}, 1e-12, 10.0);
  if (p.lrs.size() < 2) throw std::invalid_argument("entropic_order: need at least two learning rates");
  p.n = r.count("n", 10000, 10);
  p.x = r.real("x", 1.0);
  p.y = r.real("y", 0.0);
  p.w0 = r.real("w0", 1.0);
  p.phi2_coefficient = r.real("phi2_coefficient", 1.0 / 6.0, 0.0, 10.0);
  p.reference_coefficient = r.real("reference_coefficient", 0.5, 0.0, 10.0);
  p.slope1 = r.real("slope1", 3.0);
  p.slope2 = r.real("slope2", 4.0);
  p.tol1 = r.real("tol1", 0.3, 0.0, 10.0);
  p.tol2 = r.real("tol2", 0.4, 0.0, 10.0);
  return p;
}

AlignmentParams AlignmentParams::read(ParamReader& r) {
  AlignmentParams p;
  p.seed = r.seed("seed", 17);
  p.depth = r.count("depth", 4, 2, 16);
  p.width = r.count("width", 16, 1, 4096);
  p.d_x = r.count("d_x", 4, 1, 4096);
  p.d_y = r.count("d_y", 4, 1, 4096);
  if (p.width < std::min(p.d_x, p.d_y)) throw std::invalid_argument("alignment: 'width' must be >= min(d_x, d_y)");
  p.v_scale = r.real("v_scale", 1.0, 1e-6, 1e3);
  p.noise = r.real("noise", 0.5, 0.0, 1e3);
  p.lr = r.real("lr", 0.02, 1e-12, 10.0);
  p.max_cond = r.real("max_cond", 5.0, 1.0, 1e6);
  p.init_scale = r.real("init_scale", 0.5, 1e-6, 1e3);
  p.weight_decays = r.reals("weight_decays", {0.0, 0.01}, 0.0, 10.0);
  if (p.weight_decays.front() != 0.0)
    throw std::invalid_argument("alignment: the first weight decay is the reference run and must be 0");
  p.batch_size = r.count("batch_size", 32, 1);
  p.steps = r.count("steps", 200000, 1);
  p.record_every = r.count("record_every", 10000, 1);
  p.samples = r.count("samples", 512, 2);
  p.normalize = r.flag("normalize", true);
  p.idx_images = r.text("idx_images", "");
  p.idx_labels = r.text("idx_labels", "");
  if (p.idx_images.empty() != p.idx_labels.empty())
    throw std::invalid_argument("alignment: give both 'idx_images' and 'idx_labels' or neither");
  p.align_threshold = r.real("align_threshold", 0.95, 0.0, 1.0);
  p.procrustes_threshold = r.real("procrustes_threshold", 0.15, 0.0, 10.0);
  p.c0_tolerance = r.real("c0_tolerance", 0.15, 0.0, 10.0);
  p.gap = r.real("gap", 0.10, 0.0, 1.0);
  return p;
}

LrDropParams LrDropParams::read(ParamReader& r) {
  LrDropParams p;
  p.seed = r.seed("seed", 19);
  p.widths = r.counts("widths", {8, 32, 4});
  p.teacher_widths = r.counts("teacher_widths", {8, 16, 4});
  if (p.widths.size() < 2 || p.teacher_widths.front() != p.widths.front() ||
      p.teacher_widths.back() != p.widths.back())
    throw std::invalid_argument("lr_drop: teacher and student must share input and output widths");
  p.activation = r.choice("activation", "tanh", {"identity", "relu", "tanh"});
  p.noise = r.real("noise", 0.5, 0.0, 1e3);
  p.input_variance = r.real("input_variance", 1.0, 1e-12, 1e6);
  p.lr = r.real("lr", 0.05, 1e-12, 100.0);
  p.weight_decay = r.real("weight_decay", 5e-4, 0.0, 10.0);
  p.drop_factor = r.real("drop_factor", 10.0, 1.0, 1e6);
  p.batch_size = r.count("batch_size", 32, 1);
  p.steps = r.count("steps", 20000, 2);
  p.drop_step = r.count("drop_step", p.steps / 2, 1);
  p.window = r.count("window", 500, 1);
  if (p.drop_step < p.window || p.drop_step + p.window > p.steps)
    throw std::invalid_argument("lr_drop: the drop must leave a full window on both sides");
  p.record_every = r.count("record_every", 10, 1);
  p.n_batches = r.count("n_batches", 16, 2);
  return p;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

void run(const EntropicOrderParams& p, ExperimentReport& out) {
  Recorder rec(out);
  const Network net(Arch::DeepLinear, {Matrix(1, 1, p.w0)});
  const std::vector<double> x{p.x}, y{p.y};
  auto sweep = [&](int order, double coeff, const std::string& series, bool* ok) {
    std::vector<double> d;
    for (double lr : p.lrs) {
      EntropicConfig cfg;
      cfg.lr = lr;
      cfg.phi2_coefficient = coeff;
      const EquivalenceResult e = verify_entropic_equivalence(net, x, y, cfg, p.n, order);
      if (e.diverged || !(e.discrepancy > 0.0)) *ok = false;
      rec.add(series, lr, "discrepancy", e.discrepancy);
      d.push_back(e.discrepancy);
    }
    return *ok ? loglog_slope(p.lrs, d) : NAN;
  };
  bool ok1 = true, ok2 = true, ok3 = true;
  const double s1 = sweep(1, p.phi2_coefficient, "phi1", &ok1);
  const double s2 = sweep(2, p.phi2_coefficient, "phi1_phi2", &ok2);
  const double s3 = sweep(2, p.reference_coefficient, "phi1_phi2_reference", &ok3);
  out.summary["slope_phi1"] = s1;
  out.summary["slope_phi1_phi2"] = s2;
  out.summary["phi2_coefficient"] = p.phi2_coefficient;
  out.summary["slope_phi1_phi2_reference"] = s3;
  out.summary["reference_coefficient"] = p.reference_coefficient;
  rec.check("slope_first_order", ok1 && std::abs(s1 - p.slope1) <= p.tol1, s1,
            fmt(p.slope1) + " +- " + fmt(p.tol1));
  rec.check("slope_second_order", ok2 && std::abs(s2 - p.slope2) <= p.tol2, s2,
            fmt(p.slope2) + " +- " + fmt(p.tol2) + " with phi2 coefficient " + fmt(p.phi2_coefficient));
}

namespace {

struct PairStats {
  double min_align = INFINITY, mean_align = 0.0, max_resid = 0.0, max_c0_err = 0.0;
};

}  // namespace

void run(const AlignmentParams& p, ExperimentReport& out, std::size_t parallelism) {
  Recorder rec(out);
  const bool idx = !p.idx_images.empty();
  Rng data_rng(derive_seed(p.seed, 600));
  std::optional<Batch> dataset;
  std::size_t dx = p.d_x, dy = p.d_y;
  if (idx) {
    dataset = load_idx(p.idx_images, p.idx_labels);
    dx = dataset->x.cols();
    dy = dataset->y.cols();
  }
  const Matrix v = idx ? Matrix(dy, dx)
                       : gaussian_matrix(data_rng, dy, dx) * (p.v_scale / std::sqrt(static_cast<double>(dx)));
  const DataModel dm = DataModel::linear(v, Matrix::identity(dx), Matrix::identity(dy) * (p.noise * p.noise), p.seed);

  std::vector<std::size_t> widths{dx};
  for (std::size_t i = 0; i + 1 < p.depth; ++i) widths.push_back(p.width);
  widths.push_back(dy);
  std::vector<Network> inits;
  for (std::size_t k = 0; k < 2; ++k) {
    Rng mrng(derive_seed(p.seed, 610 + k));
    Embeddings emb;
    if (idx) {
      emb.m3 = random_orthonormal(mrng, dx, dx);
    } else {
      emb.m1 = random_well_conditioned(mrng, dy, p.max_cond);
      emb.m2 = random_well_conditioned(mrng, dx, p.max_cond);
      emb.m3 = random_well_conditioned(mrng, dx, p.max_cond);
      if (p.normalize) emb = normalize_embeddings(emb, dm);
    }
    Rng irng(derive_seed(p.seed, 620 + k));
    Network net = Network::deep_linear(widths, irng, p.init_scale);
    net.set_embeddings(emb.m1, emb.m2, emb.m3);
    inits.push_back(std::move(net));
  }

  const std::size_t runs = p.weight_decays.size();
  std::vector<TrainResult> results(2 * runs);
  parallel_for(2 * runs, parallelism, [&](std::size_t i) {
    const std::size_t g = i / 2, k = i % 2;
    TrainConfig tc;
    tc.entropic.lr = p.lr;
    tc.entropic.weight_decay = p.weight_decays[g];
    tc.entropic.batch_size = p.batch_size;
    tc.steps = p.steps;
    tc.record_every = p.record_every;
    tc.seed = derive_seed(p.seed, 1 + k);
    tc.metrics.entropy = false;
    tc.metrics.balance = false;
    tc.metrics.sharpness_every = 0;
    tc.dataset = dataset;
    results[i] = train(inits[k], dm, tc);
  });

  Rng xrng(derive_seed(p.seed, 630));
  const Matrix x = idx ? dataset->slice(0, std::min(p.samples, dataset->size())).x
                       : sample_batch(dm, xrng, p.samples).x;
  double s_trace = 0.0;
  std::size_t rank = 0;
  if (!idx) {
    const SvdResult s = svd(dm.sqrt_sigma_eps() * v * dm.sqrt_sigma_x());
    rank = numerical_rank(s.S);
    for (std::size_t i = 0; i < rank; ++i) s_trace += s.S[i];
  }

  std::vector<PairStats> stats(runs);
  for (std::size_t g = 0; g < runs; ++g) {
    const std::string series = "gamma_" + fmt(p.weight_decays[g]);
    bool ok = true;
    for (std::size_t k = 0; k < 2; ++k) {
      rec.trajectory(series + (k ? "_b" : "_a"), results[2 * g + k].trajectory);
      if (results[2 * g + k].diverged) ok = false;
    }
    if (!ok) {
      out.failures.push_back(series + ": training diverged");
      stats[g].min_align = stats[g].mean_align = stats[g].max_resid = stats[g].max_c0_err = NAN;
      continue;
    }
    const Network& a = results[2 * g].final;
    const Network& b = results[2 * g + 1].final;
    PairStats& st = stats[g];
    std::size_t n = 0;
    for (std::size_t la = 1; la < p.depth; ++la) {
      const Matrix ha = hidden_batch(a, x, la);
      for (std::size_t lb = 1; lb < p.depth; ++lb) {
        const Matrix hb = hidden_batch(b, x, lb);
        const double al = gram_alignment(ha, hb);
        const ProcrustesResult pr = procrustes_fit(ha, hb);
        const double step = static_cast<double>(10 * la + lb);
        rec.add(series, step, "gram_alignment", al);
        rec.add(series, step, "cka", cka(ha, hb));
        rec.add(series, step, "procrustes_residual", pr.residual);
        rec.add(series, step, "c0", pr.c0);
        st.min_align = std::min(st.min_align, al);
        st.mean_align += al;
        st.max_resid = std::max(st.max_resid, pr.residual);
        if (!idx) {
          const double pred = predicted_c0(s_trace, rank, la, p.depth, lb, p.depth);
          rec.add(series, step, "c0_predicted", pred);
          st.max_c0_err = std::max(st.max_c0_err, std::abs(pr.c0 - pred) / pred);
        }
        ++n;
      }
    }
    st.mean_align /= static_cast<double>(n);
    out.summary[series] = {{"min_alignment", st.min_align},
                           {"mean_alignment", st.mean_align},
                           {"max_procrustes_residual", st.max_resid},
                           {"max_c0_relative_error", st.max_c0_err},
                           {"final_loss_a", results[2 * g].trajectory.back().loss},
                           {"final_loss_b", results[2 * g + 1].trajectory.back().loss}};
  }
  if (idx) out.summary["note"] = "IDX analog: orthonormal views only, no closed-form c0";

  const PairStats& ref = stats.front();
  rec.check("alignment_all_pairs", ref.min_align >= p.align_threshold, ref.min_align,
            "min Gram-cosine over hidden-layer pairs >= " + fmt(p.align_threshold));
  rec.check("procrustes_residual", ref.max_resid <= p.procrustes_threshold, ref.max_resid,
            "max residual <= " + fmt(p.procrustes_threshold));
  if (!idx)
    rec.check("c0_matches_prediction", ref.max_c0_err <= p.c0_tolerance, ref.max_c0_err,
              "max relative error <= " + fmt(p.c0_tolerance));
  for (std::size_t g = 1; g < runs; ++g) {
    const double drop = ref.mean_align - stats[g].mean_align;
    rec.check("weight_decay_lowers_alignment_gamma_" + fmt(p.weight_decays[g]), drop >= p.gap, drop,
              "mean alignment drop >= " + fmt(p.gap));
  }
}

void run(const LrDropParams& p, ExperimentReport& out) {
  Recorder rec(out);
  Rng teacher_rng(derive_seed(p.seed, 700));
  Rng init_rng(derive_seed(p.seed, 701));
  const Activation act = Activation::from_name(p.activation);
  const DataModel dm = DataModel::teacher(Network::mlp(p.teacher_widths, act, teacher_rng),
                                          Matrix::identity(p.widths.front()) * p.input_variance,
                                          Matrix::identity(p.widths.back()) * (p.noise * p.noise), p.seed);
  TrainConfig tc;
  tc.entropic.lr = p.lr;
  tc.entropic.weight_decay = p.weight_decay;
  tc.entropic.batch_size = p.batch_size;
  tc.entropic.n_batches = p.n_batches;
  tc.steps = p.steps;
  tc.schedule.points = {{p.drop_step, 1.0 / p.drop_factor}};
  tc.record_every = p.record_every;
  tc.seed = derive_seed(p.seed, 1);
  tc.metrics.balance = false;
  tc.metrics.sharpness_every = 0;
  const TrainResult res = train(Network::mlp(p.widths, act, init_rng), dm, tc);
  rec.trajectory("mlp", res.trajectory);
  if (res.diverged) {
    rec.check("training_stable", false, 0.0, "training diverged");
    return;
  }
  double pre = 0.0, post = 0.0;
  std::size_t npre = 0, npost = 0;
  for (const auto& r : res.trajectory) {
    if (r.step + p.window > p.drop_step && r.step <= p.drop_step) {
      pre += r.entropy;
      ++npre;
    } else if (r.step > p.drop_step && r.step <= p.drop_step + p.window) {
      post += r.entropy;
      ++npost;
    }
  }
  pre /= static_cast<double>(std::max<std::size_t>(npre, 1));
  post /= static_cast<double>(std::max<std::size_t>(npost, 1));
  out.summary["mean_entropy_before"] = pre;
  out.summary["mean_entropy_after"] = post;
  out.summary["analog"] = "small MLP in place of the residual network";
  rec.greater("entropy_rises_after_drop", post, pre, "mean S after the drop versus before");
}

}  // namespace entropic::recipes

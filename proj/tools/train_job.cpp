#include "train_job.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "entropic/datagen.hpp"
#include "entropic/matrix_io.hpp"

namespace entropic::cli {

namespace {

class Fields {
 public:
  explicit Fields(const nlohmann::json& j) : j_(j) {
    if (!j_.is_object()) throw std::invalid_argument("train: parameters must be an object");
  }

  template <typename T>
  T get(const std::string& key, T def) {
    seen_.insert(key);
    if (j_.contains(key)) {
      try {
        def = j_.at(key).get<T>();
      } catch (const nlohmann::json::exception&) {
        throw std::invalid_argument("train: parameter '" + key + "' has the wrong type");
      }
    }
    out_[key] = def;
    return def;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      (void)value;
      if (!seen_.count(key)) throw std::invalid_argument("train: unknown parameter '" + key + "'");
    }
  }

  const nlohmann::json& resolved() const { return out_; }

 private:
  const nlohmann::json& j_;
  std::set<std::string> seen_;
  nlohmann::json out_ = nlohmann::json::object();
};

}  // namespace

TrainJob parse_train_job(const nlohmann::json& parameters) {
  Fields f(parameters.is_null() ? nlohmann::json::object() : parameters);
  const auto seed = f.get<std::uint64_t>("seed", 0);
  const Arch arch = arch_from_string(f.get<std::string>("arch", "deep_linear"));
  auto widths = f.get<std::vector<std::size_t>>("widths", {2, 10, 2});
  const auto act_name = f.get<std::string>("activation", arch == Arch::Mlp ? "relu" : "identity");
  const int degree = f.get<int>("degree", 2);
  const double init_scale = f.get<double>("init_scale", 1.0);
  const auto data = f.get<std::string>("data", "linear");
  const double noise = f.get<double>("noise", 0.3);
  const double v_scale = f.get<double>("v_scale", 1.0);
  const double phi = f.get<double>("phi", 0.5);
  const auto teacher_widths = f.get<std::vector<std::size_t>>("teacher_widths", widths);
  const auto idx_images = f.get<std::string>("idx_images", "");
  const auto idx_labels = f.get<std::string>("idx_labels", "");

  TrainConfig tc;
  tc.entropic.lr = f.get<double>("lr", 0.01);
  tc.entropic.weight_decay = f.get<double>("weight_decay", 0.0);
  tc.entropic.batch_size = f.get<std::size_t>("batch_size", 32);
  tc.entropic.n_batches = f.get<std::size_t>("n_batches", 30);
  tc.entropic.decay = f.get<std::string>("decay_convention", "free_energy") == "plain_decay"
                          ? DecayConvention::PlainDecay
                          : DecayConvention::FreeEnergy;
  tc.steps = f.get<std::size_t>("steps", 10000);
  tc.record_every = f.get<std::size_t>("record_every", 100);
  tc.seed = seed;
  tc.decoupled_decay = f.get<bool>("decoupled_decay", false);
  tc.sampling = f.get<std::string>("sampling", "with_replacement") == "epochs" ? Sampling::Epochs
                                                                             : Sampling::WithReplacement;
  for (const auto& pt : f.get<std::vector<std::pair<std::size_t, double>>>("schedule", {}))
    tc.schedule.points.push_back(pt);
  tc.metrics.entropy = f.get<bool>("entropy", true);
  tc.metrics.balance = f.get<bool>("balance", true);
  tc.metrics.wu = f.get<bool>("wu", arch == Arch::AttentionToy);
  tc.metrics.sharpness_every = f.get<std::size_t>("sharpness_every", 0);
  tc.metrics.sharpness_probes = f.get<std::size_t>("sharpness_probes", 16);
  tc.metrics.final_probes = f.get<std::size_t>("final_probes", 64);
  tc.metrics.lambda_max = f.get<bool>("lambda_max", true);
  tc.metrics.eval_size = f.get<std::size_t>("eval_size", 1024);
  tc.checkpoint_steps = f.get<std::vector<std::size_t>>("checkpoint_steps", {});
  f.finish();

  if (data != "linear" && data != "teacher" && data != "balance" && data != "idx")
    throw std::invalid_argument("train: 'data' must be linear, teacher, balance or idx");
  if (widths.size() < 2) throw std::invalid_argument("train: 'widths' needs at least two entries");

  Rng teacher_rng(derive_seed(seed, 101));
  Rng init_rng(derive_seed(seed, 102));
  const Activation act = act_name == "poly" ? Activation::poly(degree) : Activation::from_name(act_name);

  std::optional<DataModel> dm;
  std::size_t dx = widths.front(), dy = widths.back();
  if (data == "idx") {
    tc.dataset = load_idx(idx_images, idx_labels);
    dx = tc.dataset->x.cols();
    dy = tc.dataset->y.cols();
    widths.front() = dx;
    widths.back() = dy;
    dm = DataModel::linear(Matrix(dy, dx), Matrix::identity(dx), Matrix::identity(dy), seed);
  } else if (data == "balance") {
    dm = DataModel::balance(phi, seed);
    dx = dy = 2;
  }

  Network net;
  switch (arch) {
    case Arch::DeepLinear: net = Network::deep_linear(widths, init_rng, init_scale); break;
    case Arch::Mlp: net = Network::mlp(widths, act, init_rng, init_scale); break;
    case Arch::AttentionToy:
      if (widths.size() != 2) throw std::invalid_argument("train: attention_toy widths are {d, r}");
      net = Network::attention_toy(widths[0], widths[1], init_rng, init_scale);
      dx = widths[0];
      dy = 1;
      break;
    case Arch::ScaleInvariantToy:
      if (widths.size() != 2) throw std::invalid_argument("train: scale_invariant widths are {d_in, d_out}");
      net = Network::scale_invariant(widths[1], widths[0], init_rng);
      break;
  }
  if (!dm) {
    const Matrix sx = Matrix::identity(dx);
    const Matrix se = Matrix::identity(dy) * (noise * noise);
    if (data == "teacher") {
      Network teacher = arch == Arch::AttentionToy
                            ? Network::attention_toy(widths[0], widths[1], teacher_rng)
                            : Network::mlp(teacher_widths, act, teacher_rng);
      dm = DataModel::teacher(std::move(teacher), sx, se, seed);
    } else {
      dm = DataModel::linear(gaussian_matrix(teacher_rng, dy, dx) * v_scale, sx, se, seed);
    }
  }
  tc.validate();
  return TrainJob{std::move(net), std::move(*dm), std::move(tc), f.resolved()};
}

TrainResult run_train_job(const TrainJob& job, const std::filesystem::path& dir, OutputFormat format) {
  TrainConfig tc = job.config;
  if (!dir.empty()) tc.checkpoint_dir = dir / "checkpoints";
  TrainResult res = train(job.init, job.data, tc);
  if (dir.empty()) return res;
  std::filesystem::create_directories(dir);
  if (format == OutputFormat::Csv) {
    std::ofstream os(dir / "trajectory.csv");
    write_trajectory_csv(os, res.trajectory);
  } else {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : res.trajectory)
      rows.push_back({{"step", r.step}, {"lr", r.lr}, {"loss", r.diverged ? nlohmann::json() : nlohmann::json(r.loss)},
                      {"entropy", r.entropy}, {"entropy_se", r.entropy_se}, {"grad_traces", r.grad_traces},
                      {"weight_traces", r.weight_traces}, {"layer_residual", r.layer_residual},
                      {"neuron_residual", r.neuron_residual}, {"wu_residual", r.wu_residual},
                      {"sharpness", r.sharpness}, {"lambda_max", r.lambda_max},
                      {"eta_lambda_max", r.eta_lambda_max}, {"diverged", r.diverged}});
    std::ofstream(dir / "trajectory.json") << rows.dump(1) << '\n';
  }
  nlohmann::json manifest = run_manifest(tc, job.data, job.init, res);
  manifest["parameters"] = job.resolved;
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
  save_checkpoint(res.final, dir / "final");
  return res;
}

}  // namespace entropic::cli

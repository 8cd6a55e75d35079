#include "entropic/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <mutex>
#include <thread>

#include "recipes.hpp"

namespace entropic {

namespace {

const std::pair<ExperimentKind, const char*> kKindNames[] = {
    {ExperimentKind::Balance, "balance"},
    {ExperimentKind::Alignment, "alignment"},
    {ExperimentKind::EosSweep, "eos_sweep"},
    {ExperimentKind::EntropicOrder, "entropic_order"},
    {ExperimentKind::LrDrop, "lr_drop"},
    {ExperimentKind::SharpnessClosedForm, "sharpness_closed_form"},
    {ExperimentKind::OrbitScan, "orbit_scan"},
    {ExperimentKind::PolynomialBalance, "polynomial_balance"},
};

}  // namespace

std::string to_string(ExperimentKind k) {
  for (const auto& [kind, name] : kKindNames)
    if (kind == k) return name;
  throw std::invalid_argument("unknown experiment kind");
}

ExperimentKind experiment_kind_from_string(const std::string& s) {
  for (const auto& [kind, name] : kKindNames)
    if (s == name) return kind;
  throw std::invalid_argument("unknown experiment kind: " + s);
}

ExperimentSpec ExperimentSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("experiment spec must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (key != "kind" && key != "parameters" && key != "output_directory")
      throw std::invalid_argument("unknown spec field: " + key);
  }
  if (!j.contains("kind") || !j.at("kind").is_string())
    throw std::invalid_argument("spec needs a string 'kind'");
  ExperimentSpec s;
  s.kind = experiment_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("parameters")) {
    if (!j.at("parameters").is_object()) throw std::invalid_argument("'parameters' must be an object");
    s.parameters = j.at("parameters");
  }
  if (j.contains("output_directory")) {
    if (!j.at("output_directory").is_string())
      throw std::invalid_argument("'output_directory' must be a string");
    s.output_directory = j.at("output_directory").get<std::string>();
  }
  return s;
}

nlohmann::json ExperimentSpec::to_json() const {
  return {{"kind", entropic::to_string(kind)},
          {"parameters", parameters},
          {"output_directory", output_directory.string()}};
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return ExperimentSpec::from_json(j);
}

bool ExperimentReport::passed() const {
  if (verdicts.empty()) return false;
  for (const auto& v : verdicts)
    if (!v.pass) return false;
  return true;
}

const Verdict& ExperimentReport::verdict(const std::string& name) const {
  for (const auto& v : verdicts)
    if (v.name == name) return v;
  throw std::out_of_range("no verdict named " + name);
}

namespace {

template <typename P>
P read_params(const nlohmann::json& j, const std::string& kind, nlohmann::json* resolved) {
  recipes::ParamReader r(j, kind);
  P p = P::read(r);
  r.finish();
  if (resolved) *resolved = r.resolved();
  return p;
}

}  // namespace

nlohmann::json resolve_parameters(ExperimentKind kind, const nlohmann::json& parameters) {
  using namespace recipes;
  const std::string name = to_string(kind);
  nlohmann::json out;
  switch (kind) {
    case ExperimentKind::Balance: read_params<BalanceParams>(parameters, name, &out); break;
    case ExperimentKind::PolynomialBalance:
      read_params<PolynomialBalanceParams>(parameters, name, &out);
      break;
    case ExperimentKind::EntropicOrder: read_params<EntropicOrderParams>(parameters, name, &out); break;
    case ExperimentKind::Alignment: read_params<AlignmentParams>(parameters, name, &out); break;
    case ExperimentKind::EosSweep: read_params<EosSweepParams>(parameters, name, &out); break;
    case ExperimentKind::SharpnessClosedForm:
      read_params<SharpnessClosedFormParams>(parameters, name, &out);
      break;
    case ExperimentKind::OrbitScan: read_params<OrbitScanParams>(parameters, name, &out); break;
    case ExperimentKind::LrDrop: read_params<LrDropParams>(parameters, name, &out); break;
  }
  return out;
}

ExperimentReport run_experiment(const ExperimentSpec& spec, std::size_t parallelism) {
  using namespace recipes;
  const auto t0 = std::chrono::steady_clock::now();
  const std::string name = to_string(spec.kind);
  ExperimentReport rep;
  rep.kind = spec.kind;
  const nlohmann::json& j = spec.parameters;
  switch (spec.kind) {
    case ExperimentKind::Balance: run(read_params<BalanceParams>(j, name, &rep.parameters), rep); break;
    case ExperimentKind::PolynomialBalance:
      run(read_params<PolynomialBalanceParams>(j, name, &rep.parameters), rep);
      break;
    case ExperimentKind::EntropicOrder:
      run(read_params<EntropicOrderParams>(j, name, &rep.parameters), rep);
      break;
    case ExperimentKind::Alignment:
      run(read_params<AlignmentParams>(j, name, &rep.parameters), rep, parallelism);
      break;
    case ExperimentKind::EosSweep:
      run(read_params<EosSweepParams>(j, name, &rep.parameters), rep, parallelism);
      break;
    case ExperimentKind::SharpnessClosedForm:
      run(read_params<SharpnessClosedFormParams>(j, name, &rep.parameters), rep, parallelism);
      break;
    case ExperimentKind::OrbitScan: run(read_params<OrbitScanParams>(j, name, &rep.parameters), rep); break;
    case ExperimentKind::LrDrop: run(read_params<LrDropParams>(j, name, &rep.parameters), rep); break;
  }
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!spec.output_directory.empty()) write_report(rep, spec.output_directory);
  return rep;
}

namespace {

nlohmann::json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_long_csv(std::ostream& os, const std::vector<Measurement>& rows) {
  os << "series,step,metric,value\n";
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& r : rows)
    os << csv_field(r.series) << ',' << r.step << ',' << csv_field(r.metric) << ',' << r.value << '\n';
}

nlohmann::json summary_json(const ExperimentReport& report) {
  nlohmann::json verdicts = nlohmann::json::array();
  for (const auto& v : report.verdicts)
    verdicts.push_back({{"name", v.name},
                        {"pass", v.pass},
                        {"value", finite_or_null(v.value)},
                        {"threshold", finite_or_null(v.threshold)},
                        {"relation", v.relation},
                        {"note", v.note}});
  return {{"kind", to_string(report.kind)},
          {"passed", report.passed()},
          {"verdicts", verdicts},
          {"metrics", report.summary},
          {"failures", report.failures},
          {"wall_seconds", report.wall_seconds}};
}

nlohmann::json manifest_json(const ExperimentReport& report) {
  return {{"kind", to_string(report.kind)},
          {"parameters", report.parameters},
          {"library_version", kLibraryVersion}};
}

void write_report(const ExperimentReport& report, const std::filesystem::path& dir, ReportFormat format) {
  std::filesystem::create_directories(dir);
  if (format == ReportFormat::Csv) {
    std::ofstream os(dir / "data.csv");
    write_long_csv(os, report.rows);
  } else {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows)
      rows.push_back({{"series", r.series}, {"step", r.step}, {"metric", r.metric},
                      {"value", finite_or_null(r.value)}});
    std::ofstream(dir / "data.json") << rows.dump(1) << '\n';
  }
  std::ofstream(dir / "summary.json") << summary_json(report).dump(2) << '\n';
  std::ofstream(dir / "manifest.json") << manifest_json(report).dump(2) << '\n';
}

// ---------------------------------------------------------------------------

namespace recipes {

ParamReader::ParamReader(const nlohmann::json& j, std::string kind) : j_(j), kind_(std::move(kind)) {
  if (j_.is_null()) j_ = nlohmann::json::object();
  if (!j_.is_object()) throw std::invalid_argument(kind_ + ": parameters must be a JSON object");
}

void ParamReader::fail(const std::string& key, const std::string& what) const {
  throw std::invalid_argument(kind_ + ": parameter '" + key + "' " + what);
}

const nlohmann::json* ParamReader::find(const std::string& key) {
  seen_.insert(key);
  auto it = j_.find(key);
  return it == j_.end() ? nullptr : &*it;
}

double ParamReader::real(const std::string& key, double def, double lo, double hi) {
  double v = def;
  if (const auto* p = find(key)) {
    if (!p->is_number()) fail(key, "must be a number");
    v = p->get<double>();
  }
  if (!std::isfinite(v) || v < lo || v > hi) {
    std::ostringstream os;
    os << "must lie in [" << lo << ", " << hi << "]";
    fail(key, os.str());
  }
  resolved_[key] = v;
  return v;
}

namespace {

bool non_negative_integer(const nlohmann::json& j) {
  return j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0);
}

}  // namespace

std::size_t ParamReader::count(const std::string& key, std::size_t def, std::size_t lo, std::size_t hi) {
  std::size_t v = def;
  if (const auto* p = find(key)) {
    if (!non_negative_integer(*p)) fail(key, "must be a non-negative integer");
    v = p->get<std::size_t>();
  }
  if (v < lo || v > hi) fail(key, "is out of range (" + std::to_string(lo) + ".." + std::to_string(hi) + ")");
  resolved_[key] = v;
  return v;
}

std::uint64_t ParamReader::seed(const std::string& key, std::uint64_t def) {
  std::uint64_t v = def;
  if (const auto* p = find(key)) {
    if (!non_negative_integer(*p)) fail(key, "must be a non-negative integer");
    v = p->get<std::uint64_t>();
  }
  resolved_[key] = v;
  return v;
}

bool ParamReader::flag(const std::string& key, bool def) {
  bool v = def;
  if (const auto* p = find(key)) {
    if (!p->is_boolean()) fail(key, "must be a boolean");
    v = p->get<bool>();
  }
  resolved_[key] = v;
  return v;
}

std::string ParamReader::text(const std::string& key, const std::string& def) {
  std::string v = def;
  if (const auto* p = find(key)) {
    if (!p->is_string()) fail(key, "must be a string");
    v = p->get<std::string>();
  }
  resolved_[key] = v;
  return v;
}

std::string ParamReader::choice(const std::string& key, const std::string& def,
                                const std::vector<std::string>& options) {
  const std::string v = text(key, def);
  for (const auto& o : options)
    if (o == v) return v;
  std::string all;
  for (const auto& o : options) all += (all.empty() ? "" : ", ") + o;
  fail(key, "must be one of {" + all + "}");
}

std::vector<double> ParamReader::reals(const std::string& key, std::vector<double> def, double lo,
                                       double hi) {
  std::vector<double> v = std::move(def);
  if (const auto* p = find(key)) {
    if (!p->is_array()) fail(key, "must be an array of numbers");
    v.clear();
    for (const auto& e : *p) {
      if (!e.is_number()) fail(key, "must be an array of numbers");
      v.push_back(e.get<double>());
    }
  }
  if (v.empty()) fail(key, "must not be empty");
  for (double x : v)
    if (!std::isfinite(x) || x < lo || x > hi) fail(key, "has an entry out of range");
  resolved_[key] = v;
  return v;
}

std::vector<std::size_t> ParamReader::counts(const std::string& key, std::vector<std::size_t> def,
                                             std::size_t lo) {
  std::vector<std::size_t> v = std::move(def);
  if (const auto* p = find(key)) {
    if (!p->is_array()) fail(key, "must be an array of integers");
    v.clear();
    for (const auto& e : *p) {
      if (!non_negative_integer(e)) fail(key, "must be an array of non-negative integers");
      v.push_back(e.get<std::size_t>());
    }
  }
  if (v.empty()) fail(key, "must not be empty");
  for (auto x : v)
    if (x < lo) fail(key, "has an entry below " + std::to_string(lo));
  resolved_[key] = v;
  return v;
}

void ParamReader::finish() const {
  for (const auto& [key, value] : j_.items()) {
    (void)value;
    if (!seen_.count(key)) throw std::invalid_argument(kind_ + ": unknown parameter '" + key + "'");
  }
}

void Recorder::trajectory(const std::string& series, const std::vector<MetricRecord>& traj) {
  for (const auto& r : traj) {
    const double s = static_cast<double>(r.step);
    if (r.diverged) {
      add(series, s, "diverged", 1.0);
      continue;
    }
    add(series, s, "lr", r.lr);
    add(series, s, "loss", r.loss);
    if (r.entropy != 0.0 || r.entropy_se != 0.0) {
      add(series, s, "entropy", r.entropy);
      add(series, s, "entropy_se", r.entropy_se);
    }
    for (std::size_t l = 0; l < r.grad_traces.size(); ++l)
      add(series, s, "grad_trace_" + std::to_string(l + 1), r.grad_traces[l]);
    for (std::size_t l = 0; l < r.weight_traces.size(); ++l)
      add(series, s, "weight_trace_" + std::to_string(l + 1), r.weight_traces[l]);
    if (!r.grad_traces.empty()) {
      add(series, s, "layer_residual", r.layer_residual);
      add(series, s, "neuron_residual", r.neuron_residual);
      add(series, s, "wu_residual", r.wu_residual);
    }
    if (r.has_sharpness) {
      add(series, s, "sharpness", r.sharpness);
      add(series, s, "sharpness_se", r.sharpness_se);
      if (r.lambda_max != 0.0) {
        add(series, s, "lambda_max", r.lambda_max);
        add(series, s, "eta_lambda_max", r.eta_lambda_max);
      }
    }
    if (r.has_alignment) add(series, s, "alignment", r.alignment);
  }
}

void Recorder::less(const std::string& name, double value, double threshold, const std::string& note) {
  r_.verdicts.push_back({name, value < threshold, value, threshold, "<", note});
}

void Recorder::greater(const std::string& name, double value, double threshold, const std::string& note) {
  r_.verdicts.push_back({name, value > threshold, value, threshold, ">", note});
}

void Recorder::within(const std::string& name, double value, double target, double rel_tol,
                      const std::string& note) {
  const double err = std::abs(value - target) / std::max(std::abs(target), 1e-300);
  std::ostringstream os;
  os << "target " << target << " +- " << rel_tol * 100 << "%";
  if (!note.empty()) os << "; " << note;
  r_.verdicts.push_back({name, err <= rel_tol, value, target, "within", os.str()});
}

void Recorder::check(const std::string& name, bool pass, double value, const std::string& note) {
  r_.verdicts.push_back({name, pass, value, std::numeric_limits<double>::quiet_NaN(), "holds", note});
}

void parallel_for(std::size_t n, std::size_t parallelism, const std::function<void(std::size_t)>& f) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t k = std::max<std::size_t>(1, std::min(parallelism, n));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < k; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

std::vector<double> field_series(const std::vector<MetricRecord>& traj, double MetricRecord::*field) {
  std::vector<double> v;
  for (const auto& r : traj)
    if (!r.diverged) v.push_back(r.*field);
  return v;
}

double tail_mean(const std::vector<MetricRecord>& traj, double fraction, double MetricRecord::*field) {
  if (traj.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double last = static_cast<double>(traj.back().step);
  const double cut = (1.0 - fraction) * last;
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : traj)
    if (!r.diverged && static_cast<double>(r.step) >= cut) {
      s += r.*field;
      ++n;
    }
  return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace recipes

}  // namespace entropic

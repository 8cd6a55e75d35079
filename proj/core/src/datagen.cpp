#include "entropic/datagen.hpp"

#include <cstdint>
#include <fstream>
#include <vector>

#include "entropic/linalg.hpp"
#include "entropic/matrix_io.hpp"

namespace entropic {

DataModel DataModel::linear(Matrix v, Matrix sigma_x, Matrix sigma_eps, std::uint64_t seed) {
  DataModel dm;
  dm.v_ = std::move(v);
  dm.sigma_x_ = std::move(sigma_x);
  dm.sigma_eps_ = std::move(sigma_eps);
  dm.seed_ = seed;
  dm.validate();
  dm.sqrt_x_ = sym_sqrt(dm.sigma_x_);
  dm.sqrt_eps_ = sym_sqrt(dm.sigma_eps_);
  return dm;
}

DataModel DataModel::teacher(Network net, Matrix sigma_x, Matrix sigma_eps, std::uint64_t seed) {
  DataModel dm;
  dm.v_ = Matrix(net.output_dim(), net.input_dim());
  dm.sigma_x_ = std::move(sigma_x);
  dm.sigma_eps_ = std::move(sigma_eps);
  dm.teacher_ = std::move(net);
  dm.seed_ = seed;
  dm.validate();
  dm.sqrt_x_ = sym_sqrt(dm.sigma_x_);
  dm.sqrt_eps_ = sym_sqrt(dm.sigma_eps_);
  return dm;
}

DataModel DataModel::balance(double phi, std::uint64_t seed) {
  if (phi < 0.0) throw std::invalid_argument("balance phi must be non-negative");
  const double d[2] = {1.0, phi};
  return linear(Matrix::identity(2), Matrix::identity(2), Matrix::diagonal(d), seed);
}

void DataModel::validate() const {
  if (sigma_x_.rows() != sigma_x_.cols() || sigma_eps_.rows() != sigma_eps_.cols())
    throw DimensionError("covariances must be square");
  if (v_.cols() != sigma_x_.rows() || v_.rows() != sigma_eps_.rows())
    throw DimensionError("V is " + shape_string(v_) + " but covariances are " + shape_string(sigma_eps_) +
                         " and " + shape_string(sigma_x_));
  if (!is_symmetric(sigma_x_, 1e-10) || !is_symmetric(sigma_eps_, 1e-10))
    throw NumericalError("covariances must be symmetric");
}

nlohmann::json DataModel::to_json() const {
  nlohmann::json j;
  j["V"] = entropic::to_json(v_);
  j["sigma_x"] = entropic::to_json(sigma_x_);
  j["sigma_eps"] = entropic::to_json(sigma_eps_);
  j["seed"] = seed_;
  if (teacher_) {
    j["teacher"] = teacher_->descriptor();
    nlohmann::json ws = nlohmann::json::array();
    for (const auto& w : teacher_->weights()) ws.push_back(entropic::to_json(w));
    j["teacher_weights"] = ws;
  }
  return j;
}

Batch sample_batch(const DataModel& dm, Rng& rng, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  Batch b;
  b.x = gaussian_matrix_sqrt(rng, batch_size, dm.sqrt_sigma_x());
  b.y = dm.teacher_net() ? forward_batch(*dm.teacher_net(), b.x) : matmul_nt(b.x, dm.v());
  b.y += gaussian_matrix_sqrt(rng, batch_size, dm.sqrt_sigma_eps());
  return b;
}

Batch apply_view(const Batch& batch, const Matrix& m3) {
  if (m3.rows() != m3.cols() || m3.cols() != batch.x.cols())
    throw DimensionError("view matrix must be " + std::to_string(batch.x.cols()) + " square");
  if (condition_number(m3) > 1e8) throw NumericalError("view matrix is singular (cond > 1e8)");
  return {matmul_nt(batch.x, m3), batch.y};
}

namespace {

std::uint32_t read_be32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("truncated IDX header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

std::vector<unsigned char> read_bytes(std::istream& is, std::size_t n) {
  std::vector<unsigned char> out(n);
  if (n && !is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(n)))
    throw std::runtime_error("truncated IDX payload");
  return out;
}

}  // namespace

Batch load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
               const IdxOptions& opts) {
  std::ifstream fi(images, std::ios::binary), fl(labels, std::ios::binary);
  if (!fi) throw std::runtime_error("cannot open " + images.string());
  if (!fl) throw std::runtime_error("cannot open " + labels.string());
  if (read_be32(fi) != 0x00000803u) throw std::runtime_error("bad IDX magic");
  if (read_be32(fl) != 0x00000801u) throw std::runtime_error("bad IDX magic");
  const std::size_t n = read_be32(fi);
  const std::size_t rows = read_be32(fi);
  const std::size_t cols = read_be32(fi);
  const std::size_t nl = read_be32(fl);
  if (n != nl) throw std::runtime_error("IDX image and label counts differ");
  const auto pix = read_bytes(fi, n * rows * cols);
  const auto lab = read_bytes(fl, n);

  Batch b{Matrix(n, rows * cols), Matrix(n, opts.one_hot ? opts.classes : 1)};
  for (std::size_t i = 0; i < pix.size(); ++i) b.x.data()[i] = pix[i] / 255.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (opts.one_hot) {
      if (lab[i] >= opts.classes) throw std::runtime_error("IDX label exceeds class count");
      b.y(i, lab[i]) = 1.0;
    } else {
      b.y(i, 0) = lab[i];
    }
  }
  return b;
}

Matrix random_well_conditioned(Rng& rng, std::size_t n, double max_cond, std::size_t max_attempts) {
  for (std::size_t i = 0; i < max_attempts; ++i) {
    Matrix m = gaussian_matrix(rng, n, n);
    m *= 1.0 / std::sqrt(static_cast<double>(n));
    if (condition_number(m) <= max_cond) return m;
  }
  throw NumericalError("no matrix with cond <= " + std::to_string(max_cond) + " after " +
                       std::to_string(max_attempts) + " attempts");
}

}  // namespace entropic

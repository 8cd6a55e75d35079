#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>

#include <nlohmann/json.hpp>

#include "entropic/batch.hpp"
#include "entropic/matrix.hpp"
#include "entropic/network.hpp"
#include "entropic/rng.hpp"

namespace entropic {

// y = V x + eps, or y = teacher(x) + eps when a teacher is set;
// x ~ N(0, sigma_x), eps ~ N(0, sigma_eps).
class DataModel {
 public:
  static DataModel linear(Matrix v, Matrix sigma_x, Matrix sigma_eps, std::uint64_t seed = 0);
  static DataModel teacher(Network net, Matrix sigma_x, Matrix sigma_eps, std::uint64_t seed = 0);
  // Sigma_eps = diag(1, phi), V = I_2, Sigma_x = I_2.
  static DataModel balance(double phi, std::uint64_t seed = 0);

  const Matrix& v() const { return v_; }
  const Matrix& sigma_x() const { return sigma_x_; }
  const Matrix& sigma_eps() const { return sigma_eps_; }
  const Matrix& sqrt_sigma_x() const { return sqrt_x_; }
  const Matrix& sqrt_sigma_eps() const { return sqrt_eps_; }
  const std::optional<Network>& teacher_net() const { return teacher_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t input_dim() const { return sigma_x_.rows(); }
  std::size_t output_dim() const { return sigma_eps_.rows(); }

  nlohmann::json to_json() const;

 private:
  DataModel() = default;
  void validate() const;

  Matrix v_, sigma_x_, sigma_eps_, sqrt_x_, sqrt_eps_;
  std::optional<Network> teacher_;
  std::uint64_t seed_ = 0;
};

Batch sample_batch(const DataModel& dm, Rng& rng, std::size_t batch_size);

// Replaces each input x with M3 x. Rejects cond(M3) > 1e8.
Batch apply_view(const Batch& batch, const Matrix& m3);

struct IdxOptions {
  bool one_hot = true;
  std::size_t classes = 10;
};

// IDX ubyte image/label pair; pixels scaled to [0, 1].
Batch load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
               const IdxOptions& opts = {});

// Gaussian n x n matrices rejected until cond <= max_cond.
Matrix random_well_conditioned(Rng& rng, std::size_t n, double max_cond = 5.0,
                               std::size_t max_attempts = 100000);

}  // namespace entropic

#pragma once

#include <cstdint>
#include <optional>

#include "entropic/matrix.hpp"

namespace entropic {

std::uint64_t splitmix64(std::uint64_t x);

// Child seed for stream `index` of a parent seed:
// splitmix64(seed ^ splitmix64(index + 0x9e3779b97f4a7c15)).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

// xoshiro256** seeded through splitmix64. Normals use Box-Muller.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();
  double uniform();  // [0, 1), 53-bit resolution
  double normal();
  double rademacher();
  std::uint64_t below(std::uint64_t n);

  Rng child(std::uint64_t index) const { return Rng(derive_seed(seed_, index)); }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  std::optional<double> spare_;
};

// Columns orthonormal; QR of a Gaussian matrix with sign(R_ii) folded in.
Matrix random_orthonormal(Rng& rng, std::size_t rows, std::size_t cols);

// Rows are i.i.d. N(0, covariance); standard normal when no covariance is given.
Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols,
                       const std::optional<Matrix>& covariance = std::nullopt);

// Same as gaussian_matrix but with a precomputed covariance square root.
Matrix gaussian_matrix_sqrt(Rng& rng, std::size_t rows, const Matrix& cov_sqrt);

}  // namespace entropic

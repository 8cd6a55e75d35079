#include "entropic/rng.hpp"

#include <cmath>
#include <numbers>

#include "entropic/linalg.hpp"

namespace entropic {
namespace {

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 0x9e3779b97f4a7c15ULL));
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t x = seed;
  for (auto& s : s_) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    s = z ^ (z >> 31);
  }
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (spare_) {
    const double v = *spare_;
    spare_.reset();
    return v;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  return r * std::cos(a);
}

double Rng::rademacher() { return (next_u64() >> 63) ? 1.0 : -1.0; }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below(0)");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

Matrix random_orthonormal(Rng& rng, std::size_t rows, std::size_t cols) {
  if (rows < cols) throw DimensionError("random_orthonormal needs rows >= cols");
  Matrix g(rows, cols);
  for (double& v : g.data()) v = rng.normal();
  QrResult qr = householder_qr(g);
  for (std::size_t c = 0; c < cols; ++c) {
    if (qr.R(c, c) < 0.0)
      for (std::size_t r = 0; r < rows; ++r) qr.Q(r, c) = -qr.Q(r, c);
  }
  return qr.Q;
}

Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols,
                       const std::optional<Matrix>& covariance) {
  if (!covariance) {
    Matrix z(rows, cols);
    for (double& v : z.data()) v = rng.normal();
    return z;
  }
  if (covariance->rows() != cols || covariance->cols() != cols)
    throw DimensionError("gaussian_matrix: covariance must be cols x cols");
  if (!is_symmetric(*covariance, 1e-10))
    throw NumericalError("gaussian_matrix: covariance is not symmetric");
  return gaussian_matrix_sqrt(rng, rows, sym_sqrt(*covariance));
}

Matrix gaussian_matrix_sqrt(Rng& rng, std::size_t rows, const Matrix& cov_sqrt) {
  Matrix z(rows, cov_sqrt.rows());
  for (double& v : z.data()) v = rng.normal();
  return z * cov_sqrt;
}

}  // namespace entropic

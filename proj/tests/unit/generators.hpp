#pragma once

// Hand-rolled random case generators for property tests.

#include <cmath>
#include <cstdint>
#include <vector>

#include "entropic/linalg.hpp"
#include "entropic/matrix.hpp"
#include "entropic/network.hpp"
#include "entropic/rng.hpp"

namespace testgen {

class Cases {
 public:
  explicit Cases(std::uint64_t seed) : rng_(seed) {}

  entropic::Rng& rng() { return rng_; }

  std::size_t size(std::size_t lo, std::size_t hi) { return lo + rng_.below(hi - lo + 1); }
  double real(double lo, double hi) { return lo + (hi - lo) * rng_.uniform(); }

  entropic::Matrix matrix(std::size_t r, std::size_t c) { return entropic::gaussian_matrix(rng_, r, c); }

  entropic::Matrix symmetric(std::size_t n) { return entropic::symmetrize(matrix(n, n)); }

  // A A^T / n + 0.1 I
  entropic::Matrix psd(std::size_t n) {
    const entropic::Matrix a = matrix(n, n);
    return entropic::matmul_nt(a, a) * (1.0 / static_cast<double>(n)) + entropic::Matrix::identity(n) * 0.1;
  }

  entropic::Matrix well_conditioned(std::size_t n, double max_cond = 5.0) {
    for (;;) {
      entropic::Matrix m = matrix(n, n);
      if (entropic::condition_number(m) <= max_cond) return m;
    }
  }

  std::vector<std::size_t> widths(std::size_t depth, std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> w;
    for (std::size_t i = 0; i <= depth; ++i) w.push_back(size(lo, hi));
    return w;
  }

  entropic::Network mlp(entropic::Activation act, std::size_t depth = 2) {
    return entropic::Network::mlp(widths(depth, 2, 4), act, rng_);
  }

  entropic::Network deep_linear(std::size_t depth = 3) {
    return entropic::Network::deep_linear(widths(depth, 2, 4), rng_);
  }

 private:
  entropic::Rng rng_;
};

}  // namespace testgen

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "entropic/matrix.hpp"

namespace entropic {

struct SvdResult {
  Matrix U;               // m x k, orthonormal columns
  std::vector<double> S;  // k values, descending
  Matrix Vt;              // k x n, orthonormal rows
};

// Thin SVD by one-sided Jacobi, k = min(m, n). The first entry of each
// column of U with magnitude above 1e-14 is made non-negative.
SvdResult svd(const Matrix& m);
Matrix reconstruct(const SvdResult& s);

struct EigenResult {
  std::vector<double> values;  // descending
  Matrix vectors;              // columns are eigenvectors
};

// Cyclic Jacobi eigendecomposition; the input is symmetrized first.
EigenResult symmetric_eigen(const Matrix& a);

// Square root of a symmetric PSD matrix. Eigenvalues in [-1e-12 * scale, 0)
// are clamped to zero, anything more negative raises NumericalError.
Matrix sym_sqrt(const Matrix& a);
Matrix sym_inv_sqrt(const Matrix& a);
Matrix sym_pow(const Matrix& a, double p);
bool is_symmetric(const Matrix& a, double tol = 1e-12);

Matrix inverse(const Matrix& a);
double condition_number(const Matrix& a);
// Singular values below 1e-10 * S_max count as zero.
std::size_t numerical_rank(const Matrix& a, double rel_tol = 1e-10);
std::size_t numerical_rank(std::span<const double> singular_values, double rel_tol = 1e-10);

struct QrResult {
  Matrix Q;  // m x n, orthonormal columns
  Matrix R;  // n x n upper triangular
};
QrResult householder_qr(const Matrix& a);

using LinearOperator = std::function<void(std::span<const double>, std::span<double>)>;

struct PowerResult {
  double lambda = 0.0;
  std::vector<double> v;
  bool converged = false;
  std::size_t iterations = 0;
};

// Dominant eigenpair of a symmetric operator. Stops once the Rayleigh
// quotient changes by less than tol between iterations.
PowerResult power_iteration(const LinearOperator& apply, std::size_t dim, double tol,
                            std::size_t max_iter, std::span<const double> start = {});

}  // namespace entropic

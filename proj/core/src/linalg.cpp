#include "entropic/linalg.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <numeric>

#include "entropic/rng.hpp"

namespace entropic {
namespace {

constexpr int kMaxSweeps = 100;

double col_dot(const Matrix& a, std::size_t p, std::size_t q) {
  double s = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) s += a(r, p) * a(r, q);
  return s;
}

void rotate_cols(Matrix& a, std::size_t p, std::size_t q, double c, double s) {
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const double ap = a(r, p), aq = a(r, q);
    a(r, p) = c * ap - s * aq;
    a(r, q) = s * ap + c * aq;
  }
}

// Fills zero columns of u with unit vectors orthogonal to the rest.
void complete_basis(Matrix& u, const std::vector<bool>& filled) {
  const std::size_t m = u.rows();
  std::size_t candidate = 0;
  for (std::size_t j = 0; j < u.cols(); ++j) {
    if (filled[j]) continue;
    while (candidate < m) {
      std::vector<double> v(m, 0.0);
      v[candidate++] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t k = 0; k < u.cols(); ++k) {
          if (k == j || (!filled[k] && k > j)) continue;
          double proj = 0.0;
          for (std::size_t r = 0; r < m; ++r) proj += u(r, k) * v[r];
          for (std::size_t r = 0; r < m; ++r) v[r] -= proj * u(r, k);
        }
      }
      const double n = norm2(v);
      if (n > 1e-8) {
        for (std::size_t r = 0; r < m; ++r) u(r, j) = v[r] / n;
        break;
      }
    }
  }
}

SvdResult svd_tall(const Matrix& m) {
  const std::size_t rows = m.rows(), n = m.cols();
  Matrix a = m;
  Matrix v = Matrix::identity(n);
  const double tol = 4.0 * DBL_EPSILON;
  bool converged = false;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = col_dot(a, p, p);
        const double beta = col_dot(a, q, q);
        const double gamma = col_dot(a, p, q);
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate_cols(a, p, q, c, s);
        rotate_cols(v, p, q, c, s);
      }
    }
  }
  if (!converged) throw NumericalError("svd: Jacobi sweeps did not converge");

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = std::sqrt(col_dot(a, j, j));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return norms[i] > norms[j]; });

  SvdResult out{Matrix(rows, n), std::vector<double>(n), Matrix(n, n)};
  const double smax = n ? norms[order[0]] : 0.0;
  const double floor = smax * static_cast<double>(std::max(rows, n)) * DBL_EPSILON;
  std::vector<bool> filled(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.S[k] = norms[j];
    for (std::size_t c = 0; c < n; ++c) out.Vt(k, c) = v(c, j);
    if (norms[j] > floor && norms[j] > 0.0) {
      for (std::size_t r = 0; r < rows; ++r) out.U(r, k) = a(r, j) / norms[j];
      filled[k] = true;
    }
  }
  if (std::find(filled.begin(), filled.end(), false) != filled.end()) complete_basis(out.U, filled);
  return out;
}

void fix_signs(SvdResult& s) {
  for (std::size_t j = 0; j < s.U.cols(); ++j) {
    for (std::size_t r = 0; r < s.U.rows(); ++r) {
      const double u = s.U(r, j);
      if (std::abs(u) <= 1e-14) continue;
      if (u < 0.0) {
        for (std::size_t i = 0; i < s.U.rows(); ++i) s.U(i, j) = -s.U(i, j);
        for (std::size_t c = 0; c < s.Vt.cols(); ++c) s.Vt(j, c) = -s.Vt(j, c);
      }
      break;
    }
  }
}

}  // namespace

SvdResult svd(const Matrix& m) {
  if (!m.all_finite()) throw NumericalError("svd: non-finite input");
  SvdResult out;
  if (m.rows() >= m.cols()) {
    out = svd_tall(m);
  } else {
    SvdResult t = svd_tall(m.transpose());
    out.U = t.Vt.transpose();
    out.S = std::move(t.S);
    out.Vt = t.U.transpose();
  }
  fix_signs(out);
  return out;
}

Matrix reconstruct(const SvdResult& s) {
  Matrix us = s.U;
  for (std::size_t r = 0; r < us.rows(); ++r)
    for (std::size_t c = 0; c < us.cols(); ++c) us(r, c) *= s.S[c];
  return us * s.Vt;
}

EigenResult symmetric_eigen(const Matrix& input) {
  if (input.rows() != input.cols()) throw DimensionError("symmetric_eigen needs a square matrix");
  if (!input.all_finite()) throw NumericalError("symmetric_eigen: non-finite input");
  const std::size_t n = input.rows();
  Matrix a = symmetrize(input);
  Matrix v = Matrix::identity(n);
  const double scale = frobenius_sq(a);
  bool done = false;
  for (int sweep = 0; sweep < kMaxSweeps && !done; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off <= 1e-32 * scale || off == 0.0) {
      done = true;
      break;
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        rotate_cols(a, p, q, c, s);
        for (std::size_t k = 0; k < n; ++k) {
          const double ap = a(p, k), aq = a(q, k);
          a(p, k) = c * ap - s * aq;
          a(q, k) = s * ap + c * aq;
        }
        rotate_cols(v, p, q, c, s);
      }
    }
  }
  if (!done) throw NumericalError("symmetric_eigen: Jacobi sweeps did not converge");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  EigenResult out{std::vector<double>(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) out.vectors(r, k) = v(r, order[k]);
  }
  return out;
}

namespace {

Matrix spectral_map(const Matrix& a, const std::function<double(double)>& f) {
  const EigenResult e = symmetric_eigen(a);
  const std::size_t n = a.rows();
  const double scale = std::max(1.0, std::abs(e.values.empty() ? 0.0 : e.values.front()));
  Matrix scaled = e.vectors;
  for (std::size_t k = 0; k < n; ++k) {
    double lam = e.values[k];
    if (lam < 0.0) {
      if (lam < -1e-12 * scale) throw NumericalError("matrix is not positive semidefinite");
      lam = 0.0;
    }
    const double fl = f(lam);
    for (std::size_t r = 0; r < n; ++r) scaled(r, k) *= fl;
  }
  return matmul_nt(scaled, e.vectors);
}

}  // namespace

Matrix sym_sqrt(const Matrix& a) {
  return spectral_map(a, [](double x) { return std::sqrt(x); });
}

Matrix sym_inv_sqrt(const Matrix& a) {
  return spectral_map(a, [](double x) {
    if (x <= 0.0) throw NumericalError("sym_inv_sqrt: singular matrix");
    return 1.0 / std::sqrt(x);
  });
}

Matrix sym_pow(const Matrix& a, double p) {
  return spectral_map(a, [p](double x) {
    if (x <= 0.0 && p < 0.0) throw NumericalError("sym_pow: singular matrix");
    return x == 0.0 ? 0.0 : std::pow(x, p);
  });
}

bool is_symmetric(const Matrix& a, double tol) {
  if (a.rows() != a.cols()) return false;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol) return false;
  return true;
}

Matrix inverse(const Matrix& input) {
  if (input.rows() != input.cols()) throw DimensionError("inverse needs a square matrix");
  const std::size_t n = input.rows();
  Matrix a = input;
  Matrix inv = Matrix::identity(n);
  double maxabs = 0.0;
  for (double v : a.data()) maxabs = std::max(maxabs, std::abs(v));
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    if (std::abs(a(piv, col)) <= 1e-14 * maxabs || a(piv, col) == 0.0)
      throw NumericalError("inverse: matrix is singular");
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) {
        std::swap(a(piv, c), a(col, c));
        std::swap(inv(piv, c), inv(col, c));
      }
    }
    const double d = a(col, col);
    for (std::size_t c = 0; c < n; ++c) {
      a(col, c) /= d;
      inv(col, c) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a(r, col);
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < n; ++c) {
        a(r, c) -= f * a(col, c);
        inv(r, c) -= f * inv(col, c);
      }
    }
  }
  return inv;
}

double condition_number(const Matrix& a) {
  const SvdResult s = svd(a);
  if (s.S.empty()) return 1.0;
  const double smin = s.S.back();
  return smin > 0.0 ? s.S.front() / smin : INFINITY;
}

std::size_t numerical_rank(std::span<const double> sv, double rel_tol) {
  if (sv.empty()) return 0;
  const double smax = *std::max_element(sv.begin(), sv.end());
  if (smax <= 0.0) return 0;
  return static_cast<std::size_t>(
      std::count_if(sv.begin(), sv.end(), [&](double s) { return s >= rel_tol * smax; }));
}

std::size_t numerical_rank(const Matrix& a, double rel_tol) {
  return numerical_rank(svd(a).S, rel_tol);
}

QrResult householder_qr(const Matrix& input) {
  const std::size_t m = input.rows(), n = input.cols();
  if (m < n) throw DimensionError("householder_qr needs rows >= cols");
  Matrix a = input;
  std::vector<std::vector<double>> reflectors;
  reflectors.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<double> v(m - k);
    for (std::size_t r = k; r < m; ++r) v[r - k] = a(r, k);
    const double alpha = norm2(v);
    if (alpha == 0.0) {
      reflectors.emplace_back();
      continue;
    }
    v[0] += std::copysign(alpha, v[0]);
    const double vn = norm2(v);
    for (double& x : v) x /= vn;
    for (std::size_t c = k; c < n; ++c) {
      double proj = 0.0;
      for (std::size_t r = k; r < m; ++r) proj += v[r - k] * a(r, c);
      for (std::size_t r = k; r < m; ++r) a(r, c) -= 2.0 * proj * v[r - k];
    }
    reflectors.push_back(std::move(v));
  }
  QrResult out{Matrix(m, n), Matrix(n, n)};
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = r; c < n; ++c) out.R(r, c) = a(r, c);
  for (std::size_t c = 0; c < n; ++c) out.Q(c, c) = 1.0;
  for (std::size_t kk = n; kk-- > 0;) {
    const auto& v = reflectors[kk];
    if (v.empty()) continue;
    for (std::size_t c = 0; c < n; ++c) {
      double proj = 0.0;
      for (std::size_t r = kk; r < m; ++r) proj += v[r - kk] * out.Q(r, c);
      for (std::size_t r = kk; r < m; ++r) out.Q(r, c) -= 2.0 * proj * v[r - kk];
    }
  }
  return out;
}

PowerResult power_iteration(const LinearOperator& apply, std::size_t dim, double tol,
                            std::size_t max_iter, std::span<const double> start) {
  if (dim == 0) throw DimensionError("power_iteration: zero dimension");
  std::vector<double> v(dim);
  if (start.size() == dim) {
    v.assign(start.begin(), start.end());
  } else {
    Rng rng(0x9e3779b97f4a7c15ULL);
    for (double& x : v) x = rng.normal();
  }
  double n = norm2(v);
  if (n == 0.0) throw NumericalError("power_iteration: zero start vector");
  for (double& x : v) x /= n;

  PowerResult out;
  std::vector<double> w(dim);
  double prev = 0.0;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    apply(v, w);
    const double lambda = dot(v, w);
    out.iterations = it;
    out.lambda = lambda;
    n = norm2(w);
    if (n == 0.0) {
      out.v = v;
      out.converged = true;
      return out;
    }
    const bool settled = it > 1 && std::abs(lambda - prev) < tol;
    for (std::size_t i = 0; i < dim; ++i) v[i] = w[i] / n;
    if (settled) {
      out.converged = true;
      break;
    }
    prev = lambda;
  }
  out.v = v;
  return out;
}

}  // namespace entropic

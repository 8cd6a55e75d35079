#include "entropic/closed_form.hpp"

#include <cmath>

#include "entropic/linalg.hpp"

namespace entropic {

Matrix Embeddings::input_map(std::size_t n) const {
  Matrix p = m2 ? *m2 : Matrix::identity(n);
  if (m3) p = p * *m3;
  return p;
}

namespace {

Matrix scale_cols(Matrix m, const std::vector<double>& s) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) *= s[c];
  return m;
}

Matrix scale_rows(Matrix m, const std::vector<double>& s) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) *= s[r];
  return m;
}

Matrix first_cols(const Matrix& m, std::size_t k) {
  Matrix out(m.rows(), k);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < k; ++c) out(r, c) = m(r, c);
  return out;
}

Matrix first_rows(const Matrix& m, std::size_t k) {
  Matrix out(k, m.cols());
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(r, c);
  return out;
}

Network build(const std::vector<Matrix>& ws, const Embeddings& emb) {
  Network net(Arch::DeepLinear, ws);
  if (emb.m1 || emb.m2 || emb.m3) net.set_embeddings(emb.m1, emb.m2, emb.m3);
  return net;
}

void check_embeddings(const Embeddings& emb, std::size_t dx, std::size_t dy) {
  for (const auto* m : {&emb.m1, &emb.m2, &emb.m3}) {
    if (*m && condition_number(**m) > 1e8) throw NumericalError("embedding matrix is singular");
  }
  if (emb.m1 && (emb.m1->rows() != dy || emb.m1->cols() != dy)) throw DimensionError("M1 must be d_y x d_y");
  if (emb.m2 && (emb.m2->rows() != dx || emb.m2->cols() != dx)) throw DimensionError("M2 must be d_x x d_x");
  if (emb.m3 && (emb.m3->rows() != dx || emb.m3->cols() != dx)) throw DimensionError("M3 must be d_x x d_x");
}

}  // namespace

double DeepLinearSolution::trace_s_prime() const {
  double t = 0.0;
  for (std::size_t i = 0; i < rank; ++i) t += s_prime[i];
  return t;
}

Network DeepLinearSolution::network() const { return build(weights, embeddings); }
Network WdSolution::network() const { return build(weights, embeddings); }

DeepLinearSolution deep_linear_solution(const DataModel& dm, const Embeddings& emb, std::size_t depth,
                                        const std::vector<std::size_t>& hidden_widths, Rng& rng) {
  if (depth < 1) throw std::invalid_argument("depth must be >= 1");
  if (hidden_widths.size() + 1 != depth) throw DimensionError("need depth - 1 hidden widths");
  const std::size_t dx = dm.input_dim(), dy = dm.output_dim();
  check_embeddings(emb, dx, dy);

  DeepLinearSolution sol;
  sol.embeddings = emb;
  sol.sigma_x = dm.sigma_x();
  const Matrix m1inv = inverse(emb.m1_or_identity(dy));
  const Matrix pinv = inverse(emb.input_map(dx));

  if (depth == 1) {
    sol.weights = {m1inv * dm.v() * pinv};
    const SvdResult s = svd(dm.sqrt_sigma_eps() * dm.v() * dm.sqrt_sigma_x());
    sol.rank = numerical_rank(s.S);
    sol.s_prime.assign(s.S.begin(), s.S.begin() + static_cast<std::ptrdiff_t>(sol.rank));
    return sol;
  }

  const Matrix vprime = dm.sqrt_sigma_eps() * dm.v() * dm.sqrt_sigma_x();
  const SvdResult s = svd(vprime);
  const std::size_t d = numerical_rank(s.S);
  if (d == 0) throw NumericalError("V' has rank zero");
  for (std::size_t w : hidden_widths)
    if (w < d) throw DimensionError("hidden width " + std::to_string(w) + " is below rank " + std::to_string(d));

  sol.rank = d;
  sol.s_prime.assign(s.S.begin(), s.S.begin() + static_cast<std::ptrdiff_t>(d));
  sol.u_tilde = first_cols(s.U, d);
  sol.v_tilde = first_rows(s.Vt, d);
  const double tr = sol.trace_s_prime();
  const double D = static_cast<double>(depth);

  std::vector<double> outer(d), inner(d, std::pow(tr / d, 1.0 / D));
  const double f = std::pow(static_cast<double>(d) / tr, (D - 2.0) / (2.0 * D));
  for (std::size_t k = 0; k < d; ++k) outer[k] = f * std::sqrt(sol.s_prime[k]);

  for (std::size_t i = 0; i + 1 < depth; ++i) sol.u.push_back(random_orthonormal(rng, hidden_widths[i], d));
  for (std::size_t i = 0; i < depth; ++i) sol.sigma.push_back(i == 0 || i + 1 == depth ? outer : inner);

  const Matrix sx_inv_sqrt = sym_inv_sqrt(dm.sigma_x());
  const Matrix se_inv_sqrt = sym_inv_sqrt(dm.sigma_eps());
  sol.weights.resize(depth);
  sol.weights[0] = scale_cols(sol.u[0], outer) * sol.v_tilde * sx_inv_sqrt * pinv;
  for (std::size_t i = 1; i + 1 < depth; ++i)
    sol.weights[i] = matmul_nt(scale_cols(sol.u[i], inner), sol.u[i - 1]);
  sol.weights[depth - 1] = m1inv * se_inv_sqrt * matmul_nt(scale_cols(sol.u_tilde, outer), sol.u[depth - 2]);
  return sol;
}

WdSolution deep_linear_wd_solution(const Matrix& v, const Embeddings& emb, std::size_t depth,
                                   const std::vector<std::size_t>& hidden_widths, Rng& rng) {
  if (depth < 1) throw std::invalid_argument("depth must be >= 1");
  if (hidden_widths.size() + 1 != depth) throw DimensionError("need depth - 1 hidden widths");
  const std::size_t dx = v.cols(), dy = v.rows();
  check_embeddings(emb, dx, dy);
  const Matrix target = inverse(emb.m1_or_identity(dy)) * v * inverse(emb.input_map(dx));

  WdSolution sol;
  sol.embeddings = emb;
  if (depth == 1) {
    sol.weights = {target};
    return sol;
  }
  const SvdResult s = svd(target);
  const std::size_t d = numerical_rank(s.S);
  if (d == 0) throw NumericalError("target map has rank zero");
  for (std::size_t w : hidden_widths)
    if (w < d) throw DimensionError("hidden width " + std::to_string(w) + " is below rank " + std::to_string(d));

  sol.s.assign(s.S.begin(), s.S.begin() + static_cast<std::ptrdiff_t>(d));
  for (double x : sol.s) sol.sigma.push_back(std::pow(x, 1.0 / static_cast<double>(depth)));

  sol.u.push_back(first_rows(s.Vt, d));
  for (std::size_t i = 0; i + 1 < depth; ++i) sol.u.push_back(random_orthonormal(rng, hidden_widths[i], d));
  sol.u.push_back(first_cols(s.U, d));

  std::vector<double> total(d, 1.0);
  for (std::size_t i = 0; i + 1 < depth; ++i) {
    std::vector<double> p(d);
    for (std::size_t k = 0; k < d; ++k) {
      p[k] = rng.rademacher();
      total[k] *= p[k];
    }
    sol.p.push_back(std::move(p));
  }
  sol.p.push_back(total);

  sol.weights.resize(depth);
  for (std::size_t i = 0; i < depth; ++i) {
    std::vector<double> ps(d);
    for (std::size_t k = 0; k < d; ++k) ps[k] = sol.p[i][k] * sol.sigma[k];
    const Matrix left = scale_cols(sol.u[i + 1], ps);
    sol.weights[i] = i == 0 ? left * sol.u[0] : matmul_nt(left, sol.u[i]);
  }
  return sol;
}

Matrix predicted_hidden_map(const DeepLinearSolution& sol, std::size_t layer) {
  const std::size_t D = sol.depth();
  if (D < 2 || layer < 1 || layer >= D) throw std::invalid_argument("layer must satisfy 1 <= L < D");
  const double tr = sol.trace_s_prime();
  const double e = (2.0 * layer - static_cast<double>(D)) / (2.0 * static_cast<double>(D));
  const double c = std::pow(tr / static_cast<double>(sol.rank), e);
  std::vector<double> diag(sol.rank);
  for (std::size_t k = 0; k < sol.rank; ++k) diag[k] = c * std::sqrt(sol.s_prime[k]);
  return scale_cols(sol.u[layer - 1], diag) * sol.v_tilde * sym_inv_sqrt(sol.sigma_x);
}

double predicted_c0(double trace_s_prime, std::size_t rank, std::size_t la, std::size_t da,
                    std::size_t lb, std::size_t db) {
  auto ex = [](std::size_t l, std::size_t d) {
    return (2.0 * static_cast<double>(l) - static_cast<double>(d)) / (2.0 * static_cast<double>(d));
  };
  return std::pow(trace_s_prime / static_cast<double>(rank), ex(la, da) - ex(lb, db));
}

double predicted_c0(const DeepLinearSolution& a, std::size_t la, const DeepLinearSolution& b,
                    std::size_t lb) {
  return predicted_c0(a.trace_s_prime(), a.rank, la, a.depth(), lb, b.depth());
}

double entropic_sharpness_paper(const DataModel& dm) {
  const Matrix vprime = dm.sqrt_sigma_eps() * dm.v() * dm.sqrt_sigma_x();
  const SvdResult s = svd(vprime);
  const std::size_t d = numerical_rank(s.S);
  const Matrix ut = first_cols(s.U, d);
  const Matrix vt = first_rows(s.Vt, d);
  const std::vector<double> sp(s.S.begin(), s.S.begin() + static_cast<std::ptrdiff_t>(d));
  const double dy = static_cast<double>(dm.output_dim());
  const double t1 = dy * trace(dm.sigma_x() * matmul_tn(vt, scale_rows(vt, sp)));
  const double t2 = trace(inverse(dm.sigma_eps()) * matmul_nt(scale_cols(ut, sp), ut)) * trace(dm.sigma_x());
  return t1 + t2;
}

double min_sharpness_paper(const DataModel& dm, std::size_t d_y) {
  const SvdResult s = svd(dm.v() * dm.sigma_x());
  double ts = 0.0;
  for (double x : s.S) ts += x;
  return 2.0 * std::sqrt(static_cast<double>(d_y) * trace(dm.sigma_x())) * ts;
}

double direct_sharpness_two_layer(const Matrix& w, const Matrix& u, const Matrix& sigma_x,
                                  std::size_t d_y) {
  return 2.0 * static_cast<double>(d_y) * trace(w * matmul_nt(sigma_x, w)) +
         2.0 * frobenius_sq(u) * trace(sigma_x);
}

Embeddings normalize_embeddings(const Embeddings& emb, const DataModel& dm) {
  const std::size_t dx = dm.input_dim(), dy = dm.output_dim();
  const double d = static_cast<double>(numerical_rank(dm.sqrt_sigma_eps() * dm.v() * dm.sqrt_sigma_x()));
  Embeddings out = emb;
  const Matrix m1 = emb.m1_or_identity(dy);
  const double tm = trace(matmul_tn(m1, dm.sigma_eps() * m1));
  out.m1 = m1 * std::sqrt(d / tm);
  const Matrix p = emb.input_map(dx);
  const double tp = trace(p * matmul_nt(dm.sigma_x(), p));
  const Matrix m3 = emb.m3 ? *emb.m3 : Matrix::identity(dx);
  out.m3 = m3 * std::sqrt(d / tp);
  return out;
}

}  // namespace entropic

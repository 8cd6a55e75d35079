#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "entropic/datagen.hpp"
#include "entropic/matrix.hpp"
#include "entropic/network.hpp"
#include "entropic/rng.hpp"

namespace entropic {

struct Embeddings {
  std::optional<Matrix> m1, m2, m3;

  Matrix m1_or_identity(std::size_t n) const { return m1 ? *m1 : Matrix::identity(n); }
  Matrix input_map(std::size_t n) const;  // M2 M3
};

// Entropic-optimum weights of a deep linear network:
//   sqrt(Se) M1 W_D = Ut Sigma_D U_{D-1}^T,  W_i = U_i Sigma_i U_{i-1}^T,
//   W_1 M2 M3 sqrt(Sx) = U_1 Sigma_1 Vt,
//   Sigma_1 = Sigma_D = (d / Tr S')^{(D-2)/2D} sqrt(S'),  Sigma_i = (Tr S' / d)^{1/D} I,
// where Ut S' Vt is the SVD of V' = sqrt(Se) V sqrt(Sx) truncated to its rank d.
struct DeepLinearSolution {
  std::vector<Matrix> weights;
  std::vector<Matrix> u;                   // U_1 .. U_{D-1}, each width_i x d
  std::vector<std::vector<double>> sigma;  // diagonal of Sigma_1 .. Sigma_D
  std::vector<double> s_prime;
  Matrix u_tilde;  // d_y x d
  Matrix v_tilde;  // d x d_x
  std::size_t rank = 0;
  Embeddings embeddings;
  Matrix sigma_x;

  std::size_t depth() const { return weights.size(); }
  double trace_s_prime() const;
  Network network() const;
};

// hidden_widths has D - 1 entries, each >= rank(V').
DeepLinearSolution deep_linear_solution(const DataModel& dm, const Embeddings& emb, std::size_t depth,
                                        const std::vector<std::size_t>& hidden_widths, Rng& rng);

// Weight-decay limit: W_i = U_i P_i Sigma U_{i-1}^T with Sigma = S^{1/D}, where
// U_D S U_0 is the SVD of M1^{-1} V M3^{-1} M2^{-1} and prod P_i = I.
struct WdSolution {
  std::vector<Matrix> weights;
  std::vector<Matrix> u;                // U_0 (as d x d_x rows) .. U_D
  std::vector<std::vector<double>> p;   // sign diagonals P_1 .. P_D
  std::vector<double> sigma;            // S^{1/D}
  std::vector<double> s;
  Embeddings embeddings;

  Network network() const;
};

WdSolution deep_linear_wd_solution(const Matrix& v, const Embeddings& emb, std::size_t depth,
                                   const std::vector<std::size_t>& hidden_widths, Rng& rng);

// U_L (Tr S'/d)^{(2L-D)/2D} sqrt(S') Vt Sx^{-1/2}: the map x -> h^L(x).
Matrix predicted_hidden_map(const DeepLinearSolution& sol, std::size_t layer);
// Scalar c0 in h_A^{L_A} = c0 R h_B^{L_B} for two solutions of the same data model.
double predicted_c0(const DeepLinearSolution& a, std::size_t layer_a, const DeepLinearSolution& b,
                    std::size_t layer_b);
double predicted_c0(double trace_s_prime, std::size_t rank, std::size_t layer_a, std::size_t depth_a,
                    std::size_t layer_b, std::size_t depth_b);

// d_y Tr[Sx Vt^T S' Vt] + Tr[Se^{-1} Ut S' Ut^T] Tr[Sx]
double entropic_sharpness_paper(const DataModel& dm);
// 2 sqrt(d_y Tr Sx) Tr S_hat, S_hat the singular values of V Sx.
double min_sharpness_paper(const DataModel& dm, std::size_t d_y);
// Exact Tr E Hessian of |y - U W x|^2: 2 d_y Tr[W Sx W^T] + 2 |U|^2 Tr Sx.
double direct_sharpness_two_layer(const Matrix& w, const Matrix& u, const Matrix& sigma_x,
                                  std::size_t d_y);

// Rescales M1 and M3 so that Tr[M1^T Se M1] = d and Tr[P Sx P^T] = d with P = M2 M3.
Embeddings normalize_embeddings(const Embeddings& emb, const DataModel& dm);

}  // namespace entropic

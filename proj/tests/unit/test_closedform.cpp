#include <cmath>

#include <gtest/gtest.h>

#include "entropic/alignment.hpp"
#include "entropic/closed_form.hpp"
#include "entropic/linalg.hpp"
#include "generators.hpp"

using namespace entropic;

namespace {

Matrix product(const std::vector<Matrix>& w, std::size_t upto) {
  Matrix p = w[0];
  for (std::size_t i = 1; i < upto; ++i) p = w[i] * p;
  return p;
}

double frob_sq(const Matrix& m) { return frobenius_norm(m) * frobenius_norm(m); }

}  // namespace

TEST(DeepLinearSolution, IdentityDepthTwo) {
  Rng rng(1);
  const DataModel dm = DataModel::balance(1.0);
  const auto sol = deep_linear_solution(dm, {}, 2, {2}, rng);
  ASSERT_EQ(sol.depth(), 2u);
  EXPECT_LT(max_abs_diff(product(sol.weights, 2), Matrix::identity(2)), 1e-12);
  for (double s : sol.sigma[0]) EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_NEAR(sol.trace_s_prime(), 2.0, 1e-12);
}

TEST(DeepLinearSolution, MiddleLayerScale) {
  Rng rng(2);
  const DataModel dm = DataModel::linear(Matrix::identity(2) * 4.0, Matrix::identity(2), Matrix::identity(2));
  const auto sol = deep_linear_solution(dm, {}, 3, {2, 2}, rng);
  for (double s : sol.sigma[1]) EXPECT_NEAR(s, std::cbrt(4.0), 1e-12);
  for (double s : sol.sigma[0]) EXPECT_NEAR(s, 2.0 * std::pow(4.0, -1.0 / 6.0), 1e-12);
  EXPECT_LT(max_abs_diff(product(sol.weights, 3), Matrix::identity(2) * 4.0), 1e-10);
}

TEST(DeepLinearSolution, ProductRecoversTeacherProperty) {
  testgen::Cases c(3);
  for (int t = 0; t < 10; ++t) {
    const std::size_t dx = c.size(1, 4), dy = c.size(1, 4), depth = c.size(2, 5);
    const DataModel dm = DataModel::linear(c.matrix(dy, dx), c.psd(dx), c.psd(dy));
    std::vector<std::size_t> widths(depth - 1, 5);
    const auto sol = deep_linear_solution(dm, {}, depth, widths, c.rng());
    EXPECT_LT(relative_error(product(sol.weights, depth), dm.v()), 1e-8);
    for (const auto& u : sol.u) EXPECT_LT(max_abs_diff(matmul_tn(u, u), Matrix::identity(u.cols())), 1e-10);
  }
}

TEST(DeepLinearSolution, HiddenMapMatchesWeights) {
  testgen::Cases c(4);
  const DataModel dm = DataModel::linear(c.matrix(3, 3), c.psd(3), c.psd(3));
  const auto sol = deep_linear_solution(dm, {}, 4, {4, 4, 4}, c.rng());
  for (std::size_t l = 1; l < 4; ++l)
    EXPECT_LT(relative_error(predicted_hidden_map(sol, l), product(sol.weights, l)), 1e-9) << l;
}

TEST(DeepLinearSolution, RejectsNarrowWidths) {
  Rng rng(5);
  const DataModel dm = DataModel::balance(0.5);
  EXPECT_ANY_THROW(deep_linear_solution(dm, {}, 3, {1, 2}, rng));
}

TEST(PredictedC0, OverloadsAgreeAndMatchProcrustes) {
  testgen::Cases c(6);
  const DataModel dm = DataModel::linear(c.matrix(3, 3), Matrix::identity(3), c.psd(3));
  const auto a = deep_linear_solution(dm, {}, 3, {4, 5}, c.rng());
  const auto b = deep_linear_solution(dm, {}, 4, {3, 6, 4}, c.rng());
  const double c0 = predicted_c0(a, 1, b, 2);
  EXPECT_NEAR(c0, predicted_c0(a.trace_s_prime(), a.rank, 1, 3, 2, 4), 1e-12);
  const Matrix x = c.matrix(200, 3);
  const Matrix ha = x * predicted_hidden_map(a, 1).transpose();
  const Matrix hb = x * predicted_hidden_map(b, 2).transpose();
  const auto fit = procrustes_fit(ha, hb);
  EXPECT_NEAR(fit.c0, c0, 1e-8 * c0);
  EXPECT_LT(fit.residual, 1e-8);
}

TEST(WdSolution, DiagonalTeacher) {
  Rng rng(7);
  const Matrix v = Matrix::diagonal(std::vector<double>{4.0, 1.0});
  const auto sol = deep_linear_wd_solution(v, {}, 2, {2}, rng);
  EXPECT_NEAR(sol.sigma[0], 2.0, 1e-12);
  EXPECT_NEAR(sol.sigma[1], 1.0, 1e-12);
  EXPECT_LT(max_abs_diff(product(sol.weights, 2), v), 1e-10);
  EXPECT_NEAR(frob_sq(sol.weights[0]), frob_sq(sol.weights[1]), 1e-10);
}

TEST(WdSolution, DepthOneIsTeacher) {
  testgen::Cases c(8);
  const Matrix v = c.matrix(3, 2);
  const auto sol = deep_linear_wd_solution(v, {}, 1, {}, c.rng());
  EXPECT_LT(max_abs_diff(sol.weights[0], v), 1e-10);
}

TEST(WdSolution, LayersShareNormProperty) {
  testgen::Cases c(9);
  for (int t = 0; t < 10; ++t) {
    const std::size_t depth = c.size(2, 5);
    const Matrix v = c.matrix(3, 3);
    const auto sol = deep_linear_wd_solution(v, {}, depth, std::vector<std::size_t>(depth - 1, 4), c.rng());
    EXPECT_LT(relative_error(product(sol.weights, depth), v), 1e-8);
    for (std::size_t i = 1; i < depth; ++i)
      EXPECT_NEAR(frob_sq(sol.weights[i]), frob_sq(sol.weights[0]), 1e-8 * (1 + frob_sq(sol.weights[0])));
  }
}

TEST(Sharpness, FormulaExamples) {
  EXPECT_NEAR(entropic_sharpness_paper(DataModel::balance(1.0)), 8.0, 1e-12);
  // Scalar: d_y v Sx + v Tr Sx / Se with v = 3, Sx = 1, Se = 1.
  EXPECT_NEAR(entropic_sharpness_paper(DataModel::linear(Matrix::from_rows({{3}}), Matrix::identity(1),
                                                         Matrix::identity(1))),
              6.0, 1e-12);
  EXPECT_NEAR(min_sharpness_paper(DataModel::balance(1.0), 2), 8.0, 1e-12);
  EXPECT_NEAR(min_sharpness_paper(DataModel::linear(Matrix(2, 2), Matrix::identity(2), Matrix::identity(2)), 2),
              0.0, 1e-15);
}

TEST(Sharpness, DirectTwoLayer) {
  EXPECT_EQ(direct_sharpness_two_layer(Matrix(1, 1), Matrix(1, 1), Matrix::identity(1), 1), 0.0);
  EXPECT_NEAR(direct_sharpness_two_layer(Matrix::identity(1), Matrix::identity(1), Matrix::identity(1), 1), 4.0,
              1e-15);
}

TEST(Sharpness, DirectIsTwicePaperAtOptimum) {
  testgen::Cases c(10);
  for (int t = 0; t < 5; ++t) {
    const DataModel dm = DataModel::linear(c.matrix(3, 3), Matrix::identity(3), Matrix::identity(3));
    const auto sol = deep_linear_solution(dm, {}, 2, {3}, c.rng());
    const double direct = direct_sharpness_two_layer(sol.weights[0], sol.weights[1], dm.sigma_x(), 3);
    EXPECT_NEAR(direct, 2.0 * entropic_sharpness_paper(dm), 1e-8 * direct);
  }
}

TEST(Sharpness, OptimumIsNoSharperThanBound) {
  testgen::Cases c(11);
  for (int t = 0; t < 10; ++t) {
    const std::size_t d = c.size(1, 5);
    const DataModel dm = DataModel::linear(c.matrix(d, d), Matrix::identity(d), Matrix::identity(d));
    EXPECT_GE(entropic_sharpness_paper(dm), min_sharpness_paper(dm, d) * (1 - 1e-12));
  }
}

TEST(NormalizeEmbeddings, HitsTargetTraces) {
  testgen::Cases c(12);
  const DataModel dm = DataModel::linear(c.matrix(3, 3), c.psd(3), c.psd(3));
  Embeddings e;
  e.m1 = c.well_conditioned(3);
  e.m2 = c.well_conditioned(3);
  e.m3 = c.well_conditioned(3);
  const Embeddings n = normalize_embeddings(e, dm);
  EXPECT_NEAR(trace(matmul_tn(*n.m1, dm.sigma_eps() * *n.m1)), 3.0, 1e-10);
  const Matrix p = n.input_map(3);
  EXPECT_NEAR(trace(p * matmul_nt(dm.sigma_x(), p)), 3.0, 1e-10);
}

#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "entropic/linalg.hpp"
#include "entropic/matrix.hpp"
#include "entropic/matrix_io.hpp"
#include "entropic/rng.hpp"
#include "entropic/stats.hpp"
#include "generators.hpp"

using namespace entropic;

TEST(Matrix, RejectsNonFiniteAndLengthMismatch) {
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Matrix(1, 2, std::vector<double>{1, NAN}), NumericalError);
  EXPECT_THROW(Matrix(1, 1, std::vector<double>{INFINITY}), NumericalError);
}

TEST(Matrix, ProductsAgree) {
  Rng rng(3);
  const Matrix a = gaussian_matrix(rng, 4, 3), b = gaussian_matrix(rng, 4, 5);
  EXPECT_LT(max_abs_diff(matmul_tn(a, b), a.transpose() * b), 1e-14);
  const Matrix c = gaussian_matrix(rng, 5, 3);
  EXPECT_LT(max_abs_diff(matmul_nt(a, c), a * c.transpose()), 1e-14);
  EXPECT_THROW(a * a, DimensionError);
}

TEST(Svd, Identity) {
  const auto s = svd(Matrix::identity(3));
  ASSERT_EQ(s.S.size(), 3u);
  for (double v : s.S) EXPECT_NEAR(v, 1.0, 1e-14);
}

TEST(Svd, Diagonal) {
  const auto s = svd(Matrix::from_rows({{3, 0}, {0, 1}}));
  EXPECT_NEAR(s.S[0], 3.0, 1e-14);
  EXPECT_NEAR(s.S[1], 1.0, 1e-14);
  EXPECT_LT(max_abs_diff(s.U, Matrix::identity(2)), 1e-14);
  EXPECT_LT(max_abs_diff(s.Vt, Matrix::identity(2)), 1e-14);
}

TEST(Svd, RankDeficient) {
  const auto s = svd(Matrix::from_rows({{0, 2}, {0, 0}}));
  EXPECT_NEAR(s.S[0], 2.0, 1e-14);
  EXPECT_NEAR(s.S[1], 0.0, 1e-14);
  EXPECT_EQ(numerical_rank(s.S), 1u);
}

TEST(Svd, SignConvention) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const auto s = svd(gaussian_matrix(rng, 6, 4));
    for (std::size_t c = 0; c < s.U.cols(); ++c)
      for (std::size_t r = 0; r < s.U.rows(); ++r)
        if (std::abs(s.U(r, c)) > 1e-14) {
          EXPECT_GE(s.U(r, c), 0.0);
          break;
        }
  }
}

TEST(Svd, ReconstructionProperty) {
  testgen::Cases cases(101);
  for (int t = 0; t < 50; ++t) {
    const Matrix m = cases.matrix(8, 5);
    const auto s = svd(m);
    EXPECT_LT(relative_error(reconstruct(s), m), 1e-10);
    EXPECT_LT(max_abs_diff(matmul_tn(s.U, s.U), Matrix::identity(5)), 1e-10);
    EXPECT_LT(max_abs_diff(matmul_nt(s.Vt, s.Vt), Matrix::identity(5)), 1e-10);
    for (std::size_t i = 1; i < s.S.size(); ++i) EXPECT_GE(s.S[i - 1], s.S[i]);
  }
}

TEST(Svd, WideMatrix) {
  testgen::Cases cases(7);
  const Matrix m = cases.matrix(3, 7);
  EXPECT_LT(relative_error(reconstruct(svd(m)), m), 1e-10);
}

TEST(PowerIteration, Examples) {
  auto op = [](Matrix a) {
    return [a](std::span<const double> v, std::span<double> out) {
      const auto r = matvec(a, v);
      std::copy(r.begin(), r.end(), out.begin());
    };
  };
  EXPECT_NEAR(power_iteration(op(Matrix::from_rows({{5, 0}, {0, 1}})), 2, 1e-12, 1000).lambda, 5.0, 1e-8);
  EXPECT_NEAR(power_iteration(op(Matrix::from_rows({{2, 1}, {1, 2}})), 2, 1e-12, 1000).lambda, 3.0, 1e-8);
  const auto id = power_iteration(op(Matrix::identity(6)), 6, 1e-12, 1000);
  EXPECT_NEAR(id.lambda, 1.0, 1e-12);
  EXPECT_NEAR(norm2(id.v), 1.0, 1e-12);
}

TEST(PowerIteration, MatchesSvdOnRandomPsd) {
  testgen::Cases cases(202);
  for (int t = 0; t < 10; ++t) {
    const Matrix a = cases.psd(20);
    auto op = [&a](std::span<const double> v, std::span<double> out) {
      const auto r = matvec(a, v);
      std::copy(r.begin(), r.end(), out.begin());
    };
    const auto p = power_iteration(op, 20, 1e-14, 100000);
    EXPECT_NEAR(p.lambda / svd(a).S[0], 1.0, 1e-6);
  }
}

TEST(PowerIteration, ReportsNonConvergence) {
  auto op = [](std::span<const double> v, std::span<double> out) {
    out[0] = v[0];
    out[1] = 0.99 * v[1];
  };
  const double start[] = {1.0, 1.0};
  const auto p = power_iteration(op, 2, 1e-14, 5, start);
  EXPECT_FALSE(p.converged);
}

TEST(SymmetricEigen, Reconstructs) {
  testgen::Cases cases(9);
  const Matrix a = cases.symmetric(6);
  const auto e = symmetric_eigen(a);
  Matrix d(6, 6);
  for (std::size_t i = 0; i < 6; ++i) d(i, i) = e.values[i];
  EXPECT_LT(max_abs_diff(e.vectors * d * e.vectors.transpose(), a), 1e-10);
}

TEST(SymSqrt, SquaresBackAndClampsTinyNegatives) {
  testgen::Cases cases(10);
  const Matrix a = cases.psd(5);
  const Matrix r = sym_sqrt(a);
  EXPECT_LT(relative_error(r * r, a), 1e-10);
  const Matrix tiny = Matrix::from_rows({{1, 0}, {0, -1e-14}});
  EXPECT_NEAR(sym_sqrt(tiny)(1, 1), 0.0, 1e-12);
  EXPECT_THROW(sym_sqrt(Matrix::from_rows({{1, 0}, {0, -0.5}})), NumericalError);
}

TEST(Inverse, RoundTrip) {
  testgen::Cases cases(11);
  const Matrix a = cases.well_conditioned(5);
  EXPECT_LT(max_abs_diff(a * inverse(a), Matrix::identity(5)), 1e-10);
  EXPECT_THROW(inverse(Matrix(2, 2)), NumericalError);
}

TEST(Qr, OrthonormalAndUpperTriangular) {
  testgen::Cases cases(12);
  const Matrix a = cases.matrix(6, 4);
  const auto qr = householder_qr(a);
  EXPECT_LT(max_abs_diff(matmul_tn(qr.Q, qr.Q), Matrix::identity(4)), 1e-12);
  EXPECT_LT(relative_error(qr.Q * qr.R, a), 1e-12);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < i; ++j) EXPECT_EQ(qr.R(i, j), 0.0);
}

TEST(Rng, ReproducibleStreams) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs = differs || x != c.next_u64();
  }
  EXPECT_TRUE(differs);
  EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
}

TEST(Rng, UniformAndNormalMoments) {
  Rng rng(1);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double z = rng.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(RandomOrthonormal, Examples) {
  Rng rng(4);
  const Matrix one = random_orthonormal(rng, 1, 1);
  EXPECT_NEAR(std::abs(one(0, 0)), 1.0, 1e-15);
  const Matrix m = random_orthonormal(rng, 4, 2);
  EXPECT_LT(max_abs_diff(matmul_tn(m, m), Matrix::identity(2)), 1e-12);
  Rng r1(9), r2(9);
  EXPECT_TRUE(random_orthonormal(r1, 5, 3) == random_orthonormal(r2, 5, 3));
  EXPECT_THROW(random_orthonormal(rng, 2, 3), DimensionError);
}

TEST(GaussianMatrix, Examples) {
  Rng rng(8);
  const Matrix z = gaussian_matrix(rng, 10, 2, Matrix(2, 2));
  EXPECT_EQ(frobenius_norm(z), 0.0);
  const Matrix big = gaussian_matrix(rng, 100000, 1, Matrix::from_rows({{4}}));
  double s2 = 0.0, s = 0.0;
  for (double v : big.data()) {
    s += v;
    s2 += v * v;
  }
  const double var = s2 / 1e5 - (s / 1e5) * (s / 1e5);
  EXPECT_NEAR(var, 4.0, 0.2);
  Rng a(3), b(3);
  EXPECT_TRUE(gaussian_matrix(a, 3, 3) == gaussian_matrix(b, 3, 3));
  EXPECT_THROW(gaussian_matrix(rng, 2, 2, Matrix::from_rows({{1, 0}, {0, -1}})), NumericalError);
}

TEST(Stats, SpearmanAndRanks) {
  const std::vector<double> a{1, 2, 3, 4}, b{10, 20, 30, 40}, c{4, 3, 2, 1};
  EXPECT_NEAR(spearman(a, b), 1.0, 1e-15);
  EXPECT_NEAR(spearman(a, c), -1.0, 1e-15);
  const auto r = ranks(std::vector<double>{5, 1, 5});
  EXPECT_DOUBLE_EQ(r[0], 2.5);
  EXPECT_DOUBLE_EQ(r[1], 1.0);
  EXPECT_DOUBLE_EQ(r[2], 2.5);
}

TEST(Stats, LogLogSlope) {
  std::vector<double> x, y;
  for (double v : {0.1, 0.2, 0.4, 0.8}) {
    x.push_back(v);
    y.push_back(7.0 * v * v * v);
  }
  EXPECT_NEAR(loglog_slope(x, y), 3.0, 1e-12);
}

TEST(Stats, MovingAverage) {
  const auto m = moving_average(std::vector<double>{1, 2, 3, 4, 5}, 3);
  EXPECT_DOUBLE_EQ(m[0], 1.5);
  EXPECT_DOUBLE_EQ(m[2], 3.0);
  EXPECT_DOUBLE_EQ(m[4], 4.5);
}

TEST(MatrixIo, JsonAndBinaryRoundTrip) {
  testgen::Cases cases(13);
  const Matrix m = cases.matrix(3, 4);
  EXPECT_TRUE(matrix_from_json(to_json(m)) == m);
  std::stringstream ss;
  write_binary(ss, m);
  EXPECT_TRUE(read_binary(ss) == m);
  std::stringstream bad("abc");
  EXPECT_THROW(read_binary(bad), std::runtime_error);
}

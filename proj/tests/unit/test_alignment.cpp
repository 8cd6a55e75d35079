#include <cmath>

#include <gtest/gtest.h>

#include "entropic/alignment.hpp"
#include "entropic/linalg.hpp"
#include "generators.hpp"

using namespace entropic;

TEST(GramAlignment, Examples) {
  testgen::Cases c(1);
  const Matrix h = c.matrix(20, 4);
  EXPECT_NEAR(gram_alignment(h, h), 1.0, 1e-12);
  EXPECT_NEAR(gram_alignment(h, h * 3.0), 1.0, 1e-12);
  EXPECT_NEAR(gram_alignment(h, h * random_orthonormal(c.rng(), 4, 4)), 1.0, 1e-12);
  // Disjoint supports give orthogonal Gram matrices.
  const Matrix a = Matrix::from_rows({{1, 0}, {0, 0}}), b = Matrix::from_rows({{0, 0}, {0, 1}});
  EXPECT_NEAR(gram_alignment(a, b), 0.0, 1e-15);
}

TEST(GramAlignment, BoundedProperty) {
  testgen::Cases c(2);
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = c.size(2, 12);
    const double g = gram_alignment(c.matrix(n, c.size(1, 5)), c.matrix(n, c.size(1, 5)));
    EXPECT_GE(g, -1e-12);
    EXPECT_LE(g, 1.0 + 1e-12);
  }
}

TEST(Cka, InvariantToIsotropicScalingAndRotation) {
  testgen::Cases c(3);
  for (int t = 0; t < 10; ++t) {
    const Matrix h = c.matrix(30, 5);
    const Matrix q = random_orthonormal(c.rng(), 5, 5);
    EXPECT_NEAR(cka(h, h * q * c.real(0.1, 10.0)), 1.0, 1e-10);
    EXPECT_NEAR(cka(h, h * q, false), 1.0, 1e-10);
  }
}

TEST(Cka, IndependentRepresentationsAreFarFromOne) {
  testgen::Cases c(4);
  EXPECT_LT(cka(c.matrix(500, 3), c.matrix(500, 3)), 0.2);
}

TEST(Procrustes, RecoversScaleAndRotation) {
  testgen::Cases c(5);
  for (int t = 0; t < 10; ++t) {
    const std::size_t d = c.size(1, 5);
    const Matrix hb = c.matrix(40, d);
    const Matrix r = random_orthonormal(c.rng(), d, d);
    const double scale = c.real(0.2, 5.0);
    const Matrix ha = hb * r.transpose() * scale;
    const auto fit = procrustes_fit(ha, hb);
    EXPECT_NEAR(fit.c0, scale, 1e-10 * scale);
    EXPECT_LT(fit.residual, 1e-10);
    EXPECT_LT(max_abs_diff(fit.r, r), 1e-8);
  }
}

TEST(Procrustes, WiderTargetHasOrthonormalColumns) {
  testgen::Cases c(6);
  const Matrix hb = c.matrix(50, 2);
  const Matrix r = random_orthonormal(c.rng(), 4, 2);
  const auto fit = procrustes_fit(hb * r.transpose() * 2.0, hb);
  EXPECT_NEAR(fit.c0, 2.0, 1e-10);
  EXPECT_LT(max_abs_diff(matmul_tn(fit.r, fit.r), Matrix::identity(2)), 1e-10);
  EXPECT_THROW(procrustes_fit(c.matrix(3, 2), c.matrix(4, 2)), DimensionError);
}

#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "entropic/datagen.hpp"
#include "entropic/linalg.hpp"
#include "generators.hpp"

using namespace entropic;

namespace {

void put_be32(std::ofstream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

struct IdxPair {
  std::filesystem::path images, labels;
};

IdxPair write_idx(const std::string& tag, std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                  std::uint32_t image_magic = 0x803) {
  const auto dir = std::filesystem::temp_directory_path();
  IdxPair p{dir / (tag + "_images.idx"), dir / (tag + "_labels.idx")};
  std::ofstream fi(p.images, std::ios::binary), fl(p.labels, std::ios::binary);
  put_be32(fi, image_magic);
  put_be32(fi, n);
  put_be32(fi, rows);
  put_be32(fi, cols);
  for (std::uint32_t i = 0; i < n * rows * cols; ++i) fi.put(static_cast<char>(i % 256));
  put_be32(fl, 0x801);
  put_be32(fl, n);
  for (std::uint32_t i = 0; i < n; ++i) fl.put(static_cast<char>(i % 10));
  return p;
}

Matrix sample_covariance(const Matrix& y) {
  Matrix c(y.cols(), y.cols());
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t i = 0; i < y.cols(); ++i)
      for (std::size_t j = 0; j < y.cols(); ++j) c(i, j) += y(r, i) * y(r, j);
  return c * (1.0 / static_cast<double>(y.rows()));
}

}  // namespace

TEST(SampleBatch, NoiselessIdentityTeacher) {
  const DataModel dm = DataModel::linear(Matrix::identity(3), Matrix::identity(3), Matrix(3, 3), 1);
  Rng rng(2);
  const Batch b = sample_batch(dm, rng, 50);
  EXPECT_TRUE(b.x == b.y);
}

TEST(SampleBatch, LabelNoiseCovariance) {
  const DataModel dm = DataModel::linear(Matrix(2, 2), Matrix::identity(2),
                                         Matrix::diagonal(std::vector<double>{1.0, 0.25}), 1);
  Rng rng(3);
  const Matrix c = sample_covariance(sample_batch(dm, rng, 100000).y);
  EXPECT_NEAR(c(0, 0), 1.0, 0.05);
  EXPECT_NEAR(c(1, 1), 0.25, 0.0125);
  EXPECT_NEAR(c(0, 1), 0.0, 0.02);
}

TEST(SampleBatch, DeterministicAndValidated) {
  const DataModel dm = DataModel::balance(0.5, 7);
  Rng a(9), b(9);
  const Batch x = sample_batch(dm, a, 10), y = sample_batch(dm, b, 10);
  EXPECT_TRUE(x.x == y.x);
  EXPECT_TRUE(x.y == y.y);
  EXPECT_THROW(sample_batch(dm, a, 0), std::invalid_argument);
  EXPECT_THROW(DataModel::linear(Matrix(2, 3), Matrix::identity(2), Matrix::identity(2)), DimensionError);
}

TEST(SampleBatch, ResidualIndependentOfInput) {
  testgen::Cases c(4);
  const Matrix v = c.matrix(2, 3);
  const DataModel dm = DataModel::linear(v, c.psd(3), c.psd(2), 1);
  Rng rng(5);
  const Batch b = sample_batch(dm, rng, 100000);
  const Matrix resid = b.y - b.x * v.transpose();
  const Matrix cross = matmul_tn(resid, b.x) * (1.0 / 1e5);
  for (double e : cross.data()) EXPECT_LT(std::abs(e), 0.05);
}

TEST(SampleBatch, TeacherLabels) {
  Rng rng(6);
  Network teacher = Network::mlp({3, 4, 2}, Activation::relu(), rng);
  const DataModel dm = DataModel::teacher(teacher, Matrix::identity(3), Matrix(2, 2), 1);
  const Batch b = sample_batch(dm, rng, 20);
  EXPECT_LT(max_abs_diff(b.y, forward_batch(teacher, b.x)), 1e-14);
}

TEST(ApplyView, Examples) {
  testgen::Cases c(7);
  const Batch b{c.matrix(5, 3), c.matrix(5, 2)};
  const Batch same = apply_view(b, Matrix::identity(3));
  EXPECT_TRUE(same.x == b.x);
  const Batch doubled = apply_view(b, Matrix::identity(3) * 2.0);
  EXPECT_LT(max_abs_diff(doubled.x, b.x * 2.0), 1e-15);
  EXPECT_TRUE(doubled.y == b.y);
  EXPECT_THROW(apply_view(b, Matrix(3, 3)), NumericalError);
}

TEST(ApplyView, RoundTripProperty) {
  testgen::Cases c(8);
  for (int t = 0; t < 20; ++t) {
    const std::size_t d = c.size(1, 6);
    const Matrix m3 = random_well_conditioned(c.rng(), d, 5.0);
    EXPECT_LE(condition_number(m3), 5.0);
    const Batch b{c.matrix(7, d), c.matrix(7, 1)};
    const Batch back = apply_view(apply_view(b, m3), inverse(m3));
    EXPECT_LT(max_abs_diff(back.x, b.x), 1e-10);
  }
}

TEST(LoadIdx, EmptyPair) {
  const auto p = write_idx("empty", 0, 28, 28);
  const Batch b = load_idx(p.images, p.labels);
  EXPECT_EQ(b.size(), 0u);
}

TEST(LoadIdx, ShapeAndScaling) {
  const auto p = write_idx("ten", 10, 28, 28);
  const Batch b = load_idx(p.images, p.labels);
  EXPECT_EQ(b.x.rows(), 10u);
  EXPECT_EQ(b.x.cols(), 784u);
  EXPECT_EQ(b.y.cols(), 10u);
  for (double v : b.x.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(b.y(3, 3), 1.0);
  const Batch raw = load_idx(p.images, p.labels, IdxOptions{false, 10});
  EXPECT_EQ(raw.y.cols(), 1u);
  EXPECT_EQ(raw.y(3, 0), 3.0);
}

TEST(LoadIdx, BadMagic) {
  const auto p = write_idx("bad", 2, 2, 2, 0x1234);
  try {
    load_idx(p.images, p.labels);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "bad IDX magic");
  }
}

TEST(RandomWellConditioned, RespectsBound) {
  Rng rng(11);
  for (int t = 0; t < 10; ++t) EXPECT_LE(condition_number(random_well_conditioned(rng, 4, 5.0)), 5.0);
}

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "entropic/network.hpp"
#include "entropic/oracle.hpp"
#include "generators.hpp"

using namespace entropic;

namespace {

Network scalar_linear(double w) { return Network(Arch::DeepLinear, {Matrix::from_rows({{w}})}); }

Batch one_sample(std::vector<double> x, std::vector<double> y) {
  const std::size_t dx = x.size(), dy = y.size();
  return Batch{Matrix(1, dx, std::move(x)), Matrix(1, dy, std::move(y))};
}

// Loss on a batch as a function of flat parameters.
oracle::LossFn loss_of(const Network& base, const Batch& b) {
  return [base, b](std::span<const double> theta) {
    Network n = base;
    n.assign(theta);
    return batch_loss(n, b);
  };
}

double rel_diff(std::span<const double> a, std::span<const double> b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / std::max(den, 1e-300));
}

Batch random_batch(testgen::Cases& c, std::size_t n, std::size_t dx, std::size_t dy) {
  return Batch{c.matrix(n, dx), c.matrix(n, dy)};
}

}  // namespace

TEST(Forward, IdentityDeepLinear) {
  Network net(Arch::DeepLinear, {Matrix::identity(2), Matrix::identity(2)});
  const auto r = forward(net, std::vector<double>{1, 0});
  EXPECT_EQ(r.output, (std::vector<double>{1, 0}));
}

TEST(Forward, ReluKillsNegative) {
  Network net(Arch::Mlp, {Matrix::from_rows({{-1}}), Matrix::from_rows({{1}})}, Activation::relu());
  const auto r = forward(net, std::vector<double>{2});
  EXPECT_EQ(r.hidden[0][0], 0.0);
}

TEST(Forward, AttentionToyScalar) {
  Network net(Arch::AttentionToy,
              {Matrix::from_rows({{2}}), Matrix::from_rows({{3}}), Matrix::from_rows({{1}})});
  EXPECT_DOUBLE_EQ(forward(net, std::vector<double>{1}).output[0], 6.0);
}

TEST(Forward, RejectsDimensionMismatch) {
  Network net(Arch::DeepLinear, {Matrix::identity(2)});
  EXPECT_THROW(forward(net, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Network(Arch::DeepLinear, {Matrix(2, 3), Matrix(2, 4)}), DimensionError);
  EXPECT_THROW(Activation::poly(0), std::invalid_argument);
}

TEST(Loss, ScalarExamples) {
  const Network net = scalar_linear(1.0);
  EXPECT_DOUBLE_EQ(per_sample_loss(net, std::vector<double>{1}, std::vector<double>{1}), 0.0);
  EXPECT_DOUBLE_EQ(per_sample_loss(net, std::vector<double>{1}, std::vector<double>{0}), 1.0);
  EXPECT_DOUBLE_EQ(per_sample_loss(net, std::vector<double>{1}, std::vector<double>{3}), 4.0);
}

TEST(Gradient, ScalarHandValue) {
  const auto g = batch_gradient(scalar_linear(1.0), one_sample({1}, {0}));
  EXPECT_DOUBLE_EQ(g[0](0, 0), 2.0);
}

TEST(Gradient, ZeroAtInterpolatingMinimum) {
  testgen::Cases c(1);
  Network net = c.deep_linear(3);
  const Matrix x = c.matrix(16, net.input_dim());
  const Batch b{x, forward_batch(net, x)};
  for (const auto& g : batch_gradient(net, b)) EXPECT_LT(frobenius_norm(g), 1e-12);
}

TEST(Gradient, MatchesFiniteDifferencesForEveryArchitecture) {
  testgen::Cases c(2);
  std::vector<Network> nets;
  for (int t = 0; t < 4; ++t) {
    nets.push_back(c.deep_linear(1 + t % 3));
    nets.push_back(c.mlp(Activation::tanh(), 2));
    nets.push_back(c.mlp(Activation::relu(), 2));
    nets.push_back(c.mlp(Activation::poly(2), 2));
    nets.push_back(Network::attention_toy(c.size(2, 4), c.size(1, 3), c.rng()));
    nets.push_back(Network::scale_invariant(c.size(1, 3), c.size(2, 4), c.rng()));
  }
  Network embedded = c.deep_linear(2);
  embedded.set_embeddings(c.well_conditioned(embedded.output_dim()), c.well_conditioned(embedded.input_dim()),
                          c.well_conditioned(embedded.input_dim()));
  nets.push_back(embedded);
  for (const auto& net : nets) {
    const Batch b = random_batch(c, 5, net.input_dim(), net.output_dim());
    const auto analytic = flat_gradient(net, b);
    const auto fd = oracle::fd_gradient(loss_of(net, b), net.flatten());
    EXPECT_LT(rel_diff(analytic, fd), 1e-6) << to_string(net.arch()) << ' ' << net.activation().name();
  }
}

TEST(Hvp, ScalarQuadratic) {
  const Network net = scalar_linear(0.3);
  const auto h = hvp(net, one_sample({1}, {0}), std::vector<double>{1.0});
  EXPECT_NEAR(h[0], 2.0, 1e-6);
  EXPECT_THROW(hvp(net, one_sample({1}, {0}), std::vector<double>{0.0}), std::invalid_argument);
}

TEST(Hvp, LinearInDirection) {
  testgen::Cases c(3);
  const Network net = c.mlp(Activation::tanh());
  const Batch b = random_batch(c, 8, net.input_dim(), net.output_dim());
  std::vector<double> v(net.param_count()), v2(net.param_count());
  for (std::size_t i = 0; i < v.size(); ++i) v2[i] = 2.0 * (v[i] = c.rng().normal());
  const auto h1 = hvp(net, b, v), h2 = hvp(net, b, v2);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(h2[i], 2.0 * h1[i], 1e-5);
}

TEST(Hvp, ExactTwoLayerLinearCrossCheck) {
  testgen::Cases c(4);
  for (int t = 0; t < 5; ++t) {
    const Network net = c.deep_linear(2);
    const Batch b = random_batch(c, 10, net.input_dim(), net.output_dim());
    std::vector<double> v(net.param_count());
    for (auto& x : v) x = c.rng().normal();
    EXPECT_LT(rel_diff(hvp(net, b, v), hvp_exact_two_layer_linear(net, b, v)), 1e-6);
  }
}

TEST(Symmetries, ScaleInvariantToy) {
  Rng rng(5);
  const Network net = Network::scale_invariant(2, 3, rng);
  const std::vector<double> x{0.3, -1.0, 2.0}, y{1.0, 0.5};
  const double base = per_sample_loss(net, x, y);
  for (double lam : {0.5, 2.0, 10.0}) {
    Network s = net;
    s.weight(0) *= lam;
    EXPECT_NEAR(per_sample_loss(s, x, y), base, 1e-14 * (1 + base));
  }
}

TEST(Symmetries, DeepLinearRescaling) {
  testgen::Cases c(6);
  const Network net = c.deep_linear(3);
  Network s = net;
  s.weight(0) *= std::exp(0.7);
  s.weight(1) *= std::exp(-0.7);
  const Batch b = random_batch(c, 6, net.input_dim(), net.output_dim());
  EXPECT_NEAR(batch_loss(s, b), batch_loss(net, b), 1e-10);
}

TEST(Symmetries, HiddenPermutationIsExact) {
  testgen::Cases c(7);
  for (int t = 0; t < 10; ++t) {
    const Network net = Network::mlp({3, 5, 2}, Activation::relu(), c.rng());
    std::vector<std::size_t> perm{0, 1, 2, 3, 4};
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[c.rng().below(i + 1)]);
    Network p = net;
    for (std::size_t j = 0; j < 5; ++j) {
      for (std::size_t k = 0; k < 3; ++k) p.weight(0)(j, k) = net.weight(0)(perm[j], k);
      for (std::size_t k = 0; k < 2; ++k) p.weight(1)(k, j) = net.weight(1)(k, perm[j]);
    }
    const Batch b = random_batch(c, 4, 3, 2);
    EXPECT_NEAR(batch_loss(p, b), batch_loss(net, b), 1e-12 * (1 + batch_loss(net, b)));
  }
}

TEST(ParamLayout, RoundTripProperty) {
  testgen::Cases c(8);
  for (int t = 0; t < 20; ++t) {
    const Network net = c.mlp(Activation::tanh(), c.size(1, 4));
    const auto theta = net.flatten();
    Network copy = net;
    copy.assign(theta);
    EXPECT_EQ(copy.flatten(), theta);
    const ParamLayout& L = net.layout();
    for (std::size_t i = 0; i < L.size(); ++i) {
      const auto idx = L.locate(i);
      EXPECT_EQ(L.flat(idx.layer, idx.row, idx.col), i);
      EXPECT_EQ(theta[i], net.weight(idx.layer)(idx.row, idx.col));
    }
  }
}

TEST(Checkpoint, RoundTrip) {
  testgen::Cases c(9);
  Network net = c.deep_linear(2);
  net.set_embeddings(std::nullopt, c.well_conditioned(net.input_dim()), std::nullopt);
  const auto stem = std::filesystem::temp_directory_path() / "entropic_ckpt_test";
  save_checkpoint(net, stem);
  const Network back = load_checkpoint(stem);
  EXPECT_EQ(back.flatten(), net.flatten());
  ASSERT_TRUE(back.m2().has_value());
  EXPECT_TRUE(*back.m2() == *net.m2());
  EXPECT_FALSE(back.m1().has_value());
}

TEST(HiddenBatch, DeepLinearProducts) {
  testgen::Cases c(10);
  const Network net = c.deep_linear(3);
  const Matrix x = c.matrix(4, net.input_dim());
  const Matrix h2 = hidden_batch(net, x, 2);
  const Matrix expect = x * (net.weight(1) * net.weight(0)).transpose();
  EXPECT_LT(max_abs_diff(h2, expect), 1e-12);
  EXPECT_THROW(hidden_batch(net, x, 0), DimensionError);
}

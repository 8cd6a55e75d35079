#include <cmath>

#include <gtest/gtest.h>

#include "entropic/free_energy.hpp"
#include "entropic/symmetry.hpp"
#include "generators.hpp"

using namespace entropic;

namespace {

Network scalar(double w) { return Network(Arch::DeepLinear, {Matrix::from_rows({{w}})}); }

Batch unit_sample() { return Batch{Matrix::from_rows({{1}}), Matrix::from_rows({{0}})}; }

EntropicConfig config(double eta, double gamma = 0.0) {
  EntropicConfig cfg;
  cfg.lr = eta;
  cfg.weight_decay = gamma;
  cfg.batch_size = 1;
  cfg.n_batches = 1;
  return cfg;
}

const std::vector<double> kX{1.0}, kY{0.0};

}  // namespace

TEST(Phi1, Examples) {
  EXPECT_DOUBLE_EQ(phi1(scalar(0.0), kX, kY, config(0.1)), 0.0);
  EXPECT_NEAR(phi1(scalar(1.0), kX, kY, config(0.1)), 0.1, 1e-15);
  // g = (2, 5) with Lambda = diag(0.1, 0)
  Network net(Arch::DeepLinear, {Matrix::from_rows({{1, 0}})});
  EntropicConfig cfg = config(0.0);
  cfg.lr = LearningRate(Matrix::diagonal(std::vector<double>{0.1, 0.0}));
  EXPECT_NEAR(phi1(net, std::vector<double>{1, 2.5}, kY, cfg), 0.1, 1e-15);
}

TEST(Phi2, Examples) {
  EXPECT_NEAR(phi2(scalar(0.0), kX, kY, config(0.1)), 0.0, 1e-15);
  // g = 2, H = 2, eta = 0.1: g eta H eta g = 0.08.
  EXPECT_NEAR(phi2(scalar(1.0), kX, kY, config(0.1)), 0.08 / 6.0, 1e-8);
  EntropicConfig half = config(0.1);
  half.phi2_coefficient = 0.5;
  EXPECT_NEAR(phi2(scalar(1.0), kX, kY, half), 0.04, 1e-8);
  EXPECT_NEAR(phi2(scalar(1.0), kX, kY, config(0.0)), 0.0, 1e-15);
}

TEST(Entropy, Examples) {
  Rng rng(1);
  const DataModel exact = DataModel::linear(Matrix::identity(2), Matrix::identity(2), Matrix(2, 2), 1);
  EXPECT_NEAR(entropy(Network(Arch::DeepLinear, {Matrix::identity(2)}), exact, config(0.1), rng).value, 0.0,
              1e-20);
  const std::vector<Batch> one{unit_sample()};
  EXPECT_NEAR(entropy(scalar(1.0), one, config(0.05)).value, 0.05, 1e-15);
  EXPECT_DOUBLE_EQ(entropy(scalar(1.0), one, config(0.1)).value,
                   2.0 * entropy(scalar(1.0), one, config(0.05)).value);
}

TEST(Entropy, NonNegativeAndLinearInEta) {
  testgen::Cases c(2);
  for (int t = 0; t < 10; ++t) {
    const Network net = c.mlp(Activation::tanh());
    const DataModel dm = DataModel::linear(c.matrix(net.output_dim(), net.input_dim()),
                                           Matrix::identity(net.input_dim()), Matrix::identity(net.output_dim()));
    Rng brng(t);
    const auto batches = sample_batches(dm, brng, 4, 20);
    const double eta = c.real(0.01, 0.5);
    const double s1 = entropy(net, batches, config(eta)).value;
    const double s3 = entropy(net, batches, config(3 * eta)).value;
    EXPECT_GE(s1, 0.0);
    EXPECT_NEAR(s3, 3.0 * s1, 1e-12 * (1 + s3));
  }
}

TEST(Entropy, DecreasesWithBatchSize) {
  Rng rng(3);
  const Network net = Network::deep_linear({3, 4, 2}, rng);
  const DataModel dm = DataModel::linear(Matrix(2, 3), Matrix::identity(3), Matrix::identity(2), 5);
  double prev = INFINITY;
  for (std::size_t b : {1u, 10u, 100u}) {
    EntropicConfig cfg = config(0.1);
    cfg.batch_size = b;
    cfg.n_batches = 200;
    Rng r(7);
    const double s = entropy(net, dm, cfg, r).value;
    EXPECT_LT(s, prev);
    prev = s;
  }
}

TEST(FreeEnergy, ScalarSum) {
  const std::vector<Batch> one{unit_sample()};
  const FreeEnergyEvaluator ev(unit_sample(), one, config(0.05, 0.01));
  const auto parts = ev.evaluate(scalar(1.0));
  EXPECT_NEAR(parts.loss.value, 1.0, 1e-15);
  EXPECT_NEAR(parts.decay, 0.01, 1e-15);
  EXPECT_NEAR(parts.entropy.value, 0.05, 1e-15);
  EXPECT_NEAR(parts.total.value, 1.06, 1e-14);
}

TEST(FreeEnergy, ReducesToRiskWithoutEtaAndGamma) {
  Rng rng(4);
  const DataModel dm = DataModel::balance(0.5, 1);
  const Network net = Network::deep_linear({2, 3, 2}, rng);
  EntropicConfig cfg = config(0.0);
  cfg.n_eval = 512;
  const FreeEnergyEvaluator ev(dm, cfg, rng);
  const auto parts = ev.evaluate(net);
  EXPECT_DOUBLE_EQ(parts.total.value, parts.loss.value);
  EXPECT_NEAR(parts.total.value, batch_loss(net, ev.eval_batch()), 1e-12 * parts.total.value);
}

TEST(FreeEnergy, ZeroParametersHaveNoDecay) {
  const std::vector<Batch> one{unit_sample()};
  const FreeEnergyEvaluator ev(unit_sample(), one, config(0.05, 0.3));
  EXPECT_EQ(ev.evaluate(scalar(0.0)).decay, 0.0);
}

TEST(Equivalence, ZeroLearningRate) {
  const auto r = verify_entropic_equivalence(scalar(1.0), kX, kY, config(0.0), 10, 1);
  EXPECT_EQ(r.discrepancy, 0.0);
  EXPECT_THROW(verify_entropic_equivalence(scalar(1.0), kX, kY, config(0.1), 5, 1), std::invalid_argument);
}

TEST(Equivalence, SecondOrderIsCloser) {
  const auto first = verify_entropic_equivalence(scalar(1.0), kX, kY, config(0.05), 1000, 1);
  const auto second = verify_entropic_equivalence(scalar(1.0), kX, kY, config(0.05), 1000, 2);
  EXPECT_FALSE(first.diverged);
  EXPECT_GT(first.discrepancy, 0.0);
  EXPECT_LT(second.discrepancy, first.discrepancy);
}

TEST(FlowStep, ScalarHandGradient) {
  const std::vector<Batch> one{unit_sample()};
  const EntropicConfig cfg = config(0.1, 0.01);
  const Network next = entropic_flow_step(scalar(1.0), unit_sample(), one, cfg, 0.01);
  // dL = 2w, decay 2 gamma w, dS = 2 eta w
  EXPECT_NEAR(next.weight(0)(0, 0), 1.0 - 0.01 * (2.0 + 0.02 + 0.2), 1e-6);
  EXPECT_THROW(entropic_flow_step(scalar(1.0), unit_sample(), one, cfg, 0.05), std::invalid_argument);
}

TEST(FlowStep, ShrinksScaleInvariantNorm) {
  Rng rng(5);
  const Network net = Network::scale_invariant(1, 2, rng);
  const DataModel dm = DataModel::linear(Matrix(1, 2), Matrix::identity(2), Matrix(1, 1), 1);
  EntropicConfig cfg = config(0.1, 0.5);
  cfg.n_batches = 4;
  cfg.n_eval = 64;
  const Network next = entropic_flow_step(net, dm, cfg, rng, 0.01);
  EXPECT_LT(next.param_norm(), net.param_norm());
}

TEST(FlowStep, StationaryAtMinimum) {
  const DataModel dm = DataModel::linear(Matrix::identity(2), Matrix::identity(2), Matrix(2, 2), 1);
  const Network net(Arch::DeepLinear, {Matrix::identity(2)});
  Rng rng(6);
  EntropicConfig cfg = config(0.1);
  cfg.n_eval = 128;
  cfg.n_batches = 4;
  const Network next = entropic_flow_step(net, dm, cfg, rng, 0.01);
  EXPECT_LT(max_abs_diff(next.weight(0), net.weight(0)), 1e-8);
}

TEST(SymmetryOnF, BreakingAndPreservation) {
  Rng rng(8);
  const DataModel dm = DataModel::linear(Matrix::from_rows({{1.0, 0.5}, {0.0, 2.0}}), Matrix::identity(2),
                                         Matrix::diagonal(std::vector<double>{1.0, 0.2}), 3);
  const Network net = Network::deep_linear({2, 2, 2}, rng);
  EntropicConfig cfg = config(0.1);
  cfg.batch_size = 4;
  cfg.n_batches = 200;
  cfg.n_eval = 2048;
  const FreeEnergyEvaluator ev(dm, cfg, rng);
  const Generator gen = Generator::layer_rescaling(net, 0, 1);
  const auto base = ev.evaluate(net);
  for (double lam : {-0.5, 0.5}) {
    const auto moved = ev.evaluate(gen.act(net, lam));
    EXPECT_NEAR(moved.loss.value, base.loss.value, 1e-9 * (1 + base.loss.value));
    EXPECT_GT(std::abs(moved.total.value - base.total.value), 1e-4);
  }
  const Network mlp = Network::mlp({2, 3, 2}, Activation::relu(), rng);
  Network perm = mlp;
  for (std::size_t k = 0; k < 2; ++k) {
    std::swap(perm.weight(0)(0, k), perm.weight(0)(2, k));
    std::swap(perm.weight(1)(k, 0), perm.weight(1)(k, 2));
  }
  EXPECT_NEAR(ev.evaluate(perm).total.value, ev.evaluate(mlp).total.value, 1e-12);
}

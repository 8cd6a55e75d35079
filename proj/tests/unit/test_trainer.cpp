#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "entropic/oracle.hpp"
#include "entropic/trainer.hpp"
#include "generators.hpp"

using namespace entropic;

namespace {

Network scalar(double w) { return Network(Arch::DeepLinear, {Matrix::from_rows({{w}})}); }

Batch unit_sample(double y = 0.0) { return Batch{Matrix::from_rows({{1}}), Matrix::from_rows({{y}})}; }

EntropicConfig config(double eta, double gamma = 0.0) {
  EntropicConfig cfg;
  cfg.lr = eta;
  cfg.weight_decay = gamma;
  cfg.batch_size = 8;
  cfg.n_batches = 4;
  cfg.n_eval = 64;
  return cfg;
}

TrainConfig small_run(std::size_t steps, std::uint64_t seed) {
  TrainConfig tc;
  tc.entropic = config(0.05);
  tc.steps = steps;
  tc.record_every = 10;
  tc.seed = seed;
  tc.metrics.sharpness_every = 0;
  tc.metrics.eval_size = 64;
  return tc;
}

}  // namespace

TEST(SgdStep, ScalarHandValues) {
  EXPECT_NEAR(sgd_step(scalar(1.0), unit_sample(), config(0.1)).weight(0)(0, 0), 0.8, 1e-15);
  // Zero data gradient: only decay acts, theta <- (1 - 2 eta gamma) theta.
  EXPECT_NEAR(sgd_step(scalar(1.5), unit_sample(1.5), config(0.1, 0.2)).weight(0)(0, 0), 1.5 * (1 - 0.04),
              1e-15);
  EXPECT_EQ(sgd_step(scalar(1.0), unit_sample(1.0), config(0.1)).weight(0)(0, 0), 1.0);
}

TEST(SgdStep, DivergenceIsReported) {
  Network net = scalar(1e7);
  EXPECT_THROW(sgd_step_inplace(net, unit_sample(), config(10.0)), DivergenceError);
}

TEST(LrSchedule, PiecewiseConstant) {
  LrSchedule s{{{0, 1.0}, {100, 0.1}}};
  EXPECT_EQ(s.multiplier(0), 1.0);
  EXPECT_EQ(s.multiplier(99), 1.0);
  EXPECT_EQ(s.multiplier(100), 0.1);
  EXPECT_EQ(s.multiplier(1000), 0.1);
}

TEST(Train, DeterministicUnderSeed) {
  Rng rng(1);
  const Network init = Network::deep_linear({2, 3, 2}, rng);
  const DataModel dm = DataModel::balance(0.5, 2);
  const auto a = train(init, dm, small_run(50, 9));
  const auto b = train(init, dm, small_run(50, 9));
  const auto c = train(init, dm, small_run(50, 10));
  EXPECT_EQ(a.final.flatten(), b.final.flatten());
  EXPECT_NE(a.final.flatten(), c.final.flatten());
  EXPECT_EQ(a.steps_done, 50u);
  EXPECT_EQ(a.trajectory.front().step, 0u);
  EXPECT_EQ(a.trajectory.back().step, 50u);
}

TEST(Train, NoiselessLossDecreases) {
  Rng rng(3);
  const Network init = Network::deep_linear({2, 4, 2}, rng, 0.5);
  const DataModel dm =
      DataModel::linear(Matrix::from_rows({{1.0, 0.5}, {-0.5, 1.0}}), Matrix::identity(2), Matrix(2, 2), 4);
  const auto r = train(init, dm, small_run(400, 5));
  EXPECT_LT(r.trajectory.back().loss, 0.1 * r.trajectory.front().loss);
}

TEST(Train, ObserverSeesEveryPeriod) {
  Rng rng(4);
  const Network init = Network::deep_linear({2, 3, 2}, rng);
  TrainConfig tc = small_run(30, 1);
  std::vector<std::size_t> seen;
  tc.observer = [&seen](std::size_t t, const Network&) { seen.push_back(t); };
  tc.observe_every = 10;
  train(init, DataModel::balance(0.5), tc);
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 10, 20, 30}));
}

TEST(Train, RejectsZeroSteps) {
  Rng rng(5);
  TrainConfig tc = small_run(1, 1);
  tc.steps = 0;
  EXPECT_THROW(train(Network::deep_linear({2, 2}, rng), DataModel::balance(0.5), tc), std::invalid_argument);
}

TEST(Sweep, ParallelismDoesNotChangeResults) {
  Rng rng(6);
  SweepGrid grid;
  grid.axes = {"lr"};
  grid.base_seed = 11;
  for (double lr : {0.01, 0.02, 0.04, 0.08}) {
    TrainConfig tc = small_run(40, 0);
    tc.entropic.lr = lr;
    grid.cells.push_back(SweepCell{{{"lr", lr}}, Network::deep_linear({2, 3, 2}, rng), DataModel::balance(0.5), tc});
  }
  const auto serial = run_sweep(grid, 1);
  const auto parallel = run_sweep(grid, 4);
  ASSERT_EQ(serial.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(serial[i].ok);
    EXPECT_EQ(serial[i].index, i);
    EXPECT_EQ(serial[i].result.final.flatten(), parallel[i].result.final.flatten());
  }
}

TEST(Sharpness, ScalarQuadratic) {
  Rng rng(7);
  const auto s = measure_sharpness(scalar(0.4), unit_sample(), 4, rng);
  EXPECT_NEAR(s.trace, 2.0, 1e-6);
  EXPECT_NEAR(s.lambda_max, 2.0, 1e-6);
}

TEST(Sharpness, HutchinsonMatchesFiniteDifferenceTrace) {
  testgen::Cases c(8);
  const Network net = Network::mlp({3, 4, 2}, Activation::tanh(), c.rng());
  const Batch b{c.matrix(16, 3), c.matrix(16, 2)};
  const auto s = measure_sharpness(net, b, 64, c.rng(), false);
  const double exact = oracle::fd_hessian_trace(
      [&](std::span<const double> theta) {
        Network n = net;
        n.assign(theta);
        return batch_loss(n, b);
      },
      net.flatten());
  EXPECT_LE(std::abs(s.trace - exact), 3.0 * s.trace_se + 1e-4);
}

TEST(Sharpness, LambdaMaxBoundsTraceAtInterpolation) {
  testgen::Cases c(9);
  for (int t = 0; t < 5; ++t) {
    const Network net = c.deep_linear(2);
    const Matrix x = c.matrix(20, net.input_dim());
    const Batch b{x, forward_batch(net, x)};
    const auto s = measure_sharpness(net, b, 256, c.rng());
    const double dim = static_cast<double>(net.param_count());
    EXPECT_LE(s.lambda_max, s.trace + 4.0 * s.trace_se + 1e-8);
    EXPECT_LE(s.trace - 4.0 * s.trace_se, dim * s.lambda_max * (1 + 1e-6));
  }
}

TEST(TrajectoryCsv, HasHeaderAndRows) {
  Rng rng(10);
  const auto r = train(Network::deep_linear({2, 2}, rng), DataModel::balance(0.5), small_run(20, 1));
  std::ostringstream os;
  write_trajectory_csv(os, r.trajectory);
  const std::string s = os.str();
  EXPECT_NE(s.find("step"), std::string::npos);
  EXPECT_EQ(static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')), r.trajectory.size() + 1);
}

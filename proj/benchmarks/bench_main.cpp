#include <benchmark/benchmark.h>

#include "entropic/datagen.hpp"
#include "entropic/free_energy.hpp"
#include "entropic/linalg.hpp"
#include "entropic/network.hpp"
#include "entropic/rng.hpp"
#include "entropic/trainer.hpp"

namespace {

using namespace entropic;

void BM_Svd(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Matrix a = gaussian_matrix(rng, n, n);
  for (auto _ : state) benchmark::DoNotOptimize(svd(a));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Svd)->RangeMultiplier(2)->Range(4, 64)->Complexity();

void BM_SymmetricEigen(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Matrix g = gaussian_matrix(rng, n, n);
  const Matrix a = symmetrize(matmul_nt(g, g));
  for (auto _ : state) benchmark::DoNotOptimize(symmetric_eigen(a));
}
BENCHMARK(BM_SymmetricEigen)->RangeMultiplier(2)->Range(4, 64);

Batch make_batch(std::size_t dx, std::size_t dy, std::size_t b) {
  Rng rng(3);
  const DataModel dm = DataModel::linear(gaussian_matrix(rng, dy, dx), Matrix::identity(dx),
                                         Matrix::identity(dy) * 0.1);
  return sample_batch(dm, rng, b);
}

void BM_BatchGradient(benchmark::State& state) {
  const auto b = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  const Network net = Network::mlp({100, 16, 10}, Activation::relu(), rng);
  const Batch batch = make_batch(100, 10, b);
  for (auto _ : state) benchmark::DoNotOptimize(batch_gradient(net, batch));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(b));
}
BENCHMARK(BM_BatchGradient)->Arg(32)->Arg(200);

void BM_Hvp(benchmark::State& state) {
  Rng rng(5);
  const Network net = Network::deep_linear({2, 10, 2}, rng);
  const Batch batch = make_batch(2, 2, static_cast<std::size_t>(state.range(0)));
  std::vector<double> v(net.param_count());
  for (double& x : v) x = rng.rademacher();
  for (auto _ : state) benchmark::DoNotOptimize(hvp(net, batch, v));
}
BENCHMARK(BM_Hvp)->Arg(256)->Arg(4096);

void BM_SgdStep(benchmark::State& state) {
  Rng rng(6);
  Network net = Network::deep_linear({4, 8, 8, 4}, rng);
  const Batch batch = make_batch(4, 4, 32);
  EntropicConfig cfg;
  cfg.lr = 1e-4;
  for (auto _ : state) benchmark::DoNotOptimize(sgd_step_inplace(net, batch, cfg));
}
BENCHMARK(BM_SgdStep);

void BM_Entropy(benchmark::State& state) {
  Rng rng(7);
  const Network net = Network::deep_linear({4, 8, 8, 4}, rng);
  const DataModel dm = DataModel::linear(gaussian_matrix(rng, 4, 4), Matrix::identity(4), Matrix::identity(4));
  EntropicConfig cfg;
  cfg.lr = 0.05;
  cfg.batch_size = 32;
  const auto batches = sample_batches(dm, rng, 32, 30);
  for (auto _ : state) benchmark::DoNotOptimize(entropy(net, batches, cfg));
}
BENCHMARK(BM_Entropy);

}  // namespace
BENCHMARK_MAIN();

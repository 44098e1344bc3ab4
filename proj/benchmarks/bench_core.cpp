#include <benchmark/benchmark.h>

#include "lth/pruning.hpp"
#include "lth/train.hpp"

namespace {

lth::NetworkSpec lenet_spec() {
  return {.layer_dims = {784, 300, 100, 10}, .dropout_rate = 0.0, .seed = 7};
}

lth::Batch random_batch(std::size_t n, std::size_t d, std::size_t k,
                        std::uint64_t seed) {
  lth::RandomStream rng(seed);
  lth::Batch b;
  b.num_classes = k;
  b.inputs = lth::Matrix(n, d);
  for (std::size_t i = 0; i < b.inputs.size(); ++i) b.inputs[i] = rng.uniform();
  b.labels.resize(n);
  for (auto& y : b.labels) {
    y = static_cast<int>(rng.uniform() * static_cast<double>(k));
  }
  return b;
}

void BM_ForwardLenet(benchmark::State& state) {
  auto params = lth::init_network(lenet_spec());
  auto mask = lth::Mask::ones_like(params.spec());
  auto batch = random_batch(60, 784, 10, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        lth::forward_probs(params, mask, batch.inputs));
  }
}
BENCHMARK(BM_ForwardLenet);

void BM_LossAndGradLenet(benchmark::State& state) {
  auto params = lth::init_network(lenet_spec());
  auto mask = lth::Mask::ones_like(params.spec());
  auto batch = random_batch(60, 784, 10, 3);
  lth::StrategySpec strategy;
  lth::RandomStream rng(11);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        lth::loss_and_grad(params, mask, batch, strategy, rng));
  }
}
BENCHMARK(BM_LossAndGradLenet);

void BM_PruneGlobalLenet(benchmark::State& state) {
  auto params = lth::init_network(lenet_spec());
  auto mask = lth::Mask::ones_like(params.spec());
  for (auto _ : state) {
    benchmark::DoNotOptimize(lth::prune_global(params, mask, 0.2, {2}));
  }
}
BENCHMARK(BM_PruneGlobalLenet);

}  // namespace

BENCHMARK_MAIN();

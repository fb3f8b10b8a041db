#include <benchmark/benchmark.h>

#include <vector>

#include "wavy/autodiff.hpp"
#include "wavy/blocks.hpp"
#include "wavy/dynamics.hpp"
#include "wavy/train.hpp"

namespace {

using namespace wavy;

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Prng prng(1);
  const Matrix a = gaussian_init(prng, n, n, 1.0);
  const Matrix b = gaussian_init(prng, n, n, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(256);

ModelConfig model_config(Variant v) {
  ModelConfig c;
  c.residual_variant = v;
  return c;
}

void BM_ModelForward(benchmark::State& state) {
  const ModelParams m = init_model(model_config(static_cast<Variant>(state.range(0))), 1);
  std::vector<int> tokens(16);
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = static_cast<int>(i % 16);
  for (auto _ : state) benchmark::DoNotOptimize(model_forward(tokens, m));
  state.SetLabel(std::string(to_string(static_cast<Variant>(state.range(0)))));
}
BENCHMARK(BM_ModelForward)
    ->Arg(static_cast<int>(Variant::kDiffuse))
    ->Arg(static_cast<int>(Variant::kWave))
    ->Arg(static_cast<int>(Variant::kMixOutput))
    ->Arg(static_cast<int>(Variant::kMixVelocity));

// Forward, backward and one optimizer step at batch 32.
void BM_TrainStep(benchmark::State& state) {
  TaskSpec task;
  TrainConfig cfg;
  cfg.steps = 1;
  cfg.eval_every = 1;
  cfg.val_sequences = 1;
  const ModelParams m = init_model(model_config(static_cast<Variant>(state.range(0))), 1);
  for (auto _ : state) benchmark::DoNotOptimize(train(m, task, cfg));
  state.SetLabel(std::string(to_string(static_cast<Variant>(state.range(0)))));
}
BENCHMARK(BM_TrainStep)
    ->Arg(static_cast<int>(Variant::kDiffuse))
    ->Arg(static_cast<int>(Variant::kMixVelocity))
    ->Unit(benchmark::kMillisecond);

void BM_Rollout(benchmark::State& state) {
  Prng prng(3);
  const Matrix x = gaussian_init(prng, 32, 16, 1.0);
  const AttentionMatrix a = AttentionMatrix::uniform(32);
  StepConfig cfg;
  cfg.tau = 0.1;
  cfg.variant = Variant::kWave;
  for (auto _ : state) benchmark::DoNotOptimize(rollout(DynamicsState::at_rest(x), a, cfg, 1000));
}
BENCHMARK(BM_Rollout)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

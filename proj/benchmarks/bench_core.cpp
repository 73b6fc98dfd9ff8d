#include "gfm/evaluation.hpp"
#include "gfm/fixtures.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace gfm;

// Family index follows the Family enum; range(1) is n_z.
ModelSpec spec_for(const benchmark::State& state) {
  return ModelSpec::make(static_cast<Family>(state.range(0)), static_cast<int>(state.range(1)), 10);
}

void BM_VlbWindowForward(benchmark::State& state) {
  const ModelSpec spec = spec_for(state);
  const FittedModel m = init_model(spec, 1);
  Rng rng(2);
  const Matrix x = make_fixture(ModelSpec::make(Family::APT, 1, 10), {}).panel.returns.topRows(50);
  const Matrix eps = draw_eps(rng, 50, 1, spec.n_z);
  const FactorState s0 = initial_state(spec, m.theta);
  for (auto _ : state) benchmark::DoNotOptimize(vlb(m, x, s0, 1, eps).breakdown.total);
  state.SetItemsProcessed(state.iterations() * 50);
  state.SetLabel(spec.label());
}

void BM_VlbWindowGradient(benchmark::State& state) {
  const ModelSpec spec = spec_for(state);
  const FittedModel m = init_model(spec, 1);
  Rng rng(2);
  const Matrix x = make_fixture(ModelSpec::make(Family::APT, 1, 10), {}).panel.returns.topRows(50);
  const Matrix eps = draw_eps(rng, 50, 1, spec.n_z);
  const FactorState s0 = initial_state(spec, m.theta);
  for (auto _ : state) benchmark::DoNotOptimize(vlb_gradient(m, x, s0, 1, eps).value.breakdown.total);
  state.SetItemsProcessed(state.iterations() * 50);
  state.SetLabel(spec.label());
}

void BM_MllImportance(benchmark::State& state) {
  const ModelSpec spec = spec_for(state);
  const FittedModel m = init_model(spec, 1);
  const Matrix x = make_fixture(ModelSpec::make(Family::APT, 1, 10), {}).panel.returns.topRows(250);
  const FactorState s0 = initial_state(spec, m.theta);
  for (auto _ : state) benchmark::DoNotOptimize(mll_importance(m, x, s0, 16, 3, 1).value);
  state.SetItemsProcessed(state.iterations() * 250 * 16);
  state.SetLabel(spec.label());
}

void families(benchmark::internal::Benchmark* b) {
  b->Args({static_cast<long>(Family::APT), 1})
      ->Args({static_cast<long>(Family::LSVFM), 1})
      ->Args({static_cast<long>(Family::SRSVFM), 1})
      ->Args({static_cast<long>(Family::APTSR), 2})
      ->Args({static_cast<long>(Family::NNFM), 1})
      ->Args({static_cast<long>(Family::MNNFM2), 2});
}

}  // namespace

BENCHMARK(BM_VlbWindowForward)->Apply(families)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_VlbWindowGradient)->Apply(families)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MllImportance)->Apply(families)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();

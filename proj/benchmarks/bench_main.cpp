#include <benchmark/benchmark.h>

#include <random>

#include "spurscan/ig.hpp"
#include "spurscan/pe.hpp"
#include "spurscan/synth.hpp"

using namespace spurscan;

namespace {

std::vector<std::uint8_t> toy_file(std::uint64_t seed) { return make_fixture(FixtureSpec::toy_template(), seed); }

ModelConfig toy_malconv() {
  auto cfg = ModelConfig::malconv_small(4096);
  cfg.channels = 16;
  cfg.kernel = 8;
  cfg.stride = 4;
  return cfg;
}

}  // namespace

static void BM_RegionMap(benchmark::State& state) {
  const auto bytes = toy_file(1);
  for (auto _ : state) {
    auto map = region_map(parse_pe(bytes));
    benchmark::DoNotOptimize(map);
  }
}
BENCHMARK(BM_RegionMap);

static void BM_SelectedNorm(benchmark::State& state) {
  const auto bytes = toy_file(2);
  const auto map = region_map(parse_pe(bytes));
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  std::vector<double> attr(bytes.size());
  for (auto& v : attr) v = g(rng);
  for (auto _ : state) {
    double s = 0.0;
    for (RegionKind k : kPartitionKinds) s += selected_squared_norm(attr, map, k, attr.size());
    benchmark::DoNotOptimize(s);
  }
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(attr.size() * sizeof(double)));
}
BENCHMARK(BM_SelectedNorm);

static void BM_Forward(benchmark::State& state) {
  auto cfg = state.range(0) == 0 ? toy_malconv() : ModelConfig::bbdnn_small(4096);
  const auto w = init_weights(cfg, 3);
  const auto emb = embed(tokenize(toy_file(3), cfg.window), w, cfg);
  for (auto _ : state) {
    auto r = forward(cfg, w, emb);
    benchmark::DoNotOptimize(r.output);
  }
  state.SetLabel(state.range(0) == 0 ? "malconv" : "bbdnn");
}
BENCHMARK(BM_Forward)->Arg(0)->Arg(1);

static void BM_ForwardBackward(benchmark::State& state) {
  auto cfg = state.range(0) == 0 ? toy_malconv() : ModelConfig::bbdnn_small(4096);
  const auto w = init_weights(cfg, 4);
  const auto emb = embed(tokenize(toy_file(4), cfg.window), w, cfg);
  for (auto _ : state) {
    auto r = forward(cfg, w, emb);
    auto g = backward_input(cfg, w, r.cache, 1.0, Target::MalwareScore);
    benchmark::DoNotOptimize(g);
  }
  state.SetLabel(state.range(0) == 0 ? "malconv" : "bbdnn");
}
BENCHMARK(BM_ForwardBackward)->Arg(0)->Arg(1);

static void BM_IntegratedGradients(benchmark::State& state) {
  const auto cfg = toy_malconv();
  const auto w = init_weights(cfg, 5);
  const auto bytes = toy_file(5);
  IgConfig igc;
  igc.steps = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    auto a = integrated_gradients(cfg, w, igc, bytes);
    benchmark::DoNotOptimize(a);
  }
}
BENCHMARK(BM_IntegratedGradients)->Arg(25)->Arg(50)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

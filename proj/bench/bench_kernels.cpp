// Serial reference vs OpenMP for the three parallel kernels. The second
// benchmark argument selects the path: 0 serial, 1 parallel.

#include <benchmark/benchmark.h>

#include "blocktune/ga.hpp"
#include "blocktune/simulator.hpp"
#include "blocktune/surrogate.hpp"

using namespace blocktune;

namespace {

Execution exec_of(const benchmark::State& state) {
  return state.range(1) ? Execution::kParallel : Execution::kSerial;
}

SimConfig base_config() {
  SimConfig c;
  c.workload.arrival = {ArrivalProcess::Kind::kPoisson, 300};
  c.workload.tx_size = {TxSizeDistribution::Kind::kUniform, 1024, 8192};
  c.workload.total_tx = 600;
  c.workload.rng_seed = 3;
  c.nodes = {{0, 1e7}, {1, 5e6}, {2, 2e7}, {3, 1e7}};
  c.block_cut = {16, 1 << 20, 1.0};
  c.rng_seed = 4;
  return c;
}

const PerformancePredictor& predictor() {
  static const PerformancePredictor p = [] {
    const DatasetGrid grid{{1, 2, 4, 8, 16, 32}, {1024, 4096, 8192}, {5e6, 1e7, 2e7}, 1};
    return PerformancePredictor::fit(generate_training_dataset(base_config(), grid));
  }();
  return p;
}

ProblemInstance instance(std::size_t n) {
  std::vector<Transaction> txs;
  Rng rng(n);
  for (std::size_t i = 0; i < n; ++i) txs.push_back({i, 1024 + static_cast<std::int64_t>(rng() % 7168)});
  return ProblemInstance(std::move(txs), base_config().nodes, {4, 32, 1 << 20});
}

void BM_EvaluatePopulation(benchmark::State& state) {
  const auto inst = instance(static_cast<std::size_t>(state.range(0)));
  GaConfig cfg;
  cfg.population_size = 200;
  const auto pop = initialize_population(inst, cfg);
  const auto& model = predictor();
  for (auto _ : state) {
    auto copy = pop;
    evaluate_population(copy, inst, model, exec_of(state));
    benchmark::DoNotOptimize(copy.front().cached_fitness);
  }
}
BENCHMARK(BM_EvaluatePopulation)->ArgsProduct({{64, 512}, {0, 1}})->Unit(benchmark::kMillisecond);

void BM_GenerateDataset(benchmark::State& state) {
  auto c = base_config();
  c.workload.total_tx = state.range(0);
  const DatasetGrid grid{{1, 4, 16}, {1024, 8192}, {5e6, 2e7}, 2};
  for (auto _ : state) {
    auto s = generate_training_dataset(c, grid, exec_of(state));
    benchmark::DoNotOptimize(s.data());
  }
}
BENCHMARK(BM_GenerateDataset)->ArgsProduct({{200, 1000}, {0, 1}})->Unit(benchmark::kMillisecond);

void BM_ThroughputCurve(benchmark::State& state) {
  const auto c = base_config();
  std::vector<std::int64_t> sizes;
  for (std::int64_t s = 1; s <= state.range(0); ++s) sizes.push_back(s);
  for (auto _ : state) {
    auto curve = throughput_vs_blocksize(c, sizes, exec_of(state));
    benchmark::DoNotOptimize(curve.data());
  }
}
BENCHMARK(BM_ThroughputCurve)->ArgsProduct({{8, 32}, {0, 1}})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

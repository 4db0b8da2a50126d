#pragma once

// Desk-scale experiments: how the recommended block size moves with one
// workload factor, and whether the recommendation wins on simulated
// throughput against its neighbours.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "blocktune/config.hpp"
#include "blocktune/ga.hpp"
#include "blocktune/model.hpp"
#include "blocktune/simulator.hpp"
#include "blocktune/surrogate.hpp"
#include "json.hpp"

namespace blocktune {

// One network/workload setting and everything needed to run the full
// simulate -> train -> optimize chain on it. Seeds are not part of a
// scenario; they are derived from a single run seed (see ScenarioSeeds).
struct Scenario {
  std::string id = "scenario";
  WorkloadProfile workload;
  std::vector<NodeProfile> nodes;
  BlockLimits limits;
  std::int64_t instance_tx = 96;
  double timeout_s = 2.0;
  GroundTruthCost cost;
  // Empty axes are derived from the scenario (see dataset_grid).
  DatasetGrid dataset;
  // Workload length for training simulations; 0 means workload.total_tx.
  std::int64_t dataset_total_tx = 0;
  SurrogateParams surrogate;
  GaConfig ga;

  // Sim config with the orderer cutting at block_size transactions or cb bytes.
  SimConfig sim_config(std::int64_t block_size, std::uint64_t workload_seed,
                       std::uint64_t noise_seed) const;
  ProblemInstance instance(std::uint64_t seed) const;
  // Block sizes default to 1..ub. Tx sizes and bandwidths default to at least
  // three values bracketing the scenario so the polynomial basis is full rank.
  DatasetGrid dataset_grid() const;

  nlohmann::json to_json() const;
};

Scenario scenario_from_json(const JsonReader& r);

// Block sizes 1..max_block; tx sizes and bandwidths bracket the workload and
// nodes with at least three values each, tx sizes never above cb.
DatasetGrid default_dataset_grid(const TxSizeDistribution& tx_size,
                                 const std::vector<NodeProfile>& nodes,
                                 std::int64_t max_block, std::int64_t cb);

struct ScenarioSeeds {
  std::uint64_t run = 0;
  std::uint64_t instance = 0;
  std::uint64_t data_workload = 0;
  std::uint64_t data_noise = 0;
  std::uint64_t ga = 0;
  std::uint64_t check_workload = 0;
  std::uint64_t check_noise = 0;

  static ScenarioSeeds derive(std::uint64_t run_seed);
  nlohmann::json to_json() const;
};

std::vector<TrainingSample> scenario_dataset(const Scenario& scenario, const ScenarioSeeds& seeds,
                                             Execution exec);

struct Recommendation {
  std::string scenario_id;
  ScenarioSeeds seeds;
  std::size_t dataset_rows = 0;
  GaResult ga;

  nlohmann::json to_json() const;
};

// Simulate, fit the predictor, run the GA.
Recommendation recommend(const Scenario& scenario, std::uint64_t run_seed, Execution exec);

// ---------------------------------------------------------------------------
// Sensitivity sweeps

enum class Factor { kTxSize, kArrivalRate, kBandwidth };
const char* to_string(Factor f);
Factor factor_from_string(const std::string& s);

// tx_size sets a constant transaction size, arrival_rate the workload rate,
// bandwidth every node's link.
Scenario apply_factor(const Scenario& base, Factor factor, double value);

struct SweepSpec {
  Factor factor = Factor::kTxSize;
  std::vector<double> values;
  Scenario base;
  int runs_per_point = 1;
  std::uint64_t rng_seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
};

SweepSpec sweep_from_json(const JsonReader& r);

struct SweepRecord {
  std::size_t point = 0;
  double value = 0;
  int run = 0;
  std::uint64_t run_seed = 0;
  std::int64_t recommended_block_size = 0;
  double best_fitness = 0;
  std::uint64_t ga_seed = 0;
  int generations_run = 0;
};

struct SweepResult {
  Factor factor = Factor::kTxSize;
  std::vector<double> values;
  std::vector<SweepRecord> records;
  // Unset when either series has zero variance.
  std::optional<double> spearman;
  // Arrival-rate sweeps only: population standard deviation of the
  // recommendations over the upper half of the sweep values.
  std::optional<double> stabilization_index;

  nlohmann::json to_json() const;
  void write_csv(std::ostream& out) const;
};

SweepResult run_sensitivity(const SweepSpec& spec, Execution exec = Execution::kParallel);

// Spearman rank correlation with average ranks for ties.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);
double population_sd(std::span<const double> v);

// ---------------------------------------------------------------------------
// Throughput validation

struct ValidationSpec {
  std::vector<Scenario> scenarios;
  std::vector<std::int64_t> neighbor_offsets{-2, -1, 0, 1, 2};
  std::uint64_t rng_seed = 1;

  nlohmann::json to_json() const;
};

ValidationSpec validation_from_json(const JsonReader& r);

struct ValidationEntry {
  std::string scenario_id;
  ScenarioSeeds seeds;
  std::int64_t recommended_block_size = 0;
  double best_fitness = 0;
  std::vector<CurvePoint> curve;
  bool winner = false;

  nlohmann::json to_json() const;
};

struct ValidationReport {
  std::vector<ValidationEntry> entries;
  int wins = 0;

  nlohmann::json to_json() const;
  void write_csv(std::ostream& out) const;
};

// Sizes rec + offset clamped to [1, ub], deduplicated and sorted.
std::vector<std::int64_t> neighbor_sizes(std::int64_t recommended, std::int64_t ub,
                                         std::span<const std::int64_t> offsets);

// Simulated throughput at the recommendation and its neighbours, all with
// the same workload and noise seeds.
ValidationEntry check_recommendation(const Scenario& scenario, const ScenarioSeeds& seeds,
                                     std::int64_t recommended, double best_fitness,
                                     std::span<const std::int64_t> offsets, Execution exec);

ValidationReport run_validation(const ValidationSpec& spec, Execution exec = Execution::kParallel);

}  // namespace blocktune

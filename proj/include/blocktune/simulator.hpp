#pragma once

// Discrete-event model of the orderer -> broadcast -> validate -> commit
// pipeline. Transactions arrive at the orderer already endorsed; the orderer
// cuts blocks by count, bytes or timeout; every committing node receives each
// block over its own link and validates/commits blocks in order.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "blocktune/model.hpp"
#include "blocktune/surrogate.hpp"
#include "json.hpp"

namespace blocktune {

enum class Execution { kSerial, kParallel };

struct ArrivalProcess {
  enum class Kind { kFixedRate, kPoisson };
  Kind kind = Kind::kFixedRate;
  double rate_tps = 100.0;
};

struct TxSizeDistribution {
  enum class Kind { kConstant, kUniform };
  Kind kind = Kind::kConstant;
  std::int64_t min_bytes = 1024;
  std::int64_t max_bytes = 1024;  // equals min_bytes for constant sizes

  static TxSizeDistribution constant(std::int64_t bytes) {
    return {Kind::kConstant, bytes, bytes};
  }
  double mean() const { return 0.5 * static_cast<double>(min_bytes + max_bytes); }
};

struct WorkloadProfile {
  ArrivalProcess arrival;
  TxSizeDistribution tx_size;
  std::int64_t total_tx = 1000;
  std::uint64_t rng_seed = 1;
};

// Synthetic node costs. Validation is affine in count and bytes, commit is a
// fixed overhead plus a per-byte term, and every block pays a fixed dispatch
// overhead on each link.
struct GroundTruthCost {
  double vt_per_tx_s = 2e-4;
  double vt_per_byte_s = 2e-8;
  double ct_fixed_s = 0.04;
  double ct_per_byte_s = 1e-8;
  double dispatch_overhead_s = 0.01;
  double noise_sd_fraction = 0.02;

  double validation_time(std::int64_t count, std::int64_t bytes) const {
    return vt_per_tx_s * static_cast<double>(count) + vt_per_byte_s * static_cast<double>(bytes);
  }
  double commit_time(std::int64_t bytes) const {
    return ct_fixed_s + ct_per_byte_s * static_cast<double>(bytes);
  }
  double transfer_time(std::int64_t bytes, double bandwidth) const {
    return dispatch_overhead_s + static_cast<double>(bytes) / bandwidth;
  }
};

struct BlockCutPolicy {
  std::int64_t max_tx_count = 10;
  std::int64_t max_bytes = 1 << 20;
  double timeout_s = 2.0;
};

struct SimConfig {
  WorkloadProfile workload;
  std::vector<NodeProfile> nodes;
  BlockCutPolicy block_cut;
  GroundTruthCost cost;
  std::uint64_t rng_seed = 1;

  // Throws ValidationError describing the first violated rule.
  void validate() const;
};

enum class CutReason { kCount, kBytes, kTimeout };
const char* to_string(CutReason r);

struct BlockRecord {
  std::int64_t tx_count = 0;
  std::int64_t bytes = 0;
  double first_arrival_s = 0;
  double cut_time_s = 0;
  double completion_time_s = 0;
  CutReason cut_reason = CutReason::kCount;
  // Per node.
  std::vector<double> transfer_s;
  std::vector<double> vt_s;
  std::vector<double> ct_s;
  std::vector<double> commit_time_s;

  friend bool operator==(const BlockRecord&, const BlockRecord&) = default;
};

struct SimResult {
  double throughput_tps = 0;
  double mean_latency_s = 0;
  double makespan_s = 0;
  std::int64_t committed_tx = 0;
  std::vector<BlockRecord> per_block_records;
  std::vector<double> tx_arrival_s;
  std::vector<double> tx_commit_s;
  std::vector<std::size_t> tx_block;

  friend bool operator==(const SimResult&, const SimResult&) = default;
};

SimResult run_simulation(const SimConfig& config);

// One row per (block, node).
void write_block_records(std::ostream& out, const SimResult& result);
nlohmann::json summary_json(const SimResult& result);

// Per (block, node) surrogate sample: features (count, bytes, BW_k), the
// node's validation and commit times, and the block's aggregate transaction
// latency on that node (count x time from cut to commit).
std::vector<TrainingSample> training_samples(const SimConfig& config, const SimResult& result);

struct DatasetGrid {
  std::vector<std::int64_t> block_sizes;
  std::vector<std::int64_t> tx_sizes;
  std::vector<double> bandwidths;
  int replicates = 1;
};

// One simulation per (block size, tx size, bandwidth, replicate) cell. Every
// node runs at the cell's bandwidth. Samples are concatenated in cell order,
// so serial and parallel execution produce identical output.
std::vector<TrainingSample> generate_training_dataset(const SimConfig& base,
                                                      const DatasetGrid& grid,
                                                      Execution exec = Execution::kParallel);

struct CurvePoint {
  std::int64_t block_size = 0;
  double throughput_tps = 0;
  double mean_latency_s = 0;
};

std::vector<CurvePoint> throughput_vs_blocksize(const SimConfig& config,
                                                std::span<const std::int64_t> candidate_sizes,
                                                Execution exec = Execution::kParallel);

void write_curve(std::ostream& out, std::span<const CurvePoint> curve);

}  // namespace blocktune

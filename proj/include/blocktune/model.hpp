#pragma once

// Block-size assignment model: transactions are placed into candidate blocks,
// each block costs the slowest committing node's storing time plus latency,
// and the objective is the sum of block costs.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace blocktune {

struct Transaction {
  std::size_t id = 0;
  std::int64_t size_bytes = 1;
};

struct NodeProfile {
  std::size_t id = 0;
  double bandwidth_bytes_per_sec = 1.0;
};

// lb is read as a minimum per-block transaction count; it only feeds the
// candidate block count nb = ceil(n / lb) + 1.
struct BlockLimits {
  std::int64_t lb = 1;
  std::int64_t ub = 1;
  std::int64_t cb = 1;
};

// Surrogate inputs for one (block, node) pair.
struct FeatureVector {
  double tx_count = 0;
  double block_bytes = 0;
  double bandwidth = 0;
};

// Anything that can price a block on a node: f (storing time) and g
// (latency). Implementations must be pure and safe for concurrent calls.
class BlockCostModel {
 public:
  virtual ~BlockCostModel() = default;
  virtual bool ready() const = 0;
  virtual double storing_time(const FeatureVector& x) const = 0;
  virtual double latency(const FeatureVector& x) const = 0;
};

std::int64_t derive_block_count(std::int64_t n, std::int64_t lb);

class ProblemInstance {
 public:
  // Throws ValidationError for malformed input and InfeasibleError when the
  // caps cannot hold every transaction.
  ProblemInstance(std::vector<Transaction> transactions,
                  std::vector<NodeProfile> nodes, BlockLimits limits);

  std::size_t n() const { return transactions_.size(); }
  std::size_t m() const { return nodes_.size(); }
  std::size_t nb() const { return nb_; }
  const std::vector<Transaction>& transactions() const { return transactions_; }
  const std::vector<NodeProfile>& nodes() const { return nodes_; }
  const BlockLimits& limits() const { return limits_; }
  std::int64_t max_tx_bytes() const { return max_tx_bytes_; }
  // Sorted distinct node bandwidths; nodes sharing a bandwidth price a block
  // identically.
  const std::vector<double>& distinct_bandwidths() const { return distinct_bandwidths_; }

 private:
  std::vector<Transaction> transactions_;
  std::vector<NodeProfile> nodes_;
  BlockLimits limits_;
  std::size_t nb_ = 0;
  std::int64_t max_tx_bytes_ = 0;
  std::vector<double> distinct_bandwidths_;
};

// Block index per transaction. Every transaction sits in exactly one block by
// construction; the dense y matrix is available through to_matrix().
class AssignmentMatrix {
 public:
  AssignmentMatrix() = default;
  AssignmentMatrix(std::vector<std::uint32_t> block_of, std::size_t nb);

  std::size_t n() const { return block_of_.size(); }
  std::size_t nb() const { return nb_; }
  std::uint32_t operator[](std::size_t i) const { return block_of_[i]; }
  void set(std::size_t i, std::uint32_t block);
  std::span<const std::uint32_t> block_of() const { return block_of_; }

  // y[j][i] == 1 iff transaction i is in block j.
  std::vector<std::vector<std::uint8_t>> to_matrix() const;

  friend bool operator==(const AssignmentMatrix&, const AssignmentMatrix&) = default;

 private:
  std::vector<std::uint32_t> block_of_;
  std::size_t nb_ = 0;
};

// Per-block transaction counts and byte totals.
struct BlockLoads {
  std::vector<std::int64_t> count;
  std::vector<std::int64_t> bytes;
};

BlockLoads block_loads(const ProblemInstance& instance,
                       const AssignmentMatrix& assignment);

enum class ConstraintKind { kCountCap, kByteCap };

struct Violation {
  ConstraintKind kind;
  std::size_t block;
  std::int64_t observed;
  std::int64_t allowed;
};

struct ConstraintReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  std::string to_text() const;
  nlohmann::json to_json() const;
};

ConstraintReport validate_assignment(const ProblemInstance& instance,
                                     const AssignmentMatrix& assignment);

struct BlockMetrics {
  std::int64_t count = 0;
  std::int64_t bytes = 0;
};

BlockMetrics block_metrics(const ProblemInstance& instance,
                           const AssignmentMatrix& assignment, std::size_t j);

// Cost of a block with the given composition: zero when empty, otherwise the
// maximum over nodes of storing time plus latency.
double block_cost(const ProblemInstance& instance, const BlockCostModel& model,
                  std::int64_t count, std::int64_t bytes);

double block_processing_time(const ProblemInstance& instance,
                             const AssignmentMatrix& assignment, std::size_t j,
                             const BlockCostModel& model);

// t_j for every block, including zeros for empty blocks.
std::vector<double> block_costs(const ProblemInstance& instance,
                                const AssignmentMatrix& assignment,
                                const BlockCostModel& model);

// Sum of block costs. Throws ConstraintError for infeasible assignments.
double total_processing_time(const ProblemInstance& instance,
                             const AssignmentMatrix& assignment,
                             const BlockCostModel& model);

// Largest per-block transaction count.
std::int64_t recommended_block_size(const AssignmentMatrix& assignment);

double throughput_estimate(std::int64_t n, double total_time);

}  // namespace blocktune

#include "blocktune/model.hpp"

#include <algorithm>
#include <sstream>

#include "blocktune/error.hpp"

namespace blocktune {

std::int64_t derive_block_count(std::int64_t n, std::int64_t lb) {
  return (n + lb - 1) / lb + 1;
}

ProblemInstance::ProblemInstance(std::vector<Transaction> transactions,
                                 std::vector<NodeProfile> nodes,
                                 BlockLimits limits)
    : transactions_(std::move(transactions)),
      nodes_(std::move(nodes)),
      limits_(limits) {
  if (transactions_.empty()) {
    throw ValidationError("instance: at least one transaction is required");
  }
  if (nodes_.empty()) {
    throw ValidationError("instance: at least one committing node is required");
  }
  for (std::size_t i = 0; i < transactions_.size(); ++i) {
    const auto& tx = transactions_[i];
    if (tx.id != i) {
      throw ValidationError("instance: transaction ids must be contiguous from 0; "
                            "found id " + std::to_string(tx.id) + " at position " +
                            std::to_string(i));
    }
    if (tx.size_bytes < 1) {
      throw ValidationError("instance: transaction " + std::to_string(i) +
                            " has size_bytes < 1");
    }
    max_tx_bytes_ = std::max(max_tx_bytes_, tx.size_bytes);
  }
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    if (nodes_[k].id != k) {
      throw ValidationError("instance: node ids must be contiguous from 0");
    }
    if (!(nodes_[k].bandwidth_bytes_per_sec > 0.0)) {
      throw ValidationError("instance: node " + std::to_string(k) +
                            " must have bandwidth_bytes_per_sec > 0");
    }
  }
  for (const auto& node : nodes_) distinct_bandwidths_.push_back(node.bandwidth_bytes_per_sec);
  std::sort(distinct_bandwidths_.begin(), distinct_bandwidths_.end());
  distinct_bandwidths_.erase(std::unique(distinct_bandwidths_.begin(), distinct_bandwidths_.end()),
                             distinct_bandwidths_.end());
  if (limits_.lb < 1 || limits_.ub < limits_.lb) {
    throw ValidationError("instance: limits must satisfy 1 <= lb <= ub");
  }
  if (limits_.cb < 1) {
    throw ValidationError("instance: cb must be positive");
  }
  if (limits_.cb < max_tx_bytes_) {
    throw InfeasibleError("instance infeasible: byte-cap constraint cb=" +
                          std::to_string(limits_.cb) +
                          " is smaller than the largest transaction (" +
                          std::to_string(max_tx_bytes_) + " bytes)");
  }
  const auto n = static_cast<std::int64_t>(transactions_.size());
  nb_ = static_cast<std::size_t>(derive_block_count(n, limits_.lb));
  if (static_cast<std::int64_t>(nb_) * limits_.ub < n) {
    throw InfeasibleError("instance infeasible: count-cap constraint nb*ub=" +
                          std::to_string(nb_ * limits_.ub) + " < n=" +
                          std::to_string(n));
  }
  // Any transaction evicted from an overfull block must always find another
  // block with a free slot and enough byte headroom. Blocks without a slot
  // hold ub transactions each; blocks without headroom hold more than
  // cb - max_tx_bytes bytes each.
  std::int64_t total_bytes = 0;
  std::int64_t min_tx_bytes = max_tx_bytes_;
  for (const auto& tx : transactions_) {
    total_bytes += tx.size_bytes;
    min_tx_bytes = std::min(min_tx_bytes, tx.size_bytes);
  }
  const std::int64_t full_by_count = (n - 1) / limits_.ub;
  const std::int64_t full_by_bytes = (total_bytes - min_tx_bytes) / (limits_.cb - max_tx_bytes_ + 1);
  if (full_by_count + full_by_bytes > static_cast<std::int64_t>(nb_) - 2) {
    throw InfeasibleError("instance infeasible: " + std::to_string(nb_) +
                          " blocks cannot guarantee a placement under the count-cap (ub=" +
                          std::to_string(limits_.ub) + ") and byte-cap (cb=" +
                          std::to_string(limits_.cb) + ") constraints; lower lb or raise the caps");
  }
}

AssignmentMatrix::AssignmentMatrix(std::vector<std::uint32_t> block_of,
                                   std::size_t nb)
    : block_of_(std::move(block_of)), nb_(nb) {
  for (std::size_t i = 0; i < block_of_.size(); ++i) {
    if (block_of_[i] >= nb_) {
      throw ValidationError("assignment: transaction " + std::to_string(i) +
                            " placed in block " + std::to_string(block_of_[i]) +
                            " outside [0, " + std::to_string(nb_) + ")");
    }
  }
}

void AssignmentMatrix::set(std::size_t i, std::uint32_t block) {
  if (block >= nb_) throw ValidationError("assignment: block index out of range");
  block_of_.at(i) = block;
}

std::vector<std::vector<std::uint8_t>> AssignmentMatrix::to_matrix() const {
  std::vector<std::vector<std::uint8_t>> y(nb_, std::vector<std::uint8_t>(n(), 0));
  for (std::size_t i = 0; i < n(); ++i) y[block_of_[i]][i] = 1;
  return y;
}

namespace {

void check_shape(const ProblemInstance& instance,
                 const AssignmentMatrix& assignment) {
  if (assignment.n() != instance.n() || assignment.nb() != instance.nb()) {
    throw ValidationError("malformed assignment: expected " +
                          std::to_string(instance.n()) + " transactions over " +
                          std::to_string(instance.nb()) + " blocks, got " +
                          std::to_string(assignment.n()) + " over " +
                          std::to_string(assignment.nb()));
  }
}

}  // namespace

BlockLoads block_loads(const ProblemInstance& instance,
                       const AssignmentMatrix& assignment) {
  check_shape(instance, assignment);
  BlockLoads loads{std::vector<std::int64_t>(instance.nb(), 0),
                   std::vector<std::int64_t>(instance.nb(), 0)};
  const auto& txs = instance.transactions();
  for (std::size_t i = 0; i < assignment.n(); ++i) {
    const auto j = assignment[i];
    ++loads.count[j];
    loads.bytes[j] += txs[i].size_bytes;
  }
  return loads;
}

std::string ConstraintReport::to_text() const {
  if (violations.empty()) return "feasible: no constraint violations\n";
  std::ostringstream out;
  for (const auto& v : violations) {
    if (v.kind == ConstraintKind::kCountCap) {
      out << "count cap violated in block " << v.block << ": "
          << v.observed << " transactions > ub=" << v.allowed << '\n';
    } else {
      out << "byte cap violated in block " << v.block << ": " << v.observed
          << " bytes > cb=" << v.allowed << '\n';
    }
  }
  return out.str();
}

nlohmann::json ConstraintReport::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& v : violations) {
    arr.push_back({{"constraint", v.kind == ConstraintKind::kCountCap ? "count_cap"
                                                                      : "byte_cap"},
                   {"block", v.block},
                   {"observed", v.observed},
                   {"allowed", v.allowed}});
  }
  return {{"feasible", ok()}, {"violations", arr}};
}

ConstraintReport validate_assignment(const ProblemInstance& instance,
                                     const AssignmentMatrix& assignment) {
  const auto loads = block_loads(instance, assignment);
  const auto& lim = instance.limits();
  ConstraintReport report;
  for (std::size_t j = 0; j < instance.nb(); ++j) {
    if (loads.count[j] > lim.ub) {
      report.violations.push_back({ConstraintKind::kCountCap, j, loads.count[j], lim.ub});
    }
    if (loads.bytes[j] > lim.cb) {
      report.violations.push_back({ConstraintKind::kByteCap, j, loads.bytes[j], lim.cb});
    }
  }
  return report;
}

BlockMetrics block_metrics(const ProblemInstance& instance,
                           const AssignmentMatrix& assignment, std::size_t j) {
  check_shape(instance, assignment);
  if (j >= instance.nb()) {
    throw std::out_of_range("block index " + std::to_string(j) +
                            " out of range [0, " + std::to_string(instance.nb()) + ")");
  }
  BlockMetrics out;
  const auto& txs = instance.transactions();
  for (std::size_t i = 0; i < assignment.n(); ++i) {
    if (assignment[i] == j) {
      ++out.count;
      out.bytes += txs[i].size_bytes;
    }
  }
  return out;
}

double block_cost(const ProblemInstance& instance, const BlockCostModel& model,
                  std::int64_t count, std::int64_t bytes) {
  if (!model.ready()) throw PredictorNotReady();
  if (count == 0) return 0.0;
  double worst = 0.0;
  for (double bw : instance.distinct_bandwidths()) {
    const FeatureVector x{static_cast<double>(count), static_cast<double>(bytes), bw};
    worst = std::max(worst, model.storing_time(x) + model.latency(x));
  }
  return worst;
}

double block_processing_time(const ProblemInstance& instance,
                             const AssignmentMatrix& assignment, std::size_t j,
                             const BlockCostModel& model) {
  const auto metrics = block_metrics(instance, assignment, j);
  return block_cost(instance, model, metrics.count, metrics.bytes);
}

std::vector<double> block_costs(const ProblemInstance& instance,
                                const AssignmentMatrix& assignment,
                                const BlockCostModel& model) {
  if (!model.ready()) throw PredictorNotReady();
  const auto loads = block_loads(instance, assignment);
  std::vector<double> t(instance.nb(), 0.0);
  for (std::size_t j = 0; j < t.size(); ++j) {
    t[j] = block_cost(instance, model, loads.count[j], loads.bytes[j]);
  }
  return t;
}

double total_processing_time(const ProblemInstance& instance,
                             const AssignmentMatrix& assignment,
                             const BlockCostModel& model) {
  const auto report = validate_assignment(instance, assignment);
  if (!report.ok()) {
    throw ConstraintError("total_processing_time on infeasible assignment: " +
                          report.to_text());
  }
  auto t = block_costs(instance, assignment, model);
  // Summing in sorted order makes the total independent of block labels.
  std::sort(t.begin(), t.end());
  double total = 0.0;
  for (double v : t) total += v;
  return total;
}

std::int64_t recommended_block_size(const AssignmentMatrix& assignment) {
  if (assignment.n() == 0) {
    throw ValidationError("recommended_block_size: empty instance");
  }
  std::vector<std::int64_t> count(assignment.nb(), 0);
  for (auto j : assignment.block_of()) ++count[j];
  return *std::max_element(count.begin(), count.end());
}

double throughput_estimate(std::int64_t n, double total_time) {
  if (!(total_time > 0.0)) {
    throw std::domain_error("throughput_estimate: total_time must be > 0");
  }
  return static_cast<double>(n) / total_time;
}

}  // namespace blocktune

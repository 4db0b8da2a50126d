#pragma once

// Shared fixtures for the unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "blocktune/error.hpp"
#include "blocktune/model.hpp"

namespace blocktune::testing {

inline ProblemInstance make_instance(const std::vector<std::int64_t>& sizes,
                                     const std::vector<double>& bandwidths, BlockLimits limits) {
  std::vector<Transaction> txs;
  for (std::size_t i = 0; i < sizes.size(); ++i) txs.push_back({i, sizes[i]});
  std::vector<NodeProfile> nodes;
  for (std::size_t k = 0; k < bandwidths.size(); ++k) nodes.push_back({k, bandwidths[k]});
  return ProblemInstance(std::move(txs), std::move(nodes), limits);
}

// Cost model assembled from two callables.
class LambdaModel final : public BlockCostModel {
 public:
  using Fn = std::function<double(const FeatureVector&)>;
  LambdaModel(Fn f, Fn g) : f_(std::move(f)), g_(std::move(g)) {}
  bool ready() const override { return true; }
  double storing_time(const FeatureVector& x) const override { return f_(x); }
  double latency(const FeatureVector& x) const override { return g_(x); }

 private:
  Fn f_;
  Fn g_;
};

class UnfittedModel final : public BlockCostModel {
 public:
  bool ready() const override { return false; }
  double storing_time(const FeatureVector&) const override { return 0; }
  double latency(const FeatureVector&) const override { return 0; }
};

// Closed-form stand-in for a fitted predictor. A fixed per-block overhead
// rewards few blocks; latency grows with the square of the block's count, so
// the optimum sits between one giant block and many tiny ones.
class AnalyticStub final : public BlockCostModel {
 public:
  bool ready() const override { return true; }
  double storing_time(const FeatureVector& x) const override {
    return 0.05 + 0.002 * x.tx_count + x.block_bytes / x.bandwidth;
  }
  double latency(const FeatureVector& x) const override {
    return 0.004 * x.tx_count * x.tx_count;
  }
};

// Every feasible assignment visited once, in lexicographic order of the
// block-index vector. Written independently of brute_force_optimum.
template <typename Visit>
void enumerate_assignments(std::size_t n, std::size_t nb, Visit&& visit) {
  std::vector<std::uint32_t> v(n, 0);
  while (true) {
    visit(v);
    std::size_t i = n;
    while (i > 0) {
      --i;
      if (++v[i] < nb) break;
      v[i] = 0;
      if (i == 0) return;
    }
    if (n == 0) return;
  }
}

inline bool feasible(const ProblemInstance& inst, const std::vector<std::uint32_t>& v) {
  std::vector<std::int64_t> count(inst.nb(), 0), bytes(inst.nb(), 0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    ++count[v[i]];
    bytes[v[i]] += inst.transactions()[i].size_bytes;
  }
  for (std::size_t j = 0; j < inst.nb(); ++j) {
    if (count[j] > inst.limits().ub || bytes[j] > inst.limits().cb) return false;
  }
  return true;
}

// Random instance with n in [n_min, n_max] and at most max_nb blocks. Draws
// until the constructor accepts the limits.
inline ProblemInstance random_instance(std::mt19937_64& rng, int n_min, int n_max,
                                       std::size_t max_nb, int max_nodes = 3) {
  std::uniform_int_distribution<int> n_dist(n_min, n_max);
  std::uniform_int_distribution<std::int64_t> size_dist(100, 2000);
  std::uniform_int_distribution<int> m_dist(1, max_nodes);
  std::uniform_real_distribution<double> bw_dist(1e5, 1e7);
  while (true) {
    const int n = n_dist(rng);
    std::vector<std::int64_t> sizes(static_cast<std::size_t>(n));
    for (auto& s : sizes) s = size_dist(rng);
    std::vector<double> bws(static_cast<std::size_t>(m_dist(rng)));
    for (auto& b : bws) b = bw_dist(rng);
    std::int64_t lb = 1;
    while (derive_block_count(n, lb) > static_cast<std::int64_t>(max_nb)) ++lb;
    std::uniform_int_distribution<std::int64_t> ub_dist(lb, n);
    std::uniform_int_distribution<std::int64_t> cb_dist(2000, 8000);
    const BlockLimits limits{lb, ub_dist(rng), cb_dist(rng)};
    try {
      return make_instance(sizes, bws, limits);
    } catch (const InfeasibleError&) {
    }
  }
}

}  // namespace blocktune::testing

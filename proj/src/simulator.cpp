#include "blocktune/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <ostream>
#include <queue>
#include <random>

#include "blocktune/error.hpp"
#include "blocktune/parallel.hpp"
#include "blocktune/seed.hpp"

namespace blocktune {

const char* to_string(CutReason r) {
  switch (r) {
    case CutReason::kCount: return "count";
    case CutReason::kBytes: return "bytes";
    case CutReason::kTimeout: return "timeout";
  }
  return "?";
}

void SimConfig::validate() const {
  const auto& w = workload;
  if (!(w.arrival.rate_tps > 0.0) || !std::isfinite(w.arrival.rate_tps)) {
    throw ValidationError("sim config: workload.arrival.rate must be > 0");
  }
  if (w.tx_size.min_bytes < 1 || w.tx_size.max_bytes < w.tx_size.min_bytes) {
    throw ValidationError("sim config: workload.tx_size needs 1 <= min <= max bytes");
  }
  if (w.total_tx < 1) throw ValidationError("sim config: workload.total_tx must be >= 1");
  if (nodes.empty()) throw ValidationError("sim config: at least one node is required");
  for (const auto& n : nodes) {
    if (!(n.bandwidth_bytes_per_sec > 0.0)) {
      throw ValidationError("sim config: node " + std::to_string(n.id) +
                            " bandwidth must be > 0");
    }
  }
  if (block_cut.max_tx_count < 1 || block_cut.max_bytes < 1 || !(block_cut.timeout_s > 0.0)) {
    throw ValidationError("sim config: block_cut limits and timeout must be > 0");
  }
  if (block_cut.max_bytes < w.tx_size.max_bytes) {
    throw ValidationError("sim config: block_cut.max_bytes is smaller than the largest transaction");
  }
  const auto& c = cost;
  for (double v : {c.vt_per_tx_s, c.vt_per_byte_s, c.ct_fixed_s, c.ct_per_byte_s,
                   c.dispatch_overhead_s, c.noise_sd_fraction}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ValidationError("sim config: cost parameters must be finite and >= 0");
    }
  }
  if (c.noise_sd_fraction >= 0.2) {
    throw ValidationError("sim config: cost.noise_sd_fraction must be < 0.2");
  }
}

namespace {

enum class EventKind { kArrival, kTimeout, kLinkDone, kProcDone };

struct Event {
  double time;
  std::uint64_t seq;
  EventKind kind;
  std::size_t a;  // tx id, epoch or node
  std::size_t b;  // block

  bool operator>(const Event& o) const {
    return time != o.time ? time > o.time : seq > o.seq;
  }
};

class Engine {
 public:
  explicit Engine(const SimConfig& cfg) : cfg_(cfg), m_(cfg.nodes.size()) {
    generate_workload();
    link_queue_.resize(m_);
    proc_queue_.resize(m_);
    link_busy_.assign(m_, false);
    proc_busy_.assign(m_, false);
    for (std::size_t k = 0; k < m_; ++k) {
      noise_rng_.emplace_back(derive_seed(cfg.rng_seed, {0x6e6f697365ULL, k}));
    }
  }

  SimResult run() {
    push(res_.tx_arrival_s[0], EventKind::kArrival, 0, 0);
    while (!events_.empty()) {
      const Event e = events_.top();
      events_.pop();
      switch (e.kind) {
        case EventKind::kArrival: on_arrival(e.time, e.a); break;
        case EventKind::kTimeout: on_timeout(e.time, e.a); break;
        case EventKind::kLinkDone: on_link_done(e.time, e.a, e.b); break;
        case EventKind::kProcDone: on_proc_done(e.time, e.a, e.b); break;
      }
    }
    finish();
    return std::move(res_);
  }

 private:
  void generate_workload() {
    const auto& w = cfg_.workload;
    const auto n = static_cast<std::size_t>(w.total_tx);
    Rng rng(w.rng_seed);
    res_.tx_arrival_s.resize(n);
    sizes_.resize(n);
    std::exponential_distribution<double> gap(w.arrival.rate_tps);
    std::uniform_int_distribution<std::int64_t> size(w.tx_size.min_bytes, w.tx_size.max_bytes);
    double t = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (w.arrival.kind == ArrivalProcess::Kind::kFixedRate) {
        res_.tx_arrival_s[i] = static_cast<double>(i) / w.arrival.rate_tps;
      } else {
        if (i > 0) t += gap(rng);
        res_.tx_arrival_s[i] = t;
      }
      sizes_[i] = w.tx_size.kind == TxSizeDistribution::Kind::kConstant ? w.tx_size.min_bytes
                                                                         : size(rng);
    }
    res_.tx_commit_s.assign(n, 0.0);
    res_.tx_block.assign(n, 0);
  }

  void push(double t, EventKind kind, std::size_t a, std::size_t b) {
    events_.push(Event{t, seq_++, kind, a, b});
  }

  void on_arrival(double t, std::size_t i) {
    const auto& cut = cfg_.block_cut;
    if (!pending_.empty() && pending_bytes_ + sizes_[i] > cut.max_bytes) {
      cut_block(t, CutReason::kBytes);
    }
    if (pending_.empty()) {
      first_pending_ = t;
      push(t + cut.timeout_s, EventKind::kTimeout, epoch_, 0);
    }
    pending_.push_back(i);
    pending_bytes_ += sizes_[i];
    if (static_cast<std::int64_t>(pending_.size()) >= cut.max_tx_count) {
      cut_block(t, CutReason::kCount);
    } else if (pending_bytes_ >= cut.max_bytes) {
      cut_block(t, CutReason::kBytes);
    }
    if (i + 1 < res_.tx_arrival_s.size()) {
      push(res_.tx_arrival_s[i + 1], EventKind::kArrival, i + 1, 0);
    }
  }

  void on_timeout(double t, std::size_t epoch) {
    if (epoch == epoch_ && !pending_.empty()) cut_block(t, CutReason::kTimeout);
  }

  void cut_block(double t, CutReason reason) {
    const std::size_t b = res_.per_block_records.size();
    BlockRecord rec;
    rec.tx_count = static_cast<std::int64_t>(pending_.size());
    rec.bytes = pending_bytes_;
    rec.first_arrival_s = first_pending_;
    rec.cut_time_s = t;
    rec.cut_reason = reason;
    rec.transfer_s.assign(m_, 0.0);
    rec.vt_s.assign(m_, 0.0);
    rec.ct_s.assign(m_, 0.0);
    rec.commit_time_s.assign(m_, 0.0);
    res_.per_block_records.push_back(std::move(rec));
    members_.push_back(std::move(pending_));
    remaining_.push_back(m_);
    pending_.clear();
    pending_bytes_ = 0;
    ++epoch_;
    for (std::size_t k = 0; k < m_; ++k) {
      link_queue_[k].push_back(b);
      if (!link_busy_[k]) start_transfer(t, k);
    }
  }

  void start_transfer(double t, std::size_t k) {
    const std::size_t b = link_queue_[k].front();
    link_queue_[k].pop_front();
    link_busy_[k] = true;
    auto& rec = res_.per_block_records[b];
    const double d = cfg_.cost.transfer_time(rec.bytes, cfg_.nodes[k].bandwidth_bytes_per_sec);
    rec.transfer_s[k] = d;
    push(t + d, EventKind::kLinkDone, k, b);
  }

  void on_link_done(double t, std::size_t k, std::size_t b) {
    link_busy_[k] = false;
    proc_queue_[k].push_back(b);
    if (!link_queue_[k].empty()) start_transfer(t, k);
    if (!proc_busy_[k]) start_processing(t, k);
  }

  double noise(std::size_t k) {
    const double sd = cfg_.cost.noise_sd_fraction;
    if (sd == 0.0) return 1.0;
    std::normal_distribution<double> z(0.0, 1.0);
    return std::max(0.01, 1.0 + sd * z(noise_rng_[k]));
  }

  void start_processing(double t, std::size_t k) {
    const std::size_t b = proc_queue_[k].front();
    proc_queue_[k].pop_front();
    proc_busy_[k] = true;
    auto& rec = res_.per_block_records[b];
    rec.vt_s[k] = cfg_.cost.validation_time(rec.tx_count, rec.bytes) * noise(k);
    rec.ct_s[k] = cfg_.cost.commit_time(rec.bytes) * noise(k);
    push(t + rec.vt_s[k] + rec.ct_s[k], EventKind::kProcDone, k, b);
  }

  void on_proc_done(double t, std::size_t k, std::size_t b) {
    proc_busy_[k] = false;
    auto& rec = res_.per_block_records[b];
    rec.commit_time_s[k] = t;
    if (--remaining_[b] == 0) {
      rec.completion_time_s = t;
      for (auto i : members_[b]) {
        res_.tx_commit_s[i] = t;
        res_.tx_block[i] = b;
      }
    }
    if (!proc_queue_[k].empty()) start_processing(t, k);
  }

  void finish() {
    double last = 0.0;
    for (const auto& r : res_.per_block_records) last = std::max(last, r.completion_time_s);
    std::int64_t committed = 0;
    for (const auto& r : res_.per_block_records) committed += r.tx_count;
    res_.committed_tx = committed;
    res_.makespan_s = last - res_.tx_arrival_s.front();
    res_.throughput_tps = res_.makespan_s > 0.0
                              ? static_cast<double>(committed) / res_.makespan_s
                              : 0.0;
    double lat = 0.0;
    for (std::size_t i = 0; i < res_.tx_arrival_s.size(); ++i) {
      lat += res_.tx_commit_s[i] - res_.tx_arrival_s[i];
    }
    res_.mean_latency_s = lat / static_cast<double>(res_.tx_arrival_s.size());
  }

  const SimConfig& cfg_;
  std::size_t m_;
  SimResult res_;
  std::vector<std::int64_t> sizes_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  std::uint64_t seq_ = 0;

  std::vector<std::size_t> pending_;
  std::int64_t pending_bytes_ = 0;
  double first_pending_ = 0.0;
  std::size_t epoch_ = 0;

  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::size_t> remaining_;
  std::vector<std::deque<std::size_t>> link_queue_;
  std::vector<std::deque<std::size_t>> proc_queue_;
  std::vector<bool> link_busy_;
  std::vector<bool> proc_busy_;
  std::vector<Rng> noise_rng_;
};

}  // namespace

SimResult run_simulation(const SimConfig& config) {
  config.validate();
  return Engine(config).run();
}

void write_block_records(std::ostream& out, const SimResult& result) {
  out << "block,node,tx_count,bytes,cut_reason,first_arrival_s,cut_time_s,transfer_s,vt_s,"
         "ct_s,commit_time_s,completion_time_s\n";
  for (std::size_t b = 0; b < result.per_block_records.size(); ++b) {
    const auto& r = result.per_block_records[b];
    for (std::size_t k = 0; k < r.vt_s.size(); ++k) {
      out << b << ',' << k << ',' << r.tx_count << ',' << r.bytes << ',' << to_string(r.cut_reason)
          << ',' << format_double(r.first_arrival_s) << ',' << format_double(r.cut_time_s) << ','
          << format_double(r.transfer_s[k]) << ',' << format_double(r.vt_s[k]) << ','
          << format_double(r.ct_s[k]) << ',' << format_double(r.commit_time_s[k]) << ','
          << format_double(r.completion_time_s) << '\n';
    }
  }
}

nlohmann::json summary_json(const SimResult& result) {
  std::size_t by_reason[3] = {0, 0, 0};
  for (const auto& r : result.per_block_records) ++by_reason[static_cast<int>(r.cut_reason)];
  return {{"throughput_tps", result.throughput_tps},
          {"mean_latency_s", result.mean_latency_s},
          {"makespan_s", result.makespan_s},
          {"committed_tx", result.committed_tx},
          {"blocks", result.per_block_records.size()},
          {"cut_reasons",
           {{"count", by_reason[0]}, {"bytes", by_reason[1]}, {"timeout", by_reason[2]}}}};
}

std::vector<TrainingSample> training_samples(const SimConfig& config, const SimResult& result) {
  std::vector<TrainingSample> out;
  out.reserve(result.per_block_records.size() * config.nodes.size());
  for (const auto& r : result.per_block_records) {
    for (std::size_t k = 0; k < config.nodes.size(); ++k) {
      TrainingSample s;
      s.features = {static_cast<double>(r.tx_count), static_cast<double>(r.bytes),
                    config.nodes[k].bandwidth_bytes_per_sec};
      s.vt_s = r.vt_s[k];
      s.ct_s = r.ct_s[k];
      s.latency_s = static_cast<double>(r.tx_count) * (r.commit_time_s[k] - r.cut_time_s);
      out.push_back(s);
    }
  }
  return out;
}

std::vector<TrainingSample> generate_training_dataset(const SimConfig& base,
                                                      const DatasetGrid& grid,
                                                      Execution exec) {
  if (grid.block_sizes.empty() || grid.tx_sizes.empty() || grid.bandwidths.empty() ||
      grid.replicates < 1) {
    throw ValidationError("dataset grid: every axis needs at least one value and replicates >= 1");
  }
  base.validate();
  struct Cell {
    std::int64_t block_size;
    std::int64_t tx_size;
    double bandwidth;
    int replicate;
  };
  std::vector<Cell> cells;
  for (auto s : grid.block_sizes) {
    for (auto sz : grid.tx_sizes) {
      for (auto bw : grid.bandwidths) {
        for (int r = 0; r < grid.replicates; ++r) cells.push_back({s, sz, bw, r});
      }
    }
  }
  std::vector<SimConfig> configs(cells.size(), base);
  for (std::size_t c = 0; c < cells.size(); ++c) {
    auto& cfg = configs[c];
    cfg.block_cut.max_tx_count = cells[c].block_size;
    cfg.workload.tx_size = TxSizeDistribution::constant(cells[c].tx_size);
    for (auto& node : cfg.nodes) node.bandwidth_bytes_per_sec = cells[c].bandwidth;
    const auto r = static_cast<std::uint64_t>(cells[c].replicate);
    cfg.workload.rng_seed = derive_seed(base.workload.rng_seed, {r});
    cfg.rng_seed = derive_seed(base.rng_seed, {static_cast<std::uint64_t>(c), r});
    cfg.validate();
  }

  std::vector<std::vector<TrainingSample>> per_cell(cells.size());
  for_each_index(cells.size(), exec == Execution::kParallel, [&](std::size_t c) {
    per_cell[c] = training_samples(configs[c], run_simulation(configs[c]));
  });
  std::vector<TrainingSample> out;
  for (auto& v : per_cell) out.insert(out.end(), v.begin(), v.end());
  return out;
}

std::vector<CurvePoint> throughput_vs_blocksize(const SimConfig& config,
                                                std::span<const std::int64_t> candidate_sizes,
                                                Execution exec) {
  if (candidate_sizes.empty()) throw ValidationError("throughput curve: no candidate sizes");
  config.validate();
  std::vector<CurvePoint> curve(candidate_sizes.size());
  auto eval = [&](std::size_t c) {
    SimConfig cfg = config;
    cfg.block_cut.max_tx_count = candidate_sizes[c];
    const auto res = run_simulation(cfg);
    curve[c] = {candidate_sizes[c], res.throughput_tps, res.mean_latency_s};
  };
  for_each_index(candidate_sizes.size(), exec == Execution::kParallel, eval);
  return curve;
}

void write_curve(std::ostream& out, std::span<const CurvePoint> curve) {
  out << "block_size,throughput_tps,mean_latency_s\n";
  for (const auto& p : curve) {
    out << p.block_size << ',' << format_double(p.throughput_tps) << ','
        << format_double(p.mean_latency_s) << '\n';
  }
}

}  // namespace blocktune

#include "blocktune/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <set>

#include "blocktune/error.hpp"
#include "blocktune/parallel.hpp"
#include "blocktune/seed.hpp"

namespace blocktune {

namespace {

enum SeedTag : std::uint64_t {
  kTagInstance = 1,
  kTagDataWorkload,
  kTagDataNoise,
  kTagGa,
  kTagCheckWorkload,
  kTagCheckNoise,
};

// Up to three sizes around the scenario's own, never above the byte cap.
std::vector<std::int64_t> bracket_sizes(const TxSizeDistribution& d, std::int64_t cb) {
  std::set<std::int64_t> s;
  if (d.kind == TxSizeDistribution::Kind::kUniform) {
    s = {d.min_bytes, (d.min_bytes + d.max_bytes) / 2, d.max_bytes};
  }
  if (s.size() < 3) {
    const auto mid = static_cast<std::int64_t>(std::llround(d.mean()));
    if (2 * mid <= cb) {
      s = {std::max<std::int64_t>(1, mid / 2), mid, 2 * mid};
    } else {
      s = {std::max<std::int64_t>(1, mid / 4), std::max<std::int64_t>(1, mid / 2), mid};
    }
  }
  return {s.begin(), s.end()};
}

std::vector<double> bracket_bandwidths(const std::vector<NodeProfile>& nodes) {
  std::set<double> s;
  for (const auto& n : nodes) s.insert(n.bandwidth_bytes_per_sec);
  if (s.size() < 3) {
    const double lo = *s.begin();
    const double hi = *s.rbegin();
    s.insert(lo / 2.0);
    s.insert(hi * 2.0);
  }
  return {s.begin(), s.end()};
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <typename T>
std::vector<T> optional_list(const JsonReader& r, const char* key,
                             std::vector<T> (JsonReader::*get)(const char*) const) {
  return r.has(key) ? (r.*get)(key) : std::vector<T>{};
}

}  // namespace

// ---------------------------------------------------------------------------
// Scenario

SimConfig Scenario::sim_config(std::int64_t block_size, std::uint64_t workload_seed,
                               std::uint64_t noise_seed) const {
  SimConfig c;
  c.workload = workload;
  c.workload.rng_seed = workload_seed;
  c.nodes = nodes;
  c.block_cut = {block_size, limits.cb, timeout_s};
  c.cost = cost;
  c.rng_seed = noise_seed;
  return c;
}

ProblemInstance Scenario::instance(std::uint64_t seed) const {
  return ProblemInstance(draw_transactions(instance_tx, workload.tx_size, seed), nodes, limits);
}

DatasetGrid default_dataset_grid(const TxSizeDistribution& tx_size,
                                 const std::vector<NodeProfile>& nodes,
                                 std::int64_t max_block, std::int64_t cb) {
  if (nodes.empty()) throw ValidationError("dataset grid: at least one node is required");
  DatasetGrid g;
  for (std::int64_t s = 1; s <= max_block; ++s) g.block_sizes.push_back(s);
  g.tx_sizes = bracket_sizes(tx_size, cb);
  g.bandwidths = bracket_bandwidths(nodes);
  return g;
}

DatasetGrid Scenario::dataset_grid() const {
  const auto d = default_dataset_grid(workload.tx_size, nodes, limits.ub, limits.cb);
  DatasetGrid g = dataset;
  if (g.block_sizes.empty()) g.block_sizes = d.block_sizes;
  if (g.tx_sizes.empty()) g.tx_sizes = d.tx_sizes;
  if (g.bandwidths.empty()) g.bandwidths = d.bandwidths;
  return g;
}

nlohmann::json Scenario::to_json() const {
  nlohmann::json ds{{"replicates", dataset.replicates}};
  if (dataset_total_tx > 0) ds["total_tx"] = dataset_total_tx;
  if (!dataset.block_sizes.empty()) ds["block_sizes"] = dataset.block_sizes;
  if (!dataset.tx_sizes.empty()) ds["tx_sizes"] = dataset.tx_sizes;
  if (!dataset.bandwidths.empty()) ds["bandwidths"] = dataset.bandwidths;
  auto w = blocktune::to_json(workload);
  w.erase("rng_seed");
  auto g = ga.to_json();
  g.erase("rng_seed");
  g.erase("execution");
  return {{"id", id},
          {"workload", w},
          {"nodes", blocktune::to_json(nodes)},
          {"limits", blocktune::to_json(limits)},
          {"instance_tx", instance_tx},
          {"timeout_s", timeout_s},
          {"cost", blocktune::to_json(cost)},
          {"dataset", ds},
          {"surrogate", surrogate.to_json()},
          {"ga", g}};
}

Scenario scenario_from_json(const JsonReader& r) {
  r.allow_only({"id", "workload", "nodes", "limits", "instance_tx", "timeout_s", "cost",
                "dataset", "surrogate", "ga"});
  Scenario s;
  s.id = r.string("id", s.id);
  s.workload = workload_from_json(r.child("workload"));
  s.nodes = nodes_from_json(r, "nodes");
  s.limits = limits_from_json(r.child("limits"));
  s.instance_tx = r.integer("instance_tx", s.instance_tx);
  if (s.instance_tx < 1) r.fail("instance_tx", "must be >= 1");
  s.timeout_s = r.number("timeout_s", s.timeout_s);
  if (!(s.timeout_s > 0.0)) r.fail("timeout_s", "must be > 0");
  if (r.has("cost")) s.cost = cost_from_json(r.child("cost"));
  if (r.has("dataset")) {
    const auto d = r.child("dataset");
    d.allow_only({"block_sizes", "tx_sizes", "bandwidths", "replicates", "total_tx"});
    s.dataset_total_tx = d.integer("total_tx", 0);
    if (s.dataset_total_tx < 0) d.fail("total_tx", "must be >= 0");
    s.dataset.block_sizes = optional_list(d, "block_sizes", &JsonReader::integers);
    s.dataset.tx_sizes = optional_list(d, "tx_sizes", &JsonReader::integers);
    s.dataset.bandwidths = optional_list(d, "bandwidths", &JsonReader::numbers);
    s.dataset.replicates = static_cast<int>(d.integer("replicates", 1));
    if (s.dataset.replicates < 1) d.fail("replicates", "must be >= 1");
  }
  try {
    if (r.has("surrogate")) s.surrogate = SurrogateParams::from_json(r.child("surrogate").json());
    if (r.has("ga")) s.ga.merge_json(r.child("ga").json());
    s.ga.validate();
  } catch (const ValidationError& e) {
    r.fail("surrogate/ga", e.what());
  } catch (const nlohmann::json::exception& e) {
    r.fail("surrogate", e.what());
  }
  if (s.workload.tx_size.max_bytes > s.limits.cb) {
    r.fail("limits.cb", "byte cap is smaller than the largest workload transaction");
  }
  return s;
}

ScenarioSeeds ScenarioSeeds::derive(std::uint64_t run_seed) {
  ScenarioSeeds s;
  s.run = run_seed;
  s.instance = derive_seed(run_seed, {kTagInstance});
  s.data_workload = derive_seed(run_seed, {kTagDataWorkload});
  s.data_noise = derive_seed(run_seed, {kTagDataNoise});
  s.ga = derive_seed(run_seed, {kTagGa});
  s.check_workload = derive_seed(run_seed, {kTagCheckWorkload});
  s.check_noise = derive_seed(run_seed, {kTagCheckNoise});
  return s;
}

nlohmann::json ScenarioSeeds::to_json() const {
  return {{"run", run},
          {"instance", instance},
          {"data_workload", data_workload},
          {"data_noise", data_noise},
          {"ga", ga},
          {"check_workload", check_workload},
          {"check_noise", check_noise}};
}

std::vector<TrainingSample> scenario_dataset(const Scenario& scenario, const ScenarioSeeds& seeds,
                                             Execution exec) {
  auto base = scenario.sim_config(scenario.limits.ub, seeds.data_workload, seeds.data_noise);
  if (scenario.dataset_total_tx > 0) base.workload.total_tx = scenario.dataset_total_tx;
  return generate_training_dataset(base, scenario.dataset_grid(), exec);
}

nlohmann::json Recommendation::to_json() const {
  return {{"scenario", scenario_id},
          {"seeds", seeds.to_json()},
          {"dataset_rows", dataset_rows},
          {"ga", ga.to_json()}};
}

Recommendation recommend(const Scenario& scenario, std::uint64_t run_seed, Execution exec) {
  Recommendation out;
  out.scenario_id = scenario.id;
  out.seeds = ScenarioSeeds::derive(run_seed);
  const auto instance = scenario.instance(out.seeds.instance);
  const auto samples = scenario_dataset(scenario, out.seeds, exec);
  out.dataset_rows = samples.size();
  const auto predictor = PerformancePredictor::fit(samples, scenario.surrogate);
  GaConfig ga = scenario.ga;
  ga.rng_seed = out.seeds.ga;
  ga.execution = exec;
  out.ga = run(instance, predictor, ga);
  return out;
}

// ---------------------------------------------------------------------------
// Sensitivity

const char* to_string(Factor f) {
  switch (f) {
    case Factor::kTxSize: return "tx_size";
    case Factor::kArrivalRate: return "arrival_rate";
    case Factor::kBandwidth: return "bandwidth";
  }
  return "?";
}

Factor factor_from_string(const std::string& s) {
  if (s == "tx_size") return Factor::kTxSize;
  if (s == "arrival_rate") return Factor::kArrivalRate;
  if (s == "bandwidth") return Factor::kBandwidth;
  throw ValidationError("varied_factor must be tx_size, arrival_rate or bandwidth; got \"" + s + "\"");
}

Scenario apply_factor(const Scenario& base, Factor factor, double value) {
  Scenario s = base;
  switch (factor) {
    case Factor::kTxSize:
      s.workload.tx_size = TxSizeDistribution::constant(static_cast<std::int64_t>(std::llround(value)));
      break;
    case Factor::kArrivalRate:
      s.workload.arrival.rate_tps = value;
      break;
    case Factor::kBandwidth:
      for (auto& n : s.nodes) n.bandwidth_bytes_per_sec = value;
      break;
  }
  return s;
}

void SweepSpec::validate() const {
  if (values.size() < 3) throw ValidationError("sweep: at least 3 values are required");
  const bool up = std::adjacent_find(values.begin(), values.end(), std::greater_equal<>()) == values.end();
  const bool down = std::adjacent_find(values.begin(), values.end(), std::less_equal<>()) == values.end();
  if (!up && !down) throw ValidationError("sweep: values must be strictly monotone");
  for (double v : values) {
    if (!(v > 0.0)) throw ValidationError("sweep: values must be > 0");
    if (factor == Factor::kTxSize && static_cast<double>(base.limits.cb) < v) {
      throw ValidationError("sweep: tx_size value " + format_double(v) + " exceeds cb");
    }
  }
  if (runs_per_point < 1) throw ValidationError("sweep: runs_per_point must be >= 1");
}

nlohmann::json SweepSpec::to_json() const {
  return {{"varied_factor", to_string(factor)},
          {"values", values},
          {"runs_per_point", runs_per_point},
          {"rng_seed", rng_seed},
          {"base", base.to_json()}};
}

SweepSpec sweep_from_json(const JsonReader& r) {
  r.allow_only({"varied_factor", "values", "runs_per_point", "rng_seed", "base"});
  SweepSpec spec;
  try {
    spec.factor = factor_from_string(r.string("varied_factor"));
  } catch (const ValidationError&) {
    r.fail("varied_factor", "expected tx_size, arrival_rate or bandwidth");
  }
  spec.values = r.numbers("values");
  spec.runs_per_point = static_cast<int>(r.integer("runs_per_point", 1));
  spec.rng_seed = r.seed("rng_seed", spec.rng_seed);
  spec.base = scenario_from_json(r.child("base"));
  try {
    spec.validate();
  } catch (const ValidationError& e) {
    r.fail("values", e.what());
  }
  return spec;
}

nlohmann::json SweepResult::to_json() const {
  nlohmann::json cols{{"point", nlohmann::json::array()},
                      {"value", nlohmann::json::array()},
                      {"run", nlohmann::json::array()},
                      {"run_seed", nlohmann::json::array()},
                      {"recommended_block_size", nlohmann::json::array()},
                      {"best_fitness", nlohmann::json::array()},
                      {"ga_seed", nlohmann::json::array()},
                      {"generations_run", nlohmann::json::array()}};
  for (const auto& rec : records) {
    cols["point"].push_back(rec.point);
    cols["value"].push_back(rec.value);
    cols["run"].push_back(rec.run);
    cols["run_seed"].push_back(rec.run_seed);
    cols["recommended_block_size"].push_back(rec.recommended_block_size);
    cols["best_fitness"].push_back(rec.best_fitness);
    cols["ga_seed"].push_back(rec.ga_seed);
    cols["generations_run"].push_back(rec.generations_run);
  }
  return {{"varied_factor", to_string(factor)},
          {"values", values},
          {"records", cols},
          {"spearman", optional_json(spearman)},
          {"stabilization_index", optional_json(stabilization_index)}};
}

void SweepResult::write_csv(std::ostream& out) const {
  out << "point,value,run,run_seed,recommended_block_size,best_fitness,ga_seed,generations_run\n";
  for (const auto& r : records) {
    out << r.point << ',' << format_double(r.value) << ',' << r.run << ',' << r.run_seed << ','
        << r.recommended_block_size << ',' << format_double(r.best_fitness) << ',' << r.ga_seed
        << ',' << r.generations_run << '\n';
  }
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("spearman: series lengths differ");
  if (x.size() < 2) return std::nullopt;
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

double population_sd(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / n);
}

SweepResult run_sensitivity(const SweepSpec& spec, Execution exec) {
  spec.validate();
  const std::size_t runs = static_cast<std::size_t>(spec.runs_per_point);
  const std::size_t tasks = spec.values.size() * runs;
  std::vector<SweepRecord> records(tasks);
  const bool outer = exec == Execution::kParallel;
  // Sweep points run concurrently; each point runs its own chain serially.
  const Execution inner = outer ? Execution::kSerial : exec;
  for_each_index(tasks, outer, [&](std::size_t t) {
    const std::size_t p = t / runs;
    const int r = static_cast<int>(t % runs);
    const auto seed = derive_seed(spec.rng_seed, {p, static_cast<std::uint64_t>(r)});
    const auto scenario = apply_factor(spec.base, spec.factor, spec.values[p]);
    try {
      const auto rec = recommend(scenario, seed, inner);
      records[t] = {p, spec.values[p], r, seed, rec.ga.recommended_block_size,
                    rec.ga.best_fitness, rec.seeds.ga, rec.ga.generations_run};
    } catch (const InfeasibleError& e) {
      throw InfeasibleError("sweep point " + std::to_string(p) + " (" + to_string(spec.factor) +
                            "=" + format_double(spec.values[p]) + "): " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("sweep point " + std::to_string(p) + " (" + to_string(spec.factor) +
                            "=" + format_double(spec.values[p]) + "): " + e.what());
    }
  });

  SweepResult out;
  out.factor = spec.factor;
  out.values = spec.values;
  out.records = std::move(records);
  std::vector<double> xs, ys;
  for (const auto& r : out.records) {
    xs.push_back(r.value);
    ys.push_back(static_cast<double>(r.recommended_block_size));
  }
  out.spearman = spearman(xs, ys);
  if (spec.factor == Factor::kArrivalRate) {
    // Upper half by value, whichever way the sweep is ordered.
    std::vector<double> sorted = spec.values;
    std::sort(sorted.begin(), sorted.end());
    const double threshold = sorted[sorted.size() / 2];
    std::vector<double> top;
    for (const auto& r : out.records) {
      if (r.value >= threshold) top.push_back(static_cast<double>(r.recommended_block_size));
    }
    out.stabilization_index = population_sd(top);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Validation

nlohmann::json ValidationSpec::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& s : scenarios) arr.push_back(s.to_json());
  return {{"rng_seed", rng_seed}, {"neighbor_offsets", neighbor_offsets}, {"scenarios", arr}};
}

ValidationSpec validation_from_json(const JsonReader& r) {
  r.allow_only({"rng_seed", "neighbor_offsets", "scenarios"});
  ValidationSpec spec;
  spec.rng_seed = r.seed("rng_seed", spec.rng_seed);
  if (r.has("neighbor_offsets")) spec.neighbor_offsets = r.integers("neighbor_offsets");
  if (spec.neighbor_offsets.empty()) r.fail("neighbor_offsets", "at least one offset is required");
  for (const auto& s : r.array("scenarios")) spec.scenarios.push_back(scenario_from_json(s));
  if (spec.scenarios.empty()) r.fail("scenarios", "at least one scenario is required");
  return spec;
}

nlohmann::json ValidationEntry::to_json() const {
  nlohmann::json sizes = nlohmann::json::array();
  nlohmann::json tps = nlohmann::json::array();
  nlohmann::json lat = nlohmann::json::array();
  for (const auto& p : curve) {
    sizes.push_back(p.block_size);
    tps.push_back(p.throughput_tps);
    lat.push_back(p.mean_latency_s);
  }
  return {{"scenario", scenario_id},
          {"seeds", seeds.to_json()},
          {"recommended_block_size", recommended_block_size},
          {"best_fitness", best_fitness},
          {"curve", {{"block_size", sizes}, {"throughput_tps", tps}, {"mean_latency_s", lat}}},
          {"winner", winner}};
}

nlohmann::json ValidationReport::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& e : entries) arr.push_back(e.to_json());
  return {{"entries", arr}, {"wins", wins}, {"scenarios", entries.size()}};
}

void ValidationReport::write_csv(std::ostream& out) const {
  out << "scenario,block_size,recommended,throughput_tps,mean_latency_s,winner\n";
  for (const auto& e : entries) {
    for (const auto& p : e.curve) {
      out << e.scenario_id << ',' << p.block_size << ','
          << (p.block_size == e.recommended_block_size ? 1 : 0) << ','
          << format_double(p.throughput_tps) << ',' << format_double(p.mean_latency_s) << ','
          << (e.winner ? 1 : 0) << '\n';
    }
  }
}

std::vector<std::int64_t> neighbor_sizes(std::int64_t recommended, std::int64_t ub,
                                         std::span<const std::int64_t> offsets) {
  std::set<std::int64_t> sizes{std::clamp<std::int64_t>(recommended, 1, ub)};
  for (auto off : offsets) sizes.insert(std::clamp<std::int64_t>(recommended + off, 1, ub));
  return {sizes.begin(), sizes.end()};
}

ValidationEntry check_recommendation(const Scenario& scenario, const ScenarioSeeds& seeds,
                                     std::int64_t recommended, double best_fitness,
                                     std::span<const std::int64_t> offsets, Execution exec) {
  ValidationEntry e;
  e.scenario_id = scenario.id;
  e.seeds = seeds;
  e.recommended_block_size = recommended;
  e.best_fitness = best_fitness;
  const auto sizes = neighbor_sizes(recommended, scenario.limits.ub, offsets);
  const auto cfg = scenario.sim_config(recommended, seeds.check_workload, seeds.check_noise);
  e.curve = throughput_vs_blocksize(cfg, sizes, exec);
  double rec_tps = 0;
  for (const auto& p : e.curve) {
    if (p.block_size == recommended) rec_tps = p.throughput_tps;
  }
  e.winner = std::all_of(e.curve.begin(), e.curve.end(),
                         [&](const CurvePoint& p) { return rec_tps >= p.throughput_tps; });
  return e;
}

ValidationReport run_validation(const ValidationSpec& spec, Execution exec) {
  if (spec.scenarios.empty()) throw ValidationError("validation: no scenarios");
  std::vector<ValidationEntry> entries(spec.scenarios.size());
  const bool outer = exec == Execution::kParallel;
  const Execution inner = outer ? Execution::kSerial : exec;
  for_each_index(spec.scenarios.size(), outer, [&](std::size_t s) {
    const auto& sc = spec.scenarios[s];
    try {
      const auto rec = recommend(sc, derive_seed(spec.rng_seed, {s}), inner);
      entries[s] = check_recommendation(sc, rec.seeds, rec.ga.recommended_block_size,
                                        rec.ga.best_fitness, spec.neighbor_offsets, inner);
    } catch (const InfeasibleError& e) {
      throw InfeasibleError("scenario " + sc.id + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("scenario " + sc.id + ": " + e.what());
    }
  });
  ValidationReport report;
  report.entries = std::move(entries);
  for (const auto& e : report.entries) report.wins += e.winner ? 1 : 0;
  return report;
}

}  // namespace blocktune

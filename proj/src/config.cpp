#include "blocktune/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "blocktune/error.hpp"
#include "blocktune/seed.hpp"

namespace blocktune {

nlohmann::json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1;
    std::size_t col = 1;
    const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string what = e.what();
    if (auto p = what.find("syntax error"); p != std::string::npos) what = what.substr(p);
    throw ParseError(source + ":" + std::to_string(line) + ":" + std::to_string(col) +
                     ": invalid JSON: " + what);
  }
}

nlohmann::json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_json_text(buf.str(), path.string());
}

JsonReader::JsonReader(const nlohmann::json& j, std::string source, std::string path)
    : j_(j), source_(std::move(source)), path_(std::move(path)) {
  if (!j_.is_object()) {
    throw ValidationError(source_ + ": " + (path_.empty() ? "<root>" : path_) +
                          ": expected a JSON object");
  }
}

std::string JsonReader::where(const std::string& key) const {
  return path_.empty() ? key : path_ + "." + key;
}

void JsonReader::fail(const std::string& key, const std::string& rule) const {
  throw ValidationError(source_ + ": " + where(key) + ": " + rule);
}

void JsonReader::allow_only(std::initializer_list<const char*> known) const {
  for (const auto& [key, value] : j_.items()) {
    const bool ok = std::any_of(known.begin(), known.end(),
                                [&](const char* k) { return key == k; });
    if (!ok) fail(key, "unknown key");
  }
}

const nlohmann::json& JsonReader::at(const char* key) const {
  if (!j_.contains(key)) fail(key, "required key is missing");
  return j_.at(key);
}

JsonReader JsonReader::child(const char* key) const {
  const auto& v = at(key);
  if (!v.is_object()) fail(key, "expected an object");
  return JsonReader(v, source_, where(key));
}

std::vector<JsonReader> JsonReader::array(const char* key) const {
  const auto& v = at(key);
  if (!v.is_array()) fail(key, "expected an array");
  std::vector<JsonReader> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string p = where(key) + "[" + std::to_string(i) + "]";
    if (!v[i].is_object()) throw ValidationError(source_ + ": " + p + ": expected an object");
    out.emplace_back(v[i], source_, p);
  }
  return out;
}

double JsonReader::number(const char* key) const {
  const auto& v = at(key);
  if (!v.is_number()) fail(key, "expected a number");
  return v.get<double>();
}

double JsonReader::number(const char* key, double fallback) const {
  return has(key) ? number(key) : fallback;
}

std::int64_t JsonReader::integer(const char* key) const {
  const auto& v = at(key);
  if (!v.is_number_integer()) fail(key, "expected an integer");
  return v.get<std::int64_t>();
}

std::int64_t JsonReader::integer(const char* key, std::int64_t fallback) const {
  return has(key) ? integer(key) : fallback;
}

std::uint64_t JsonReader::seed(const char* key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  const auto& v = at(key);
  if (!v.is_number_unsigned()) fail(key, "expected a non-negative integer seed");
  return v.get<std::uint64_t>();
}

std::string JsonReader::string(const char* key) const {
  const auto& v = at(key);
  if (!v.is_string()) fail(key, "expected a string");
  return v.get<std::string>();
}

std::string JsonReader::string(const char* key, const std::string& fallback) const {
  return has(key) ? string(key) : fallback;
}

std::vector<double> JsonReader::numbers(const char* key) const {
  const auto& v = at(key);
  if (!v.is_array()) fail(key, "expected an array of numbers");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) fail(key, "expected an array of numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

std::vector<std::int64_t> JsonReader::integers(const char* key) const {
  const auto& v = at(key);
  if (!v.is_array()) fail(key, "expected an array of integers");
  std::vector<std::int64_t> out;
  for (const auto& e : v) {
    if (!e.is_number_integer()) fail(key, "expected an array of integers");
    out.push_back(e.get<std::int64_t>());
  }
  return out;
}

ArrivalProcess arrival_from_json(const JsonReader& r) {
  r.allow_only({"kind", "rate_tps"});
  ArrivalProcess a;
  const auto kind = r.string("kind", "fixed_rate");
  if (kind == "fixed_rate") {
    a.kind = ArrivalProcess::Kind::kFixedRate;
  } else if (kind == "poisson") {
    a.kind = ArrivalProcess::Kind::kPoisson;
  } else {
    r.fail("kind", "expected \"fixed_rate\" or \"poisson\"");
  }
  a.rate_tps = r.number("rate_tps");
  if (!(a.rate_tps > 0.0)) r.fail("rate_tps", "must be > 0");
  return a;
}

TxSizeDistribution tx_size_from_json(const JsonReader& r) {
  r.allow_only({"kind", "bytes", "min_bytes", "max_bytes"});
  const auto kind = r.string("kind", "constant");
  TxSizeDistribution d;
  if (kind == "constant") {
    d = TxSizeDistribution::constant(r.integer("bytes"));
  } else if (kind == "uniform") {
    d.kind = TxSizeDistribution::Kind::kUniform;
    d.min_bytes = r.integer("min_bytes");
    d.max_bytes = r.integer("max_bytes");
  } else {
    r.fail("kind", "expected \"constant\" or \"uniform\"");
  }
  if (d.min_bytes < 1 || d.max_bytes < d.min_bytes) {
    r.fail(kind == "constant" ? "bytes" : "min_bytes", "sizes must satisfy 1 <= min <= max");
  }
  return d;
}

WorkloadProfile workload_from_json(const JsonReader& r) {
  r.allow_only({"arrival", "tx_size", "total_tx", "rng_seed"});
  WorkloadProfile w;
  w.arrival = arrival_from_json(r.child("arrival"));
  w.tx_size = tx_size_from_json(r.child("tx_size"));
  w.total_tx = r.integer("total_tx", w.total_tx);
  if (w.total_tx < 1) r.fail("total_tx", "must be >= 1");
  w.rng_seed = r.seed("rng_seed", w.rng_seed);
  return w;
}

std::vector<NodeProfile> nodes_from_json(const JsonReader& r, const char* key) {
  std::vector<NodeProfile> nodes;
  for (const auto& n : r.array(key)) {
    n.allow_only({"bandwidth_bytes_per_sec"});
    const double bw = n.number("bandwidth_bytes_per_sec");
    if (!(bw > 0.0)) n.fail("bandwidth_bytes_per_sec", "must be > 0");
    nodes.push_back({nodes.size(), bw});
  }
  if (nodes.empty()) r.fail(key, "at least one node is required");
  return nodes;
}

BlockCutPolicy block_cut_from_json(const JsonReader& r) {
  r.allow_only({"max_tx_count", "max_bytes", "timeout_s"});
  BlockCutPolicy c;
  c.max_tx_count = r.integer("max_tx_count", c.max_tx_count);
  c.max_bytes = r.integer("max_bytes", c.max_bytes);
  c.timeout_s = r.number("timeout_s", c.timeout_s);
  if (c.max_tx_count < 1) r.fail("max_tx_count", "must be >= 1");
  if (c.max_bytes < 1) r.fail("max_bytes", "must be >= 1");
  if (!(c.timeout_s > 0.0)) r.fail("timeout_s", "must be > 0");
  return c;
}

GroundTruthCost cost_from_json(const JsonReader& r) {
  r.allow_only({"vt_per_tx_s", "vt_per_byte_s", "ct_fixed_s", "ct_per_byte_s",
                "dispatch_overhead_s", "noise_sd_fraction"});
  GroundTruthCost c;
  auto field = [&](const char* key, double& dst) {
    dst = r.number(key, dst);
    if (!(dst >= 0.0)) r.fail(key, "must be >= 0");
  };
  field("vt_per_tx_s", c.vt_per_tx_s);
  field("vt_per_byte_s", c.vt_per_byte_s);
  field("ct_fixed_s", c.ct_fixed_s);
  field("ct_per_byte_s", c.ct_per_byte_s);
  field("dispatch_overhead_s", c.dispatch_overhead_s);
  field("noise_sd_fraction", c.noise_sd_fraction);
  if (c.noise_sd_fraction >= 0.2) r.fail("noise_sd_fraction", "must be < 0.2");
  return c;
}

BlockLimits limits_from_json(const JsonReader& r) {
  r.allow_only({"lb", "ub", "cb"});
  BlockLimits l;
  l.lb = r.integer("lb");
  l.ub = r.integer("ub");
  l.cb = r.integer("cb");
  if (l.lb < 1) r.fail("lb", "must be >= 1");
  if (l.ub < l.lb) r.fail("ub", "must be >= lb");
  if (l.cb < 1) r.fail("cb", "must be >= 1");
  return l;
}

DatasetGrid grid_from_json(const JsonReader& r) {
  r.allow_only({"block_sizes", "tx_sizes", "bandwidths", "replicates"});
  DatasetGrid g;
  g.block_sizes = r.integers("block_sizes");
  g.tx_sizes = r.integers("tx_sizes");
  g.bandwidths = r.numbers("bandwidths");
  g.replicates = static_cast<int>(r.integer("replicates", 1));
  if (g.replicates < 1) r.fail("replicates", "must be >= 1");
  return g;
}

SimConfig sim_config_from_json(const JsonReader& r) {
  r.allow_only({"workload", "nodes", "block_cut", "cost", "rng_seed"});
  SimConfig c;
  c.workload = workload_from_json(r.child("workload"));
  c.nodes = nodes_from_json(r, "nodes");
  if (r.has("block_cut")) c.block_cut = block_cut_from_json(r.child("block_cut"));
  if (r.has("cost")) c.cost = cost_from_json(r.child("cost"));
  c.rng_seed = r.seed("rng_seed", c.rng_seed);
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(r.path().empty() ? std::string(e.what())
                                           : r.path() + ": " + e.what());
  }
  return c;
}

SimConfig load_sim_config(const std::filesystem::path& path) {
  const auto j = load_json_file(path);
  try {
    return sim_config_from_json(JsonReader(j, path.string()));
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path.string(), 0) == 0) throw;
    throw ValidationError(path.string() + ": " + msg);
  }
}

nlohmann::json to_json(const ArrivalProcess& a) {
  return {{"kind", a.kind == ArrivalProcess::Kind::kPoisson ? "poisson" : "fixed_rate"},
          {"rate_tps", a.rate_tps}};
}

nlohmann::json to_json(const TxSizeDistribution& d) {
  if (d.kind == TxSizeDistribution::Kind::kConstant) {
    return {{"kind", "constant"}, {"bytes", d.min_bytes}};
  }
  return {{"kind", "uniform"}, {"min_bytes", d.min_bytes}, {"max_bytes", d.max_bytes}};
}

nlohmann::json to_json(const WorkloadProfile& w) {
  return {{"arrival", to_json(w.arrival)},
          {"tx_size", to_json(w.tx_size)},
          {"total_tx", w.total_tx},
          {"rng_seed", w.rng_seed}};
}

nlohmann::json to_json(const std::vector<NodeProfile>& nodes) {
  auto arr = nlohmann::json::array();
  for (const auto& n : nodes) arr.push_back({{"bandwidth_bytes_per_sec", n.bandwidth_bytes_per_sec}});
  return arr;
}

nlohmann::json to_json(const BlockCutPolicy& c) {
  return {{"max_tx_count", c.max_tx_count}, {"max_bytes", c.max_bytes}, {"timeout_s", c.timeout_s}};
}

nlohmann::json to_json(const GroundTruthCost& c) {
  return {{"vt_per_tx_s", c.vt_per_tx_s},
          {"vt_per_byte_s", c.vt_per_byte_s},
          {"ct_fixed_s", c.ct_fixed_s},
          {"ct_per_byte_s", c.ct_per_byte_s},
          {"dispatch_overhead_s", c.dispatch_overhead_s},
          {"noise_sd_fraction", c.noise_sd_fraction}};
}

nlohmann::json to_json(const BlockLimits& l) {
  return {{"lb", l.lb}, {"ub", l.ub}, {"cb", l.cb}};
}

nlohmann::json to_json(const DatasetGrid& g) {
  return {{"block_sizes", g.block_sizes},
          {"tx_sizes", g.tx_sizes},
          {"bandwidths", g.bandwidths},
          {"replicates", g.replicates}};
}

nlohmann::json to_json(const SimConfig& c) {
  return {{"workload", to_json(c.workload)},
          {"nodes", to_json(c.nodes)},
          {"block_cut", to_json(c.block_cut)},
          {"cost", to_json(c.cost)},
          {"rng_seed", c.rng_seed}};
}

std::vector<Transaction> draw_transactions(std::int64_t n, const TxSizeDistribution& dist,
                                           std::uint64_t seed) {
  std::vector<Transaction> txs;
  txs.reserve(static_cast<std::size_t>(std::max<std::int64_t>(n, 0)));
  Rng rng(seed);
  std::uniform_int_distribution<std::int64_t> size(dist.min_bytes, dist.max_bytes);
  for (std::int64_t i = 0; i < n; ++i) {
    const auto s = dist.kind == TxSizeDistribution::Kind::kConstant ? dist.min_bytes : size(rng);
    txs.push_back({static_cast<std::size_t>(i), s});
  }
  return txs;
}

ProblemInstance instance_from_json(const JsonReader& r) {
  r.allow_only({"transactions", "nodes", "limits"});
  std::vector<Transaction> txs;
  if (!r.has("transactions")) r.fail("transactions", "required key is missing");
  const auto& t = r.json().at("transactions");
  if (t.is_array()) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!t[i].is_number_integer() || t[i].get<std::int64_t>() < 1) {
        r.fail("transactions[" + std::to_string(i) + "]", "expected a positive integer size in bytes");
      }
      txs.push_back({i, t[i].get<std::int64_t>()});
    }
  } else if (t.is_object()) {
    const auto g = r.child("transactions");
    g.allow_only({"count", "tx_size", "rng_seed"});
    const auto n = g.integer("count");
    if (n < 1) g.fail("count", "must be >= 1");
    txs = draw_transactions(n, tx_size_from_json(g.child("tx_size")), g.seed("rng_seed", 1));
  } else {
    r.fail("transactions", "expected an array of sizes or a generator object");
  }
  auto nodes = nodes_from_json(r, "nodes");
  const auto limits = limits_from_json(r.child("limits"));
  return ProblemInstance(std::move(txs), std::move(nodes), limits);
}

ProblemInstance load_instance(const std::filesystem::path& path) {
  const auto j = load_json_file(path);
  try {
    return instance_from_json(JsonReader(j, path.string()));
  } catch (const InfeasibleError& e) {
    throw InfeasibleError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    if (msg.rfind(path.string(), 0) == 0) throw;
    throw ValidationError(path.string() + ": " + msg);
  }
}

nlohmann::json to_json(const ProblemInstance& instance) {
  auto sizes = nlohmann::json::array();
  for (const auto& tx : instance.transactions()) sizes.push_back(tx.size_bytes);
  return {{"transactions", sizes},
          {"nodes", to_json(instance.nodes())},
          {"limits", to_json(instance.limits())}};
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError(path.string() + ": cannot open for writing");
    out << contents;
    out.flush();
    if (!out) throw ValidationError(path.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace blocktune

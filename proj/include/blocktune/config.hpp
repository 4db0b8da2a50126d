#pragma once

// JSON config files. Every loader rejects unknown keys and reports errors as
// "<source>: <json path>: <rule>".

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "blocktune/model.hpp"
#include "blocktune/simulator.hpp"
#include "json.hpp"

namespace blocktune {

// Parses a file; syntax errors become ParseError with line and column.
nlohmann::json load_json_file(const std::filesystem::path& path);
nlohmann::json parse_json_text(const std::string& text, const std::string& source);

// Thin cursor over a JSON object that knows its location for messages.
class JsonReader {
 public:
  JsonReader(const nlohmann::json& j, std::string source, std::string path = "");

  const nlohmann::json& json() const { return j_; }
  const std::string& path() const { return path_; }
  bool has(const char* key) const { return j_.contains(key); }

  // Throws ValidationError unless every key is in `known`.
  void allow_only(std::initializer_list<const char*> known) const;

  JsonReader child(const char* key) const;
  std::vector<JsonReader> array(const char* key) const;

  double number(const char* key) const;
  double number(const char* key, double fallback) const;
  std::int64_t integer(const char* key) const;
  std::int64_t integer(const char* key, std::int64_t fallback) const;
  std::uint64_t seed(const char* key, std::uint64_t fallback) const;
  std::string string(const char* key) const;
  std::string string(const char* key, const std::string& fallback) const;
  std::vector<double> numbers(const char* key) const;
  std::vector<std::int64_t> integers(const char* key) const;

  [[noreturn]] void fail(const std::string& key, const std::string& rule) const;

 private:
  const nlohmann::json& at(const char* key) const;
  std::string where(const std::string& key) const;

  const nlohmann::json& j_;
  std::string source_;
  std::string path_;
};

ArrivalProcess arrival_from_json(const JsonReader& r);
TxSizeDistribution tx_size_from_json(const JsonReader& r);
WorkloadProfile workload_from_json(const JsonReader& r);
std::vector<NodeProfile> nodes_from_json(const JsonReader& r, const char* key);
BlockCutPolicy block_cut_from_json(const JsonReader& r);
GroundTruthCost cost_from_json(const JsonReader& r);
BlockLimits limits_from_json(const JsonReader& r);
DatasetGrid grid_from_json(const JsonReader& r);

SimConfig sim_config_from_json(const JsonReader& r);
SimConfig load_sim_config(const std::filesystem::path& path);

nlohmann::json to_json(const ArrivalProcess& a);
nlohmann::json to_json(const TxSizeDistribution& d);
nlohmann::json to_json(const WorkloadProfile& w);
nlohmann::json to_json(const std::vector<NodeProfile>& nodes);
nlohmann::json to_json(const BlockCutPolicy& c);
nlohmann::json to_json(const GroundTruthCost& c);
nlohmann::json to_json(const BlockLimits& l);
nlohmann::json to_json(const DatasetGrid& g);
nlohmann::json to_json(const SimConfig& c);

// Instance file:
//   {"transactions": [size, ...] | {"count": n, "tx_size": {...}, "rng_seed": s},
//    "nodes": [{"bandwidth_bytes_per_sec": bw}, ...],
//    "limits": {"lb": .., "ub": .., "cb": ..}}
ProblemInstance instance_from_json(const JsonReader& r);
ProblemInstance load_instance(const std::filesystem::path& path);
nlohmann::json to_json(const ProblemInstance& instance);

// n transaction sizes drawn from `dist` with the given seed.
std::vector<Transaction> draw_transactions(std::int64_t n, const TxSizeDistribution& dist,
                                           std::uint64_t seed);

// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace blocktune

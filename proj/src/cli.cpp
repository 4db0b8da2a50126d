#include "blocktune/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "blocktune/config.hpp"
#include "blocktune/error.hpp"
#include "blocktune/experiments.hpp"
#include "blocktune/ga.hpp"
#include "blocktune/seed.hpp"
#include "blocktune/simulator.hpp"
#include "blocktune/surrogate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace blocktune {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const InfeasibleError*>(&e)) return 2;
  if (dynamic_cast<const InternalError*>(&e)) return 3;
  if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const ValidationError*>(&e) ||
      dynamic_cast<const FitError*>(&e) || dynamic_cast<const PredictorNotReady*>(&e) ||
      dynamic_cast<const ConstraintError*>(&e)) {
    return 1;
  }
  return 3;
}

namespace {

struct GlobalOptions {
  std::optional<std::uint64_t> seed_flag;
  bool quiet = false;
  bool no_timestamps = false;
  bool serial = false;
  std::string out_dir = ".";
};

std::uint64_t parse_seed(const std::string& text, const std::string& what) {
  std::uint64_t v = 0;
  std::size_t pos = 0;
  try {
    v = std::stoull(text, &pos, 10);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != text.size() || text.front() == '-') {
    throw ValidationError(what + ": expected a non-negative integer seed, got \"" + text + "\"");
  }
  return v;
}

// --seed beats BLOCKTUNE_SEED beats the config file.
struct SeedChoice {
  std::optional<std::uint64_t> value;
  std::string source = "config";
};

SeedChoice choose_seed(const GlobalOptions& g) {
  if (g.seed_flag) return {g.seed_flag, "flag"};
  if (const char* env = std::getenv(kSeedEnvVar); env != nullptr && *env != '\0') {
    return {parse_seed(env, std::string("environment variable ") + kSeedEnvVar), "env"};
  }
  return {};
}

std::string iso_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

class Run {
 public:
  Run(std::string subcommand, const GlobalOptions& g, std::ostream& out)
      : subcommand_(std::move(subcommand)), g_(g), out_(out),
        started_(std::chrono::steady_clock::now()), started_at_(iso_now()),
        seed_(choose_seed(g)) {
    dir_ = g.out_dir;
    fs::create_directories(dir_);
  }

  Execution exec() const { return g_.serial ? Execution::kSerial : Execution::kParallel; }
  const SeedChoice& seed() const { return seed_; }

  void input(const std::string& name, const std::string& path) { inputs_[name] = path; }
  void config(json snapshot) { config_ = std::move(snapshot); }
  void seeds(json s) { seeds_ = std::move(s); }

  fs::path path(const std::string& file) const { return dir_ / file; }

  void write(const std::string& file, const std::string& contents) {
    write_file_atomic(path(file), contents);
    outputs_.push_back(file);
  }
  void write_json(const std::string& file, const json& j) { write(file, j.dump(2) + "\n"); }

  void say(const std::string& line) {
    if (!g_.quiet) out_ << line << '\n';
  }

  void finish() {
    json m{{"tool", kToolName},
           {"version", kToolVersion},
           {"subcommand", subcommand_},
           {"inputs", inputs_},
           {"outputs", outputs_},
           {"seed_source", seed_.source},
           {"seeds", seeds_},
           {"execution", g_.serial ? "serial" : "parallel"},
           {"config", config_}};
    if (!g_.no_timestamps) {
      m["started_at"] = started_at_;
      m["duration_s"] =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    }
    write_file_atomic(path(subcommand_ + ".manifest.json"), m.dump(2) + "\n");
  }

 private:
  std::string subcommand_;
  GlobalOptions g_;
  std::ostream& out_;
  std::chrono::steady_clock::time_point started_;
  std::string started_at_;
  SeedChoice seed_;
  fs::path dir_;
  json inputs_ = json::object();
  json outputs_ = json::array();
  json config_ = json::object();
  json seeds_ = json::object();
};

template <typename T>
T with_source(const std::string& path, T (*load)(const JsonReader&)) {
  const auto j = load_json_file(path);
  return load(JsonReader(j, path));
}

void apply_seed(SimConfig& cfg, std::uint64_t seed) {
  cfg.workload.rng_seed = derive_seed(seed, {1});
  cfg.rng_seed = derive_seed(seed, {2});
}

std::string curve_text(std::span<const CurvePoint> curve) {
  std::ostringstream s;
  write_curve(s, curve);
  return s.str();
}

// ---------------------------------------------------------------------------

int cmd_simulate(const GlobalOptions& g, const std::string& config_path, std::ostream& out) {
  Run job("simulate", g, out);
  job.input("config", config_path);
  auto cfg = load_sim_config(config_path);
  if (job.seed().value) apply_seed(cfg, *job.seed().value);
  job.config(to_json(cfg));
  job.seeds({{"workload", cfg.workload.rng_seed}, {"noise", cfg.rng_seed}});

  const auto result = run_simulation(cfg);
  std::ostringstream blocks;
  write_block_records(blocks, result);
  job.write("blocks.csv", blocks.str());
  job.write_json("simulation.json", summary_json(result));
  job.say("throughput " + format_double(result.throughput_tps) + " tx/s, mean latency " +
          format_double(result.mean_latency_s) + " s, " +
          std::to_string(result.per_block_records.size()) + " blocks");
  job.finish();
  return 0;
}

int cmd_gen_data(const GlobalOptions& g, const std::string& config_path,
                 const std::string& grid_path, std::ostream& out) {
  Run job("gen-data", g, out);
  job.input("config", config_path);
  auto cfg = load_sim_config(config_path);
  if (job.seed().value) apply_seed(cfg, *job.seed().value);
  DatasetGrid grid;
  if (grid_path.empty()) {
    grid = default_dataset_grid(cfg.workload.tx_size, cfg.nodes, cfg.block_cut.max_tx_count,
                                cfg.block_cut.max_bytes);
  } else {
    job.input("grid", grid_path);
    grid = with_source(grid_path, &grid_from_json);
  }
  job.config({{"sim", to_json(cfg)}, {"grid", to_json(grid)}});
  job.seeds({{"workload", cfg.workload.rng_seed}, {"noise", cfg.rng_seed}});

  const auto samples = generate_training_dataset(cfg, grid, job.exec());
  std::ostringstream csv;
  write_dataset(csv, samples);
  job.write("dataset.csv", csv.str());
  job.say(std::to_string(samples.size()) + " samples written to " +
          job.path("dataset.csv").string());
  job.finish();
  return 0;
}

json training_report(const PerformancePredictor& p, std::span<const TrainingSample> samples) {
  double vt = 0, ct = 0, lat = 0;
  const auto& boost = p.vt_model();
  for (const auto& s : samples) {
    const double dv = boost.predict(s.features) - s.vt_s;
    const double dc = p.ct_model().predict(s.features) - s.ct_s;
    const double dl = p.latency_model().predict(s.features) - s.latency_s;
    vt += dv * dv;
    ct += dc * dc;
    lat += dl * dl;
  }
  const double n = static_cast<double>(samples.size());
  json ranges = json::object();
  for (std::size_t f = 0; f < kNumFeatures; ++f) {
    ranges[kFeatureNames[f]] = {p.feature_ranges()[f].min, p.feature_ranges()[f].max};
  }
  return {{"rows", samples.size()},
          {"training_mse", {{"vt_s", vt / n}, {"ct_s", ct / n}, {"latency_s", lat / n}}},
          {"latency_tree_leaves", p.latency_model().leaf_count()},
          {"validation_boost_loss_trace", boost.loss_trace()},
          {"feature_ranges", ranges}};
}

int cmd_train(const GlobalOptions& g, const std::string& dataset_path,
              const std::string& params_path, std::ostream& out) {
  Run job("train", g, out);
  job.input("dataset", dataset_path);
  SurrogateParams params;
  if (!params_path.empty()) {
    job.input("params", params_path);
    const auto j = load_json_file(params_path);
    try {
      params = SurrogateParams::from_json(j);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(params_path + ": " + e.what());
    }
  }
  job.config(params.to_json());
  const auto samples = load_dataset(dataset_path);
  const auto predictor = PerformancePredictor::fit(samples, params);
  job.write("model.json", predictor.to_json().dump(1) + "\n");
  job.write_json("train_report.json", training_report(predictor, samples));
  job.say("trained on " + std::to_string(samples.size()) + " samples; model at " +
          job.path("model.json").string());
  job.finish();
  return 0;
}

json optimize_report(const ProblemInstance& instance, const GaConfig& ga, const GaResult& r,
                     std::size_t extrapolated_blocks) {
  return {{"instance", {{"n", instance.n()}, {"m", instance.m()}, {"nb", instance.nb()},
                        {"limits", to_json(instance.limits())}}},
          {"ga_config", ga.to_json()},
          {"result", r.to_json()},
          {"extrapolated_blocks", extrapolated_blocks}};
}

std::size_t count_extrapolated(const ProblemInstance& instance, const PerformancePredictor& p,
                               const AssignmentMatrix& a) {
  const auto loads = block_loads(instance, a);
  std::size_t n = 0;
  for (std::size_t j = 0; j < instance.nb(); ++j) {
    if (loads.count[j] == 0) continue;
    for (double bw : instance.distinct_bandwidths()) {
      const FeatureVector x{static_cast<double>(loads.count[j]),
                            static_cast<double>(loads.bytes[j]), bw};
      if (p.extrapolates(x)) {
        ++n;
        break;
      }
    }
  }
  return n;
}

std::string history_csv(const GaResult& r) {
  std::ostringstream s;
  s << "generation,best_fitness\n";
  for (std::size_t i = 0; i < r.fitness_history.size(); ++i) {
    s << i << ',' << format_double(r.fitness_history[i]) << '\n';
  }
  return s.str();
}

int cmd_optimize(const GlobalOptions& g, const std::string& instance_path,
                 const std::string& model_path, const std::string& ga_path, std::ostream& out,
                 std::ostream& err) {
  Run job("optimize", g, out);
  job.input("instance", instance_path);
  job.input("model", model_path);
  GaConfig ga;
  if (!ga_path.empty()) {
    job.input("ga", ga_path);
    try {
      ga.merge_json(load_json_file(ga_path));
    } catch (const ValidationError& e) {
      throw ValidationError(ga_path + ": " + e.what());
    }
  }
  if (job.seed().value) ga.rng_seed = *job.seed().value;
  ga.execution = job.exec();
  ga.validate();
  const auto instance = load_instance(instance_path);
  const auto predictor = PerformancePredictor::load(model_path);
  job.config({{"ga", ga.to_json()}, {"instance", to_json(instance)}});
  job.seeds({{"ga", ga.rng_seed}});

  const auto result = blocktune::run(instance, predictor, ga);
  const auto extrapolated = count_extrapolated(instance, predictor, result.best.assignment);
  if (extrapolated > 0 && !g.quiet) {
    err << "warning: " << extrapolated
        << " block(s) of the best assignment fall outside the model's training range\n";
  }
  job.write_json("optimize_report.json", optimize_report(instance, ga, result, extrapolated));
  job.write("fitness_history.csv", history_csv(result));
  job.say("recommended block size " + std::to_string(result.recommended_block_size) +
          " (best fitness " + format_double(result.best_fitness) + ", " +
          std::to_string(result.generations_run) + " generations)");
  job.finish();
  return 0;
}

int cmd_sensitivity(const GlobalOptions& g, const std::string& spec_path, std::ostream& out) {
  Run job("sensitivity", g, out);
  job.input("spec", spec_path);
  auto spec = with_source(spec_path, &sweep_from_json);
  if (job.seed().value) spec.rng_seed = *job.seed().value;
  job.config(spec.to_json());
  job.seeds({{"sweep", spec.rng_seed}});

  const auto result = run_sensitivity(spec, job.exec());
  job.write_json("sensitivity_report.json", result.to_json());
  std::ostringstream csv;
  result.write_csv(csv);
  job.write("sensitivity.csv", csv.str());
  std::string line = std::string(to_string(result.factor)) + " sweep: spearman ";
  line += result.spearman ? format_double(*result.spearman) : "undefined";
  if (result.stabilization_index) {
    line += ", stabilization index " + format_double(*result.stabilization_index);
  }
  job.say(line);
  job.finish();
  return 0;
}

int cmd_validate(const GlobalOptions& g, const std::string& spec_path, std::ostream& out) {
  Run job("validate", g, out);
  job.input("scenarios", spec_path);
  auto spec = with_source(spec_path, &validation_from_json);
  if (job.seed().value) spec.rng_seed = *job.seed().value;
  job.config(spec.to_json());
  job.seeds({{"validation", spec.rng_seed}});

  const auto report = run_validation(spec, job.exec());
  job.write_json("validation_report.json", report.to_json());
  std::ostringstream csv;
  report.write_csv(csv);
  job.write("validation.csv", csv.str());
  for (const auto& e : report.entries) {
    job.say(e.scenario_id + ": recommended " + std::to_string(e.recommended_block_size) +
            (e.winner ? " wins" : " loses"));
  }
  job.say("wins " + std::to_string(report.wins) + "/" + std::to_string(report.entries.size()));
  job.finish();
  return 0;
}

struct PipelineSpec {
  Scenario scenario;
  std::vector<std::int64_t> offsets{-2, -1, 0, 1, 2};
  std::uint64_t rng_seed = 1;
};

PipelineSpec pipeline_from_json(const JsonReader& r) {
  r.allow_only({"rng_seed", "neighbor_offsets", "scenario"});
  PipelineSpec p;
  p.rng_seed = r.seed("rng_seed", p.rng_seed);
  if (r.has("neighbor_offsets")) p.offsets = r.integers("neighbor_offsets");
  if (p.offsets.empty()) r.fail("neighbor_offsets", "at least one offset is required");
  p.scenario = scenario_from_json(r.child("scenario"));
  return p;
}

// gen-data -> train -> optimize -> validate, passing artifacts through files.
int cmd_pipeline(const GlobalOptions& g, const std::string& config_path, std::ostream& out) {
  Run job("pipeline", g, out);
  job.input("config", config_path);
  auto spec = with_source(config_path, &pipeline_from_json);
  if (job.seed().value) spec.rng_seed = *job.seed().value;
  const auto& sc = spec.scenario;
  const auto seeds = ScenarioSeeds::derive(spec.rng_seed);
  job.config({{"rng_seed", spec.rng_seed},
              {"neighbor_offsets", spec.offsets},
              {"scenario", sc.to_json()}});
  job.seeds(seeds.to_json());

  {
    std::ostringstream csv;
    write_dataset(csv, scenario_dataset(sc, seeds, job.exec()));
    job.write("dataset.csv", csv.str());
  }
  const auto samples = load_dataset(job.path("dataset.csv"));
  job.say("gen-data: " + std::to_string(samples.size()) + " samples");

  {
    const auto predictor = PerformancePredictor::fit(samples, sc.surrogate);
    job.write("model.json", predictor.to_json().dump(1) + "\n");
    job.write_json("train_report.json", training_report(predictor, samples));
  }
  const auto predictor = PerformancePredictor::load(job.path("model.json"));
  job.say("train: model written");

  const auto instance = sc.instance(seeds.instance);
  job.write_json("instance.json", to_json(instance));
  GaConfig ga = sc.ga;
  ga.rng_seed = seeds.ga;
  ga.execution = job.exec();
  const auto result = blocktune::run(instance, predictor, ga);
  const auto extrapolated = count_extrapolated(instance, predictor, result.best.assignment);
  job.write_json("optimize_report.json", optimize_report(instance, ga, result, extrapolated));
  job.write("fitness_history.csv", history_csv(result));
  job.say("optimize: recommended block size " + std::to_string(result.recommended_block_size));

  const auto entry = check_recommendation(sc, seeds, result.recommended_block_size,
                                          result.best_fitness, spec.offsets, job.exec());
  job.write_json("validation_report.json", entry.to_json());
  job.write("throughput_curve.csv", curve_text(entry.curve));
  job.say(std::string("validate: recommendation ") +
          (entry.winner ? "achieves" : "does not achieve") + " the best simulated throughput");

  job.write_json("pipeline_report.json",
                 {{"scenario", sc.id},
                  {"seeds", seeds.to_json()},
                  {"dataset_rows", samples.size()},
                  {"recommended_block_size", result.recommended_block_size},
                  {"best_fitness", result.best_fitness},
                  {"generations_run", result.generations_run},
                  {"winner", entry.winner}});
  job.finish();
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Block-size recommendation for batch-committing ledgers", kToolName};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", kToolVersion);

  GlobalOptions g;
  std::string seed_text;
  app.add_option("--seed", seed_text, "Override every seed (beats " + std::string(kSeedEnvVar) + ")");
  app.add_flag("--quiet", g.quiet, "Suppress progress output");
  app.add_option("--out-dir", g.out_dir, "Directory for outputs and the run manifest");
  app.add_flag("--no-timestamps", g.no_timestamps, "Omit wall-clock fields from the manifest");
  app.add_flag("--serial", g.serial, "Run the serial reference path instead of OpenMP");

  std::string config_path, grid_path, dataset_path, params_path, instance_path, model_path,
      ga_path, spec_path;

  auto* simulate = app.add_subcommand("simulate", "Run one simulation");
  simulate->add_option("config", config_path, "Simulation config (JSON)")->required();
  auto* gen = app.add_subcommand("gen-data", "Generate a surrogate training dataset");
  gen->add_option("config", config_path, "Simulation config (JSON)")->required();
  gen->add_option("--grid", grid_path, "Dataset grid (JSON)");
  auto* train = app.add_subcommand("train", "Fit the performance predictor");
  train->add_option("dataset", dataset_path, "Dataset CSV")->required();
  train->add_option("--params", params_path, "Surrogate hyperparameters (JSON)");
  auto* optimize = app.add_subcommand("optimize", "Run the GA on an instance");
  optimize->add_option("instance", instance_path, "Problem instance (JSON)")->required();
  optimize->add_option("model", model_path, "Fitted model (JSON)")->required();
  optimize->add_option("--ga", ga_path, "GA overrides (JSON)");
  auto* sensitivity = app.add_subcommand("sensitivity", "Run a one-factor sweep");
  sensitivity->add_option("spec", spec_path, "Sweep spec (JSON)")->required();
  auto* validate = app.add_subcommand("validate", "Check recommendations against neighbours");
  validate->add_option("scenarios", spec_path, "Validation scenarios (JSON)")->required();
  auto* pipeline = app.add_subcommand("pipeline", "gen-data, train, optimize and validate");
  pipeline->add_option("config", config_path, "Pipeline config (JSON)")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (!seed_text.empty()) g.seed_flag = parse_seed(seed_text, "--seed");
    if (*simulate) return cmd_simulate(g, config_path, out);
    if (*gen) return cmd_gen_data(g, config_path, grid_path, out);
    if (*train) return cmd_train(g, dataset_path, params_path, out);
    if (*optimize) return cmd_optimize(g, instance_path, model_path, ga_path, out, err);
    if (*sensitivity) return cmd_sensitivity(g, spec_path, out);
    if (*validate) return cmd_validate(g, spec_path, out);
    if (*pipeline) return cmd_pipeline(g, config_path, out);
  } catch (const std::exception& e) {
    err << kToolName << ": error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 1;
}

}  // namespace blocktune

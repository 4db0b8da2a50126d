#include "blocktune/ga.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "blocktune/error.hpp"
#include "blocktune/parallel.hpp"

namespace blocktune {

namespace {

constexpr std::uint64_t kInitTag = 0x696e6974;  // "init"
constexpr std::uint64_t kLoopTag = 0x6c6f6f70;  // "loop"

const char* execution_name(Execution e) {
  return e == Execution::kSerial ? "serial" : "parallel";
}

Execution parse_execution(const std::string& s) {
  if (s == "serial") return Execution::kSerial;
  if (s == "parallel") return Execution::kParallel;
  throw ValidationError("ga: execution must be \"serial\" or \"parallel\", got \"" + s + "\"");
}

bool cached_less(const Chromosome& a, const Chromosome& b) {
  return *a.cached_fitness < *b.cached_fitness;
}

// Keeps the cache only when the operator left the assignment untouched.
Chromosome rebuild(const Chromosome& source, AssignmentMatrix assignment) {
  if (assignment == source.assignment) return source;
  return Chromosome{std::move(assignment), std::nullopt};
}

}  // namespace

double GaConfig::mutation_rate_for(std::size_t n) const {
  if (mutation_rate) return *mutation_rate;
  const double r = std::max(2.0 / static_cast<double>(std::max<std::size_t>(n, 1)), 0.01);
  return std::min(r, 1.0);
}

void GaConfig::validate() const {
  if (population_size < 2) throw ValidationError("ga: population_size must be >= 2");
  if (max_generations < 0) throw ValidationError("ga: max_generations must be >= 0");
  if (!(crossover_rate >= 0.0 && crossover_rate <= 1.0)) {
    throw ValidationError("ga: crossover_rate must lie in [0, 1]");
  }
  if (mutation_rate && !(*mutation_rate >= 0.0 && *mutation_rate <= 1.0)) {
    throw ValidationError("ga: mutation_rate must lie in [0, 1]");
  }
  if (!(regroup_rate >= 0.0 && regroup_rate <= 1.0)) {
    throw ValidationError("ga: regroup_rate must lie in [0, 1]");
  }
  if (tournament_size < 1 || tournament_size > population_size) {
    throw ValidationError("ga: tournament_size must lie in [1, population_size]");
  }
  if (elitism_count < 0 || elitism_count >= population_size) {
    throw ValidationError("ga: elitism_count must lie in [0, population_size)");
  }
  if (stagnation_limit < 1) throw ValidationError("ga: stagnation_limit must be >= 1");
}

nlohmann::json GaConfig::to_json() const {
  nlohmann::json j{{"population_size", population_size},
                   {"max_generations", max_generations},
                   {"crossover_rate", crossover_rate},
                   {"regroup_rate", regroup_rate},
                   {"tournament_size", tournament_size},
                   {"elitism_count", elitism_count},
                   {"stagnation_limit", stagnation_limit},
                   {"rng_seed", rng_seed},
                   {"execution", execution_name(execution)}};
  j["mutation_rate"] = mutation_rate ? nlohmann::json(*mutation_rate) : nlohmann::json(nullptr);
  return j;
}

void GaConfig::merge_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("ga: config must be a JSON object");
  static const char* const kKnown[] = {"population_size", "max_generations", "crossover_rate",
                                       "mutation_rate",   "regroup_rate",    "tournament_size",
                                       "elitism_count",   "stagnation_limit", "rng_seed",
                                       "execution"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown)) {
      throw ValidationError("ga: unknown key \"" + key + "\"");
    }
  }
  try {
    if (j.contains("population_size")) population_size = j["population_size"].get<int>();
    if (j.contains("max_generations")) max_generations = j["max_generations"].get<int>();
    if (j.contains("crossover_rate")) crossover_rate = j["crossover_rate"].get<double>();
    if (j.contains("mutation_rate")) {
      if (j["mutation_rate"].is_null()) {
        mutation_rate.reset();
      } else {
        mutation_rate = j["mutation_rate"].get<double>();
      }
    }
    if (j.contains("regroup_rate")) regroup_rate = j["regroup_rate"].get<double>();
    if (j.contains("tournament_size")) tournament_size = j["tournament_size"].get<int>();
    if (j.contains("elitism_count")) elitism_count = j["elitism_count"].get<int>();
    if (j.contains("stagnation_limit")) stagnation_limit = j["stagnation_limit"].get<int>();
    if (j.contains("rng_seed")) rng_seed = j["rng_seed"].get<std::uint64_t>();
    if (j.contains("execution")) execution = parse_execution(j["execution"].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("ga: ") + e.what());
  }
}

nlohmann::json GaResult::to_json() const {
  const auto blocks = best.assignment.block_of();
  return {{"best_fitness", best_fitness},
          {"recommended_block_size", recommended_block_size},
          {"generations_run", generations_run},
          {"seed_used", seed_used},
          {"assignment", std::vector<std::uint32_t>(blocks.begin(), blocks.end())},
          {"fitness_history", {{"generation", [&] {
                                  std::vector<int> g(fitness_history.size());
                                  std::iota(g.begin(), g.end(), 0);
                                  return g;
                                }()},
                               {"best_fitness", fitness_history}}}};
}

AssignmentMatrix repair(const ProblemInstance& instance, AssignmentMatrix assignment) {
  auto loads = block_loads(instance, assignment);
  const auto& lim = instance.limits();
  const auto& txs = instance.transactions();
  const std::size_t nb = instance.nb();

  std::vector<std::vector<std::size_t>> members(nb);
  for (std::size_t i = 0; i < assignment.n(); ++i) members[assignment[i]].push_back(i);

  // Targets only ever receive transactions that fit, so one pass in block
  // order leaves every block feasible.
  for (std::size_t j = 0; j < nb; ++j) {
    while (loads.count[j] > lim.ub || loads.bytes[j] > lim.cb) {
      auto& list = members[j];
      auto victim = list.begin();
      for (auto it = list.begin(); it != list.end(); ++it) {
        if (txs[*it].size_bytes > txs[*victim].size_bytes ||
            (txs[*it].size_bytes == txs[*victim].size_bytes && *it < *victim)) {
          victim = it;
        }
      }
      const std::size_t i = *victim;
      const std::int64_t s = txs[i].size_bytes;

      std::size_t target = nb;
      for (std::size_t t = 0; t < nb; ++t) {
        if (t == j || loads.count[t] + 1 > lim.ub || loads.bytes[t] + s > lim.cb) continue;
        if (target == nb || loads.bytes[t] < loads.bytes[target]) target = t;
      }
      if (target == nb) {
        throw InternalError("repair: transaction " + std::to_string(i) +
                            " has no feasible target block; the instance capacity "
                            "check should have made this unreachable");
      }
      list.erase(victim);
      members[target].push_back(i);
      --loads.count[j];
      loads.bytes[j] -= s;
      ++loads.count[target];
      loads.bytes[target] += s;
      assignment.set(i, static_cast<std::uint32_t>(target));
    }
  }
  return assignment;
}

Population initialize_population(const ProblemInstance& instance, const GaConfig& config) {
  config.validate();
  const std::size_t n = instance.n();
  const std::size_t nb = instance.nb();
  Population population;
  population.reserve(static_cast<std::size_t>(config.population_size));
  for (int c = 0; c < config.population_size; ++c) {
    Rng rng(derive_seed(config.rng_seed, {kInitTag, static_cast<std::uint64_t>(c)}));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(nb - 1));
    std::vector<std::uint32_t> block_of(n);
    for (auto i : order) block_of[i] = pick(rng);
    population.push_back({repair(instance, AssignmentMatrix(std::move(block_of), nb)), std::nullopt});
  }
  return population;
}

double fitness(Chromosome& chromosome, const ProblemInstance& instance,
               const BlockCostModel& model) {
  if (!chromosome.cached_fitness) {
    chromosome.cached_fitness = total_processing_time(instance, chromosome.assignment, model);
  }
  return *chromosome.cached_fitness;
}

void evaluate_population(Population& population, const ProblemInstance& instance,
                         const BlockCostModel& model, Execution exec) {
  for_each_index(population.size(), exec == Execution::kParallel,
                 [&](std::size_t c) { fitness(population[c], instance, model); });
}

std::size_t select(const Population& population, const GaConfig& config, Rng& rng) {
  if (population.empty()) throw ValidationError("select: empty population");
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(std::max(config.tournament_size, 1)),
                                       population.size());
  std::vector<std::size_t> all(population.size());
  std::iota(all.begin(), all.end(), 0);
  std::vector<std::size_t> entrants;
  entrants.reserve(k);
  std::sample(all.begin(), all.end(), std::back_inserter(entrants), k, rng);
  std::size_t best = entrants.front();
  for (auto c : entrants) {
    if (!population[c].cached_fitness) {
      throw ValidationError("select: population must be evaluated first");
    }
    const double fc = *population[c].cached_fitness;
    const double fb = *population[best].cached_fitness;
    if (fc < fb || (fc == fb && c < best)) best = c;
  }
  return best;
}

std::pair<Chromosome, Chromosome> crossover(const Chromosome& a, const Chromosome& b,
                                            const ProblemInstance& instance, Rng& rng) {
  std::vector<std::uint32_t> ca(a.assignment.block_of().begin(), a.assignment.block_of().end());
  std::vector<std::uint32_t> cb(b.assignment.block_of().begin(), b.assignment.block_of().end());
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < ca.size(); ++i) {
    if (coin(rng)) std::swap(ca[i], cb[i]);
  }
  const std::size_t nb = instance.nb();
  return {rebuild(a, repair(instance, AssignmentMatrix(std::move(ca), nb))),
          rebuild(b, repair(instance, AssignmentMatrix(std::move(cb), nb)))};
}

Chromosome mutate(Chromosome chromosome, double mutation_rate,
                  const ProblemInstance& instance, Rng& rng) {
  const std::size_t nb = instance.nb();
  std::vector<std::uint32_t> genes(chromosome.assignment.block_of().begin(),
                                   chromosome.assignment.block_of().end());
  std::bernoulli_distribution hit(std::clamp(mutation_rate, 0.0, 1.0));
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(nb - 1));
  for (auto& g : genes) {
    if (hit(rng)) g = pick(rng);
  }
  return rebuild(chromosome, repair(instance, AssignmentMatrix(std::move(genes), nb)));
}

Chromosome regroup(Chromosome chromosome, const ProblemInstance& instance, Rng& rng) {
  const std::size_t nb = instance.nb();
  std::vector<std::uint32_t> genes(chromosome.assignment.block_of().begin(),
                                   chromosome.assignment.block_of().end());
  std::vector<std::vector<std::size_t>> members(nb);
  for (std::size_t i = 0; i < genes.size(); ++i) members[genes[i]].push_back(i);
  std::vector<std::uint32_t> used, empty, splittable;
  for (std::uint32_t j = 0; j < nb; ++j) {
    if (members[j].empty()) {
      empty.push_back(j);
    } else {
      used.push_back(j);
      if (members[j].size() >= 2) splittable.push_back(j);
    }
  }
  auto pick = [&rng](const std::vector<std::uint32_t>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
  };

  std::bernoulli_distribution coin(0.5);
  if (coin(rng)) {
    if (used.size() < 2) return chromosome;
    const auto from = pick(used);
    const auto& lim = instance.limits();
    const auto& txs = instance.transactions();
    std::vector<std::int64_t> count(nb, 0), bytes(nb, 0);
    for (std::size_t i = 0; i < genes.size(); ++i) {
      ++count[genes[i]];
      bytes[genes[i]] += txs[i].size_bytes;
    }
    auto list = members[from];
    std::shuffle(list.begin(), list.end(), rng);
    std::vector<std::uint32_t> room;
    for (auto i : list) {
      room.clear();
      for (auto j : used) {
        if (j != from && count[j] + 1 <= lim.ub && bytes[j] + txs[i].size_bytes <= lim.cb) {
          room.push_back(j);
        }
      }
      if (room.empty()) continue;
      const auto to = pick(room);
      genes[i] = to;
      ++count[to];
      bytes[to] += txs[i].size_bytes;
    }
  } else {
    if (splittable.empty() || empty.empty()) return chromosome;
    const auto from = pick(splittable);
    const auto to = pick(empty);
    auto list = members[from];
    std::shuffle(list.begin(), list.end(), rng);
    for (std::size_t k = 0; k < list.size() / 2; ++k) genes[list[k]] = to;
  }
  return rebuild(chromosome, repair(instance, AssignmentMatrix(std::move(genes), nb)));
}

GaResult run(const ProblemInstance& instance, const BlockCostModel& model,
             const GaConfig& config) {
  config.validate();
  if (!model.ready()) throw PredictorNotReady();
  const double mutation_rate = config.mutation_rate_for(instance.n());

  Population population = initialize_population(instance, config);
  evaluate_population(population, instance, model, config.execution);

  auto best_of = [](const Population& p) {
    return static_cast<std::size_t>(std::min_element(p.begin(), p.end(), cached_less) - p.begin());
  };

  GaResult result;
  result.seed_used = config.rng_seed;
  result.best = population[best_of(population)];
  result.best_fitness = *result.best.cached_fitness;
  result.fitness_history.push_back(result.best_fitness);

  Rng rng(derive_seed(config.rng_seed, {kLoopTag}));
  std::bernoulli_distribution do_cross(config.crossover_rate);
  std::bernoulli_distribution do_regroup(config.regroup_rate);
  auto vary = [&](Chromosome c) {
    c = mutate(std::move(c), mutation_rate, instance, rng);
    if (do_regroup(rng)) c = regroup(std::move(c), instance, rng);
    return c;
  };
  const auto pop_size = static_cast<std::size_t>(config.population_size);
  int stagnant = 0;

  for (int gen = 1; gen <= config.max_generations; ++gen) {
    std::vector<std::size_t> ranked(population.size());
    std::iota(ranked.begin(), ranked.end(), 0);
    std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t x, std::size_t y) {
      return cached_less(population[x], population[y]);
    });

    Population next;
    next.reserve(pop_size);
    for (int e = 0; e < config.elitism_count; ++e) next.push_back(population[ranked[e]]);

    while (next.size() < pop_size) {
      const auto& pa = population[select(population, config, rng)];
      const auto& pb = population[select(population, config, rng)];
      std::pair<Chromosome, Chromosome> children{pa, pb};
      if (do_cross(rng)) children = crossover(pa, pb, instance, rng);
      next.push_back(vary(std::move(children.first)));
      if (next.size() < pop_size) next.push_back(vary(std::move(children.second)));
    }

    population = std::move(next);
    evaluate_population(population, instance, model, config.execution);

    const auto& gen_best = population[best_of(population)];
    if (*gen_best.cached_fitness < result.best_fitness) {
      result.best = gen_best;
      result.best_fitness = *gen_best.cached_fitness;
      stagnant = 0;
    } else {
      ++stagnant;
    }
    result.fitness_history.push_back(result.best_fitness);
    result.generations_run = gen;
    if (stagnant >= config.stagnation_limit) break;
  }

  result.recommended_block_size = recommended_block_size(result.best.assignment);
  return result;
}

BruteForceResult brute_force_optimum(const ProblemInstance& instance,
                                     const BlockCostModel& model, double budget) {
  if (!model.ready()) throw PredictorNotReady();
  const std::size_t n = instance.n();
  const std::size_t nb = instance.nb();
  const double space = std::pow(static_cast<double>(nb), static_cast<double>(n));
  if (space > budget) {
    throw ValidationError("brute_force_optimum: search space nb^n = " + std::to_string(space) +
                          " exceeds the enumeration budget " + std::to_string(budget));
  }

  const auto& lim = instance.limits();
  const auto& txs = instance.transactions();
  std::vector<std::uint32_t> genes(n, 0);
  std::vector<std::int64_t> count(nb, 0);
  std::vector<std::int64_t> bytes(nb, 0);

  std::optional<BruteForceResult> best;
  std::uint64_t evaluated = 0;
  // Lexicographic order with a strict comparison keeps the smallest vector on ties.
  for (;;) {
    std::fill(count.begin(), count.end(), 0);
    std::fill(bytes.begin(), bytes.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[genes[i]];
      bytes[genes[i]] += txs[i].size_bytes;
    }
    bool feasible = true;
    for (std::size_t j = 0; j < nb && feasible; ++j) {
      feasible = count[j] <= lim.ub && bytes[j] <= lim.cb;
    }
    if (feasible) {
      AssignmentMatrix candidate(genes, nb);
      const double f = total_processing_time(instance, candidate, model);
      ++evaluated;
      if (!best || f < best->fitness) best = BruteForceResult{std::move(candidate), f, 0};
    }

    std::size_t pos = n;
    while (pos > 0) {
      --pos;
      if (++genes[pos] < nb) break;
      genes[pos] = 0;
      if (pos == 0) {
        pos = n + 1;
        break;
      }
    }
    if (pos == n + 1 || n == 0) break;
  }
  if (!best) throw InternalError("brute_force_optimum: no feasible assignment found");
  best->evaluated = evaluated;
  return *best;
}

}  // namespace blocktune

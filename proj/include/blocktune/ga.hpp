#pragma once

// Genetic search over block-index chromosomes. Every chromosome that leaves
// an operator has been repaired, so the count and byte caps always hold and
// fitness is the plain objective with no penalty terms.

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "blocktune/model.hpp"
#include "blocktune/seed.hpp"
#include "blocktune/simulator.hpp"
#include "json.hpp"

namespace blocktune {

struct GaConfig {
  int population_size = 100;
  int max_generations = 200;
  double crossover_rate = 0.9;
  // Per-transaction rate; unset means max(2/n, 0.01).
  std::optional<double> mutation_rate;
  // Probability that a child also gets one block-level regroup move.
  double regroup_rate = 0.2;
  int tournament_size = 3;
  int elitism_count = 2;
  int stagnation_limit = 40;
  std::uint64_t rng_seed = 1;
  Execution execution = Execution::kParallel;

  double mutation_rate_for(std::size_t n) const;
  void validate() const;

  nlohmann::json to_json() const;
  // Fields absent from j keep their current values.
  void merge_json(const nlohmann::json& j);
};

struct Chromosome {
  AssignmentMatrix assignment;
  std::optional<double> cached_fitness;
};

using Population = std::vector<Chromosome>;

struct GaResult {
  Chromosome best;
  double best_fitness = 0;
  std::int64_t recommended_block_size = 0;
  std::vector<double> fitness_history;
  int generations_run = 0;
  std::uint64_t seed_used = 0;

  nlohmann::json to_json() const;
};

// Moves transactions out of blocks that break the count or byte cap: the
// largest transaction of a violating block goes to the feasible block with
// the lowest byte load. Lowest index wins every tie.
AssignmentMatrix repair(const ProblemInstance& instance, AssignmentMatrix assignment);

Population initialize_population(const ProblemInstance& instance, const GaConfig& config);

double fitness(Chromosome& chromosome, const ProblemInstance& instance,
               const BlockCostModel& model);

// Fills every missing cached_fitness. The serial and parallel paths produce
// identical populations.
void evaluate_population(Population& population, const ProblemInstance& instance,
                         const BlockCostModel& model, Execution exec);

// Tournament without replacement; lowest fitness wins, ties go to the lower
// population index. Requires an evaluated population.
std::size_t select(const Population& population, const GaConfig& config, Rng& rng);

std::pair<Chromosome, Chromosome> crossover(const Chromosome& a, const Chromosome& b,
                                            const ProblemInstance& instance, Rng& rng);

Chromosome mutate(Chromosome chromosome, double mutation_rate,
                  const ProblemInstance& instance, Rng& rng);

// Block-level move: with equal odds either dissolves one random non-empty
// block (each of its transactions moves to a random other non-empty block
// with room, or stays put), or moves a random half of a block with at least
// two transactions into an empty block.
// Single-transaction moves rarely empty a block, and the objective is driven
// by how many blocks are in use, so this gives the search a way across those
// plateaus.
Chromosome regroup(Chromosome chromosome, const ProblemInstance& instance, Rng& rng);

GaResult run(const ProblemInstance& instance, const BlockCostModel& model,
             const GaConfig& config);

inline constexpr double kDefaultEnumerationBudget = 1e7;

struct BruteForceResult {
  AssignmentMatrix assignment;
  double fitness = 0;
  std::uint64_t evaluated = 0;
};

// Exhaustive search over all nb^n block-index vectors. Throws
// ValidationError when nb^n exceeds the budget.
BruteForceResult brute_force_optimum(const ProblemInstance& instance,
                                     const BlockCostModel& model,
                                     double budget = kDefaultEnumerationBudget);

}  // namespace blocktune

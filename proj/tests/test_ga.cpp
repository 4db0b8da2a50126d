#include <algorithm>
#include <cmath>
#include <random>

#include "blocktune/error.hpp"
#include "blocktune/ga.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace blocktune;
using blocktune::testing::AnalyticStub;
using blocktune::testing::LambdaModel;
using blocktune::testing::make_instance;

namespace {

Chromosome chromo(std::vector<std::uint32_t> v, std::size_t nb) {
  return {AssignmentMatrix(std::move(v), nb), std::nullopt};
}

std::vector<std::uint32_t> random_genes(const ProblemInstance& inst, std::mt19937_64& rng) {
  std::vector<std::uint32_t> v(inst.n());
  for (auto& b : v) b = static_cast<std::uint32_t>(rng() % inst.nb());
  return v;
}

GaConfig small_config(std::uint64_t seed) {
  GaConfig c;
  c.population_size = 40;
  c.max_generations = 150;
  c.stagnation_limit = 40;
  c.rng_seed = seed;
  return c;
}

}  // namespace

TEST_CASE("GaConfig defaults, validation and JSON") {
  GaConfig c;
  CHECK(c.population_size == 100);
  CHECK(c.max_generations == 200);
  CHECK(c.crossover_rate == 0.9);
  CHECK(c.tournament_size == 3);
  CHECK(c.elitism_count == 2);
  CHECK(c.stagnation_limit == 40);
  CHECK(c.mutation_rate_for(10) == doctest::Approx(0.2));
  CHECK(c.mutation_rate_for(1000) == doctest::Approx(0.01));
  c.mutation_rate = 0.3;
  CHECK(c.mutation_rate_for(10) == 0.3);

  GaConfig bad;
  bad.population_size = 1;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = GaConfig{};
  bad.elitism_count = bad.population_size;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = GaConfig{};
  bad.crossover_rate = 1.5;
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  GaConfig merged;
  merged.merge_json({{"population_size", 12}, {"rng_seed", 99}, {"execution", "serial"}});
  CHECK(merged.population_size == 12);
  CHECK(merged.rng_seed == 99);
  CHECK(merged.execution == Execution::kSerial);
  CHECK(merged.max_generations == 200);
  CHECK_THROWS_AS(merged.merge_json({{"populaton_size", 3}}), ValidationError);
  CHECK_THROWS_AS(merged.merge_json({{"population_size", "big"}}), ValidationError);

  GaConfig round;
  round.merge_json(merged.to_json());
  CHECK(round.to_json() == merged.to_json());
}

TEST_CASE("repair") {
  SUBCASE("feasible input is returned unchanged") {
    const auto inst = make_instance({100, 200, 300}, {1e6}, {1, 2, 1000});
    const AssignmentMatrix a({0, 1, 0}, inst.nb());
    CHECK(repair(inst, a) == a);
  }
  SUBCASE("single forced move goes to the lowest-loaded other block") {
    const auto inst = make_instance({100, 100}, {1e6}, {1, 1, 1000});
    REQUIRE(inst.nb() == 3);
    const auto fixed = repair(inst, AssignmentMatrix({0, 0}, 3));
    // Equal sizes: the lower index is evicted; equal loads: the lower block wins.
    CHECK(fixed == AssignmentMatrix({1, 0}, 3));
  }
  SUBCASE("largest transaction is evicted first") {
    const auto inst = make_instance({100, 400, 200}, {1e6}, {1, 3, 600});
    const auto fixed = repair(inst, AssignmentMatrix({0, 0, 0}, inst.nb()));
    CHECK(fixed[1] != 0);
    CHECK(fixed[0] == 0);
    CHECK(fixed[2] == 0);
  }
  SUBCASE("random overloads: feasible, and only violating blocks lose members") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 500; ++trial) {
      const auto inst = testing::random_instance(rng, 1, 40, 12);
      std::vector<std::uint32_t> v(inst.n(), static_cast<std::uint32_t>(rng() % inst.nb()));
      for (auto& b : v) {
        if (rng() % 3 == 0) b = static_cast<std::uint32_t>(rng() % inst.nb());
      }
      const AssignmentMatrix before(v, inst.nb());
      const auto report = validate_assignment(inst, before);
      std::vector<bool> violating(inst.nb(), false);
      for (const auto& viol : report.violations) violating[viol.block] = true;
      const auto after = repair(inst, before);
      REQUIRE(validate_assignment(inst, after).ok());
      for (std::size_t i = 0; i < inst.n(); ++i) {
        if (after[i] != before[i]) CHECK(violating[before[i]]);
      }
    }
  }
}

TEST_CASE("initialize_population") {
  GaConfig cfg = small_config(5);
  SUBCASE("single transaction") {
    const auto inst = make_instance({50}, {1e6}, {1, 1, 100});
    for (const auto& c : initialize_population(inst, cfg)) {
      CHECK(c.assignment.n() == 1);
      CHECK(c.assignment[0] < inst.nb());
      CHECK_FALSE(c.cached_fitness.has_value());
    }
  }
  SUBCASE("same seed, same population") {
    const auto inst = make_instance({50, 60, 70, 80, 90}, {1e6}, {1, 3, 200});
    const auto a = initialize_population(inst, cfg);
    const auto b = initialize_population(inst, cfg);
    REQUIRE(a.size() == static_cast<std::size_t>(cfg.population_size));
    for (std::size_t c = 0; c < a.size(); ++c) CHECK(a[c].assignment == b[c].assignment);
    cfg.rng_seed = 6;
    const auto other = initialize_population(inst, cfg);
    bool differs = false;
    for (std::size_t c = 0; c < a.size(); ++c) differs |= !(a[c].assignment == other[c].assignment);
    CHECK(differs);
  }
  SUBCASE("always feasible on random instances") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 60; ++trial) {
      const auto inst = testing::random_instance(rng, 1, 50, 30);
      cfg.rng_seed = rng();
      for (const auto& c : initialize_population(inst, cfg)) {
        CHECK(validate_assignment(inst, c.assignment).ok());
      }
    }
  }
}

TEST_CASE("fitness memoizes the objective") {
  const auto inst = make_instance({100, 200, 300, 400}, {1e6, 3e5}, {1, 2, 1000});
  const AnalyticStub stub;
  auto c = chromo({0, 0, 1, 2}, inst.nb());
  const double f = fitness(c, inst, stub);
  CHECK(f == total_processing_time(inst, c.assignment, stub));
  REQUIRE(c.cached_fitness.has_value());
  // A planted cache value is returned as-is, proving no re-evaluation.
  c.cached_fitness = 123.0;
  CHECK(fitness(c, inst, stub) == 123.0);

  const auto bf = brute_force_optimum(inst, stub);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    auto r = Chromosome{repair(inst, AssignmentMatrix(random_genes(inst, rng), inst.nb())), {}};
    CHECK(fitness(r, inst, stub) >= bf.fitness);
  }
}

TEST_CASE("evaluate_population matches serially and in parallel") {
  std::mt19937_64 rng(23);
  const auto inst = testing::random_instance(rng, 20, 40, 20);
  const AnalyticStub stub;
  auto serial = initialize_population(inst, small_config(9));
  auto parallel = serial;
  evaluate_population(serial, inst, stub, Execution::kSerial);
  evaluate_population(parallel, inst, stub, Execution::kParallel);
  for (std::size_t c = 0; c < serial.size(); ++c) {
    CHECK(*serial[c].cached_fitness == *parallel[c].cached_fitness);
  }
}

TEST_CASE("tournament selection") {
  const auto inst = make_instance({10, 20, 30, 40, 50, 60}, {1e6}, {1, 6, 1000});
  Population pop;
  for (int c = 0; c < 10; ++c) {
    pop.push_back(chromo(std::vector<std::uint32_t>(6, static_cast<std::uint32_t>(c % inst.nb())),
                         inst.nb()));
    pop.back().cached_fitness = 10.0 - c * 0.5 + (c == 7 ? -20 : 0);
  }
  GaConfig cfg;
  Rng rng(4);

  cfg.tournament_size = static_cast<int>(pop.size());
  for (int t = 0; t < 50; ++t) CHECK(select(pop, cfg, rng) == 7);

  Population one{pop[3]};
  CHECK(select(one, cfg, rng) == 0);

  // Ties go to the lower index.
  Population tied{pop[0], pop[0], pop[0]};
  cfg.tournament_size = 3;
  CHECK(select(tied, cfg, rng) == 0);

  cfg.tournament_size = 3;
  int best_hits = 0;
  const int draws = 10000;
  for (int t = 0; t < draws; ++t) best_hits += select(pop, cfg, rng) == 7 ? 1 : 0;
  // Uniform picking would land near draws / 10; a 3-way tournament gives 3/10.
  CHECK(best_hits > 2 * draws / 10);

  Population unevaluated{chromo({0, 0, 0, 0, 0, 0}, inst.nb())};
  CHECK_THROWS_AS(select(unevaluated, cfg, rng), ValidationError);
}

TEST_CASE("crossover") {
  const auto inst = make_instance({100, 200, 300, 400, 500}, {1e6}, {1, 3, 1000});
  const auto a = chromo({0, 0, 1, 1, 2}, inst.nb());
  const auto b = chromo({2, 1, 0, 3, 3}, inst.nb());

  SUBCASE("identical parents give identical children") {
    Rng rng(1);
    const auto [x, y] = crossover(a, a, inst, rng);
    CHECK(x.assignment == a.assignment);
    CHECK(y.assignment == a.assignment);
  }
  SUBCASE("no swaps drawn leaves both parents intact") {
    const auto single = make_instance({100}, {1e6}, {1, 1, 1000});
    const auto p = chromo({0}, single.nb());
    const auto q = chromo({1}, single.nb());
    std::uint64_t seed = 0;
    for (;; ++seed) {
      Rng probe(seed);
      if (!std::bernoulli_distribution(0.5)(probe)) break;
    }
    Rng rng(seed);
    const auto [x, y] = crossover(p, q, single, rng);
    CHECK(x.assignment == p.assignment);
    CHECK(y.assignment == q.assignment);
  }
  SUBCASE("each position comes from one parent or the other") {
    const auto tight = make_instance({100, 200, 300, 400, 500}, {1e6}, {1, 5, 100000});
    Rng rng(8);
    for (int t = 0; t < 100; ++t) {
      const auto [x, y] = crossover(a, b, tight, rng);
      for (std::size_t i = 0; i < 5; ++i) {
        const bool kept = x.assignment[i] == a.assignment[i] && y.assignment[i] == b.assignment[i];
        const bool swapped =
            x.assignment[i] == b.assignment[i] && y.assignment[i] == a.assignment[i];
        CHECK((kept || swapped));
      }
    }
  }
}

TEST_CASE("mutate") {
  const auto inst = make_instance({100, 200, 300, 400}, {1e6}, {1, 2, 1000});
  auto c = chromo({0, 1, 2, 3}, inst.nb());
  c.cached_fitness = 4.0;
  Rng rng(2);
  const auto same = mutate(c, 0.0, inst, rng);
  CHECK(same.assignment == c.assignment);
  CHECK(same.cached_fitness == c.cached_fitness);

  // The smallest possible block count is two, so a full-rate mutation can move things.
  const auto pair = make_instance({100}, {1e6}, {1, 1, 1000});
  REQUIRE(pair.nb() == 2);
  auto cached = chromo({0}, 2);
  cached.cached_fitness = 1.0;
  bool moved = false;
  for (int t = 0; t < 20; ++t) {
    const auto m = mutate(cached, 1.0, pair, rng);
    if (m.assignment[0] == 1) {
      moved = true;
      CHECK_FALSE(m.cached_fitness.has_value());
    }
  }
  CHECK(moved);
}

TEST_CASE("constraint soundness over 10k operator applications") {
  std::mt19937_64 rng(2024);
  Rng op_rng(99);
  int checks = 0;
  while (checks < 10000) {
    const auto inst = testing::random_instance(rng, 1, 30, 16);
    GaConfig cfg = small_config(rng());
    cfg.population_size = 6;
    auto pop = initialize_population(inst, cfg);
    for (const auto& c : pop) {
      REQUIRE(validate_assignment(inst, c.assignment).ok());
      ++checks;
    }
    for (int round = 0; round < 20; ++round) {
      auto& a = pop[op_rng() % pop.size()];
      auto& b = pop[op_rng() % pop.size()];
      auto [x, y] = crossover(a, b, inst, op_rng);
      x = mutate(std::move(x), 0.3, inst, op_rng);
      y = regroup(std::move(y), inst, op_rng);
      const auto r = repair(inst, AssignmentMatrix(random_genes(inst, rng), inst.nb()));
      const AssignmentMatrix* produced[] = {&x.assignment, &y.assignment, &r};
      for (const auto* m : produced) {
        REQUIRE(validate_assignment(inst, *m).ok());
        ++checks;
      }
      a = std::move(x);
      b = std::move(y);
    }
  }
  CHECK(checks >= 10000);
}

TEST_CASE("brute_force_optimum") {
  SUBCASE("single transaction evaluates every block") {
    const auto inst = make_instance({100}, {1e6}, {1, 1, 1000});
    const LambdaModel stub{[](const FeatureVector& x) { return x.tx_count; },
                           [](const FeatureVector&) { return 0.0; }};
    const auto r = brute_force_optimum(inst, stub);
    CHECK(r.evaluated == inst.nb());
    CHECK(r.assignment == AssignmentMatrix({0}, inst.nb()));
    CHECK(r.fitness == 1.0);
  }
  SUBCASE("hand enumeration of a three-transaction instance") {
    // nb = 3 and ub = 2: of the 27 vectors only the 3 that pile everything
    // into one block are infeasible.
    const auto inst = make_instance({100, 200, 300}, {1e6}, {2, 2, 1000});
    REQUIRE(inst.nb() == 3);
    const LambdaModel per_block{[](const FeatureVector& x) { return 1.0 + x.tx_count; },
                                [](const FeatureVector&) { return 0.0; }};
    // Cost = non-empty blocks + 3, so any two-block split costs 5; [0,0,1]
    // is the first of those in lexicographic order.
    auto r = brute_force_optimum(inst, per_block);
    CHECK(r.evaluated == 24);
    CHECK(r.fitness == 5.0);
    CHECK(r.assignment == AssignmentMatrix({0, 0, 1}, 3));

    // Squared hundreds of bytes: 1 + 4 + 9 = 14 with singletons beats every
    // pairing (18, 20, 26); [0,1,2] is the first all-singleton vector.
    const LambdaModel squared{[](const FeatureVector& x) {
                                const double h = x.block_bytes / 100.0;
                                return h * h;
                              },
                              [](const FeatureVector&) { return 0.0; }};
    r = brute_force_optimum(inst, squared);
    CHECK(r.fitness == doctest::Approx(14.0));
    CHECK(r.assignment == AssignmentMatrix({0, 1, 2}, 3));
  }
  SUBCASE("optimum value is invariant under block relabeling") {
    const auto inst = make_instance({100, 200, 300, 400}, {1e6, 2e5}, {2, 2, 2000});
    const AnalyticStub stub;
    const auto r = brute_force_optimum(inst, stub);
    std::vector<std::uint32_t> flipped(inst.n());
    for (std::size_t i = 0; i < inst.n(); ++i) {
      flipped[i] = static_cast<std::uint32_t>(inst.nb() - 1 - r.assignment[i]);
    }
    CHECK(total_processing_time(inst, AssignmentMatrix(flipped, inst.nb()), stub) == r.fitness);
  }
  SUBCASE("budget") {
    const auto inst = make_instance(std::vector<std::int64_t>(12, 10), {1e6}, {1, 12, 1000});
    CHECK_THROWS_AS(brute_force_optimum(inst, AnalyticStub{}), ValidationError);
  }
}

TEST_CASE("run") {
  const AnalyticStub stub;
  SUBCASE("single transaction") {
    const auto inst = make_instance({100}, {1e6}, {1, 1, 1000});
    const auto r = run(inst, stub, small_config(1));
    CHECK(r.recommended_block_size == 1);
    CHECK(r.best_fitness == block_cost(inst, stub, 1, 100));
  }
  SUBCASE("result invariants and determinism") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 12; ++trial) {
      const auto inst = testing::random_instance(rng, 2, 30, 12);
      auto cfg = small_config(rng());
      const auto r = run(inst, stub, cfg);
      CHECK(validate_assignment(inst, r.best.assignment).ok());
      CHECK(r.best_fitness == total_processing_time(inst, r.best.assignment, stub));
      CHECK(r.best_fitness == *std::min_element(r.fitness_history.begin(), r.fitness_history.end()));
      CHECK(std::is_sorted(r.fitness_history.rbegin(), r.fitness_history.rend()));
      CHECK(r.fitness_history.size() == static_cast<std::size_t>(r.generations_run) + 1);
      CHECK(r.seed_used == cfg.rng_seed);
      CHECK(r.recommended_block_size == recommended_block_size(r.best.assignment));
      const auto n = static_cast<std::int64_t>(inst.n());
      const auto nb = static_cast<std::int64_t>(inst.nb());
      CHECK(r.recommended_block_size >= (n + nb - 1) / nb);
      CHECK(r.recommended_block_size <= std::min(inst.limits().ub, n));

      const auto again = run(inst, stub, cfg);
      CHECK(again.best.assignment == r.best.assignment);
      CHECK(again.fitness_history == r.fitness_history);
      cfg.execution = Execution::kSerial;
      const auto serial = run(inst, stub, cfg);
      CHECK(serial.best.assignment == r.best.assignment);
      CHECK(serial.fitness_history == r.fitness_history);
      CHECK(serial.to_json() == r.to_json());
    }
  }
  SUBCASE("near the exhaustive optimum on small instances") {
    std::mt19937_64 rng(57);
    int close = 0;
    const int runs = 40;
    for (int t = 0; t < runs; ++t) {
      const auto inst = testing::random_instance(rng, 2, 8, 5);
      const auto bf = brute_force_optimum(inst, stub);
      const auto r = run(inst, stub, small_config(rng()));
      CHECK(r.best_fitness >= bf.fitness - 1e-12);
      close += r.best_fitness <= 1.05 * bf.fitness ? 1 : 0;
    }
    CHECK(close >= 38);
  }
  SUBCASE("unfitted predictor") {
    const auto inst = make_instance({100}, {1e6}, {1, 1, 1000});
    CHECK_THROWS_AS(run(inst, testing::UnfittedModel{}, small_config(1)), PredictorNotReady);
  }
}

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "smoea/objectives.hpp"

namespace smoea {

using Genes = std::vector<std::uint8_t>;
using Rng = std::mt19937_64;

struct Individual {
  Genes genes;  // one bit per filter, 1 = retained
  ObjectiveVector objectives;
  std::size_t rank = 0;  // 1-based front index, set by sorting
  double crowding = 0.0;

  std::size_t retained() const;
};

enum class CrossoverKind { uniform, one_point };

std::string_view to_string(CrossoverKind kind);
CrossoverKind parse_crossover(std::string_view text);

struct EvolutionConfig {
  std::size_t population_size = 100;
  std::size_t elite_size = 30;
  std::size_t generations = 100;
  double crossover_prob = 1.0;
  double mutation_prob = 0.05;  // per gene
  double tau1 = 0.2;
  double tau2 = 0.8;
  std::uint64_t seed = 0;
  AlphaMode alpha_mode = AlphaMode::optimized;
  CrossoverKind crossover = CrossoverKind::uniform;
  std::size_t threads = 1;  // evaluation workers; 0 = hardware concurrency

  /// Throws invalid-argument on inconsistent settings.
  void validate() const;
};

void to_json(nlohmann::json& j, const EvolutionConfig& cfg);
void from_json(const nlohmann::json& j, EvolutionConfig& cfg);

/// Inclusive bounds on the retained-filter count of a feasible mask.
struct CountBounds {
  std::size_t min = 1;
  std::size_t max = 1;
};

/// Throws infeasible-bounds if no count in [tau1*n, tau2*n] exists.
CountBounds feasible_counts(std::size_t num_filters, double tau1, double tau2);

/// Independent generator for the (seed, a, b) stream, e.g. (seed, generation,
/// child). Streams do not depend on evaluation order or thread count.
Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

std::vector<Individual> init_population(std::size_t num_filters, const EvolutionConfig& cfg);

/// Componentwise <= with at least one strict <; both objectives minimized.
bool dominates(const ObjectiveVector& a, const ObjectiveVector& b);

/// Fronts of indices into `pop`, best first. Writes ranks back.
std::vector<std::vector<std::size_t>> fast_nondominated_sort(std::vector<Individual>& pop);

/// Crowding distance of each member of `front` (indices into `pop`).
std::vector<double> crowding_distance(const std::vector<Individual>& pop,
                                      std::span<const std::size_t> front);

/// Fills by ascending front; the straddling front is cut by descending
/// crowding, then lower filter_pct, then input order.
std::vector<Individual> select_elites(std::vector<Individual> pop, std::size_t k);

Genes repair(Genes genes, double tau1, double tau2, Rng& rng);

Genes crossover(const Genes& a, const Genes& b, CrossoverKind kind, Rng& rng);
void mutate(Genes& genes, double rate, Rng& rng);

/// Unevaluated children; child i draws from stream (seed, generation, i).
std::vector<Individual> make_children(const std::vector<Individual>& elites,
                                      const EvolutionConfig& cfg, std::size_t generation);

using Evaluator = std::function<ObjectiveVector(std::span<const std::uint8_t>)>;

struct GenerationStats {
  std::size_t generation = 0;
  double best_error = 0.0;
  double median_error = 0.0;
};

struct EvolutionResult {
  std::vector<Individual> elites;
  std::vector<Individual> front;  // rank-1 elites, unique genomes, by filter_pct
  std::vector<GenerationStats> history;
  std::size_t evaluations = 0;  // distinct genomes scored
};

/// Non-dominated members of `elites` with duplicate genomes removed, ordered
/// by ascending filter_pct.
std::vector<Individual> pareto_front(std::vector<Individual> elites);

EvolutionResult evolve(std::size_t num_filters, const Evaluator& evaluate,
                       const EvolutionConfig& cfg);
EvolutionResult evolve(const EvaluationContext& ctx, const EvolutionConfig& cfg);

/// Index into `front` of the member farthest from the chord joining the
/// extreme members, in objectives normalized over the front.
std::size_t knee_index(std::span<const Individual> front);
Individual knee_point(std::span<const Individual> front);

std::string mask_hex(std::span<const std::uint8_t> genes);
Genes genes_from_hex(std::string_view hex, std::size_t num_filters);

/// CSV with header filter_pct,error,retained_count,mask_hex.
void write_front_csv(std::ostream& out, std::span<const Individual> front);
std::vector<Individual> read_front_csv(std::istream& in, std::size_t num_filters);

nlohmann::json evolution_json(const EvolutionConfig& cfg, const EvolutionResult& result);

}  // namespace smoea

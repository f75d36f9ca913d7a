#include "smoea/evolution.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "smoea/error.hpp"

namespace smoea {

std::size_t Individual::retained() const {
  return static_cast<std::size_t>(
      std::count_if(genes.begin(), genes.end(), [](auto g) { return g != 0; }));
}

std::string_view to_string(CrossoverKind kind) {
  return kind == CrossoverKind::uniform ? "uniform" : "one-point";
}

CrossoverKind parse_crossover(std::string_view text) {
  if (text == "uniform") return CrossoverKind::uniform;
  if (text == "one-point" || text == "one_point") return CrossoverKind::one_point;
  throw Error(ErrorCode::invalid_argument, "unknown crossover '" + std::string(text) + "'");
}

void EvolutionConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::invalid_argument, what); };
  if (population_size < 2) fail("population size must be at least 2");
  if (elite_size < 2 || elite_size > population_size) {
    fail("elite size must lie in [2, population size]");
  }
  if (!(crossover_prob >= 0.0 && crossover_prob <= 1.0)) fail("crossover probability");
  if (!(mutation_prob >= 0.0 && mutation_prob <= 1.0)) fail("mutation probability");
  if (!(tau1 > 0.0 && tau1 < tau2 && tau2 <= 1.0)) fail("retention bounds need 0 < tau1 < tau2 <= 1");
}

void to_json(nlohmann::json& j, const EvolutionConfig& cfg) {
  j = nlohmann::json{{"population_size", cfg.population_size},
                     {"elite_size", cfg.elite_size},
                     {"generations", cfg.generations},
                     {"crossover_prob", cfg.crossover_prob},
                     {"mutation_prob", cfg.mutation_prob},
                     {"tau1", cfg.tau1},
                     {"tau2", cfg.tau2},
                     {"seed", cfg.seed},
                     {"alpha_mode", std::string(to_string(cfg.alpha_mode))},
                     {"crossover", std::string(to_string(cfg.crossover))},
                     {"threads", cfg.threads}};
}

void from_json(const nlohmann::json& j, EvolutionConfig& cfg) {
  EvolutionConfig d;
  cfg.population_size = j.value("population_size", d.population_size);
  cfg.elite_size = j.value("elite_size", d.elite_size);
  cfg.generations = j.value("generations", d.generations);
  cfg.crossover_prob = j.value("crossover_prob", d.crossover_prob);
  cfg.mutation_prob = j.value("mutation_prob", d.mutation_prob);
  cfg.tau1 = j.value("tau1", d.tau1);
  cfg.tau2 = j.value("tau2", d.tau2);
  cfg.seed = j.value("seed", d.seed);
  cfg.alpha_mode = parse_alpha_mode(j.value("alpha_mode", std::string("optimized")));
  cfg.crossover = parse_crossover(j.value("crossover", std::string("uniform")));
  cfg.threads = j.value("threads", d.threads);
}

CountBounds feasible_counts(std::size_t num_filters, double tau1, double tau2) {
  // Small slack so that e.g. 0.7 * 10 counts as exactly 7.
  constexpr double slack = 1e-9;
  const double n = static_cast<double>(num_filters);
  const auto lo = static_cast<std::size_t>(std::max(0.0, std::ceil(tau1 * n - slack)));
  const auto hi = static_cast<std::size_t>(std::max(0.0, std::floor(tau2 * n + slack)));
  CountBounds bounds{std::max<std::size_t>(1, lo), std::min(hi, num_filters)};
  if (bounds.min > bounds.max) {
    throw Error(ErrorCode::infeasible_bounds,
                "no retained count of " + std::to_string(num_filters) + " filters lies in [" +
                    std::to_string(tau1) + ", " + std::to_string(tau2) + "]");
  }
  return bounds;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Picks `count` distinct positions among those where genes[i] == value.
void flip_random(Genes& genes, std::uint8_t value, std::size_t count, Rng& rng) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < genes.size(); ++i) {
    if (genes[i] == value) candidates.push_back(i);
  }
  for (std::size_t k = 0; k < count && k < candidates.size(); ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, candidates.size() - 1);
    std::swap(candidates[k], candidates[pick(rng)]);
    genes[candidates[k]] = value ? 0 : 1;
  }
}

template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

}  // namespace

Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return Rng(splitmix64(splitmix64(splitmix64(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL)));
}

std::vector<Individual> init_population(std::size_t num_filters, const EvolutionConfig& cfg) {
  if (num_filters < 2) {
    throw Error(ErrorCode::invalid_argument, "a layer needs at least 2 filters to prune");
  }
  const CountBounds bounds = feasible_counts(num_filters, cfg.tau1, cfg.tau2);
  std::vector<Individual> pop(cfg.population_size);
  for (std::size_t i = 0; i < pop.size(); ++i) {
    Rng rng = stream(cfg.seed, 0, i);
    // Retention drawn uniformly over the feasible counts.
    std::uniform_int_distribution<std::size_t> count(bounds.min, bounds.max);
    Genes genes(num_filters, 0);
    flip_random(genes, 0, count(rng), rng);
    pop[i].genes = std::move(genes);
  }
  return pop;
}

bool dominates(const ObjectiveVector& a, const ObjectiveVector& b) {
  return a.filter_pct <= b.filter_pct && a.error <= b.error &&
         (a.filter_pct < b.filter_pct || a.error < b.error);
}

std::vector<std::vector<std::size_t>> fast_nondominated_sort(std::vector<Individual>& pop) {
  const std::size_t n = pop.size();
  std::vector<std::vector<std::size_t>> dominated(n);
  std::vector<std::size_t> domination_count(n, 0);
  std::vector<std::vector<std::size_t>> fronts(1);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = p + 1; q < n; ++q) {
      if (dominates(pop[p].objectives, pop[q].objectives)) {
        dominated[p].push_back(q);
        ++domination_count[q];
      } else if (dominates(pop[q].objectives, pop[p].objectives)) {
        dominated[q].push_back(p);
        ++domination_count[p];
      }
    }
  }
  for (std::size_t p = 0; p < n; ++p) {
    if (domination_count[p] == 0) fronts[0].push_back(p);
  }
  for (std::size_t f = 0; !fronts[f].empty(); ++f) {
    std::vector<std::size_t> next;
    for (std::size_t p : fronts[f]) {
      pop[p].rank = f + 1;
      for (std::size_t q : dominated[p]) {
        if (--domination_count[q] == 0) next.push_back(q);
      }
    }
    std::sort(next.begin(), next.end());
    fronts.push_back(std::move(next));
  }
  fronts.pop_back();
  return fronts;
}

std::vector<double> crowding_distance(const std::vector<Individual>& pop,
                                      std::span<const std::size_t> front) {
  const std::size_t m = front.size();
  std::vector<double> distance(m, 0.0);
  if (m <= 2) {
    std::fill(distance.begin(), distance.end(), std::numeric_limits<double>::infinity());
    return distance;
  }
  std::vector<std::size_t> order(m);
  for (int objective = 0; objective < 2; ++objective) {
    auto value = [&](std::size_t k) {
      const ObjectiveVector& o = pop[front[k]].objectives;
      return objective == 0 ? o.filter_pct : o.error;
    };
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return value(a) < value(b); });
    distance[order.front()] = std::numeric_limits<double>::infinity();
    distance[order.back()] = std::numeric_limits<double>::infinity();
    const double range = value(order.back()) - value(order.front());
    if (range <= 0.0) continue;
    for (std::size_t k = 1; k + 1 < m; ++k) {
      distance[order[k]] += (value(order[k + 1]) - value(order[k - 1])) / range;
    }
  }
  return distance;
}

std::vector<Individual> select_elites(std::vector<Individual> pop, std::size_t k) {
  if (pop.size() < k) {
    throw Error(ErrorCode::invalid_argument, "population smaller than elite size");
  }
  const auto fronts = fast_nondominated_sort(pop);
  std::vector<Individual> elites;
  elites.reserve(k);
  for (const auto& front : fronts) {
    const std::vector<double> crowd = crowding_distance(pop, front);
    for (std::size_t i = 0; i < front.size(); ++i) pop[front[i]].crowding = crowd[i];
    if (elites.size() + front.size() <= k) {
      for (std::size_t idx : front) elites.push_back(pop[idx]);
      if (elites.size() == k) break;
      continue;
    }
    std::vector<std::size_t> order(front.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (crowd[a] != crowd[b]) return crowd[a] > crowd[b];
      return pop[front[a]].objectives.filter_pct < pop[front[b]].objectives.filter_pct;
    });
    for (std::size_t i = 0; elites.size() < k; ++i) elites.push_back(pop[front[order[i]]]);
    break;
  }
  return elites;
}

Genes repair(Genes genes, double tau1, double tau2, Rng& rng) {
  const CountBounds bounds = feasible_counts(genes.size(), tau1, tau2);
  const std::size_t kept = static_cast<std::size_t>(
      std::count_if(genes.begin(), genes.end(), [](auto g) { return g != 0; }));
  for (auto& g : genes) g = g != 0 ? 1 : 0;
  if (kept > bounds.max) {
    flip_random(genes, 1, kept - bounds.max, rng);
  } else if (kept < bounds.min) {
    flip_random(genes, 0, bounds.min - kept, rng);
  }
  return genes;
}

Genes crossover(const Genes& a, const Genes& b, CrossoverKind kind, Rng& rng) {
  Genes child = a;
  if (kind == CrossoverKind::uniform) {
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < child.size(); ++i) {
      if (coin(rng)) child[i] = b[i];
    }
  } else if (child.size() > 1) {
    std::uniform_int_distribution<std::size_t> cut_at(1, child.size() - 1);
    const std::size_t cut = cut_at(rng);
    std::copy(b.begin() + static_cast<std::ptrdiff_t>(cut), b.end(),
              child.begin() + static_cast<std::ptrdiff_t>(cut));
  }
  return child;
}

void mutate(Genes& genes, double rate, Rng& rng) {
  if (rate <= 0.0) return;
  std::bernoulli_distribution flip(rate);
  for (auto& g : genes) {
    if (flip(rng)) g = g != 0 ? 0 : 1;
  }
}

std::vector<Individual> make_children(const std::vector<Individual>& elites,
                                      const EvolutionConfig& cfg, std::size_t generation) {
  if (elites.size() < 2) {
    throw Error(ErrorCode::degenerate_elite, "need at least two elites to breed");
  }
  std::vector<Individual> children(cfg.population_size);
  for (std::size_t i = 0; i < children.size(); ++i) {
    Rng rng = stream(cfg.seed, generation, i);
    std::uniform_int_distribution<std::size_t> first(0, elites.size() - 1);
    std::uniform_int_distribution<std::size_t> second(0, elites.size() - 2);
    const std::size_t p1 = first(rng);
    std::size_t p2 = second(rng);
    if (p2 >= p1) ++p2;
    std::bernoulli_distribution do_cross(cfg.crossover_prob);
    Genes genes = do_cross(rng)
                      ? crossover(elites[p1].genes, elites[p2].genes, cfg.crossover, rng)
                      : elites[p1].genes;
    mutate(genes, cfg.mutation_prob, rng);
    children[i].genes = repair(std::move(genes), cfg.tau1, cfg.tau2, rng);
  }
  return children;
}

std::vector<Individual> pareto_front(std::vector<Individual> elites) {
  const auto fronts = fast_nondominated_sort(elites);
  std::vector<Individual> front;
  if (fronts.empty()) return front;
  std::map<Genes, bool> seen;
  for (std::size_t idx : fronts.front()) {
    if (seen.emplace(elites[idx].genes, true).second) front.push_back(elites[idx]);
  }
  std::stable_sort(front.begin(), front.end(), [](const Individual& a, const Individual& b) {
    if (a.objectives.filter_pct != b.objectives.filter_pct) {
      return a.objectives.filter_pct < b.objectives.filter_pct;
    }
    return a.objectives.error < b.objectives.error;
  });
  return front;
}

EvolutionResult evolve(std::size_t num_filters, const Evaluator& evaluate,
                       const EvolutionConfig& cfg) {
  cfg.validate();
  const CountBounds bounds = feasible_counts(num_filters, cfg.tau1, cfg.tau2);
  EvolutionResult result;
  std::map<Genes, ObjectiveVector> cache;

  auto score = [&](std::vector<Individual>& group) {
    std::vector<const Genes*> pending;
    std::map<Genes, bool> queued;
    for (const Individual& ind : group) {
      const std::size_t kept = ind.retained();
      if (kept < bounds.min || kept > bounds.max) {
        throw Error(ErrorCode::infeasible_mask, "individual violates the retention bounds");
      }
      if (!cache.count(ind.genes) && queued.emplace(ind.genes, true).second) {
        pending.push_back(&ind.genes);
      }
    }
    std::vector<ObjectiveVector> scored(pending.size());
    parallel_for(pending.size(), cfg.threads,
                 [&](std::size_t i) { scored[i] = evaluate(*pending[i]); });
    for (std::size_t i = 0; i < pending.size(); ++i) cache.emplace(*pending[i], scored[i]);
    result.evaluations += pending.size();
    for (Individual& ind : group) ind.objectives = cache.at(ind.genes);
  };

  auto record = [&](std::size_t generation) {
    std::vector<double> errors;
    for (const Individual& e : result.elites) errors.push_back(e.objectives.error);
    result.history.push_back(GenerationStats{
        generation, *std::min_element(errors.begin(), errors.end()), median(errors)});
  };

  std::vector<Individual> pop = init_population(num_filters, cfg);
  score(pop);
  result.elites = select_elites(std::move(pop), cfg.elite_size);
  record(0);

  for (std::size_t t = 1; t <= cfg.generations; ++t) {
    std::vector<Individual> children = make_children(result.elites, cfg, t);
    score(children);
    children.insert(children.end(), result.elites.begin(), result.elites.end());
    result.elites = select_elites(std::move(children), cfg.elite_size);
    record(t);
  }
  result.front = pareto_front(result.elites);
  return result;
}

EvolutionResult evolve(const EvaluationContext& ctx, const EvolutionConfig& cfg) {
  if (ctx.alpha_mode != cfg.alpha_mode) {
    throw Error(ErrorCode::invalid_argument,
                "evaluation context and evolution config disagree on alpha mode");
  }
  return evolve(
      ctx.sub.first.out_channels,
      [&ctx](std::span<const std::uint8_t> genes) { return evaluate_individual(ctx, genes); },
      cfg);
}

std::size_t knee_index(std::span<const Individual> front) {
  if (front.empty()) throw Error(ErrorCode::empty_front, "knee point of an empty front");

  auto better = [&](std::size_t a, std::size_t b) {
    const ObjectiveVector& x = front[a].objectives;
    const ObjectiveVector& y = front[b].objectives;
    if (x.filter_pct != y.filter_pct) return x.filter_pct < y.filter_pct;
    return x.error < y.error;
  };
  std::size_t smallest = 0;
  for (std::size_t i = 1; i < front.size(); ++i) {
    if (better(i, smallest)) smallest = i;
  }
  if (front.size() <= 2) return smallest;

  double f_lo = std::numeric_limits<double>::infinity(), f_hi = -f_lo;
  double e_lo = f_lo, e_hi = -f_lo;
  for (const Individual& ind : front) {
    f_lo = std::min(f_lo, ind.objectives.filter_pct);
    f_hi = std::max(f_hi, ind.objectives.filter_pct);
    e_lo = std::min(e_lo, ind.objectives.error);
    e_hi = std::max(e_hi, ind.objectives.error);
  }
  auto norm = [](double v, double lo, double hi) { return hi > lo ? (v - lo) / (hi - lo) : 0.0; };
  std::vector<double> xs(front.size()), ys(front.size());
  for (std::size_t i = 0; i < front.size(); ++i) {
    xs[i] = norm(front[i].objectives.filter_pct, f_lo, f_hi);
    ys[i] = norm(front[i].objectives.error, e_lo, e_hi);
  }
  // Endpoints: fewest filters, and lowest error.
  std::size_t a = 0, b = 0;
  for (std::size_t i = 1; i < front.size(); ++i) {
    if (xs[i] < xs[a] || (xs[i] == xs[a] && ys[i] < ys[a])) a = i;
    if (ys[i] < ys[b] || (ys[i] == ys[b] && xs[i] < xs[b])) b = i;
  }
  const double dx = xs[b] - xs[a], dy = ys[b] - ys[a];
  const double length = std::hypot(dx, dy);
  if (length == 0.0) return smallest;

  constexpr double tie = 1e-12;
  std::size_t best = 0;
  double best_distance = -1.0;
  for (std::size_t i = 0; i < front.size(); ++i) {
    const double d = std::abs(dx * (ys[i] - ys[a]) - dy * (xs[i] - xs[a])) / length;
    if (d > best_distance + tie || (std::abs(d - best_distance) <= tie && better(i, best))) {
      best = i;
      best_distance = std::max(d, best_distance);
    }
  }
  return best;
}

Individual knee_point(std::span<const Individual> front) { return front[knee_index(front)]; }

std::string mask_hex(std::span<const std::uint8_t> genes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  for (std::size_t byte = 0; byte * 8 < genes.size(); ++byte) {
    unsigned value = 0;
    for (std::size_t bit = 0; bit < 8 && byte * 8 + bit < genes.size(); ++bit) {
      if (genes[byte * 8 + bit] != 0) value |= 1u << bit;
    }
    out.push_back(digits[value >> 4]);
    out.push_back(digits[value & 0xf]);
  }
  return out;
}

Genes genes_from_hex(std::string_view hex, std::size_t num_filters) {
  if (hex.size() != 2 * ((num_filters + 7) / 8)) {
    throw Error(ErrorCode::corrupt_data, "mask hex length does not match filter count");
  }
  auto nibble = [](char c) -> unsigned {
    if (c >= '0' && c <= '9') return static_cast<unsigned>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<unsigned>(c - 'a' + 10);
    if (c >= 'A' && c <= 'F') return static_cast<unsigned>(c - 'A' + 10);
    throw Error(ErrorCode::corrupt_data, "bad hex digit in mask");
  };
  Genes genes(num_filters, 0);
  for (std::size_t byte = 0; byte < hex.size() / 2; ++byte) {
    const unsigned value = nibble(hex[2 * byte]) << 4 | nibble(hex[2 * byte + 1]);
    for (std::size_t bit = 0; bit < 8; ++bit) {
      const std::size_t i = byte * 8 + bit;
      const bool set = (value >> bit) & 1u;
      if (i < num_filters) {
        genes[i] = set ? 1 : 0;
      } else if (set) {
        throw Error(ErrorCode::corrupt_data, "mask hex sets bits past the filter count");
      }
    }
  }
  return genes;
}

void write_front_csv(std::ostream& out, std::span<const Individual> front) {
  out << "filter_pct,error,retained_count,mask_hex\n";
  std::ostringstream line;
  line << std::setprecision(17);
  for (const Individual& ind : front) {
    line.str("");
    line << ind.objectives.filter_pct << ',' << ind.objectives.error << ',' << ind.retained()
         << ',' << mask_hex(ind.genes) << '\n';
    out << line.str();
  }
}

std::vector<Individual> read_front_csv(std::istream& in, std::size_t num_filters) {
  std::string line;
  if (!std::getline(in, line) || line != "filter_pct,error,retained_count,mask_hex") {
    throw Error(ErrorCode::corrupt_data, "front CSV header missing");
  }
  std::vector<Individual> front;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string f, e, k, hex;
    if (!std::getline(row, f, ',') || !std::getline(row, e, ',') ||
        !std::getline(row, k, ',') || !std::getline(row, hex)) {
      throw Error(ErrorCode::corrupt_data, "front CSV row has too few fields");
    }
    Individual ind;
    try {
      ind.objectives = {std::stod(f), std::stod(e)};
      ind.genes = genes_from_hex(hex, num_filters);
      if (std::stoul(k) != ind.retained()) {
        throw Error(ErrorCode::corrupt_data, "retained_count disagrees with mask");
      }
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::corrupt_data, "unparsable front CSV row: " + line);
    }
    ind.rank = 1;
    front.push_back(std::move(ind));
  }
  return front;
}

nlohmann::json evolution_json(const EvolutionConfig& cfg, const EvolutionResult& result) {
  nlohmann::json history = nlohmann::json::array();
  for (const GenerationStats& s : result.history) {
    history.push_back({{"generation", s.generation},
                       {"best_error", s.best_error},
                       {"median_error", s.median_error}});
  }
  nlohmann::json front = nlohmann::json::array();
  for (const Individual& ind : result.front) {
    front.push_back({{"filter_pct", ind.objectives.filter_pct},
                     {"error", ind.objectives.error},
                     {"retained_count", ind.retained()},
                     {"mask_hex", mask_hex(ind.genes)}});
  }
  nlohmann::json doc{{"config", cfg},
                     {"history", std::move(history)},
                     {"front", std::move(front)},
                     {"evaluations", result.evaluations}};
  doc["knee_index"] = result.front.empty() ? nlohmann::json(nullptr)
                                           : nlohmann::json(knee_index(result.front));
  return doc;
}

}  // namespace smoea

#include "smoea/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "smoea/error.hpp"

namespace smoea {

using nlohmann::json;

void to_json(json& j, const GroupPlan& plan) {
  j = json{{"l0", plan.l0}, {"block_counts", plan.block_counts}};
}

void from_json(const json& j, GroupPlan& plan) {
  plan.l0 = j.value("l0", std::size_t{1});
  plan.block_counts = j.value("block_counts", std::vector<std::size_t>{});
}

std::vector<std::vector<std::size_t>> group_layers(const GroupPlan& plan,
                                                   std::size_t conv_count) {
  if (plan.l0 < 1) throw Error(ErrorCode::invalid_plan, "l0 must be at least 1");
  std::vector<std::vector<std::size_t>> groups;
  std::size_t next = plan.l0;
  for (std::size_t g = 0; g < plan.block_counts.size(); ++g) {
    const std::size_t blocks = plan.block_counts[g];
    if (blocks == 0) {
      throw Error(ErrorCode::invalid_plan, "group " + std::to_string(g + 1) + " is empty");
    }
    if (next + blocks - 1 > conv_count) {
      throw Error(ErrorCode::invalid_plan,
                  "group " + std::to_string(g + 1) + " runs past conv " +
                      std::to_string(conv_count));
    }
    std::vector<std::size_t> group(blocks);
    std::iota(group.begin(), group.end(), next);
    next += blocks;
    groups.push_back(std::move(group));
  }
  return groups;
}

FineTuneConfig FineTuneConfig::full_schedule() {
  FineTuneConfig cfg;
  cfg.lr = 0.01;
  cfg.epochs = 160;
  cfg.milestones = {50, 100};
  return cfg;
}

void FineTuneConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::invalid_argument, what); };
  if (!(lr > 0.0)) fail("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
  if (batch_size == 0) fail("batch size must be positive");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (i > 0 && milestones[i] <= milestones[i - 1]) fail("milestones must strictly increase");
    if (epochs > 0 && milestones[i] >= epochs) fail("milestones must be below the epoch count");
  }
}

void to_json(json& j, const FineTuneConfig& cfg) {
  j = json{{"lr", cfg.lr},
           {"epochs", cfg.epochs},
           {"milestones", cfg.milestones},
           {"batch_size", cfg.batch_size},
           {"momentum", cfg.momentum},
           {"weight_decay", cfg.weight_decay},
           {"seed", cfg.seed}};
}

void from_json(const json& j, FineTuneConfig& cfg) {
  FineTuneConfig d;
  if (j.value("profile", std::string()) == "full") d = FineTuneConfig::full_schedule();
  cfg.lr = j.value("lr", d.lr);
  cfg.epochs = j.value("epochs", d.epochs);
  cfg.milestones = j.value("milestones", d.milestones);
  cfg.batch_size = j.value("batch_size", d.batch_size);
  cfg.momentum = j.value("momentum", d.momentum);
  cfg.weight_decay = j.value("weight_decay", d.weight_decay);
  cfg.seed = j.value("seed", d.seed);
}

double learning_rate_at(const FineTuneConfig& cfg, std::size_t epoch) {
  double lr = cfg.lr;
  for (std::size_t m : cfg.milestones) {
    if (epoch >= m) lr /= 10.0;
  }
  return lr;
}

FineTuneResult finetune(Network net, const Dataset& train, const FineTuneConfig& cfg) {
  cfg.validate();
  if (train.size() == 0) throw Error(ErrorCode::invalid_data, "fine-tuning on an empty dataset");
  FineTuneResult result{std::move(net), {}};
  if (cfg.epochs == 0) return result;

  std::vector<std::vector<double>> velocity(result.net.parameter_views().size());
  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng = stream(cfg.seed, 0xf17e, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    const SgdOptions sgd{learning_rate_at(cfg, epoch), cfg.momentum, cfg.weight_decay};
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const Dataset batch =
          subset(train, std::span<const std::size_t>(order.data() + start, end - start));
      const ForwardTrace trace = forward_trace(result.net, batch.images);
      const LossResult loss = softmax_cross_entropy(trace.logits, batch.labels);
      const auto grads = backward(result.net, trace, loss.grad_logits);
      auto views = result.net.parameter_views();
      for (std::size_t p = 0; p < views.size(); ++p) {
        sgd_update(views[p], grads[p], sgd, velocity[p]);
      }
      loss_sum += loss.loss;
      ++batches;
    }
    result.epoch_losses.push_back(loss_sum / static_cast<double>(batches));
  }
  return result;
}

double evaluate_accuracy(const Network& net, const Dataset& data) {
  if (data.size() == 0) throw Error(ErrorCode::invalid_data, "accuracy of an empty split");
  constexpr std::size_t chunk = 128;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t end = std::min(data.size(), start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Dataset batch = subset(data, idx);
    const Tensor logits = forward(net, batch.images).logits;
    const std::size_t classes = logits.dim(1);
    for (std::size_t n = 0; n < batch.size(); ++n) {
      const double* row = logits.data() + n * classes;
      const auto best = static_cast<int>(std::max_element(row, row + classes) - row);
      correct += best == batch.labels[n] ? 1 : 0;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::random: return "rand";
    case Criterion::l2: return "l2";
    case Criterion::fpgm: return "fpgm";
  }
  return "unknown";
}

Criterion parse_criterion(std::string_view text) {
  if (text == "rand" || text == "random") return Criterion::random;
  if (text == "l2") return Criterion::l2;
  if (text == "fpgm") return Criterion::fpgm;
  throw Error(ErrorCode::invalid_argument,
              "criterion must be rand, l2 or fpgm, got '" + std::string(text) + "'");
}

std::size_t baseline_keep_count(std::size_t filters, double retain_fraction) {
  if (!(retain_fraction > 0.0 && retain_fraction <= 1.0)) {
    throw Error(ErrorCode::invalid_argument, "retain fraction must lie in (0, 1]");
  }
  const auto keep = static_cast<std::size_t>(std::llround(retain_fraction * double(filters)));
  return std::clamp<std::size_t>(keep, 1, filters);
}

FilterMask baseline_mask(const ConvParams& conv, std::size_t ordinal, double retain_fraction,
                         Criterion criterion, Rng& rng) {
  const std::size_t n = conv.out_channels;
  const std::size_t keep = baseline_keep_count(n, retain_fraction);
  FilterMask mask = FilterMask::full(ordinal, n);
  if (keep == n) return mask;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (criterion == Criterion::random) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = keep; i < n; ++i) mask.bits[order[i]] = 0;
    return mask;
  }

  const std::size_t slice = conv.weights.size() / n;
  auto filter = [&](std::size_t f) { return conv.weights.data() + f * slice; };
  std::vector<double> score(n, 0.0);
  if (criterion == Criterion::l2) {
    for (std::size_t f = 0; f < n; ++f) {
      double acc = 0.0;
      for (std::size_t k = 0; k < slice; ++k) acc += filter(f)[k] * filter(f)[k];
      score[f] = std::sqrt(acc);
    }
  } else {
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        double acc = 0.0;
        for (std::size_t k = 0; k < slice; ++k) {
          const double d = filter(a)[k] - filter(b)[k];
          acc += d * d;
        }
        score[a] += std::sqrt(acc);
        score[b] += std::sqrt(acc);
      }
    }
  }
  // Lowest score is pruned first; stable sort keeps lower indices first on ties.
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  for (std::size_t i = 0; i < n - keep; ++i) mask.bits[order[i]] = 0;
  return mask;
}

std::map<std::size_t, std::size_t> PruneReport::retained_counts() const {
  std::map<std::size_t, std::size_t> out;
  for (const LayerRecord& r : layers) out[r.ordinal] = r.retained;
  return out;
}

json to_json(const PruneReport& report) {
  json layers = json::array();
  for (const LayerRecord& r : report.layers) {
    json front = json::array();
    for (const Individual& ind : r.front) {
      front.push_back({{"filter_pct", ind.objectives.filter_pct},
                       {"error", ind.objectives.error},
                       {"retained_count", ind.retained()},
                       {"mask_hex", mask_hex(ind.genes)}});
    }
    json history = json::array();
    for (const GenerationStats& s : r.history) {
      history.push_back({{"generation", s.generation},
                         {"best_error", s.best_error},
                         {"median_error", s.median_error}});
    }
    layers.push_back({{"ordinal", r.ordinal},
                      {"group", r.group},
                      {"sequence", r.sequence},
                      {"filters", r.filters},
                      {"retained", r.retained},
                      {"retained_rate", r.retained_rate()},
                      {"filter_pct", r.chosen.filter_pct},
                      {"error", r.chosen.error},
                      {"mask_hex", mask_hex(r.mask.bits)},
                      {"front", std::move(front)},
                      {"history", std::move(history)}});
  }
  json stages = json::array();
  for (const StageRecord& s : report.stages) {
    stages.push_back({{"group", s.group},
                      {"sequence", s.sequence},
                      {"layers", s.layers},
                      {"accuracy_before_finetune", s.accuracy_before_finetune},
                      {"accuracy_after_finetune", s.accuracy_after_finetune},
                      {"params", s.params},
                      {"flops", s.flops},
                      {"finetune_losses", s.finetune_losses}});
  }
  return json{{"method", report.method},
              {"params_before", report.params_before},
              {"params_after", report.params_after},
              {"remained_params", report.remained_params()},
              {"flops_before", report.flops_before},
              {"flops_after", report.flops_after},
              {"accuracy_before", report.accuracy_before},
              {"accuracy_after", report.accuracy_after},
              {"layers", std::move(layers)},
              {"stages", std::move(stages)}};
}

Dataset calibration_batch(const Dataset& train, std::size_t size, std::uint64_t seed) {
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = stream(seed, 0xca1b, 0);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(size, order.size()));
  return subset(train, order);
}

namespace {

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  return stream(seed, tag, index)();
}

std::size_t closest_to(std::span<const Individual> front, double target) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < front.size(); ++i) {
    const double d = std::abs(front[i].objectives.filter_pct - target);
    const double b = std::abs(front[best].objectives.filter_pct - target);
    if (d < b || (d == b && front[i].objectives.error < front[best].objectives.error)) best = i;
  }
  return best;
}

// Chooses a mask for conv `ordinal` of `working` given its block input maps.
using MaskPicker = std::function<FilterMask(const Network& working, std::size_t ordinal,
                                            const Tensor& map, LayerRecord& record)>;

PruneOutcome run_schedule(const Network& net, const DatasetSplit& data, const GroupPlan& plan,
                          const FineTuneConfig& ft, const Dataset& calibration,
                          const MaskPicker& pick, std::string method) {
  const auto groups = group_layers(plan, net.conv_count());
  PruneOutcome out{net, {}};
  PruneReport& report = out.report;
  report.method = std::move(method);
  report.params_before = count_params(net);
  report.flops_before = count_flops(net);
  report.accuracy_before = evaluate_accuracy(net, data.test);
  std::size_t sequence = 0;

  for (std::size_t g = groups.size(); g-- > 0;) {
    Network working = out.net;
    std::map<std::size_t, FilterMask> masks;
    for (std::size_t ordinal : groups[g]) {
      const Tensor map = forward(working, calibration.images, {ordinal}).captured.at(ordinal);
      LayerRecord record;
      record.ordinal = ordinal;
      record.group = g + 1;
      record.filters = working.conv(ordinal).out_channels;
      FilterMask mask = pick(working, ordinal, map, record);
      record.retained = mask.retained();
      record.mask = mask;
      record.sequence = ++sequence;
      working = apply_mask(working, mask);
      masks.emplace(ordinal, std::move(mask));
      report.layers.push_back(std::move(record));
    }
    StageRecord stage;
    stage.group = g + 1;
    stage.layers = groups[g];
    stage.accuracy_before_finetune = evaluate_accuracy(working, data.test);
    FineTuneConfig group_ft = ft;
    group_ft.seed = derived_seed(ft.seed, 0x9f, g);
    FineTuneResult tuned = finetune(compact(working, masks), data.train, group_ft);
    out.net = std::move(tuned.net);
    stage.finetune_losses = std::move(tuned.epoch_losses);
    stage.accuracy_after_finetune = evaluate_accuracy(out.net, data.test);
    stage.params = count_params(out.net);
    stage.flops = count_flops(out.net);
    stage.sequence = ++sequence;
    report.stages.push_back(std::move(stage));
  }
  report.params_after = count_params(out.net);
  report.flops_after = count_flops(out.net);
  report.accuracy_after =
      report.stages.empty() ? report.accuracy_before : report.stages.back().accuracy_after_finetune;
  return out;
}

}  // namespace

PruneOutcome smoea_prune(const Network& net, const DatasetSplit& data, const GroupPlan& plan,
                         const SmoeaOptions& options) {
  options.evolution.validate();
  options.finetune.validate();
  const Dataset calibration =
      calibration_batch(data.train, options.calibration_size, options.calibration_seed);
  auto pick = [&](const Network& working, std::size_t ordinal, const Tensor& map,
                  LayerRecord& record) {
    EvolutionConfig cfg = options.evolution;
    cfg.seed = derived_seed(options.evolution.seed, 0xe0, ordinal);
    const EvaluationContext ctx =
        make_context(extract_subnetwork(working, ordinal), map, cfg.alpha_mode);
    EvolutionResult result = evolve(ctx, cfg);
    const std::size_t chosen =
        options.selection.target_retention
            ? closest_to(result.front, *options.selection.target_retention)
            : knee_index(result.front);
    record.chosen = result.front[chosen].objectives;
    FilterMask mask{ordinal, result.front[chosen].genes};
    record.front = std::move(result.front);
    record.history = std::move(result.history);
    return mask;
  };
  return run_schedule(net, data, plan, options.finetune, calibration, pick, "smoea");
}

PruneOutcome baseline_prune(const Network& net, const DatasetSplit& data, const GroupPlan& plan,
                            const std::map<std::size_t, std::size_t>& keep, Criterion criterion,
                            const FineTuneConfig& finetune_cfg, std::uint64_t seed) {
  finetune_cfg.validate();
  const Dataset calibration = calibration_batch(data.train, 128, seed);
  auto pick = [&](const Network& working, std::size_t ordinal, const Tensor& map,
                  LayerRecord& record) {
    const ConvParams& conv = working.conv(ordinal);
    auto it = keep.find(ordinal);
    if (it == keep.end()) {
      throw Error(ErrorCode::invalid_plan,
                  "no retained count given for conv " + std::to_string(ordinal));
    }
    Rng rng = stream(seed, 0xba5e, ordinal);
    const double fraction =
        static_cast<double>(it->second) / static_cast<double>(conv.out_channels);
    FilterMask mask = baseline_mask(conv, ordinal, fraction, criterion, rng);
    // Reconstruction error of the chosen mask, for comparison with evolved ones.
    const EvaluationContext ctx =
        make_context(extract_subnetwork(working, ordinal), map, AlphaMode::optimized);
    record.chosen = evaluate_individual(ctx, mask);
    return mask;
  };
  return run_schedule(net, data, plan, finetune_cfg, calibration, pick,
                      std::string(to_string(criterion)));
}

double solve_uniform_retention(const Network& net, const std::vector<std::size_t>& layers,
                               double target_fraction) {
  if (!(target_fraction > 0.0 && target_fraction <= 1.0)) {
    throw Error(ErrorCode::invalid_argument, "target parameter fraction must lie in (0, 1]");
  }
  const double total = static_cast<double>(count_params(net));
  auto ratio = [&](double fraction) {
    std::map<std::size_t, FilterMask> masks;
    for (std::size_t l : layers) {
      const std::size_t n = net.conv(l).out_channels;
      FilterMask m{l, std::vector<std::uint8_t>(n, 0)};
      std::fill_n(m.bits.begin(), baseline_keep_count(n, fraction), 1);
      masks.emplace(l, std::move(m));
    }
    return static_cast<double>(count_params(compact(net, masks))) / total;
  };
  double lo = 1e-6, hi = 1.0;
  if (ratio(hi) <= target_fraction) return hi;
  for (int iter = 0; iter < 60; ++iter) {
    const double mid = 0.5 * (lo + hi);
    (ratio(mid) >= target_fraction ? hi : lo) = mid;
  }
  return std::abs(ratio(lo) - target_fraction) < std::abs(ratio(hi) - target_fraction) ? lo : hi;
}

std::vector<SweepRow> sweep_uniform_retention(const Network& net, const DatasetSplit& data,
                                              const GroupPlan& plan,
                                              const std::vector<double>& fractions,
                                              const SmoeaOptions& options) {
  std::vector<SweepRow> rows;
  for (double fraction : fractions) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
      throw Error(ErrorCode::invalid_argument, "sweep fractions must lie in (0, 1]");
    }
    if (fraction == 1.0) {
      rows.push_back({1.0, 1.0, evaluate_accuracy(net, data.test)});
      continue;
    }
    SmoeaOptions opts = options;
    opts.selection.target_retention = fraction;
    const PruneOutcome outcome = smoea_prune(net, data, plan, opts);
    rows.push_back({fraction, outcome.report.remained_params(), outcome.report.accuracy_after});
  }
  return rows;
}

}  // namespace smoea

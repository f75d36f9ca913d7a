#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "smoea/dataset.hpp"
#include "smoea/evolution.hpp"
#include "smoea/network.hpp"

namespace smoea {

// Blocks are numbered by the conv layer they prune. Group g holds B_g
// consecutive blocks starting right after the previous group, the first group
// starting at block l0.
struct GroupPlan {
  std::size_t l0 = 1;
  std::vector<std::size_t> block_counts;
};

void to_json(nlohmann::json& j, const GroupPlan& plan);
void from_json(const nlohmann::json& j, GroupPlan& plan);

/// Conv ordinals of every group, ascending within a group. Throws
/// invalid-plan if a group is empty or the plan runs past `conv_count`.
std::vector<std::vector<std::size_t>> group_layers(const GroupPlan& plan,
                                                   std::size_t conv_count);

struct FineTuneConfig {
  double lr = 0.01;
  std::size_t epochs = 8;
  std::vector<std::size_t> milestones = {4, 6};  // lr /= 10 at each
  std::size_t batch_size = 32;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  /// 160 epochs, lr 0.01 divided by 10 at epochs 50 and 100.
  static FineTuneConfig full_schedule();
  void validate() const;
};

void to_json(nlohmann::json& j, const FineTuneConfig& cfg);
void from_json(const nlohmann::json& j, FineTuneConfig& cfg);

/// Learning rate used during 0-based `epoch`.
double learning_rate_at(const FineTuneConfig& cfg, std::size_t epoch);

struct FineTuneResult {
  Network net;
  std::vector<double> epoch_losses;  // mean training loss of each epoch
};

/// SGD with momentum on softmax cross-entropy; fixed shuffle order per seed.
FineTuneResult finetune(Network net, const Dataset& train, const FineTuneConfig& cfg);

/// Top-1 accuracy in [0, 1]; ties resolve to the lowest class index.
double evaluate_accuracy(const Network& net, const Dataset& data);

enum class Criterion { random, l2, fpgm };

std::string_view to_string(Criterion c);
Criterion parse_criterion(std::string_view text);

/// Number of filters a baseline keeps: max(1, round(fraction * n)).
std::size_t baseline_keep_count(std::size_t filters, double retain_fraction);

/// l2 keeps the largest-norm filters; fpgm prunes the filters whose summed
/// distance to all other filters is smallest. Ties prune the lower index.
FilterMask baseline_mask(const ConvParams& conv, std::size_t ordinal, double retain_fraction,
                         Criterion criterion, Rng& rng);

/// Seeded random sample of `size` training rows (all rows if fewer).
Dataset calibration_batch(const Dataset& train, std::size_t size, std::uint64_t seed);

/// Which front member becomes a layer's mask.
struct Selection {
  // Empty: knee point. Otherwise the member whose filter_pct is closest to
  // the target, ties toward lower error.
  std::optional<double> target_retention;
};

struct SmoeaOptions {
  EvolutionConfig evolution;
  FineTuneConfig finetune;
  std::size_t calibration_size = 128;
  std::uint64_t calibration_seed = 0;
  Selection selection;
};

struct LayerRecord {
  std::size_t ordinal = 0;
  std::size_t group = 0;     // 1-based
  std::size_t sequence = 0;  // global step counter, increases with time
  std::size_t filters = 0;
  std::size_t retained = 0;
  ObjectiveVector chosen;
  std::vector<Individual> front;
  std::vector<GenerationStats> history;
  FilterMask mask;

  double retained_rate() const {
    return filters == 0 ? 0.0 : static_cast<double>(retained) / static_cast<double>(filters);
  }
};

struct StageRecord {
  std::size_t group = 0;
  std::size_t sequence = 0;
  std::vector<std::size_t> layers;
  double accuracy_before_finetune = 0.0;
  double accuracy_after_finetune = 0.0;
  std::size_t params = 0;
  std::size_t flops = 0;
  std::vector<double> finetune_losses;
};

struct PruneReport {
  std::string method = "smoea";
  std::size_t params_before = 0;
  std::size_t params_after = 0;
  std::size_t flops_before = 0;
  std::size_t flops_after = 0;
  double accuracy_before = 0.0;
  double accuracy_after = 0.0;
  std::vector<LayerRecord> layers;  // in processing order
  std::vector<StageRecord> stages;  // in processing order (last group first)

  double remained_params() const {
    return params_before == 0 ? 1.0
                              : static_cast<double>(params_after) / static_cast<double>(params_before);
  }
  /// Kept filter count per pruned conv ordinal.
  std::map<std::size_t, std::size_t> retained_counts() const;
};

nlohmann::json to_json(const PruneReport& report);

struct PruneOutcome {
  Network net;
  PruneReport report;
};

/// Groups are pruned last-first. For each block of a group: capture the
/// block's input maps from the current network, evolve masks, apply the
/// selected one. Each group ends with compaction and fine-tuning, and the
/// fine-tuned network becomes the current one.
PruneOutcome smoea_prune(const Network& net, const DatasetSplit& data, const GroupPlan& plan,
                         const SmoeaOptions& options);

/// The same group schedule with masks from a baseline criterion. `keep`
/// gives the retained count for every layer of the plan.
PruneOutcome baseline_prune(const Network& net, const DatasetSplit& data, const GroupPlan& plan,
                            const std::map<std::size_t, std::size_t>& keep, Criterion criterion,
                            const FineTuneConfig& finetune, std::uint64_t seed);

/// Uniform retention fraction for `layers` whose compacted parameter count
/// best matches `target_fraction` of the original.
double solve_uniform_retention(const Network& net, const std::vector<std::size_t>& layers,
                               double target_fraction);

struct SweepRow {
  double fraction = 1.0;
  double remained_params = 1.0;
  double accuracy = 0.0;
};

std::vector<SweepRow> sweep_uniform_retention(const Network& net, const DatasetSplit& data,
                                              const GroupPlan& plan,
                                              const std::vector<double>& fractions,
                                              const SmoeaOptions& options);

}  // namespace smoea

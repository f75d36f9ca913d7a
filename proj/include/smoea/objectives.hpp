#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "smoea/network.hpp"
#include "smoea/tensor.hpp"

namespace smoea {

/// How the intensity factor applied to the pruned block output is chosen.
enum class AlphaMode {
  optimized,  // least-squares optimal scale
  fixed_one,  // no compensation
};

std::string_view to_string(AlphaMode mode);
AlphaMode parse_alpha_mode(std::string_view text);

struct ObjectiveVector {
  double filter_pct = 1.0;  // fraction of retained filters, minimized
  double error = 0.0;       // block reconstruction error, minimized

  friend bool operator==(const ObjectiveVector&, const ObjectiveVector&) = default;
};

// Everything needed to score masks of one sub-network on a fixed calibration
// batch. Immutable once built; safe to share across threads.
struct EvaluationContext {
  SubNetwork sub;
  Tensor map;                      // block input feature maps
  Tensor reference;                // unpruned block output
  Tensor first_layer_full_output;  // unmasked output of the first conv
  AlphaMode alpha_mode = AlphaMode::optimized;

  // Output of the second layer driven by one first-layer channel alone (no
  // bias). Empty when the cache would exceed the memory budget, in which case
  // evaluation re-runs the interstitial and second layers per mask.
  std::vector<Tensor> channel_contributions;
};

inline constexpr std::size_t kDefaultContributionBudget = std::size_t{512} << 20;

EvaluationContext make_context(SubNetwork sub, Tensor map, AlphaMode mode,
                               std::size_t contribution_budget_bytes = kDefaultContributionBudget);

double filter_pct(std::span<const std::uint8_t> bits);
double filter_pct(const FilterMask& mask);

/// argmin over alpha of ||reference - alpha * approx||, in closed form.
/// Zero when approx is identically zero.
double optimal_alpha(const Tensor& reference, const Tensor& approx);

/// ||reference - alpha * approx|| with alpha chosen by ctx.alpha_mode.
double reconstruction_error(const EvaluationContext& ctx, const Tensor& approx);

/// Block output with the first layer's pruned channels removed, computed
/// from the cached first-layer output (the first conv is never re-run).
Tensor pruned_output(const EvaluationContext& ctx, std::span<const std::uint8_t> bits);

ObjectiveVector evaluate_individual(const EvaluationContext& ctx,
                                    std::span<const std::uint8_t> bits);
ObjectiveVector evaluate_individual(const EvaluationContext& ctx, const FilterMask& mask);

}  // namespace smoea

#include "smoea/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "smoea/error.hpp"

namespace smoea {

std::string_view to_string(AlphaMode mode) {
  return mode == AlphaMode::optimized ? "optimized" : "fixed-one";
}

AlphaMode parse_alpha_mode(std::string_view text) {
  if (text == "optimized") return AlphaMode::optimized;
  if (text == "fixed-one" || text == "fixed_one") return AlphaMode::fixed_one;
  throw Error(ErrorCode::invalid_argument,
              "alpha mode must be 'optimized' or 'fixed-one', got '" + std::string(text) + "'");
}

namespace {

// Contribution of every first-layer channel to the second layer's output.
// Interstitial layers act channel by channel and map zero to zero, so a
// pruned channel simply drops its own term from the second layer's sum.
std::vector<Tensor> channel_contributions(const SubNetwork& sub, const Tensor& first_out) {
  const std::size_t channels = sub.first.out_channels;
  Tensor x = run_layers(sub.interstitial, first_out);
  std::vector<Tensor> out;
  out.reserve(channels);
  if (const auto* conv = std::get_if<ConvParams>(&sub.second)) {
    for (std::size_t c = 0; c < channels; ++c) {
      out.push_back(conv2d_channel_contribution(x, *conv, c));
    }
    return out;
  }
  const auto& dense = std::get<DenseParams>(sub.second);
  const std::size_t batch = x.dim(0), features = x.dim(1), o = dense.out_features;
  const std::size_t plane = features / channels;
  for (std::size_t c = 0; c < channels; ++c) {
    Tensor y({batch, o});
    for (std::size_t n = 0; n < batch; ++n) {
      double* row = y.data() + n * o;
      for (std::size_t s = c * plane; s < (c + 1) * plane; ++s) {
        const double xs = x[n * features + s];
        const double* w = dense.weights.data() + s * o;
        for (std::size_t j = 0; j < o; ++j) row[j] += xs * w[j];
      }
    }
    out.push_back(std::move(y));
  }
  return out;
}

}  // namespace

EvaluationContext make_context(SubNetwork sub, Tensor map, AlphaMode mode,
                               std::size_t contribution_budget_bytes) {
  EvaluationContext ctx;
  ctx.first_layer_full_output = conv2d_forward(map, sub.first);
  ctx.reference = subnetwork_forward(sub, map);
  ctx.alpha_mode = mode;
  const std::size_t cache_bytes =
      ctx.reference.size() * sizeof(double) * sub.first.out_channels;
  if (cache_bytes <= contribution_budget_bytes) {
    ctx.channel_contributions = channel_contributions(sub, ctx.first_layer_full_output);
  }
  ctx.sub = std::move(sub);
  ctx.map = std::move(map);
  return ctx;
}

double filter_pct(std::span<const std::uint8_t> bits) {
  if (bits.empty()) throw Error(ErrorCode::invalid_mask, "empty mask");
  const auto kept = std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; });
  return static_cast<double>(kept) / static_cast<double>(bits.size());
}

double filter_pct(const FilterMask& mask) { return filter_pct(mask.bits); }

double optimal_alpha(const Tensor& reference, const Tensor& approx) {
  const double num = inner_product(reference, approx);
  const double denom = inner_product(approx, approx);
  return denom == 0.0 ? 0.0 : num / denom;
}

double reconstruction_error(const EvaluationContext& ctx, const Tensor& approx) {
  if (approx.shape() != ctx.reference.shape()) {
    throw Error(ErrorCode::invalid_shape, "approximation shape " +
                                              shape_string(approx.shape()) +
                                              " does not match reference " +
                                              shape_string(ctx.reference.shape()));
  }
  const double alpha =
      ctx.alpha_mode == AlphaMode::optimized ? optimal_alpha(ctx.reference, approx) : 1.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < approx.size(); ++i) {
    const double d = ctx.reference[i] - alpha * approx[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

Tensor pruned_output(const EvaluationContext& ctx, std::span<const std::uint8_t> bits) {
  if (bits.size() != ctx.sub.first.out_channels) {
    throw Error(ErrorCode::invalid_mask,
                "mask has " + std::to_string(bits.size()) + " bits, layer has " +
                    std::to_string(ctx.sub.first.out_channels) + " filters");
  }
  if (std::none_of(bits.begin(), bits.end(), [](auto b) { return b != 0; })) {
    throw Error(ErrorCode::infeasible_mask, "mask prunes every filter");
  }
  if (!ctx.channel_contributions.empty()) {
    Tensor out = ctx.reference;
    for (std::size_t c = 0; c < bits.size(); ++c) {
      if (bits[c] != 0) continue;
      const Tensor& y = ctx.channel_contributions[c];
      for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
    }
    return out;
  }
  Tensor first = ctx.first_layer_full_output;
  zero_channels(first, bits);
  Tensor x = run_layers(ctx.sub.interstitial, std::move(first));
  return run_layers(std::span<const Layer>(&ctx.sub.second, 1), std::move(x));
}

ObjectiveVector evaluate_individual(const EvaluationContext& ctx,
                                    std::span<const std::uint8_t> bits) {
  const Tensor approx = pruned_output(ctx, bits);
  return ObjectiveVector{filter_pct(bits), reconstruction_error(ctx, approx)};
}

ObjectiveVector evaluate_individual(const EvaluationContext& ctx, const FilterMask& mask) {
  return evaluate_individual(ctx, std::span<const std::uint8_t>(mask.bits));
}

}  // namespace smoea

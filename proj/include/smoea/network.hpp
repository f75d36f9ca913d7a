#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "smoea/tensor.hpp"

namespace smoea {

enum class LayerKind { conv, relu, maxpool, flatten, dense };

std::string_view to_string(LayerKind kind);

struct ReluLayer {
  friend bool operator==(const ReluLayer&, const ReluLayer&) = default;
};
struct MaxPoolLayer {
  friend bool operator==(const MaxPoolLayer&, const MaxPoolLayer&) = default;
};
struct FlattenLayer {
  friend bool operator==(const FlattenLayer&, const FlattenLayer&) = default;
};

using Layer = std::variant<ConvParams, ReluLayer, MaxPoolLayer, FlattenLayer, DenseParams>;

LayerKind kind_of(const Layer& layer);
bool is_parametric(const Layer& layer);

struct InputGeometry {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;

  friend bool operator==(const InputGeometry&, const InputGeometry&) = default;
};

/// Ordered layer list with an index of its conv layers. Conv ordinals are
/// 1-based, matching the usual "Conv_l" numbering.
class Network {
 public:
  Network() = default;
  /// Throws invalid-shape / invalid-geometry if the layers do not compose or
  /// the final activation is not a [N, classes] matrix.
  Network(InputGeometry input, std::vector<Layer> layers);

  const InputGeometry& input() const noexcept { return input_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  const Layer& layer(std::size_t position) const { return layers_.at(position); }

  std::size_t conv_count() const noexcept { return conv_index_.size(); }
  /// Position in the layer list of conv `ordinal`; throws unknown-layer.
  std::size_t conv_position(std::size_t ordinal) const;
  const ConvParams& conv(std::size_t ordinal) const;

  /// Input shape (batch 1) of every layer, plus the final output shape.
  const std::vector<Shape>& activation_shapes() const noexcept { return shapes_; }
  std::size_t num_classes() const { return shapes_.back().at(1); }

  /// Weight/bias storage of every parametric layer, in layer order. Shapes are
  /// fixed; only values may be changed through these views.
  std::vector<std::span<double>> parameter_views();
  std::vector<std::span<const double>> parameter_views() const;

  friend bool operator==(const Network&, const Network&) = default;

 private:
  InputGeometry input_;
  std::vector<Layer> layers_;
  std::vector<std::size_t> conv_index_;
  std::vector<Shape> shapes_;
};

/// Layer configuration in the usual VGG notation: integers are 3x3 pad-1 conv
/// widths (each followed by ReLU), "M" is a 2x2 max-pool. Example:
/// "64,64,M,128,128,M".
std::vector<std::string> parse_cnn_config(std::string_view text);

/// Conv/ReLU/pool backbone from `config`, then flatten and one dense
/// classifier. He-normal conv weights, zero biases.
Network build_cnn(const std::vector<std::string>& config, InputGeometry input,
                  std::size_t num_classes, std::uint64_t seed);

inline constexpr std::string_view kVgg14Config =
    "64,64,M,128,128,M,256,256,256,M,512,512,512,M,512,512,512,M";

/// 13 conv layers plus a single 512 -> 10 classifier on 3x32x32 input.
Network build_vgg14(std::uint64_t seed = 0);

/// Runs a contiguous stretch of layers.
Tensor run_layers(std::span<const Layer> layers, Tensor x);

struct ForwardResult {
  Tensor logits;
  // conv ordinal -> the tensor flowing into that conv layer
  std::map<std::size_t, Tensor> captured;
};

ForwardResult forward(const Network& net, const Tensor& batch,
                      const std::set<std::size_t>& capture = {});

// Activations recorded during a forward pass for backpropagation.
struct ForwardTrace {
  std::vector<Tensor> inputs;                // input of each layer
  std::map<std::size_t, MaxPoolResult> pools;  // by layer position
  Tensor logits;
};

ForwardTrace forward_trace(const Network& net, const Tensor& batch);

/// Gradients of every parametric layer's weights and bias, in the order of
/// Network::parameter_views().
std::vector<std::vector<double>> backward(const Network& net, const ForwardTrace& trace,
                                          const Tensor& grad_logits);

struct FilterMask {
  std::size_t layer = 0;            // conv ordinal
  std::vector<std::uint8_t> bits;   // 1 = retained

  static FilterMask full(std::size_t layer, std::size_t filters);
  std::size_t retained() const;
  std::size_t size() const noexcept { return bits.size(); }

  friend bool operator==(const FilterMask&, const FilterMask&) = default;
};

/// Throws unknown-layer, invalid-mask (length) or infeasible-mask (no bit set).
void validate_mask(const Network& net, const FilterMask& mask);

/// Zeroes channel c of a [N, C, ...] tensor wherever bits[c] == 0.
void zero_channels(Tensor& t, std::span<const std::uint8_t> bits);

/// Copy of `net` with the masked conv's pruned output filters (weights and
/// bias) set to zero.
Network apply_mask(const Network& net, const FilterMask& mask);

struct SubNetwork {
  std::size_t ordinal = 0;
  ConvParams first;
  std::vector<Layer> interstitial;  // relu / maxpool / flatten only
  Layer second;                     // ConvParams or DenseParams
};

SubNetwork extract_subnetwork(const Network& net, std::size_t ordinal);

/// Output of the sub-network's second layer. With a mask, the first layer's
/// pruned output channels are zeroed before the rest of the block runs.
Tensor subnetwork_forward(const SubNetwork& sub, const Tensor& map);
Tensor subnetwork_forward(const SubNetwork& sub, const Tensor& map, const FilterMask& mask);

/// Physically removes pruned filters and the matching input slices of the
/// next parametric layer. Logits equal those of the masked network.
Network compact(const Network& net, const std::map<std::size_t, FilterMask>& masks);

std::size_t count_params(const Network& net);
std::size_t count_flops(const Network& net);
std::size_t count_flops(const Network& net, InputGeometry input);

/// Writes `dir`/manifest.json plus one little-endian float64 blob per
/// parametric layer (weights then bias).
void save_model(const Network& net, const std::filesystem::path& dir);
/// Accepts the model directory or the manifest file itself.
Network load_model(const std::filesystem::path& path);

}  // namespace smoea

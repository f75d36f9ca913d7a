#include "smoea/network.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "smoea/error.hpp"

namespace smoea {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
  }
  return "unknown";
}

LayerKind kind_of(const Layer& layer) { return static_cast<LayerKind>(layer.index()); }

bool is_parametric(const Layer& layer) {
  const LayerKind k = kind_of(layer);
  return k == LayerKind::conv || k == LayerKind::dense;
}

namespace {

// Output shape of one layer given its input shape; validates geometry.
Shape propagate_shape(const Layer& layer, const Shape& in) {
  switch (kind_of(layer)) {
    case LayerKind::conv: {
      const auto& p = std::get<ConvParams>(layer);
      p.validate();
      if (in.size() != 4 || in[1] != p.in_channels) {
        throw Error(ErrorCode::invalid_shape, "conv layer expects " +
                                                  std::to_string(p.in_channels) +
                                                  " input channels, got " + shape_string(in));
      }
      return {in[0], p.out_channels,
              conv_output_extent(in[2], p.kernel_h, p.stride, p.padding),
              conv_output_extent(in[3], p.kernel_w, p.stride, p.padding)};
    }
    case LayerKind::relu: return in;
    case LayerKind::maxpool:
      if (in.size() != 4 || in[2] % 2 != 0 || in[3] % 2 != 0) {
        throw Error(ErrorCode::invalid_geometry, "maxpool input " + shape_string(in));
      }
      return {in[0], in[1], in[2] / 2, in[3] / 2};
    case LayerKind::flatten:
      return {in[0], shape_volume(in) / in[0]};
    case LayerKind::dense: {
      const auto& p = std::get<DenseParams>(layer);
      p.validate();
      if (in.size() != 2 || in[1] != p.in_features) {
        throw Error(ErrorCode::invalid_shape, "dense layer expects " +
                                                  std::to_string(p.in_features) +
                                                  " features, got " + shape_string(in));
      }
      return {in[0], p.out_features};
    }
  }
  throw Error(ErrorCode::invalid_argument, "unknown layer kind");
}

Tensor apply_layer(const Layer& layer, Tensor x) {
  switch (kind_of(layer)) {
    case LayerKind::conv: return conv2d_forward(x, std::get<ConvParams>(layer));
    case LayerKind::relu: {
      for (double& v : x.values()) v = v > 0.0 ? v : 0.0;
      return x;
    }
    case LayerKind::maxpool: return maxpool2x2(x).output;
    case LayerKind::flatten: {
      const std::size_t n = x.dim(0);
      const std::size_t d = x.size() / std::max<std::size_t>(n, 1);
      return std::move(x).reshaped({n, d});
    }
    case LayerKind::dense: return dense_forward(x, std::get<DenseParams>(layer));
  }
  throw Error(ErrorCode::invalid_argument, "unknown layer kind");
}

void check_batch(const Network& net, const Tensor& batch) {
  const InputGeometry& g = net.input();
  if (batch.rank() != 4 || batch.dim(1) != g.channels || batch.dim(2) != g.height ||
      batch.dim(3) != g.width) {
    throw Error(ErrorCode::invalid_shape, "batch " + shape_string(batch.shape()) +
                                              " does not match network input " +
                                              shape_string({g.channels, g.height, g.width}));
  }
}

}  // namespace

Network::Network(InputGeometry input, std::vector<Layer> layers)
    : input_(input), layers_(std::move(layers)) {
  Shape shape{1, input_.channels, input_.height, input_.width};
  shapes_.reserve(layers_.size() + 1);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    shapes_.push_back(shape);
    shape = propagate_shape(layers_[i], shape);
    if (kind_of(layers_[i]) == LayerKind::conv) conv_index_.push_back(i);
  }
  if (shape.size() != 2) {
    throw Error(ErrorCode::invalid_shape,
                "network must end in a [N, classes] output, got " + shape_string(shape));
  }
  shapes_.push_back(shape);
}

std::size_t Network::conv_position(std::size_t ordinal) const {
  if (ordinal < 1 || ordinal > conv_index_.size()) {
    throw Error(ErrorCode::unknown_layer,
                "conv layer " + std::to_string(ordinal) + " does not exist (network has " +
                    std::to_string(conv_index_.size()) + ")");
  }
  return conv_index_[ordinal - 1];
}

const ConvParams& Network::conv(std::size_t ordinal) const {
  return std::get<ConvParams>(layers_[conv_position(ordinal)]);
}

std::vector<std::span<double>> Network::parameter_views() {
  std::vector<std::span<double>> views;
  for (Layer& layer : layers_) {
    if (auto* c = std::get_if<ConvParams>(&layer)) {
      views.emplace_back(c->weights.values());
      views.emplace_back(c->bias.values());
    } else if (auto* d = std::get_if<DenseParams>(&layer)) {
      views.emplace_back(d->weights.values());
      views.emplace_back(d->bias.values());
    }
  }
  return views;
}

std::vector<std::span<const double>> Network::parameter_views() const {
  std::vector<std::span<const double>> views;
  for (const Layer& layer : layers_) {
    if (const auto* c = std::get_if<ConvParams>(&layer)) {
      views.emplace_back(c->weights.values());
      views.emplace_back(c->bias.values());
    } else if (const auto* d = std::get_if<DenseParams>(&layer)) {
      views.emplace_back(d->weights.values());
      views.emplace_back(d->bias.values());
    }
  }
  return views;
}

std::vector<std::string> parse_cnn_config(std::string_view text) {
  std::vector<std::string> items;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find(',', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view item = text.substr(start, end - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (item.empty()) {
      throw Error(ErrorCode::malformed_config, "empty item in layer config");
    }
    if (item != "M") {
      std::size_t width = 0;
      auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), width);
      if (ec != std::errc() || ptr != item.data() + item.size() || width == 0) {
        throw Error(ErrorCode::malformed_config,
                    "bad layer config item '" + std::string(item) + "'");
      }
    }
    items.emplace_back(item);
    start = end + 1;
  }
  return items;
}

Network build_cnn(const std::vector<std::string>& config, InputGeometry input,
                  std::size_t num_classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Layer> layers;
  std::size_t channels = input.channels;
  for (const std::string& item : config) {
    if (item == "M") {
      layers.emplace_back(MaxPoolLayer{});
      continue;
    }
    const std::size_t width = std::stoul(item);
    ConvParams conv = ConvParams::zeros(width, channels, 3, 1, 1);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / double(channels * 9)));
    for (double& w : conv.weights.values()) w = normal(rng);
    layers.emplace_back(std::move(conv));
    layers.emplace_back(ReluLayer{});
    channels = width;
  }
  layers.emplace_back(FlattenLayer{});
  // Width of the flattened features depends on how many pools ran.
  const std::size_t features = Network(input, layers).activation_shapes().back().at(1);
  DenseParams dense = DenseParams::zeros(features, num_classes);
  std::normal_distribution<double> normal(0.0, std::sqrt(1.0 / double(features)));
  for (double& w : dense.weights.values()) w = normal(rng);
  layers.emplace_back(std::move(dense));
  return Network(input, std::move(layers));
}

Network build_vgg14(std::uint64_t seed) {
  return build_cnn(parse_cnn_config(kVgg14Config), InputGeometry{3, 32, 32}, 10, seed);
}

Tensor run_layers(std::span<const Layer> layers, Tensor x) {
  for (const Layer& layer : layers) x = apply_layer(layer, std::move(x));
  return x;
}

ForwardResult forward(const Network& net, const Tensor& batch,
                      const std::set<std::size_t>& capture) {
  std::set<std::size_t> positions;
  for (std::size_t ordinal : capture) positions.insert(net.conv_position(ordinal));
  check_batch(net, batch);

  ForwardResult result;
  Tensor x = batch;
  std::size_t ordinal = 0;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const Layer& layer = net.layers()[i];
    if (kind_of(layer) == LayerKind::conv) {
      ++ordinal;
      if (positions.count(i) != 0) result.captured.emplace(ordinal, x);
    }
    x = apply_layer(layer, std::move(x));
  }
  result.logits = std::move(x);
  return result;
}

ForwardTrace forward_trace(const Network& net, const Tensor& batch) {
  check_batch(net, batch);
  ForwardTrace trace;
  trace.inputs.reserve(net.layers().size());
  Tensor x = batch;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const Layer& layer = net.layers()[i];
    trace.inputs.push_back(x);
    if (kind_of(layer) == LayerKind::maxpool) {
      MaxPoolResult pooled = maxpool2x2(x);
      x = pooled.output;
      trace.pools.emplace(i, std::move(pooled));
    } else {
      x = apply_layer(layer, std::move(x));
    }
  }
  trace.logits = std::move(x);
  return trace;
}

std::vector<std::vector<double>> backward(const Network& net, const ForwardTrace& trace,
                                          const Tensor& grad_logits) {
  const auto& layers = net.layers();
  std::size_t parametric = 0;
  for (const Layer& layer : layers) parametric += is_parametric(layer) ? 1 : 0;
  std::vector<std::vector<double>> grads(2 * parametric);

  Tensor grad = grad_logits;
  std::size_t slot = 2 * parametric;
  for (std::size_t i = layers.size(); i-- > 0;) {
    const Tensor& input = trace.inputs.at(i);
    switch (kind_of(layers[i])) {
      case LayerKind::conv: {
        ConvGrads g = conv2d_backward(input, std::get<ConvParams>(layers[i]), grad);
        slot -= 2;
        grads[slot].assign(g.weights.values().begin(), g.weights.values().end());
        grads[slot + 1].assign(g.bias.values().begin(), g.bias.values().end());
        grad = std::move(g.input);
        break;
      }
      case LayerKind::dense: {
        DenseGrads g = dense_backward(input, std::get<DenseParams>(layers[i]), grad);
        slot -= 2;
        grads[slot].assign(g.weights.values().begin(), g.weights.values().end());
        grads[slot + 1].assign(g.bias.values().begin(), g.bias.values().end());
        grad = std::move(g.input);
        break;
      }
      case LayerKind::relu: grad = relu_backward(input, grad); break;
      case LayerKind::maxpool: grad = maxpool2x2_backward(trace.pools.at(i), grad); break;
      case LayerKind::flatten: grad = std::move(grad).reshaped(input.shape()); break;
    }
  }
  return grads;
}

FilterMask FilterMask::full(std::size_t layer, std::size_t filters) {
  return FilterMask{layer, std::vector<std::uint8_t>(filters, 1)};
}

std::size_t FilterMask::retained() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(),
                                                [](std::uint8_t b) { return b != 0; }));
}

void validate_mask(const Network& net, const FilterMask& mask) {
  const ConvParams& conv = net.conv(mask.layer);
  if (mask.bits.size() != conv.out_channels) {
    throw Error(ErrorCode::invalid_mask,
                "mask for conv " + std::to_string(mask.layer) + " has " +
                    std::to_string(mask.bits.size()) + " bits, layer has " +
                    std::to_string(conv.out_channels) + " filters");
  }
  if (mask.retained() == 0) {
    throw Error(ErrorCode::infeasible_mask,
                "mask for conv " + std::to_string(mask.layer) + " prunes every filter");
  }
}

void zero_channels(Tensor& t, std::span<const std::uint8_t> bits) {
  if (t.rank() < 2 || t.dim(1) != bits.size()) {
    throw Error(ErrorCode::invalid_mask, "mask length does not match channel count of " +
                                             shape_string(t.shape()));
  }
  const std::size_t batch = t.dim(0), channels = t.dim(1);
  const std::size_t plane = t.size() / std::max<std::size_t>(batch * channels, 1);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      if (bits[c] != 0) continue;
      double* p = t.data() + (n * channels + c) * plane;
      std::fill(p, p + plane, 0.0);
    }
  }
}

Network apply_mask(const Network& net, const FilterMask& mask) {
  validate_mask(net, mask);
  std::vector<Layer> layers = net.layers();
  auto& conv = std::get<ConvParams>(layers[net.conv_position(mask.layer)]);
  const std::size_t slice = conv.in_channels * conv.kernel_h * conv.kernel_w;
  for (std::size_t c = 0; c < conv.out_channels; ++c) {
    if (mask.bits[c] != 0) continue;
    std::fill_n(conv.weights.data() + c * slice, slice, 0.0);
    conv.bias[c] = 0.0;
  }
  return Network(net.input(), std::move(layers));
}

SubNetwork extract_subnetwork(const Network& net, std::size_t ordinal) {
  const std::size_t first = net.conv_position(ordinal);
  SubNetwork sub;
  sub.ordinal = ordinal;
  sub.first = std::get<ConvParams>(net.layers()[first]);
  for (std::size_t i = first + 1; i < net.layers().size(); ++i) {
    const Layer& layer = net.layers()[i];
    if (is_parametric(layer)) {
      sub.second = layer;
      return sub;
    }
    sub.interstitial.push_back(layer);
  }
  throw Error(ErrorCode::unknown_layer,
              "conv " + std::to_string(ordinal) + " has no following parametric layer");
}

namespace {

Tensor run_block(const SubNetwork& sub, Tensor first_out) {
  Tensor x = run_layers(sub.interstitial, std::move(first_out));
  return run_layers(std::span<const Layer>(&sub.second, 1), std::move(x));
}

}  // namespace

Tensor subnetwork_forward(const SubNetwork& sub, const Tensor& map) {
  return run_block(sub, conv2d_forward(map, sub.first));
}

Tensor subnetwork_forward(const SubNetwork& sub, const Tensor& map, const FilterMask& mask) {
  if (mask.bits.size() != sub.first.out_channels) {
    throw Error(ErrorCode::invalid_mask, "mask length does not match sub-network filters");
  }
  Tensor first_out = conv2d_forward(map, sub.first);
  zero_channels(first_out, mask.bits);
  return run_block(sub, std::move(first_out));
}

Network compact(const Network& net, const std::map<std::size_t, FilterMask>& masks) {
  for (const auto& [ordinal, mask] : masks) {
    if (mask.layer != ordinal) {
      throw Error(ErrorCode::invalid_mask, "mask keyed as conv " + std::to_string(ordinal) +
                                               " targets conv " + std::to_string(mask.layer));
    }
    validate_mask(net, mask);
  }

  std::vector<Layer> out;
  out.reserve(net.layers().size());
  // Original indices of the channels (or features) present in the current
  // activation of the compacted network.
  std::vector<std::size_t> live(net.input().channels);
  for (std::size_t c = 0; c < live.size(); ++c) live[c] = c;
  std::size_t ordinal = 0;

  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const Layer& layer = net.layers()[i];
    switch (kind_of(layer)) {
      case LayerKind::conv: {
        ++ordinal;
        const auto& src = std::get<ConvParams>(layer);
        std::vector<std::size_t> keep;
        auto it = masks.find(ordinal);
        for (std::size_t c = 0; c < src.out_channels; ++c) {
          if (it == masks.end() || it->second.bits[c] != 0) keep.push_back(c);
        }
        ConvParams dst = ConvParams::zeros(keep.size(), live.size(), 1);
        dst.kernel_h = src.kernel_h;
        dst.kernel_w = src.kernel_w;
        dst.stride = src.stride;
        dst.padding = src.padding;
        const std::size_t taps = src.kernel_h * src.kernel_w;
        dst.weights = Tensor({keep.size(), live.size(), src.kernel_h, src.kernel_w});
        for (std::size_t o = 0; o < keep.size(); ++o) {
          dst.bias[o] = src.bias[keep[o]];
          for (std::size_t k = 0; k < live.size(); ++k) {
            const double* from =
                src.weights.data() + (keep[o] * src.in_channels + live[k]) * taps;
            std::copy_n(from, taps, dst.weights.data() + (o * live.size() + k) * taps);
          }
        }
        out.emplace_back(std::move(dst));
        live = std::move(keep);
        break;
      }
      case LayerKind::flatten: {
        const Shape& in = net.activation_shapes()[i];
        const std::size_t plane = in.size() == 4 ? in[2] * in[3] : 1;
        std::vector<std::size_t> features;
        features.reserve(live.size() * plane);
        for (std::size_t c : live) {
          for (std::size_t s = 0; s < plane; ++s) features.push_back(c * plane + s);
        }
        live = std::move(features);
        out.push_back(layer);
        break;
      }
      case LayerKind::dense: {
        const auto& src = std::get<DenseParams>(layer);
        DenseParams dst = DenseParams::zeros(live.size(), src.out_features);
        dst.bias = src.bias;
        for (std::size_t r = 0; r < live.size(); ++r) {
          std::copy_n(src.weights.data() + live[r] * src.out_features, src.out_features,
                      dst.weights.data() + r * src.out_features);
        }
        out.emplace_back(std::move(dst));
        live.resize(src.out_features);
        for (std::size_t c = 0; c < live.size(); ++c) live[c] = c;
        break;
      }
      case LayerKind::relu:
      case LayerKind::maxpool: out.push_back(layer); break;
    }
  }
  return Network(net.input(), std::move(out));
}

std::size_t count_params(const Network& net) {
  std::size_t total = 0;
  for (const auto& view : net.parameter_views()) total += view.size();
  return total;
}

std::size_t count_flops(const Network& net) {
  std::size_t flops = 0;
  const auto& shapes = net.activation_shapes();
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const Layer& layer = net.layers()[i];
    if (const auto* c = std::get_if<ConvParams>(&layer)) {
      const Shape& out = shapes[i + 1];
      flops += 2 * c->in_channels * c->kernel_h * c->kernel_w * c->out_channels * out[2] *
               out[3];
    } else if (const auto* d = std::get_if<DenseParams>(&layer)) {
      flops += 2 * d->in_features * d->out_features;
    }
  }
  return flops;
}

std::size_t count_flops(const Network& net, InputGeometry input) {
  if (input == net.input()) return count_flops(net);
  return count_flops(Network(input, net.layers()));
}

namespace {

void write_le(std::ofstream& out, std::span<const double> values) {
  std::vector<char> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void read_le(const std::vector<unsigned char>& bytes, std::size_t offset,
             std::span<double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= std::uint64_t{bytes[offset + i * 8 + b]} << (8 * b);
    }
    values[i] = std::bit_cast<double>(bits);
  }
}

[[noreturn]] void corrupt(const std::string& what) {
  throw Error(ErrorCode::corrupt_model, what);
}

std::size_t field(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number_unsigned()) {
    corrupt(std::string("manifest field '") + key + "' missing or not a count");
  }
  return j[key].get<std::size_t>();
}

}  // namespace

void save_model(const Network& net, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::io, "cannot create " + dir.string() + ": " + ec.message());

  json manifest;
  manifest["format"] = "smoea-model";
  manifest["version"] = 1;
  manifest["dtype"] = "float64";
  manifest["endianness"] = "little";
  manifest["layout"] = "row-major; conv [out,in,kh,kw]; dense [in,out]; weights then bias";
  manifest["input"] = {{"channels", net.input().channels},
                       {"height", net.input().height},
                       {"width", net.input().width}};
  json layers = json::array();
  std::size_t blobs = 0;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const Layer& layer = net.layers()[i];
    json entry{{"kind", std::string(to_string(kind_of(layer)))}};
    std::span<const double> weights, bias;
    if (const auto* c = std::get_if<ConvParams>(&layer)) {
      entry["out_channels"] = c->out_channels;
      entry["in_channels"] = c->in_channels;
      entry["kernel_h"] = c->kernel_h;
      entry["kernel_w"] = c->kernel_w;
      entry["stride"] = c->stride;
      entry["padding"] = c->padding;
      weights = c->weights.values();
      bias = c->bias.values();
    } else if (const auto* d = std::get_if<DenseParams>(&layer)) {
      entry["in_features"] = d->in_features;
      entry["out_features"] = d->out_features;
      weights = d->weights.values();
      bias = d->bias.values();
    }
    if (is_parametric(layer)) {
      char name[32];
      std::snprintf(name, sizeof name, "layer_%03zu.bin", i);
      entry["blob"] = name;
      std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(ErrorCode::io, "cannot write " + (dir / name).string());
      write_le(out, weights);
      write_le(out, bias);
      ++blobs;
    }
    layers.push_back(std::move(entry));
  }
  manifest["layer_count"] = net.layers().size();
  manifest["blob_count"] = blobs;
  manifest["layers"] = std::move(layers);

  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

Network load_model(const fs::path& path) {
  const fs::path manifest_path = fs::is_directory(path) ? path / "manifest.json" : path;
  if (!fs::exists(manifest_path)) {
    throw Error(ErrorCode::io, "model manifest not found: " + manifest_path.string());
  }
  const fs::path dir = manifest_path.parent_path();
  std::ifstream in(manifest_path);
  json manifest = json::parse(in, nullptr, false);
  if (manifest.is_discarded() || !manifest.is_object()) {
    corrupt("model manifest " + manifest_path.string() + " is not valid JSON");
  }
  if (manifest.value("format", "") != "smoea-model" ||
      manifest.value("endianness", "") != "little" ||
      manifest.value("dtype", "") != "float64") {
    corrupt("unsupported model format tag");
  }
  if (!manifest.contains("input") || !manifest.contains("layers") ||
      !manifest["layers"].is_array()) {
    corrupt("model manifest lacks input or layers");
  }
  const json& layers_json = manifest["layers"];
  if (field(manifest, "layer_count") != layers_json.size()) {
    corrupt("manifest layer_count disagrees with the layer list");
  }
  std::size_t blob_refs = 0;
  for (const json& entry : layers_json) blob_refs += entry.contains("blob") ? 1 : 0;
  if (field(manifest, "blob_count") != blob_refs) {
    corrupt("manifest blob_count disagrees with the number of layer blobs");
  }

  InputGeometry input{field(manifest["input"], "channels"), field(manifest["input"], "height"),
                      field(manifest["input"], "width")};
  std::vector<Layer> layers;
  for (const json& entry : layers_json) {
    const std::string kind = entry.value("kind", "");
    std::span<double> weights, bias;
    if (kind == "conv") {
      ConvParams c;
      c.out_channels = field(entry, "out_channels");
      c.in_channels = field(entry, "in_channels");
      c.kernel_h = field(entry, "kernel_h");
      c.kernel_w = field(entry, "kernel_w");
      c.stride = field(entry, "stride");
      c.padding = field(entry, "padding");
      c.weights = Tensor({c.out_channels, c.in_channels, c.kernel_h, c.kernel_w});
      c.bias = Tensor({c.out_channels});
      layers.emplace_back(std::move(c));
    } else if (kind == "dense") {
      layers.emplace_back(
          DenseParams::zeros(field(entry, "in_features"), field(entry, "out_features")));
    } else if (kind == "relu") {
      layers.emplace_back(ReluLayer{});
    } else if (kind == "maxpool") {
      layers.emplace_back(MaxPoolLayer{});
    } else if (kind == "flatten") {
      layers.emplace_back(FlattenLayer{});
    } else {
      corrupt("unknown layer kind '" + kind + "'");
    }
    Layer& layer = layers.back();
    if (is_parametric(layer) != entry.contains("blob")) {
      corrupt("layer " + std::to_string(layers.size() - 1) + " blob reference mismatch");
    }
    if (!is_parametric(layer)) continue;
    if (auto* c = std::get_if<ConvParams>(&layer)) {
      weights = c->weights.values();
      bias = c->bias.values();
    } else {
      auto& d = std::get<DenseParams>(layer);
      weights = d.weights.values();
      bias = d.bias.values();
    }
    const fs::path blob = dir / entry["blob"].get<std::string>();
    std::ifstream bin(blob, std::ios::binary);
    if (!bin) corrupt("missing blob " + blob.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() != 8 * (weights.size() + bias.size())) {
      corrupt("blob " + blob.string() + " has " + std::to_string(bytes.size()) +
              " bytes, expected " + std::to_string(8 * (weights.size() + bias.size())));
    }
    read_le(bytes, 0, weights);
    read_le(bytes, 8 * weights.size(), bias);
  }
  try {
    return Network(input, std::move(layers));
  } catch (const Error& e) {
    corrupt(std::string("model layers do not compose: ") + e.what());
  }
}

}  // namespace smoea

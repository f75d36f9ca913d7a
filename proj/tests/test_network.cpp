#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "oracles.hpp"
#include "smoea/error.hpp"
#include "smoea/network.hpp"

using namespace smoea;
namespace fs = std::filesystem;

namespace {

template <class F>
void expect_code(ErrorCode code, F&& f) {
  try {
    f();
    ADD_FAILURE() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

void expect_near(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], tol) << "at " << i;
}

const Network& vgg() {
  static const Network net = build_vgg14(0);
  return net;
}

FilterMask random_mask(std::size_t ordinal, std::size_t n, std::mt19937_64& rng) {
  FilterMask m{ordinal, std::vector<std::uint8_t>(n)};
  for (auto& b : m.bits) b = rng() % 2;
  m.bits[rng() % n] = 1;
  return m;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("smoea_network_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST(Vgg14, Structure) {
  const Network& net = vgg();
  EXPECT_EQ(net.conv_count(), 13u);
  std::size_t dense = 0;
  for (const Layer& l : net.layers()) dense += kind_of(l) == LayerKind::dense ? 1 : 0;
  EXPECT_EQ(dense, 1u);
  const auto& shapes = net.activation_shapes();
  EXPECT_EQ(shapes[shapes.size() - 2], (Shape{1, 512}));
  EXPECT_EQ(net.num_classes(), 10u);
}

TEST(Vgg14, ForwardShapeAndFlops) {
  std::mt19937_64 rng(1);
  const Tensor logits = forward(vgg(), oracle::random_tensor({1, 3, 32, 32}, rng)).logits;
  EXPECT_EQ(logits.shape(), (Shape{1, 10}));
  for (double v : logits.values()) EXPECT_TRUE(std::isfinite(v));
  const double flops = static_cast<double>(count_flops(vgg(), {3, 32, 32}));
  EXPECT_GE(flops, 6.26e8 * 0.99);
  EXPECT_LE(flops, 6.26e8 * 1.01);
}

TEST(Vgg14, FlopsByHand) {
  // Independent sum over the VGG layer list on 32x32 input.
  const int widths[] = {64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0};
  double total = 0, cin = 3, side = 32;
  for (int w : widths) {
    if (w == 0) {
      side /= 2;
      continue;
    }
    total += 2 * cin * 9 * w * side * side;
    cin = w;
  }
  total += 2 * 512 * 10;
  EXPECT_EQ(static_cast<double>(count_flops(vgg())), total);
}

TEST(Vgg14, SubNetworks) {
  const SubNetwork s1 = extract_subnetwork(vgg(), 1);
  EXPECT_EQ(s1.first, vgg().conv(1));
  ASSERT_EQ(s1.interstitial.size(), 1u);
  EXPECT_EQ(kind_of(s1.interstitial[0]), LayerKind::relu);
  EXPECT_EQ(std::get<ConvParams>(s1.second), vgg().conv(2));

  const SubNetwork s2 = extract_subnetwork(vgg(), 2);
  ASSERT_EQ(s2.interstitial.size(), 2u);
  EXPECT_EQ(kind_of(s2.interstitial[1]), LayerKind::maxpool);

  const SubNetwork s13 = extract_subnetwork(vgg(), 13);
  EXPECT_EQ(kind_of(s13.second), LayerKind::dense);
  ASSERT_EQ(s13.interstitial.size(), 3u);
  EXPECT_EQ(kind_of(s13.interstitial[0]), LayerKind::relu);
  EXPECT_EQ(kind_of(s13.interstitial[1]), LayerKind::maxpool);
  EXPECT_EQ(kind_of(s13.interstitial[2]), LayerKind::flatten);

  expect_code(ErrorCode::unknown_layer, [] { extract_subnetwork(vgg(), 14); });
  expect_code(ErrorCode::unknown_layer, [] { extract_subnetwork(vgg(), 0); });
}

TEST(Network, RejectsLayersThatDoNotCompose) {
  std::vector<Layer> layers = {ConvParams::zeros(4, 3, 3, 1, 1), FlattenLayer{},
                               DenseParams::zeros(10, 2)};
  expect_code(ErrorCode::invalid_shape, [&] { Network({3, 4, 4}, layers); });
  expect_code(ErrorCode::malformed_config, [] { parse_cnn_config("8,x,M"); });
}

TEST(Forward, Capture) {
  std::mt19937_64 rng(2);
  const Network net = oracle::random_cnn(rng);
  const Tensor x = oracle::random_tensor({3, 2, 8, 8}, rng);
  const ForwardResult r = forward(net, x, {1});
  EXPECT_EQ(r.captured.at(1), x);
  const ForwardResult plain = forward(net, x);
  EXPECT_TRUE(plain.captured.empty());
  EXPECT_EQ(plain.logits, r.logits);
  expect_code(ErrorCode::unknown_layer, [&] { forward(net, x, {net.conv_count() + 1}); });
  expect_code(ErrorCode::invalid_shape, [&] { forward(net, Tensor({1, 3, 8, 8})); });
}

TEST(Forward, SubNetworkReproducesDeeperMaps) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Network net = oracle::random_cnn(rng);
    const Tensor x = oracle::random_tensor({2, 2, 8, 8}, rng);
    std::set<std::size_t> all;
    for (std::size_t l = 1; l <= net.conv_count(); ++l) all.insert(l);
    const ForwardResult r = forward(net, x, all);
    for (std::size_t l = 1; l + 2 <= net.conv_count(); ++l) {
      const Tensor out = subnetwork_forward(extract_subnetwork(net, l), r.captured.at(l));
      // Layers between conv l+1 and conv l+2 turn the block output into Map_{l+2}.
      const auto& layers = net.layers();
      const std::span<const Layer> between(layers.begin() + net.conv_position(l + 1) + 1,
                                           layers.begin() + net.conv_position(l + 2));
      expect_near(run_layers(between, out), r.captured.at(l + 2), 1e-12);
    }
  }
}

TEST(Backward, FiniteDifferencesThroughNetwork) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    Network net = oracle::random_cnn(rng, 4, 4);
    const Tensor x = oracle::random_tensor({2, 2, 4, 4}, rng);
    const std::vector<int> labels = {0, 2};
    const ForwardTrace trace = forward_trace(net, x);
    const auto grads = backward(net, trace, softmax_cross_entropy(trace.logits, labels).grad_logits);
    auto views = net.parameter_views();
    ASSERT_EQ(grads.size(), views.size());
    auto loss = [&] { return softmax_cross_entropy(forward(net, x).logits, labels).loss; };
    for (std::size_t p = 0; p < views.size(); ++p) {
      std::vector<double*> ptrs;
      for (double& v : views[p]) ptrs.push_back(&v);
      EXPECT_LE(oracle::max_relative_error(oracle::numeric_gradient(loss, ptrs, 1e-6), grads[p]),
                1e-4)
          << "parameter block " << p;
    }
  }
}

TEST(Mask, Validation) {
  const Network& net = vgg();
  expect_code(ErrorCode::invalid_mask, [&] { validate_mask(net, FilterMask::full(1, 63)); });
  expect_code(ErrorCode::infeasible_mask,
              [&] { validate_mask(net, FilterMask{1, std::vector<std::uint8_t>(64, 0)}); });
  expect_code(ErrorCode::unknown_layer, [&] { validate_mask(net, FilterMask::full(14, 64)); });
}

TEST(Mask, ApplySemantics) {
  std::mt19937_64 rng(5);
  const Network net = oracle::random_cnn(rng);
  EXPECT_EQ(apply_mask(net, FilterMask::full(1, net.conv(1).out_channels)), net);

  const std::size_t n = net.conv(1).out_channels;
  FilterMask mask = FilterMask::full(1, n);
  mask.bits[1] = 0;
  const Network masked = apply_mask(net, mask);
  const Tensor x = oracle::random_tensor({2, 2, 8, 8}, rng);
  const Tensor out = conv2d_forward(x, masked.conv(1));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < out.dim(2); ++i)
      for (std::size_t j = 0; j < out.dim(3); ++j) EXPECT_EQ(out.at(b, 1, i, j), 0.0);

  // Nonzero count equals the nonzeros of kept filters in the original.
  const std::size_t slice = net.conv(1).weights.size() / n;
  std::size_t expected = 0, actual = 0;
  for (std::size_t f = 0; f < n; ++f) {
    for (std::size_t k = 0; k < slice; ++k) {
      expected += (mask.bits[f] && net.conv(1).weights[f * slice + k] != 0.0) ? 1 : 0;
      actual += masked.conv(1).weights[f * slice + k] != 0.0 ? 1 : 0;
    }
  }
  EXPECT_EQ(actual, expected);
  // Other layers untouched.
  EXPECT_EQ(masked.conv(2), net.conv(2));
}

TEST(SubNetworkForward, MaskSemantics) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Network net = oracle::random_cnn(rng);
    const std::size_t l = 1 + rng() % net.conv_count();
    const SubNetwork sub = extract_subnetwork(net, l);
    const Tensor map = forward(net, oracle::random_tensor({2, 2, 8, 8}, rng), {l}).captured.at(l);
    EXPECT_EQ(subnetwork_forward(sub, map, FilterMask::full(l, sub.first.out_channels)),
              subnetwork_forward(sub, map));

    const FilterMask mask = random_mask(l, sub.first.out_channels, rng);
    Tensor first = conv2d_forward(map, sub.first);
    zero_channels(first, mask.bits);
    std::vector<Layer> rest = sub.interstitial;
    rest.push_back(sub.second);
    expect_near(subnetwork_forward(sub, map, mask), run_layers(rest, first), 1e-9);
    // Same result through apply_mask on the whole network.
    const SubNetwork masked_sub = extract_subnetwork(apply_mask(net, mask), l);
    expect_near(subnetwork_forward(masked_sub, map), subnetwork_forward(sub, map, mask), 1e-9);
  }
}

TEST(SubNetworkForward, ZeroInputGivesBiasPath) {
  std::mt19937_64 rng(7);
  const Network net = oracle::random_cnn(rng);
  const SubNetwork sub = extract_subnetwork(net, 1);
  const Tensor zero({1, 2, 8, 8});
  Tensor first({1, sub.first.out_channels, 8, 8});
  for (std::size_t c = 0; c < sub.first.out_channels; ++c)
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) first.at(0, c, i, j) = sub.first.bias[c];
  std::vector<Layer> rest = sub.interstitial;
  rest.push_back(sub.second);
  expect_near(subnetwork_forward(sub, zero), run_layers(rest, first), 1e-12);
  expect_code(ErrorCode::invalid_shape, [&] { subnetwork_forward(sub, Tensor({1, 3, 8, 8})); });
}

TEST(Compact, AllOnesIsIdentity) {
  std::mt19937_64 rng(8);
  const Network net = oracle::random_cnn(rng);
  std::map<std::size_t, FilterMask> masks;
  for (std::size_t l = 1; l <= net.conv_count(); ++l) {
    masks.emplace(l, FilterMask::full(l, net.conv(l).out_channels));
  }
  EXPECT_EQ(compact(net, masks), net);
}

TEST(Compact, MatchesMaskedLogits) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Network net = oracle::random_cnn(rng);
    std::map<std::size_t, FilterMask> masks;
    Network masked = net;
    for (std::size_t l = 1; l <= net.conv_count(); ++l) {
      if (rng() % 3 == 0) continue;
      FilterMask m = random_mask(l, net.conv(l).out_channels, rng);
      masked = apply_mask(masked, m);
      masks.emplace(l, std::move(m));
    }
    const Network small = compact(net, masks);
    const Tensor x = oracle::random_tensor({3, 2, 8, 8}, rng);
    expect_near(forward(small, x).logits, forward(masked, x).logits, 1e-9);
    bool any_cleared = false;
    for (const auto& [l, m] : masks) any_cleared = any_cleared || m.retained() < m.size();
    if (any_cleared) EXPECT_LT(count_params(small), count_params(net));
  }
}

TEST(Compact, RejectsInconsistentMasks) {
  std::mt19937_64 rng(10);
  const Network net = oracle::random_cnn(rng);
  std::map<std::size_t, FilterMask> masks;
  masks.emplace(1, FilterMask::full(2, net.conv(2).out_channels));
  expect_code(ErrorCode::invalid_mask, [&] { compact(net, masks); });
}

TEST(Compact, ParamsFallWithEachClearedBit) {
  const Network net = build_cnn(parse_cnn_config("6,M,4"), {2, 4, 4}, 3, 1);
  std::size_t previous = count_params(net);
  FilterMask m = FilterMask::full(2, 4);
  for (std::size_t cleared = 1; cleared < 4; ++cleared) {
    m.bits[cleared - 1] = 0;
    const std::size_t now = count_params(compact(net, {{2, m}}));
    EXPECT_LT(now, previous);
    previous = now;
  }
}

TEST(Counting, SmallCases) {
  ConvParams conv = ConvParams::zeros(1, 1, 3, 1, 1);
  const Network one({1, 4, 4}, {conv, FlattenLayer{}, DenseParams::zeros(16, 1)});
  EXPECT_EQ(count_flops(one), 288u + 2u * 16u);
  const Network dense({512, 1, 1}, {FlattenLayer{}, DenseParams::zeros(512, 10)});
  EXPECT_EQ(count_params(dense), 5130u);
  EXPECT_EQ(count_params(one), 10u + 17u);
}

TEST(ModelIo, RoundTripVgg) {
  const fs::path dir = scratch("vgg");
  save_model(vgg(), dir);
  const Network back = load_model(dir);
  EXPECT_TRUE(back == vgg());
  EXPECT_TRUE(load_model(dir / "manifest.json") == vgg());
  fs::remove_all(dir);
}

TEST(ModelIo, RejectsCorruptInputs) {
  std::mt19937_64 rng(11);
  const Network net = oracle::random_cnn(rng);
  const fs::path dir = scratch("corrupt");
  save_model(net, dir);

  nlohmann::json manifest;
  std::ifstream(dir / "manifest.json") >> manifest;
  auto rewrite = [&](const nlohmann::json& m) { std::ofstream(dir / "manifest.json") << m.dump(); };

  nlohmann::json bad = manifest;
  bad["blob_count"] = manifest["blob_count"].get<int>() + 1;
  rewrite(bad);
  expect_code(ErrorCode::corrupt_model, [&] { load_model(dir); });

  rewrite(manifest);
  fs::resize_file(dir / "layer_000.bin", fs::file_size(dir / "layer_000.bin") - 8);
  expect_code(ErrorCode::corrupt_model, [&] { load_model(dir); });

  std::ofstream(dir / "manifest.json", std::ios::trunc).close();
  expect_code(ErrorCode::corrupt_model, [&] { load_model(dir); });

  fs::remove_all(dir);
  expect_code(ErrorCode::io, [&] { load_model(dir); });
}

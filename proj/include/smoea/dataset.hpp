#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "smoea/tensor.hpp"

namespace smoea {

struct Dataset {
  Tensor images;            // [N, C, H, W]
  std::vector<int> labels;  // N entries

  std::size_t size() const noexcept { return labels.size(); }
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

/// Rows `indices` of `data`, in that order.
Dataset subset(const Dataset& data, std::span<const std::size_t> indices);

// CIFAR-10 binary records: 1 label byte + 3072 pixel bytes (R, G, B planes of
// 32x32, row-major).
inline constexpr std::size_t kCifarRecordBytes = 3073;

/// Pixels scaled to [0, 1]. Throws corrupt-data on bad framing or labels.
Dataset parse_cifar10(std::span<const std::uint8_t> bytes);
Dataset load_cifar10_file(const std::filesystem::path& file);
/// data_batch_1..5.bin (whichever exist, at least one) and test_batch.bin.
DatasetSplit load_cifar10(const std::filesystem::path& dir);

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

ChannelStats compute_channel_stats(const Dataset& data);
void normalize(Dataset& data, const ChannelStats& stats);

struct SyntheticParams {
  std::size_t classes = 10;
  std::size_t train_per_class = 60;
  std::size_t test_per_class = 100;
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  // Templates are drawn on a coarse grid and upsampled, so classes differ in
  // spatial structure rather than per-pixel noise.
  std::size_t template_cells = 4;
  double noise = 2.0;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const SyntheticParams& p);
void from_json(const nlohmann::json& j, SyntheticParams& p);

/// Each class is a fixed random template; samples add Gaussian pixel noise.
DatasetSplit generate_synthetic(const SyntheticParams& params);

}  // namespace smoea

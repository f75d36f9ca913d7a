#include "smoea/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>

#include "smoea/error.hpp"

namespace smoea {

namespace fs = std::filesystem;

Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
  Shape shape = data.images.shape();
  const std::size_t row = data.images.size() / std::max<std::size_t>(data.size(), 1);
  shape[0] = indices.size();
  Dataset out{Tensor(shape), std::vector<int>(indices.size())};
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= data.size()) throw Error(ErrorCode::invalid_argument, "subset index out of range");
    std::copy_n(data.images.data() + src * row, row, out.images.data() + i * row);
    out.labels[i] = data.labels[src];
  }
  return out;
}

Dataset parse_cifar10(std::span<const std::uint8_t> bytes) {
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    throw Error(ErrorCode::corrupt_data,
                "CIFAR-10 stream of " + std::to_string(bytes.size()) +
                    " bytes is not a whole number of 3073-byte records");
  }
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  Dataset out{Tensor({n, 3, 32, 32}), std::vector<int>(n)};
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint8_t* record = bytes.data() + r * kCifarRecordBytes;
    if (record[0] > 9) {
      throw Error(ErrorCode::corrupt_data, "record " + std::to_string(r) + " has label " +
                                               std::to_string(record[0]));
    }
    out.labels[r] = record[0];
    double* dst = out.images.data() + r * 3072;
    for (std::size_t p = 0; p < 3072; ++p) dst[p] = record[1 + p] / 255.0;
  }
  return out;
}

Dataset load_cifar10_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + file.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return parse_cifar10(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), file.string() + ": " + e.what());
  }
}

namespace {

Dataset concatenate(const std::vector<Dataset>& parts) {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  Shape shape = parts.front().images.shape();
  shape[0] = n;
  Dataset out{Tensor(shape), {}};
  out.labels.reserve(n);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy_n(p.images.data(), p.images.size(), out.images.data() + offset);
    offset += p.images.size();
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

}  // namespace

DatasetSplit load_cifar10(const fs::path& dir) {
  std::vector<Dataset> train;
  for (int i = 1; i <= 5; ++i) {
    const fs::path file = dir / ("data_batch_" + std::to_string(i) + ".bin");
    if (fs::exists(file)) train.push_back(load_cifar10_file(file));
  }
  if (train.empty()) {
    throw Error(ErrorCode::io, "no data_batch_*.bin files under " + dir.string());
  }
  return DatasetSplit{concatenate(train), load_cifar10_file(dir / "test_batch.bin")};
}

ChannelStats compute_channel_stats(const Dataset& data) {
  const std::size_t n = data.images.dim(0), c = data.images.dim(1);
  const std::size_t plane = data.images.dim(2) * data.images.dim(3);
  ChannelStats stats{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  if (n == 0) throw Error(ErrorCode::invalid_data, "channel statistics of an empty dataset");
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = data.images.data() + (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        sum += p[k];
        sq += p[k] * p[k];
      }
    }
    const double count = static_cast<double>(n * plane);
    stats.mean[ch] = sum / count;
    const double var = std::max(0.0, sq / count - stats.mean[ch] * stats.mean[ch]);
    stats.stddev[ch] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return stats;
}

void normalize(Dataset& data, const ChannelStats& stats) {
  const std::size_t n = data.images.dim(0), c = data.images.dim(1);
  if (stats.mean.size() != c || stats.stddev.size() != c) {
    throw Error(ErrorCode::invalid_argument, "channel statistics do not match image channels");
  }
  const std::size_t plane = data.images.dim(2) * data.images.dim(3);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double* p = data.images.data() + (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) p[k] = (p[k] - stats.mean[ch]) / stats.stddev[ch];
    }
  }
}

void to_json(nlohmann::json& j, const SyntheticParams& p) {
  j = nlohmann::json{{"classes", p.classes},         {"train_per_class", p.train_per_class},
                     {"test_per_class", p.test_per_class}, {"channels", p.channels},
                     {"height", p.height},           {"width", p.width},
                     {"template_cells", p.template_cells}, {"noise", p.noise},
                     {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, SyntheticParams& p) {
  SyntheticParams d;
  p.classes = j.value("classes", d.classes);
  p.train_per_class = j.value("train_per_class", d.train_per_class);
  p.test_per_class = j.value("test_per_class", d.test_per_class);
  p.channels = j.value("channels", d.channels);
  p.height = j.value("height", d.height);
  p.width = j.value("width", d.width);
  p.template_cells = j.value("template_cells", d.template_cells);
  p.noise = j.value("noise", d.noise);
  p.seed = j.value("seed", d.seed);
}

DatasetSplit generate_synthetic(const SyntheticParams& params) {
  if (params.classes < 2) {
    throw Error(ErrorCode::invalid_argument, "synthetic data needs at least 2 classes");
  }
  if (params.template_cells == 0 || params.height == 0 || params.width == 0 ||
      params.channels == 0) {
    throw Error(ErrorCode::invalid_argument, "synthetic geometry must be positive");
  }
  std::mt19937_64 rng(params.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t c = params.channels, h = params.height, w = params.width;
  const std::size_t cells = params.template_cells;

  std::vector<Tensor> templates;
  for (std::size_t k = 0; k < params.classes; ++k) {
    Tensor coarse({c, cells, cells});
    for (double& v : coarse.values()) v = normal(rng);
    // Bilinear upsampling of the coarse grid.
    Tensor t({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        const double fy = (static_cast<double>(y) + 0.5) * cells / h - 0.5;
        const double cy = std::clamp(fy, 0.0, static_cast<double>(cells - 1));
        const auto y0 = static_cast<std::size_t>(std::floor(cy));
        const std::size_t y1 = std::min(y0 + 1, cells - 1);
        const double ay = cy - static_cast<double>(y0);
        for (std::size_t x = 0; x < w; ++x) {
          const double fx = (static_cast<double>(x) + 0.5) * cells / w - 0.5;
          const double cx = std::clamp(fx, 0.0, static_cast<double>(cells - 1));
          const auto x0 = static_cast<std::size_t>(std::floor(cx));
          const std::size_t x1 = std::min(x0 + 1, cells - 1);
          const double ax = cx - static_cast<double>(x0);
          auto g = [&](std::size_t yy, std::size_t xx) {
            return coarse[(ch * cells + yy) * cells + xx];
          };
          t[(ch * h + y) * w + x] = (1 - ay) * ((1 - ax) * g(y0, x0) + ax * g(y0, x1)) +
                                    ay * ((1 - ax) * g(y1, x0) + ax * g(y1, x1));
        }
      }
    }
    templates.push_back(std::move(t));
  }

  auto make = [&](std::size_t per_class) {
    const std::size_t n = per_class * params.classes;
    Dataset d{Tensor({n, c, h, w}), std::vector<int>(n)};
    const std::size_t row = c * h * w;
    // Interleave classes so that any prefix is roughly balanced.
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = i % params.classes;
      d.labels[i] = static_cast<int>(k);
      double* dst = d.images.data() + i * row;
      for (std::size_t p = 0; p < row; ++p) {
        dst[p] = templates[k][p] + (params.noise > 0.0 ? params.noise * normal(rng) : 0.0);
      }
    }
    return d;
  };
  DatasetSplit split;
  split.train = make(params.train_per_class);
  split.test = make(params.test_per_class);
  return split;
}

}  // namespace smoea

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace smoea {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_volume(const Shape& shape);

// Dense row-major array of doubles. Copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  // 4-D accessor for [n, c, h, w] tensors.
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  /// Same data viewed under a new shape of equal volume.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  void fill(double value);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

struct ConvParams {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  Tensor weights;  // [out, in, kh, kw]
  Tensor bias;     // [out]

  static ConvParams zeros(std::size_t out_channels, std::size_t in_channels,
                          std::size_t kernel, std::size_t stride = 1,
                          std::size_t padding = 0);

  /// Throws invalid-shape / invalid-geometry when the fields disagree.
  void validate() const;

  friend bool operator==(const ConvParams&, const ConvParams&) = default;
};

struct DenseParams {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  Tensor weights;  // [in, out]
  Tensor bias;     // [out]

  static DenseParams zeros(std::size_t in_features, std::size_t out_features);
  void validate() const;

  friend bool operator==(const DenseParams&, const DenseParams&) = default;
};

/// Spatial output extent of a convolution; throws invalid-geometry when the
/// window does not tile the padded input.
std::size_t conv_output_extent(std::size_t input, std::size_t kernel,
                               std::size_t stride, std::size_t padding);

// Cross-correlation plus bias. input [N, Cin, H, W] -> [N, Cout, H', W'].
Tensor conv2d_forward(const Tensor& input, const ConvParams& params);

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

ConvGrads conv2d_backward(const Tensor& input, const ConvParams& params,
                          const Tensor& grad_out);

/// Output produced by input channel `channel` alone, excluding bias. Summing
/// these over every input channel and adding the bias reproduces
/// conv2d_forward.
Tensor conv2d_channel_contribution(const Tensor& input, const ConvParams& params,
                                   std::size_t channel);

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

struct MaxPoolResult {
  Tensor output;
  Shape input_shape;
  // Flat input index of the winning element for every output element.
  std::vector<std::size_t> argmax;
};

MaxPoolResult maxpool2x2(const Tensor& input);
Tensor maxpool2x2_backward(const MaxPoolResult& record, const Tensor& grad_out);

// input [N, D] -> [N, O]
Tensor dense_forward(const Tensor& input, const DenseParams& params);

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

DenseGrads dense_backward(const Tensor& input, const DenseParams& params,
                          const Tensor& grad_out);

struct LossResult {
  double loss = 0.0;
  Tensor grad_logits;
};

/// Mean cross-entropy over the batch, gradient already divided by N.
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

/// v <- momentum * v + (g + weight_decay * p); p <- p - lr * v.
/// `velocity` is resized (zero-filled) on first use.
void sgd_update(std::span<double> params, std::span<const double> grads,
                const SgdOptions& options, std::vector<double>& velocity);

double frobenius_norm(const Tensor& t);
double inner_product(const Tensor& a, const Tensor& b);

}  // namespace smoea

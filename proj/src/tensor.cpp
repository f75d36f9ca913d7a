#include "smoea/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "smoea/error.hpp"

namespace smoea {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_volume(shape_)) {
    throw Error(ErrorCode::invalid_shape,
                "tensor data length " + std::to_string(data_.size()) +
                    " does not match shape " + shape_string(shape_));
  }
}

double& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (shape_volume(shape) != data_.size()) {
    throw Error(ErrorCode::invalid_shape, "cannot reshape " + shape_string(shape_) +
                                              " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

ConvParams ConvParams::zeros(std::size_t out_channels, std::size_t in_channels,
                             std::size_t kernel, std::size_t stride,
                             std::size_t padding) {
  ConvParams p;
  p.out_channels = out_channels;
  p.in_channels = in_channels;
  p.kernel_h = kernel;
  p.kernel_w = kernel;
  p.stride = stride;
  p.padding = padding;
  p.weights = Tensor({out_channels, in_channels, kernel, kernel});
  p.bias = Tensor({out_channels});
  return p;
}

void ConvParams::validate() const {
  if (stride < 1) throw Error(ErrorCode::invalid_geometry, "conv stride must be >= 1");
  if (kernel_h == 0 || kernel_w == 0 || out_channels == 0 || in_channels == 0) {
    throw Error(ErrorCode::invalid_geometry, "conv dimensions must be positive");
  }
  if (weights.shape() != Shape{out_channels, in_channels, kernel_h, kernel_w}) {
    throw Error(ErrorCode::invalid_shape,
                "conv weights shape " + shape_string(weights.shape()) +
                    " does not match declared geometry");
  }
  if (bias.shape() != Shape{out_channels}) {
    throw Error(ErrorCode::invalid_shape,
                "conv bias shape " + shape_string(bias.shape()) + " does not match");
  }
}

DenseParams DenseParams::zeros(std::size_t in_features, std::size_t out_features) {
  DenseParams p;
  p.in_features = in_features;
  p.out_features = out_features;
  p.weights = Tensor({in_features, out_features});
  p.bias = Tensor({out_features});
  return p;
}

void DenseParams::validate() const {
  if (weights.shape() != Shape{in_features, out_features} ||
      bias.shape() != Shape{out_features}) {
    throw Error(ErrorCode::invalid_shape, "dense parameter shapes do not match geometry");
  }
}

std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  const std::size_t padded = input + 2 * padding;
  if (stride == 0 || padded < kernel || (padded - kernel) % stride != 0) {
    throw Error(ErrorCode::invalid_geometry,
                "conv window (kernel " + std::to_string(kernel) + ", stride " +
                    std::to_string(stride) + ", pad " + std::to_string(padding) +
                    ") does not tile input extent " + std::to_string(input));
  }
  return (padded - kernel) / stride + 1;
}

namespace {

struct ConvGeometry {
  std::size_t batch, in_c, in_h, in_w, out_c, out_h, out_w;
};

ConvGeometry conv_geometry(const Tensor& input, const ConvParams& params) {
  params.validate();
  if (input.rank() != 4 || input.dim(1) != params.in_channels) {
    throw Error(ErrorCode::invalid_shape,
                "conv input " + shape_string(input.shape()) + " expects " +
                    std::to_string(params.in_channels) + " channels");
  }
  ConvGeometry g{};
  g.batch = input.dim(0);
  g.in_c = input.dim(1);
  g.in_h = input.dim(2);
  g.in_w = input.dim(3);
  g.out_c = params.out_channels;
  g.out_h = conv_output_extent(g.in_h, params.kernel_h, params.stride, params.padding);
  g.out_w = conv_output_extent(g.in_w, params.kernel_w, params.stride, params.padding);
  return g;
}

// Output positions o in [lo, hi) whose input index o*stride + k - pad lies
// inside [0, in_extent).
struct Range {
  std::size_t lo, hi;
};

Range valid_outputs(std::size_t in_extent, std::size_t out_extent, std::size_t k,
                    std::size_t stride, std::size_t pad) {
  const auto s = static_cast<long>(stride);
  const long shift = static_cast<long>(pad) - static_cast<long>(k);
  long lo = shift > 0 ? (shift + s - 1) / s : 0;
  long last = static_cast<long>(in_extent) - 1 + shift;
  long hi = last < 0 ? 0 : last / s + 1;
  hi = std::min(hi, static_cast<long>(out_extent));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Accumulates w * in_plane into out_plane for one kernel tap.
void accumulate_tap(const double* in_plane, double* out_plane, double w,
                    const ConvGeometry& g, const ConvParams& p, std::size_t ky,
                    std::size_t kx) {
  const Range ry = valid_outputs(g.in_h, g.out_h, ky, p.stride, p.padding);
  const Range rx = valid_outputs(g.in_w, g.out_w, kx, p.stride, p.padding);
  if (rx.lo >= rx.hi) return;
  for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
    const std::size_t iy = oy * p.stride + ky - p.padding;
    const double* in_row = in_plane + iy * g.in_w;
    double* out_row = out_plane + oy * g.out_w;
    if (p.stride == 1) {
      const double* src = in_row + rx.lo + kx - p.padding;
      for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) out_row[ox] += w * *src++;
    } else {
      for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) {
        out_row[ox] += w * in_row[ox * p.stride + kx - p.padding];
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const ConvParams& params) {
  const ConvGeometry g = conv_geometry(input, params);
  Tensor out({g.batch, g.out_c, g.out_h, g.out_w});
  const std::size_t in_plane = g.in_h * g.in_w;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t taps = params.kernel_h * params.kernel_w;
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.out_c; ++co) {
      double* dst = out.data() + (n * g.out_c + co) * out_plane;
      std::fill(dst, dst + out_plane, params.bias[co]);
      for (std::size_t ci = 0; ci < g.in_c; ++ci) {
        const double* src = input.data() + (n * g.in_c + ci) * in_plane;
        const double* w = params.weights.data() + (co * g.in_c + ci) * taps;
        for (std::size_t ky = 0; ky < params.kernel_h; ++ky) {
          for (std::size_t kx = 0; kx < params.kernel_w; ++kx) {
            accumulate_tap(src, dst, w[ky * params.kernel_w + kx], g, params, ky, kx);
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_channel_contribution(const Tensor& input, const ConvParams& params,
                                   std::size_t channel) {
  const ConvGeometry g = conv_geometry(input, params);
  if (channel >= g.in_c) {
    throw Error(ErrorCode::invalid_argument, "input channel out of range");
  }
  Tensor out({g.batch, g.out_c, g.out_h, g.out_w});
  const std::size_t in_plane = g.in_h * g.in_w;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t taps = params.kernel_h * params.kernel_w;
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* src = input.data() + (n * g.in_c + channel) * in_plane;
    for (std::size_t co = 0; co < g.out_c; ++co) {
      double* dst = out.data() + (n * g.out_c + co) * out_plane;
      const double* w = params.weights.data() + (co * g.in_c + channel) * taps;
      for (std::size_t ky = 0; ky < params.kernel_h; ++ky) {
        for (std::size_t kx = 0; kx < params.kernel_w; ++kx) {
          accumulate_tap(src, dst, w[ky * params.kernel_w + kx], g, params, ky, kx);
        }
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const ConvParams& params,
                          const Tensor& grad_out) {
  const ConvGeometry g = conv_geometry(input, params);
  if (grad_out.shape() != Shape{g.batch, g.out_c, g.out_h, g.out_w}) {
    throw Error(ErrorCode::invalid_shape,
                "conv grad_out " + shape_string(grad_out.shape()) +
                    " does not match forward output shape");
  }
  ConvGrads grads{Tensor(input.shape()), Tensor(params.weights.shape()),
                  Tensor(params.bias.shape())};
  const std::size_t in_plane = g.in_h * g.in_w;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t taps = params.kernel_h * params.kernel_w;
  const std::size_t s = params.stride;
  const std::size_t pad = params.padding;

  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.out_c; ++co) {
      const double* go = grad_out.data() + (n * g.out_c + co) * out_plane;
      double bias_acc = 0.0;
      for (std::size_t i = 0; i < out_plane; ++i) bias_acc += go[i];
      grads.bias[co] += bias_acc;

      for (std::size_t ci = 0; ci < g.in_c; ++ci) {
        const double* src = input.data() + (n * g.in_c + ci) * in_plane;
        double* gi = grads.input.data() + (n * g.in_c + ci) * in_plane;
        const double* w = params.weights.data() + (co * g.in_c + ci) * taps;
        double* gw = grads.weights.data() + (co * g.in_c + ci) * taps;
        for (std::size_t ky = 0; ky < params.kernel_h; ++ky) {
          const Range ry = valid_outputs(g.in_h, g.out_h, ky, s, pad);
          for (std::size_t kx = 0; kx < params.kernel_w; ++kx) {
            const Range rx = valid_outputs(g.in_w, g.out_w, kx, s, pad);
            const double wv = w[ky * params.kernel_w + kx];
            double acc = 0.0;
            for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
              const std::size_t iy = oy * s + ky - pad;
              const double* go_row = go + oy * g.out_w;
              const double* in_row = src + iy * g.in_w;
              double* gi_row = gi + iy * g.in_w;
              for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) {
                const std::size_t ix = ox * s + kx - pad;
                acc += go_row[ox] * in_row[ix];
                gi_row[ix] += wv * go_row[ox];
              }
            }
            gw[ky * params.kernel_w + kx] += acc;
          }
        }
      }
    }
  }
  return grads;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  if (input.shape() != grad_out.shape()) {
    throw Error(ErrorCode::invalid_shape, "relu grad_out shape mismatch");
  }
  Tensor grad(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    grad[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
  }
  return grad;
}

MaxPoolResult maxpool2x2(const Tensor& input) {
  if (input.rank() != 4) {
    throw Error(ErrorCode::invalid_shape, "maxpool expects a 4-D input");
  }
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw Error(ErrorCode::invalid_geometry,
                "maxpool2x2 needs even spatial extents, got " + shape_string(input.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  MaxPoolResult result{Tensor({batch, channels, oh, ow}), input.shape(), {}};
  result.argmax.resize(result.output.size());
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < batch * channels; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x, ++o) {
        const std::size_t candidates[4] = {
            base + (2 * y) * w + 2 * x, base + (2 * y) * w + 2 * x + 1,
            base + (2 * y + 1) * w + 2 * x, base + (2 * y + 1) * w + 2 * x + 1};
        std::size_t best = candidates[0];
        for (std::size_t k = 1; k < 4; ++k) {
          if (input[candidates[k]] > input[best]) best = candidates[k];
        }
        result.output[o] = input[best];
        result.argmax[o] = best;
      }
    }
  }
  return result;
}

Tensor maxpool2x2_backward(const MaxPoolResult& record, const Tensor& grad_out) {
  if (grad_out.shape() != record.output.shape()) {
    throw Error(ErrorCode::invalid_shape, "maxpool grad_out shape mismatch");
  }
  Tensor grad(record.input_shape);
  for (std::size_t i = 0; i < grad_out.size(); ++i) grad[record.argmax[i]] += grad_out[i];
  return grad;
}

Tensor dense_forward(const Tensor& input, const DenseParams& params) {
  params.validate();
  if (input.rank() != 2 || input.dim(1) != params.in_features) {
    throw Error(ErrorCode::invalid_shape,
                "dense input " + shape_string(input.shape()) + " expects " +
                    std::to_string(params.in_features) + " features");
  }
  const std::size_t batch = input.dim(0), d = params.in_features, o = params.out_features;
  Tensor out({batch, o});
  for (std::size_t n = 0; n < batch; ++n) {
    double* row = out.data() + n * o;
    std::copy(params.bias.data(), params.bias.data() + o, row);
    const double* x = input.data() + n * d;
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = x[i];
      if (xi == 0.0) continue;
      const double* wrow = params.weights.data() + i * o;
      for (std::size_t j = 0; j < o; ++j) row[j] += xi * wrow[j];
    }
  }
  return out;
}

DenseGrads dense_backward(const Tensor& input, const DenseParams& params,
                          const Tensor& grad_out) {
  params.validate();
  if (input.rank() != 2 || input.dim(1) != params.in_features ||
      grad_out.shape() != Shape{input.dim(0), params.out_features}) {
    throw Error(ErrorCode::invalid_shape, "dense backward shape mismatch");
  }
  const std::size_t batch = input.dim(0), d = params.in_features, o = params.out_features;
  DenseGrads grads{Tensor(input.shape()), Tensor(params.weights.shape()),
                   Tensor(params.bias.shape())};
  for (std::size_t n = 0; n < batch; ++n) {
    const double* g = grad_out.data() + n * o;
    const double* x = input.data() + n * d;
    double* gx = grads.input.data() + n * d;
    for (std::size_t j = 0; j < o; ++j) grads.bias[j] += g[j];
    for (std::size_t i = 0; i < d; ++i) {
      const double* wrow = params.weights.data() + i * o;
      double* gwrow = grads.weights.data() + i * o;
      double acc = 0.0;
      for (std::size_t j = 0; j < o; ++j) {
        acc += wrow[j] * g[j];
        gwrow[j] += x[i] * g[j];
      }
      gx[i] = acc;
    }
  }
  return grads;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw Error(ErrorCode::invalid_shape, "logits/labels size mismatch");
  }
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  LossResult result{0.0, Tensor(logits.shape())};
  if (batch == 0) return result;
  for (std::size_t n = 0; n < batch; ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw Error(ErrorCode::invalid_label,
                  "label " + std::to_string(label) + " outside [0, " +
                      std::to_string(classes) + ")");
    }
    const double* z = logits.data() + n * classes;
    const double peak = *std::max_element(z, z + classes);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(z[c] - peak);
    const double log_sum = peak + std::log(sum);
    result.loss += log_sum - z[label];
    double* g = result.grad_logits.data() + n * classes;
    for (std::size_t c = 0; c < classes; ++c) {
      g[c] = std::exp(z[c] - log_sum) / static_cast<double>(batch);
    }
    g[label] -= 1.0 / static_cast<double>(batch);
  }
  result.loss /= static_cast<double>(batch);
  return result;
}

void sgd_update(std::span<double> params, std::span<const double> grads,
                const SgdOptions& options, std::vector<double>& velocity) {
  if (params.size() != grads.size()) {
    throw Error(ErrorCode::invalid_shape, "sgd parameter/gradient length mismatch");
  }
  if (velocity.size() != params.size()) velocity.assign(params.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + options.weight_decay * params[i];
    velocity[i] = options.momentum * velocity[i] + g;
    params[i] -= options.lr * velocity[i];
  }
}

double inner_product(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::invalid_shape, "inner product of " + shape_string(a.shape()) +
                                              " and " + shape_string(b.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double frobenius_norm(const Tensor& t) { return std::sqrt(inner_product(t, t)); }

}  // namespace smoea

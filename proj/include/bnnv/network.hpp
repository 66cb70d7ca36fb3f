#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "bnnv/errors.hpp"
#include "bnnv/tensor.hpp"

namespace bnnv {

using Label = std::size_t;

// Binarized convolution: valid padding, stride 1, no bias. Weights are +-1,
// laid out [out][kernel_h][kernel_w][in].
struct QConv {
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t in_channels = 0;
  std::vector<std::int8_t> weights;
  bool quantize_input = false;

  std::size_t fan_in() const { return kernel_h * kernel_w * in_channels; }
  std::int8_t weight(std::size_t o, std::size_t ky, std::size_t kx, std::size_t c) const {
    return weights[((o * kernel_h + ky) * kernel_w + kx) * in_channels + c];
  }
  bool operator==(const QConv&) const = default;
};

struct MaxPool {
  std::size_t pool = 2;
  std::size_t stride = 2;
  bool operator==(const MaxPool&) const = default;
};

// Inference-mode batch normalization over the last axis. Parameters are float32
// as exported by training frameworks; arithmetic happens in double.
struct BatchNorm {
  std::vector<float> gamma;
  std::vector<float> beta;
  std::vector<float> moving_mean;
  std::vector<float> moving_variance;
  float eps_bn = 1e-3f;

  std::size_t channels() const { return gamma.size(); }
  bool operator==(const BatchNorm&) const = default;
};

struct Flatten {
  bool operator==(const Flatten&) const = default;
};

// Binarized dense layer without bias. Weights are +-1, laid out [out][in].
struct QDense {
  std::size_t out_features = 0;
  std::size_t in_features = 0;
  std::vector<std::int8_t> weights;
  bool quantize_input = false;

  std::int8_t weight(std::size_t o, std::size_t i) const { return weights[o * in_features + i]; }
  bool operator==(const QDense&) const = default;
};

using Layer = std::variant<QConv, MaxPool, BatchNorm, Flatten, QDense>;

struct Network {
  Shape input_shape;
  std::vector<Layer> layers;
  std::size_t num_classes = 43;

  bool operator==(const Network&) const = default;
};

struct ParamCount {
  std::uint64_t binary = 0;
  std::uint64_t real = 0;
  std::uint64_t total = 0;
  bool operator==(const ParamCount&) const = default;
};

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// ---------------------------------------------------------------------------
// Scalar semantics shared by every evaluation path.

// sign(0) = +1.
inline double sign_value(double x) { return x >= 0.0 ? 1.0 : -1.0; }

inline double bn_scalar(double x, double gamma, double beta, double mean, double variance,
                        double eps) {
  return gamma * (x - mean) / std::sqrt(variance + eps) + beta;
}

inline double bn_scalar(const BatchNorm& bn, std::size_t c, double x) {
  return bn_scalar(x, bn.gamma[c], bn.beta[c], bn.moving_mean[c], bn.moving_variance[c],
                   bn.eps_bn);
}

inline bool is_quantizing(const Layer& layer) {
  if (auto* c = std::get_if<QConv>(&layer)) return c->quantize_input;
  if (auto* d = std::get_if<QDense>(&layer)) return d->quantize_input;
  return false;
}

inline bool is_linear(const Layer& layer) {
  return std::holds_alternative<QConv>(layer) || std::holds_alternative<QDense>(layer);
}

inline std::string layer_name(const Layer& layer) {
  return std::visit(
      overloaded{
          [](const QConv& c) {
            return fmt::format("QConv({}, {}x{})", c.out_channels, c.kernel_h, c.kernel_w);
          },
          [](const MaxPool& m) { return fmt::format("MaxPool({}x{}/{})", m.pool, m.pool, m.stride); },
          [](const BatchNorm& b) { return fmt::format("BatchNorm({})", b.channels()); },
          [](const Flatten&) { return std::string("Flatten"); },
          [](const QDense& d) { return fmt::format("QDense({})", d.out_features); },
      },
      layer);
}

// ---------------------------------------------------------------------------
// Shape inference.

inline Shape output_shape(const Layer& layer, const Shape& in) {
  return std::visit(
      overloaded{
          [&](const QConv& c) -> Shape {
            if (in.size() != 3 || in[2] != c.in_channels || in[0] < c.kernel_h ||
                in[1] < c.kernel_w)
              throw ShapeError("qconv input (spatial >= kernel, matching channels)",
                               {c.kernel_h, c.kernel_w, c.in_channels}, in);
            return {in[0] - c.kernel_h + 1, in[1] - c.kernel_w + 1, c.out_channels};
          },
          [&](const MaxPool& m) -> Shape {
            if (in.size() != 3 || in[0] < m.pool || in[1] < m.pool)
              throw ShapeError("maxpool input (spatial >= pool)", {m.pool, m.pool, 1}, in);
            return {(in[0] - m.pool) / m.stride + 1, (in[1] - m.pool) / m.stride + 1, in[2]};
          },
          [&](const BatchNorm& b) -> Shape {
            if (in.empty() || in.back() != b.channels())
              throw ShapeError("batchnorm channels", {b.channels()}, in);
            return in;
          },
          [&](const Flatten&) -> Shape { return {shape_size(in)}; },
          [&](const QDense& d) -> Shape {
            if (in.size() != 1 || in[0] != d.in_features)
              throw ShapeError("qdense input", {d.in_features}, in);
            return {d.out_features};
          },
      },
      layer);
}

// shapes[0] is the input shape, shapes[i + 1] the output of layer i.
inline std::vector<Shape> layer_shapes(const Network& net) {
  std::vector<Shape> shapes{net.input_shape};
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    try {
      shapes.push_back(output_shape(net.layers[i], shapes.back()));
    } catch (const ShapeError& e) {
      throw e.at_layer(i);
    }
  }
  return shapes;
}

// Throws InvalidModel or ShapeError when `net` breaks a structural invariant.
inline void validate(const Network& net) {
  if (net.input_shape.empty()) throw InvalidModel("network input shape is empty");
  bool seen_linear = false;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& layer = net.layers[i];
    auto check_weights = [&](const std::vector<std::int8_t>& w, std::size_t expected) {
      if (w.size() != expected)
        throw InvalidModel(fmt::format("layer {}: {} has {} weights, expected {}", i,
                                       layer_name(layer), w.size(), expected));
      for (auto v : w)
        if (v != 1 && v != -1)
          throw InvalidModel(fmt::format("layer {}: weight {} is not +-1", i, int(v)));
    };
    if (auto* c = std::get_if<QConv>(&layer)) {
      check_weights(c->weights, c->out_channels * c->fan_in());
    } else if (auto* d = std::get_if<QDense>(&layer)) {
      check_weights(d->weights, d->out_features * d->in_features);
    } else if (auto* b = std::get_if<BatchNorm>(&layer)) {
      auto n = b->gamma.size();
      if (b->beta.size() != n || b->moving_mean.size() != n || b->moving_variance.size() != n)
        throw InvalidModel(fmt::format("layer {}: batchnorm vectors differ in length", i));
      for (std::size_t c = 0; c < n; ++c)
        if (b->moving_variance[c] < 0.0f ||
            double(b->moving_variance[c]) + double(b->eps_bn) <= 0.0)
          throw InvalidModel(fmt::format("layer {}: moving_variance[{}] + eps is not positive", i, c));
    } else if (auto* m = std::get_if<MaxPool>(&layer)) {
      if (m->pool == 0 || m->stride == 0) throw InvalidModel("maxpool with zero size");
    }
    if (is_linear(layer)) {
      if (is_quantizing(layer) != seen_linear)
        throw InvalidModel(fmt::format(
            "layer {}: {} must have quantize_input={}", i, layer_name(layer),
            seen_linear ? "true" : "false (first layer is never binarized)"));
      seen_linear = true;
    }
  }
  auto shapes = layer_shapes(net);
  if (net.layers.empty() || !std::holds_alternative<QDense>(net.layers.back()))
    throw InvalidModel("final layer must be QDense");
  if (shapes.back() != Shape{net.num_classes})
    throw ShapeError("network output", {net.num_classes}, shapes.back());
}

// ---------------------------------------------------------------------------
// Reference layer semantics.

inline Tensor sign_quantize(const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = sign_value(t[i]);
  return out;
}

inline Tensor qconv_forward(const Tensor& input, const QConv& layer) {
  Shape out_shape = output_shape(layer, input.shape());
  const Tensor x = layer.quantize_input ? sign_quantize(input) : input;
  const std::size_t w_in = input.shape()[1], c_in = layer.in_channels;
  Tensor out(out_shape);
  for (std::size_t r = 0; r < out_shape[0]; ++r)
    for (std::size_t c = 0; c < out_shape[1]; ++c)
      for (std::size_t o = 0; o < layer.out_channels; ++o) {
        double acc = 0.0;
        for (std::size_t ky = 0; ky < layer.kernel_h; ++ky)
          for (std::size_t kx = 0; kx < layer.kernel_w; ++kx) {
            const double* px = &x.data()[((r + ky) * w_in + (c + kx)) * c_in];
            const std::int8_t* pw = &layer.weights[((o * layer.kernel_h + ky) * layer.kernel_w + kx) * c_in];
            for (std::size_t ch = 0; ch < c_in; ++ch) acc += pw[ch] * px[ch];
          }
        out.at(r, c, o) = acc;
      }
  return out;
}

inline Tensor maxpool_forward(const Tensor& input, const MaxPool& layer = {}) {
  Shape out_shape = output_shape(layer, input.shape());
  Tensor out(out_shape);
  for (std::size_t r = 0; r < out_shape[0]; ++r)
    for (std::size_t c = 0; c < out_shape[1]; ++c)
      for (std::size_t ch = 0; ch < out_shape[2]; ++ch) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t dy = 0; dy < layer.pool; ++dy)
          for (std::size_t dx = 0; dx < layer.pool; ++dx)
            m = std::max(m, input.at(r * layer.stride + dy, c * layer.stride + dx, ch));
        out.at(r, c, ch) = m;
      }
  return out;
}

inline Tensor batchnorm_forward(const Tensor& input, const BatchNorm& layer) {
  output_shape(layer, input.shape());
  for (std::size_t c = 0; c < layer.channels(); ++c)
    if (layer.moving_variance[c] < 0.0f ||
        double(layer.moving_variance[c]) + double(layer.eps_bn) <= 0.0)
      throw InvalidModel(fmt::format("batchnorm moving_variance[{}] + eps is not positive", c));
  const std::size_t channels = layer.channels();
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = bn_scalar(layer, i % channels, input[i]);
  return out;
}

inline Tensor qdense_forward(const Tensor& input, const QDense& layer) {
  Shape out_shape = output_shape(layer, input.shape());
  const Tensor x = layer.quantize_input ? sign_quantize(input) : input;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < layer.out_features; ++o) {
    double acc = 0.0;
    const std::int8_t* pw = &layer.weights[o * layer.in_features];
    for (std::size_t i = 0; i < layer.in_features; ++i) acc += pw[i] * x[i];
    out[o] = acc;
  }
  return out;
}

inline Tensor apply_layer(const Layer& layer, const Tensor& input) {
  return std::visit(overloaded{
                        [&](const QConv& c) { return qconv_forward(input, c); },
                        [&](const MaxPool& m) { return maxpool_forward(input, m); },
                        [&](const BatchNorm& b) { return batchnorm_forward(input, b); },
                        [&](const Flatten&) { return input.reshaped({input.size()}); },
                        [&](const QDense& d) { return qdense_forward(input, d); },
                    },
                    layer);
}

// Applies layers [first, last) to `t`.
inline Tensor forward_layers(const Network& net, std::size_t first, std::size_t last, Tensor t) {
  for (std::size_t i = first; i < last; ++i) {
    try {
      t = apply_layer(net.layers[i], t);
    } catch (const ShapeError& e) {
      throw e.at_layer(i);
    }
  }
  return t;
}

inline Tensor network_forward(const Network& net, const Tensor& image) {
  if (image.shape() != net.input_shape)
    throw ShapeError("network input", net.input_shape, image.shape());
  return forward_layers(net, 0, net.layers.size(), image);
}

// Index of the largest logit; ties go to the lowest index.
inline Label predict(std::span<const double> logits) {
  if (logits.empty()) throw Error("predict on empty logits");
  return static_cast<Label>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

inline Label predict(const Network& net, const Tensor& image) {
  return predict(network_forward(net, image).data());
}

inline ParamCount count_params(const Network& net) {
  ParamCount p;
  for (const Layer& layer : net.layers) {
    if (auto* c = std::get_if<QConv>(&layer))
      p.binary += std::uint64_t(c->fan_in()) * c->out_channels;
    else if (auto* d = std::get_if<QDense>(&layer))
      p.binary += std::uint64_t(d->in_features) * d->out_features;
    else if (auto* b = std::get_if<BatchNorm>(&layer))
      p.real += 2 * std::uint64_t(b->channels());
  }
  p.total = p.binary + p.real;
  return p;
}

}  // namespace bnnv

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>

#include "bnnv/network.hpp"
#include "bnnv/random.hpp"

namespace bnnv {

// Appends layers while tracking the running shape. The first linear layer reads
// raw inputs; every later one binarizes its input.
class NetworkBuilder {
public:
  explicit NetworkBuilder(Shape input_shape, std::size_t num_classes = 43) {
    net_.input_shape = input_shape;
    net_.num_classes = num_classes;
    shape_ = std::move(input_shape);
  }

  NetworkBuilder& conv(std::size_t out_channels, std::size_t kh, std::size_t kw) {
    QConv c;
    c.out_channels = out_channels;
    c.kernel_h = kh;
    c.kernel_w = kw;
    c.in_channels = shape_.size() == 3 ? shape_[2] : 0;
    c.weights.assign(out_channels * c.fan_in(), 1);
    c.quantize_input = seen_linear_;
    seen_linear_ = true;
    return push(std::move(c));
  }

  NetworkBuilder& maxpool(std::size_t pool = 2, std::size_t stride = 2) {
    return push(MaxPool{pool, stride});
  }

  NetworkBuilder& batchnorm() {
    const std::size_t n = shape_.empty() ? 0 : shape_.back();
    BatchNorm b;
    b.gamma.assign(n, 1.0f);
    b.beta.assign(n, 0.0f);
    b.moving_mean.assign(n, 0.0f);
    b.moving_variance.assign(n, 1.0f);
    return push(std::move(b));
  }

  NetworkBuilder& flatten() { return push(Flatten{}); }

  NetworkBuilder& dense(std::size_t out_features) {
    QDense d;
    d.out_features = out_features;
    d.in_features = shape_.size() == 1 ? shape_[0] : shape_size(shape_);
    d.weights.assign(out_features * d.in_features, 1);
    d.quantize_input = seen_linear_;
    seen_linear_ = true;
    return push(std::move(d));
  }

  const Shape& shape() const { return shape_; }
  Network build() const {
    validate(net_);
    return net_;
  }

private:
  NetworkBuilder& push(Layer layer) {
    try {
      shape_ = output_shape(layer, shape_);
    } catch (const ShapeError& e) {
      throw e.at_layer(net_.layers.size());
    }
    net_.layers.push_back(std::move(layer));
    return *this;
  }

  Network net_;
  Shape shape_;
  bool seen_linear_ = false;
};

// QConv(32,5x5) MP BN, QConv(64,5x5) MP BN, QConv(64,3x3) MP BN, Dense(1024) BN, Dense(43).
inline Network build_arch_a(std::size_t h, std::size_t w, std::size_t num_classes = 43) {
  return NetworkBuilder({h, w, 3}, num_classes)
      .conv(32, 5, 5).maxpool().batchnorm()
      .conv(64, 5, 5).maxpool().batchnorm()
      .conv(64, 3, 3).maxpool().batchnorm()
      .flatten()
      .dense(1024).batchnorm()
      .dense(num_classes)
      .build();
}

// Like A, but the third block has no pooling and the hidden dense layer is 256 wide.
inline Network build_arch_b(std::size_t h, std::size_t w, std::size_t num_classes = 43) {
  return NetworkBuilder({h, w, 3}, num_classes)
      .conv(32, 5, 5).maxpool().batchnorm()
      .conv(64, 5, 5).maxpool().batchnorm()
      .conv(64, 3, 3).batchnorm()
      .flatten()
      .dense(256).batchnorm()
      .dense(num_classes)
      .build();
}

// XNOR(QConv): QConv(16,3x3), QConv(32,2x2), Dense(43). Binary parameters only.
inline Network build_arch_xnor(std::size_t h, std::size_t w, std::size_t num_classes = 43) {
  return NetworkBuilder({h, w, 3}, num_classes)
      .conv(16, 3, 3)
      .conv(32, 2, 2)
      .flatten()
      .dense(num_classes)
      .build();
}

inline Network build_arch(const std::string& name, std::size_t h, std::size_t w,
                          std::size_t num_classes = 43) {
  if (name == "a" || name == "A") return build_arch_a(h, w, num_classes);
  if (name == "b" || name == "B") return build_arch_b(h, w, num_classes);
  if (name == "xnor" || name == "XNOR") return build_arch_xnor(h, w, num_classes);
  throw Error("unknown architecture '" + name + "' (expected a, b or xnor)");
}

// Fills `net` with synthetic parameters: uniform +-1 weights, and batch-norm
// statistics calibrated on one uniform-noise image so that roughly half of every
// channel's activations are positive. A stand-in for trained weights.
inline void randomize_network(Network& net, std::uint64_t seed) {
  Rng rng(seed);
  Tensor probe(net.input_shape);
  for (auto& v : probe.data()) v = double(uniform_int(rng, 0, 255));

  Tensor t = probe;
  for (auto& layer : net.layers) {
    if (auto* c = std::get_if<QConv>(&layer)) {
      for (auto& w : c->weights) w = (rng() & 1) ? 1 : -1;
    } else if (auto* d = std::get_if<QDense>(&layer)) {
      for (auto& w : d->weights) w = (rng() & 1) ? 1 : -1;
    } else if (auto* b = std::get_if<BatchNorm>(&layer)) {
      const std::size_t n = b->channels();
      std::vector<double> sum(n, 0.0), sq(n, 0.0);
      std::vector<std::size_t> cnt(n, 0);
      for (std::size_t i = 0; i < t.size(); ++i) {
        sum[i % n] += t[i];
        sq[i % n] += t[i] * t[i];
        ++cnt[i % n];
      }
      for (std::size_t c = 0; c < n; ++c) {
        double mean = sum[c] / double(cnt[c]);
        double var = std::max(sq[c] / double(cnt[c]) - mean * mean, 0.0) + 1.0;
        b->gamma[c] = float(uniform_real(rng, 0.5, 1.5));
        b->beta[c] = float(uniform_real(rng, -0.25, 0.25));
        b->moving_mean[c] = float(mean + uniform_real(rng, -0.5, 0.5) * std::sqrt(var));
        b->moving_variance[c] = float(var);
      }
    }
    t = apply_layer(layer, t);
  }
}

}  // namespace bnnv

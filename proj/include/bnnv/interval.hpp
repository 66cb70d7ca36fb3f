#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "bnnv/network.hpp"
#include "bnnv/vnnlib.hpp"

namespace bnnv {

struct IntervalTensor {
  Shape shape;
  std::vector<double> lo;
  std::vector<double> hi;

  IntervalTensor() = default;
  IntervalTensor(Shape s, std::vector<double> l, std::vector<double> h)
      : shape(std::move(s)), lo(std::move(l)), hi(std::move(h)) {
    if (lo.size() != shape_size(shape) || hi.size() != lo.size())
      throw ShapeError("interval tensor data", shape, Shape{lo.size()});
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (!(lo[i] <= hi[i])) throw Error(fmt::format("interval {} has lo > hi", i));
  }

  static IntervalTensor point(const Tensor& t) {
    return {t.shape(), t.values(), t.values()};
  }

  static IntervalTensor from_property(const RobustnessProperty& p, const Shape& shape) {
    std::vector<double> l(p.input_bounds.size()), h(p.input_bounds.size());
    for (std::size_t i = 0; i < l.size(); ++i) {
      l[i] = p.input_bounds[i].lo;
      h[i] = p.input_bounds[i].hi;
    }
    return {shape, std::move(l), std::move(h)};
  }

  std::size_t size() const { return lo.size(); }
  bool contains(std::span<const double> x) const {
    if (x.size() != size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (!(x[i] >= lo[i] && x[i] <= hi[i])) return false;
    return true;
  }
};

namespace detail {

inline void sign_interval(double& lo, double& hi) {
  if (lo >= 0.0) {
    lo = hi = 1.0;
  } else if (hi < 0.0) {
    lo = hi = -1.0;
  } else {
    lo = -1.0;
    hi = 1.0;
  }
}

// Bounds are accumulated in the same order as the concrete forward pass. Each
// term of the lower sum is <= the matching concrete term, and rounded addition
// is monotone, so the bounds also hold for the floating-point results.
inline IntervalTensor ibp_conv(const IntervalTensor& in, const QConv& c) {
  const Shape out_shape = output_shape(c, in.shape);
  std::vector<double> xl = in.lo, xh = in.hi;
  if (c.quantize_input)
    for (std::size_t i = 0; i < xl.size(); ++i) sign_interval(xl[i], xh[i]);
  const std::size_t w_in = in.shape[1], cin = c.in_channels;
  IntervalTensor out;
  out.shape = out_shape;
  out.lo.assign(shape_size(out_shape), 0.0);
  out.hi.assign(out.lo.size(), 0.0);
  for (std::size_t r = 0; r < out_shape[0]; ++r)
    for (std::size_t col = 0; col < out_shape[1]; ++col)
      for (std::size_t o = 0; o < c.out_channels; ++o) {
        double lo = 0.0, hi = 0.0;
        for (std::size_t ky = 0; ky < c.kernel_h; ++ky)
          for (std::size_t kx = 0; kx < c.kernel_w; ++kx) {
            const std::size_t base = ((r + ky) * w_in + (col + kx)) * cin;
            const std::int8_t* pw = &c.weights[((o * c.kernel_h + ky) * c.kernel_w + kx) * cin];
            for (std::size_t ch = 0; ch < cin; ++ch) {
              if (pw[ch] > 0) {
                lo += xl[base + ch];
                hi += xh[base + ch];
              } else {
                lo += -xh[base + ch];
                hi += -xl[base + ch];
              }
            }
          }
        const std::size_t k = (r * out_shape[1] + col) * c.out_channels + o;
        out.lo[k] = lo;
        out.hi[k] = hi;
      }
  return out;
}

inline IntervalTensor ibp_dense(const IntervalTensor& in, const QDense& d) {
  const Shape out_shape = output_shape(d, in.shape);
  std::vector<double> xl = in.lo, xh = in.hi;
  if (d.quantize_input)
    for (std::size_t i = 0; i < xl.size(); ++i) sign_interval(xl[i], xh[i]);
  IntervalTensor out;
  out.shape = out_shape;
  out.lo.assign(d.out_features, 0.0);
  out.hi.assign(d.out_features, 0.0);
  for (std::size_t o = 0; o < d.out_features; ++o) {
    double lo = 0.0, hi = 0.0;
    const std::int8_t* pw = &d.weights[o * d.in_features];
    for (std::size_t i = 0; i < d.in_features; ++i) {
      if (pw[i] > 0) {
        lo += xl[i];
        hi += xh[i];
      } else {
        lo += -xh[i];
        hi += -xl[i];
      }
    }
    out.lo[o] = lo;
    out.hi[o] = hi;
  }
  return out;
}

inline IntervalTensor ibp_pool(const IntervalTensor& in, const MaxPool& m) {
  const Shape out_shape = output_shape(m, in.shape);
  IntervalTensor out;
  out.shape = out_shape;
  out.lo.assign(shape_size(out_shape), 0.0);
  out.hi.assign(out.lo.size(), 0.0);
  const std::size_t w = in.shape[1], ch = in.shape[2];
  for (std::size_t r = 0; r < out_shape[0]; ++r)
    for (std::size_t c = 0; c < out_shape[1]; ++c)
      for (std::size_t k = 0; k < ch; ++k) {
        double lo = -std::numeric_limits<double>::infinity(), hi = lo;
        for (std::size_t dy = 0; dy < m.pool; ++dy)
          for (std::size_t dx = 0; dx < m.pool; ++dx) {
            const std::size_t i = ((r * m.stride + dy) * w + (c * m.stride + dx)) * ch + k;
            lo = std::max(lo, in.lo[i]);
            hi = std::max(hi, in.hi[i]);
          }
        const std::size_t o = (r * out_shape[1] + c) * ch + k;
        out.lo[o] = lo;
        out.hi[o] = hi;
      }
  return out;
}

// bn_scalar is monotone in x (direction given by sign of gamma, constant when
// gamma is zero), so evaluating both endpoints and ordering them is exact.
inline IntervalTensor ibp_batchnorm(const IntervalTensor& in, const BatchNorm& b) {
  output_shape(b, in.shape);
  IntervalTensor out = in;
  const std::size_t n = b.channels();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double a = bn_scalar(b, i % n, in.lo[i]);
    const double z = bn_scalar(b, i % n, in.hi[i]);
    out.lo[i] = std::min(a, z);
    out.hi[i] = std::max(a, z);
  }
  return out;
}

}  // namespace detail

inline IntervalTensor ibp_layer(const Layer& layer, const IntervalTensor& in) {
  return std::visit(overloaded{
                        [&](const QConv& c) { return detail::ibp_conv(in, c); },
                        [&](const MaxPool& m) { return detail::ibp_pool(in, m); },
                        [&](const BatchNorm& b) { return detail::ibp_batchnorm(in, b); },
                        [&](const Flatten&) {
                          IntervalTensor out = in;
                          out.shape = {in.size()};
                          return out;
                        },
                        [&](const QDense& d) { return detail::ibp_dense(in, d); },
                    },
                    layer);
}

// Bounds after each of layers [first, last); element 0 is `box` itself.
inline std::vector<IntervalTensor> ibp_layers(const Network& net, const IntervalTensor& box,
                                              std::size_t first, std::size_t last) {
  std::vector<IntervalTensor> out{box};
  for (std::size_t i = first; i < last; ++i) {
    try {
      out.push_back(ibp_layer(net.layers[i], out.back()));
    } catch (const ShapeError& e) {
      throw e.at_layer(i);
    }
  }
  return out;
}

inline IntervalTensor ibp_propagate(const Network& net, const IntervalTensor& box) {
  if (box.shape != net.input_shape) throw ShapeError("ibp input box", net.input_shape, box.shape);
  IntervalTensor t = box;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    try {
      t = ibp_layer(net.layers[i], t);
    } catch (const ShapeError& e) {
      throw e.at_layer(i);
    }
  }
  return t;
}

// True when lower(Y_target) > upper(Y_j) for every j != target.
inline bool dominates(const IntervalTensor& logits, Label target) {
  for (std::size_t j = 0; j < logits.size(); ++j)
    if (j != target && !(logits.lo[target] > logits.hi[j])) return false;
  return true;
}

// max_j (upper(Y_j) - lower(Y_target)); negative exactly when `dominates`.
inline double violation_margin(const IntervalTensor& logits, Label target) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < logits.size(); ++j)
    if (j != target) m = std::max(m, logits.hi[j] - logits.lo[target]);
  return m;
}

}  // namespace bnnv

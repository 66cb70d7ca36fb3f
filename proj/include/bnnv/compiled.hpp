#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <limits>
#include <span>
#include <variant>
#include <vector>

#include "bnnv/network.hpp"

namespace bnnv {

class IncrementalEval;

// Fast evaluator for a validated Network. Binarized layers pack signs into
// 64-bit words and use xor/popcount; real-input layers keep the reference
// accumulation order. Logits are bit-identical to network_forward.
class CompiledNetwork {
public:
  explicit CompiledNetwork(const Network& net)
      : input_shape_(net.input_shape), num_classes_(net.num_classes) {
    validate(net);
    auto shapes = layer_shapes(net);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      const Shape& in = shapes[i];
      if (std::holds_alternative<Flatten>(net.layers[i])) continue;
      std::visit(overloaded{
                     [&](const QConv& c) {
                       if (c.quantize_input)
                         stages_.push_back(pack_conv(c, in));
                       else
                         stages_.push_back(RealConv{c});
                     },
                     [&](const QDense& d) {
                       if (d.quantize_input)
                         stages_.push_back(pack_dense(d));
                       else
                         stages_.push_back(RealDense{d});
                     },
                     [&](const MaxPool& m) { stages_.push_back(Pool{m}); },
                     [&](const BatchNorm& b) { stages_.push_back(b); },
                     [&](const Flatten&) {},
                 },
                 net.layers[i]);
      in_.push_back(in);
      out_.push_back(shapes[i + 1]);
    }
  }

  const Shape& input_shape() const { return input_shape_; }
  std::size_t input_size() const { return shape_size(input_shape_); }
  std::size_t num_classes() const { return num_classes_; }

  std::vector<double> logits(std::span<const double> input) const;
  Label predict(std::span<const double> input) const { return bnnv::predict(logits(input)); }

private:
  friend class IncrementalEval;
  static constexpr std::size_t kWord = 64;
  static std::size_t words_for(std::size_t n) { return (n + kWord - 1) / kWord; }

  struct RealConv {
    QConv layer;
  };
  struct BinConv {
    std::size_t words, out_c, kh, kw;
    std::vector<std::uint64_t> weights;  // [out][kh][kw][words]
  };
  struct RealDense {
    QDense layer;
  };
  struct BinDense {
    std::size_t in, out, words;
    std::vector<std::uint64_t> weights;  // [out][words]
  };
  struct Pool {
    MaxPool layer;
  };
  using Stage = std::variant<RealConv, BinConv, RealDense, BinDense, Pool, BatchNorm>;

  static BinConv pack_conv(const QConv& c, const Shape& in) {
    BinConv b{words_for(in[2]), c.out_channels, c.kernel_h, c.kernel_w, {}};
    b.weights.assign(b.out_c * b.kh * b.kw * b.words, 0);
    for (std::size_t o = 0; o < b.out_c; ++o)
      for (std::size_t ky = 0; ky < b.kh; ++ky)
        for (std::size_t kx = 0; kx < b.kw; ++kx)
          for (std::size_t ch = 0; ch < in[2]; ++ch)
            if (c.weight(o, ky, kx, ch) > 0)
              b.weights[((o * b.kh + ky) * b.kw + kx) * b.words + ch / kWord] |=
                  std::uint64_t{1} << (ch % kWord);
    return b;
  }

  static BinDense pack_dense(const QDense& d) {
    BinDense b{d.in_features, d.out_features, words_for(d.in_features), {}};
    b.weights.assign(b.out * b.words, 0);
    for (std::size_t o = 0; o < b.out; ++o)
      for (std::size_t i = 0; i < b.in; ++i)
        if (d.weight(o, i) > 0) b.weights[o * b.words + i / kWord] |= std::uint64_t{1} << (i % kWord);
    return b;
  }

  Shape input_shape_;
  std::size_t num_classes_;
  std::vector<Stage> stages_;
  std::vector<Shape> in_, out_;
};

// Holds every intermediate tensor for one input. After set(i, v) only the
// part of each spatial layer that input i can reach is recomputed, so a
// single-pixel change costs far less than a full pass. Values stay
// bit-identical to a full evaluation.
class IncrementalEval {
public:
  IncrementalEval(const CompiledNetwork& net, std::span<const double> input) : net_(net) {
    if (input.size() != net.input_size())
      throw ShapeError("compiled network input", net.input_shape(), Shape{input.size()});
    const std::size_t n = net.stages_.size();
    bufs_.resize(n + 1);
    bits_.resize(n);
    bufs_[0].assign(input.begin(), input.end());
    for (std::size_t k = 0; k < n; ++k) {
      bufs_[k + 1].assign(shape_size(net.out_[k]), 0.0);
      run(k, Region{});
    }
  }

  std::span<const double> logits() const { return bufs_.back(); }
  std::span<const double> input() const { return bufs_.front(); }

  void set(std::size_t i, double v) {
    bufs_[0].at(i) = v;
    Region r;
    const Shape& s = net_.input_shape();
    if (s.size() == 3) {
      const std::size_t pos = i / s[2];
      r = Region{false, pos / s[1], pos / s[1] + 1, pos % s[1], pos % s[1] + 1};
    }
    for (std::size_t k = 0; k < net_.stages_.size() && !r.empty(); ++k) r = run(k, r);
  }

private:
  using CN = CompiledNetwork;

  // Rows [r0, r1) x cols [c0, c1) of a rank-3 tensor, or everything.
  struct Region {
    bool all = true;
    std::size_t r0 = 0, r1 = 0, c0 = 0, c1 = 0;
    bool empty() const { return !all && (r0 >= r1 || c0 >= c1); }
  };

  static Region full(const Shape& s) { return {false, 0, s[0], 0, s[1]}; }

  // Output region of a k x k / stride-1 window layer.
  static Region through_conv(const Region& in, const Shape& out, std::size_t kh, std::size_t kw) {
    if (in.all) return full(out);
    return {false, in.r0 + 1 > kh ? in.r0 + 1 - kh : 0, std::min(out[0], in.r1),
            in.c0 + 1 > kw ? in.c0 + 1 - kw : 0, std::min(out[1], in.c1)};
  }

  static Region through_pool(const Region& in, const Shape& out, const MaxPool& m) {
    if (in.all) return full(out);
    auto lo = [&](std::size_t x) { return x >= m.pool ? (x - m.pool) / m.stride + 1 : 0; };
    auto hi = [&](std::size_t x, std::size_t n) { return std::min(n, (x - 1) / m.stride + 1); };
    return {false, lo(in.r0), hi(in.r1, out[0]), lo(in.c0), hi(in.c1, out[1])};
  }

  // Packs the sign bits of buffer k over `r` (rank-3 input) or entirely.
  void pack(std::size_t k, const Region& r, std::size_t width, std::size_t words) {
    const auto& x = bufs_[k];
    auto& bits = bits_[k];
    const std::size_t rows = x.size() / width;
    if (bits.size() != rows * words) bits.assign(rows * words, 0);
    auto pack_row = [&](std::size_t p) {
      std::fill_n(&bits[p * words], words, 0);
      for (std::size_t i = 0; i < width; ++i)
        if (x[p * width + i] >= 0.0) bits[p * words + i / CN::kWord] |= std::uint64_t{1} << (i % CN::kWord);
    };
    const Shape& s = net_.in_[k];
    if (r.all || s.size() != 3) {
      for (std::size_t p = 0; p < rows; ++p) pack_row(p);
      return;
    }
    for (std::size_t row = r.r0; row < r.r1; ++row)
      for (std::size_t col = r.c0; col < r.c1; ++col) pack_row(row * s[1] + col);
  }

  Region run(std::size_t k, const Region& in) {
    const Shape& is = net_.in_[k];
    const Shape& os = net_.out_[k];
    const auto& x = bufs_[k];
    auto& y = bufs_[k + 1];
    return std::visit(
        overloaded{
            [&](const CN::RealConv& s) {
              const QConv& c = s.layer;
              const Region out = through_conv(in, os, c.kernel_h, c.kernel_w);
              const std::size_t cin = c.in_channels, w_in = is[1];
              for (std::size_t r = out.r0; r < out.r1; ++r)
                for (std::size_t col = out.c0; col < out.c1; ++col)
                  for (std::size_t o = 0; o < c.out_channels; ++o) {
                    double acc = 0.0;
                    for (std::size_t ky = 0; ky < c.kernel_h; ++ky)
                      for (std::size_t kx = 0; kx < c.kernel_w; ++kx) {
                        const double* px = &x[((r + ky) * w_in + (col + kx)) * cin];
                        const std::int8_t* pw = &c.weights[((o * c.kernel_h + ky) * c.kernel_w + kx) * cin];
                        for (std::size_t ch = 0; ch < cin; ++ch) acc += pw[ch] * px[ch];
                      }
                    y[(r * os[1] + col) * c.out_channels + o] = acc;
                  }
              return out;
            },
            [&](const CN::BinConv& s) {
              pack(k, in, is[2], s.words);
              const Region out = through_conv(in, os, s.kh, s.kw);
              const auto& bits = bits_[k];
              const std::int64_t fan_in = std::int64_t(s.kh * s.kw * is[2]);
              for (std::size_t r = out.r0; r < out.r1; ++r)
                for (std::size_t col = out.c0; col < out.c1; ++col)
                  for (std::size_t o = 0; o < s.out_c; ++o) {
                    std::int64_t mismatches = 0;
                    for (std::size_t ky = 0; ky < s.kh; ++ky)
                      for (std::size_t kx = 0; kx < s.kw; ++kx) {
                        const std::uint64_t* px = &bits[((r + ky) * is[1] + (col + kx)) * s.words];
                        const std::uint64_t* pw = &s.weights[((o * s.kh + ky) * s.kw + kx) * s.words];
                        for (std::size_t w = 0; w < s.words; ++w) mismatches += std::popcount(px[w] ^ pw[w]);
                      }
                    y[(r * os[1] + col) * s.out_c + o] = double(fan_in - 2 * mismatches);
                  }
              return out;
            },
            [&](const CN::RealDense& s) {
              const QDense& d = s.layer;
              for (std::size_t o = 0; o < d.out_features; ++o) {
                double acc = 0.0;
                const std::int8_t* pw = &d.weights[o * d.in_features];
                for (std::size_t i = 0; i < d.in_features; ++i) acc += pw[i] * x[i];
                y[o] = acc;
              }
              return Region{};
            },
            [&](const CN::BinDense& s) {
              pack(k, Region{}, s.in, s.words);
              const auto& bits = bits_[k];
              for (std::size_t o = 0; o < s.out; ++o) {
                std::int64_t mismatches = 0;
                const std::uint64_t* pw = &s.weights[o * s.words];
                for (std::size_t w = 0; w < s.words; ++w) mismatches += std::popcount(bits[w] ^ pw[w]);
                y[o] = double(std::int64_t(s.in) - 2 * mismatches);
              }
              return Region{};
            },
            [&](const CN::Pool& s) {
              const std::size_t p = s.layer.pool, st = s.layer.stride, ch = is[2];
              const Region out = through_pool(in, os, s.layer);
              for (std::size_t r = out.r0; r < out.r1; ++r)
                for (std::size_t c = out.c0; c < out.c1; ++c)
                  for (std::size_t q = 0; q < ch; ++q) {
                    double m = -std::numeric_limits<double>::infinity();
                    for (std::size_t dy = 0; dy < p; ++dy)
                      for (std::size_t dx = 0; dx < p; ++dx)
                        m = std::max(m, x[((r * st + dy) * is[1] + (c * st + dx)) * ch + q]);
                    y[(r * os[1] + c) * ch + q] = m;
                  }
              return out;
            },
            [&](const BatchNorm& b) {
              const std::size_t n = b.channels();
              if (is.size() != 3) {
                for (std::size_t i = 0; i < x.size(); ++i) y[i] = bn_scalar(b, i % n, x[i]);
                return Region{};
              }
              const Region out = in.all ? full(is) : in;
              for (std::size_t r = out.r0; r < out.r1; ++r)
                for (std::size_t c = out.c0; c < out.c1; ++c)
                  for (std::size_t q = 0; q < n; ++q) {
                    const std::size_t i = (r * is[1] + c) * n + q;
                    y[i] = bn_scalar(b, q, x[i]);
                  }
              return out;
            },
        },
        net_.stages_[k]);
  }

  const CompiledNetwork& net_;
  std::vector<std::vector<double>> bufs_;
  std::vector<std::vector<std::uint64_t>> bits_;
};

inline std::vector<double> CompiledNetwork::logits(std::span<const double> input) const {
  IncrementalEval e(*this, input);
  auto l = e.logits();
  return {l.begin(), l.end()};
}

}  // namespace bnnv

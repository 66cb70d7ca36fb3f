#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bnnv/cnf.hpp"
#include "bnnv/interval.hpp"
#include "bnnv/verifier.hpp"

namespace bnnv {

// Sign of one entry of the tensor entering the first binarized layer:
// +1 / -1 fixes it, 0 leaves it free.
using Phase = std::int8_t;

struct CnfVar {
  int literal = 0;          // true <=> the activation is +1
  std::size_t layer = 0;    // index of the layer that consumes the activation
  std::size_t neuron = 0;   // flat index in that layer's input
  std::string role;         // "phase" or "act"
};

struct CnfExport {
  CnfFormula formula;
  std::vector<CnfVar> vars;
  std::size_t first_binary_layer = 0;
  std::vector<int> phase_vars;  // variable of each phase entry
};

inline std::size_t first_binary_layer(const Network& net) {
  for (std::size_t i = 0; i < net.layers.size(); ++i)
    if (is_quantizing(net.layers[i])) return i;
  throw Error("network has no binarized layer to encode");
}

inline std::vector<Phase> phases_from_point(const Network& net, const Tensor& x) {
  const Tensor t = forward_layers(net, 0, first_binary_layer(net), x);
  std::vector<Phase> p(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) p[i] = t[i] >= 0.0 ? 1 : -1;
  return p;
}

// Phases every point of the box agrees on; 0 where IBP cannot decide.
inline std::vector<Phase> phases_from_ibp(const Network& net, const IntervalTensor& box) {
  const auto layers = ibp_layers(net, box, 0, first_binary_layer(net));
  const auto& t = layers.back();
  std::vector<Phase> p(t.size(), 0);
  for (std::size_t i = 0; i < t.size(); ++i) p[i] = t.lo[i] >= 0.0 ? 1 : (t.hi[i] < 0.0 ? -1 : 0);
  return p;
}

namespace detail {

inline std::int64_t floor_div2(std::int64_t a) { return a >= 0 ? a / 2 : -((-a + 1) / 2); }
inline std::int64_t ceil_div2(std::int64_t a) { return -floor_div2(-a); }

// Literal for the rule applied to s = 2c - n, where c counts true literals.
inline int encode_rule(CnfFormula& f, const std::vector<int>& lits, const ThresholdRule& rule) {
  using Kind = ThresholdRule::Kind;
  const auto n = std::int64_t(lits.size());
  switch (rule.kind) {
    case Kind::AlwaysPositive: return kTrue;
    case Kind::AlwaysNegative: return kFalse;
    case Kind::AtLeast: {
      // s >= T  <=>  s >= ceil(T)  <=>  c >= ceil((ceil(T) + n) / 2)
      const double t = std::ceil(rule.threshold);
      if (t > double(n)) return kFalse;
      if (t < -double(n)) return kTrue;
      return reify_at_least(f, lits, ceil_div2(std::int64_t(t) + n));
    }
    case Kind::AtMost: {
      // s <= T  <=>  c <= floor((floor(T) + n) / 2)
      const double t = std::floor(rule.threshold);
      if (t >= double(n)) return kTrue;
      if (t < -double(n)) return kFalse;
      return -reify_at_least(f, lits, floor_div2(std::int64_t(t) + n) + 1);
    }
  }
  return kFalse;
}

// Input literals of every output neuron of a binarized linear layer.
inline std::vector<std::vector<int>> neuron_literals(const Layer& layer, const Shape& in,
                                                     const std::vector<int>& bits) {
  std::vector<std::vector<int>> out;
  auto lit = [](int b, std::int8_t w) { return w > 0 ? b : -b; };
  if (auto* c = std::get_if<QConv>(&layer)) {
    const Shape os = output_shape(layer, in);
    const std::size_t w_in = in[1], cin = in[2];
    out.reserve(shape_size(os));
    for (std::size_t r = 0; r < os[0]; ++r)
      for (std::size_t col = 0; col < os[1]; ++col)
        for (std::size_t o = 0; o < c->out_channels; ++o) {
          std::vector<int> l;
          l.reserve(c->fan_in());
          for (std::size_t ky = 0; ky < c->kernel_h; ++ky)
            for (std::size_t kx = 0; kx < c->kernel_w; ++kx)
              for (std::size_t ch = 0; ch < cin; ++ch)
                l.push_back(lit(bits[((r + ky) * w_in + col + kx) * cin + ch], c->weight(o, ky, kx, ch)));
          out.push_back(std::move(l));
        }
  } else {
    const auto& d = std::get<QDense>(layer);
    out.reserve(d.out_features);
    for (std::size_t o = 0; o < d.out_features; ++o) {
      std::vector<int> l(d.in_features);
      for (std::size_t i = 0; i < d.in_features; ++i) l[i] = lit(bits[i], d.weight(o, i));
      out.push_back(std::move(l));
    }
  }
  return out;
}

}  // namespace detail

// Encodes the binarized part of `net` (from its first binarized layer on) plus
// the negated robustness property. With all phases fixed the formula is
// satisfiable iff that activation pattern leads to a counterexample; free
// phases are existentially quantified.
//
// Supported structure after the first binarized layer: each binarized linear
// layer is followed by MaxPool*, an optional BatchNorm and an optional Flatten
// before the next binarized layer; the last layer is the binarized output.
inline CnfExport export_cnf(const Network& net, const RobustnessProperty& prop,
                            const std::vector<Phase>& phases) {
  validate(net);
  check_compatible(net, prop);
  const auto shapes = layer_shapes(net);
  CnfExport ex;
  const std::size_t q = first_binary_layer(net);
  ex.first_binary_layer = q;
  if (phases.size() != shape_size(shapes[q]))
    throw Error(fmt::format("first layer phases not fixed: expected {} entries, got {}",
                            shape_size(shapes[q]), phases.size()));
  CnfFormula& f = ex.formula;

  std::vector<int> bits(phases.size());
  for (std::size_t i = 0; i < phases.size(); ++i) {
    bits[i] = f.new_var();
    ex.phase_vars.push_back(bits[i]);
    ex.vars.push_back({bits[i], q, i, "phase"});
    if (phases[i] > 0) f.add({bits[i]});
    if (phases[i] < 0) f.add({-bits[i]});
  }

  std::size_t i = q;
  while (i + 1 < net.layers.size()) {
    const Layer& lin = net.layers[i];
    if (!is_quantizing(lin)) throw Error(fmt::format("layer {} ({}) is not foldable", i, layer_name(lin)));

    // Scan the block: MaxPool* BatchNorm? Flatten? then the next binarized layer.
    std::size_t j = i + 1;
    std::vector<std::size_t> pools;
    const BatchNorm* bn = nullptr;
    while (j < net.layers.size() && std::holds_alternative<MaxPool>(net.layers[j])) pools.push_back(j++);
    if (j < net.layers.size() && std::holds_alternative<BatchNorm>(net.layers[j]))
      bn = &std::get<BatchNorm>(net.layers[j++]);
    if (j < net.layers.size() && std::holds_alternative<Flatten>(net.layers[j])) ++j;
    if (j >= net.layers.size() || !is_quantizing(net.layers[j]))
      throw Error(fmt::format("layer {} ({}) is not foldable", j < net.layers.size() ? j : i,
                              j < net.layers.size() ? layer_name(net.layers[j]) : "end of network"));

    const Shape& out = shapes[i + 1];
    const std::size_t channels = out.size() == 3 ? out[2] : out[0];
    std::vector<ThresholdRule> rules(channels, ThresholdRule{ThresholdRule::Kind::AtLeast, 0.0});
    if (bn) rules = fold_bn_sign(*bn);
    const auto neurons = detail::neuron_literals(lin, shapes[i], bits);
    std::vector<int> next(neurons.size());
    for (std::size_t k = 0; k < neurons.size(); ++k)
      next[k] = detail::encode_rule(f, neurons[k], rules[k % channels]);

    // Max pooling commutes with a monotone threshold: OR for ">=", AND for "<=".
    for (std::size_t p : pools) {
      const auto& m = std::get<MaxPool>(net.layers[p]);
      const Shape& in = shapes[p];
      const Shape& os = shapes[p + 1];
      std::vector<int> pooled(shape_size(os));
      for (std::size_t r = 0; r < os[0]; ++r)
        for (std::size_t c = 0; c < os[1]; ++c)
          for (std::size_t ch = 0; ch < os[2]; ++ch) {
            std::vector<int> window;
            for (std::size_t dy = 0; dy < m.pool; ++dy)
              for (std::size_t dx = 0; dx < m.pool; ++dx)
                window.push_back(next[((r * m.stride + dy) * in[1] + c * m.stride + dx) * in[2] + ch]);
            const bool at_most = rules[ch].kind == ThresholdRule::Kind::AtMost;
            pooled[(r * os[1] + c) * os[2] + ch] = at_most ? make_and(f, window) : make_or(f, window);
          }
      next = std::move(pooled);
    }

    for (std::size_t k = 0; k < next.size(); ++k) {
      if (next[k] == kTrue || next[k] == kFalse) {
        // Constant activations still get a variable so the map is complete.
        const int v = f.new_var();
        f.add({next[k] == kTrue ? v : -v});
        next[k] = v;
      }
      ex.vars.push_back({next[k], j, k, "act"});
    }
    bits = std::move(next);
    i = j;
  }

  // Output layer: Y_j >= Y_t  <=>  sum over {i : w_j,i != w_t,i} of w_j,i * a_i >= 0.
  const auto* out = std::get_if<QDense>(&net.layers[i]);
  if (!out || !out->quantize_input)
    throw Error(fmt::format("layer {} ({}) is not a binarized output layer", i, layer_name(net.layers[i])));
  const Label t = prop.target_label;
  std::vector<int> disjuncts;
  for (std::size_t jj = 0; jj < out->out_features; ++jj) {
    if (jj == t) continue;
    std::vector<int> lits;
    for (std::size_t k = 0; k < out->in_features; ++k)
      if (out->weight(jj, k) != out->weight(t, k)) lits.push_back(out->weight(jj, k) > 0 ? bits[k] : -bits[k]);
    disjuncts.push_back(reify_at_least(f, lits, detail::ceil_div2(std::int64_t(lits.size()))));
  }
  f.add(Clause(disjuncts));
  return ex;
}

// Sidecar text: one line per named variable, "<literal> <layer> <neuron> <role>".
inline std::string render_var_map(const CnfExport& ex) {
  std::string out = "c literal layer neuron role\n";
  for (const auto& v : ex.vars) out += fmt::format("{} {} {} {}\n", v.literal, v.layer, v.neuron, v.role);
  return out;
}

}  // namespace bnnv

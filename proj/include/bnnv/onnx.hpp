#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bnnv/io.hpp"
#include "bnnv/network.hpp"
#include "bnnv/protobuf.hpp"

// ONNX subset codec. Field numbers and the supported operator set are listed in
// docs/onnx-subset.md.
namespace bnnv::onnx {

inline constexpr std::int64_t kOpsetVersion = 13;
inline constexpr std::int64_t kIrVersion = 7;
inline constexpr std::int32_t kFloat = 1;
inline constexpr std::int32_t kInt64 = 7;

namespace detail {

// Refuse tensors beyond this many elements; protects against absurd dims in
// corrupted files.
inline constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 31;

struct TensorData {
  std::string name;
  std::vector<std::int64_t> dims;
  std::int32_t data_type = 0;
  std::vector<float> floats;
  std::vector<std::int64_t> ints;
  std::size_t offset = 0;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (auto d : dims) {
      if (d < 0 || (d > 0 && n > kMaxElements / std::uint64_t(d)))
        throw FormatError(fmt::format("tensor '{}' has invalid dims", name), offset);
      n *= std::uint64_t(d);
    }
    return n;
  }
};

struct Attribute {
  std::string name;
  std::int64_t type = 0;
  float f = 0.0f;
  std::int64_t i = 0;
  std::string s;
  std::vector<std::int64_t> ints;
  std::vector<float> floats;
};

struct Node {
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string name;
  std::string op_type;
  std::string domain;
  std::vector<Attribute> attributes;
  std::size_t offset = 0;

  const Attribute* attr(const std::string& n) const {
    for (const auto& a : attributes)
      if (a.name == n) return &a;
    return nullptr;
  }
  std::int64_t attr_int(const std::string& n, std::int64_t dflt) const {
    auto* a = attr(n);
    return a ? a->i : dflt;
  }
  std::vector<std::int64_t> attr_ints(const std::string& n, std::vector<std::int64_t> dflt) const {
    auto* a = attr(n);
    return a ? a->ints : dflt;
  }
};

struct ValueInfo {
  std::string name;
  std::vector<std::int64_t> dims;  // -1 for symbolic dimensions
};

struct Graph {
  std::vector<Node> nodes;
  std::map<std::string, TensorData> initializers;
  std::vector<ValueInfo> inputs;
  std::vector<ValueInfo> outputs;
};

inline std::string to_string(const pb::WireField& f) { return std::string(f.str()); }

inline void expect_type(const pb::WireField& f, pb::WireType t, const char* what) {
  if (f.wire_type != t) throw FormatError(fmt::format("unexpected wire type for {}", what), f.offset);
}

inline TensorData parse_tensor(pb::ByteView bytes, std::size_t base) {
  TensorData t;
  t.offset = base;
  pb::Reader r(bytes, base);
  pb::WireField f;
  std::optional<pb::ByteView> raw;
  std::size_t raw_offset = base;
  while (r.next(f)) {
    switch (f.field_number) {
      case 1: pb::append_repeated_varint(f, t.dims, r.absolute(f)); break;
      case 2: expect_type(f, pb::WireType::varint, "data_type"); t.data_type = std::int32_t(f.value); break;
      case 4: pb::append_repeated_float(f, t.floats, f.offset); break;
      case 7: pb::append_repeated_varint(f, t.ints, r.absolute(f)); break;
      case 8: expect_type(f, pb::WireType::len_delimited, "tensor name"); t.name = to_string(f); break;
      case 9:
        expect_type(f, pb::WireType::len_delimited, "raw_data");
        raw = f.bytes;
        raw_offset = r.absolute(f);
        break;
      case 13: throw FormatError("external tensor data is not supported", f.offset);
      default: break;
    }
  }
  const std::uint64_t n = t.element_count();
  if (t.data_type == kFloat) {
    if (raw) {
      if (raw->size() != n * 4)
        throw FormatError(fmt::format("tensor '{}' raw_data has {} bytes, expected {}", t.name,
                                      raw->size(), n * 4),
                          raw_offset);
      t.floats.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t u = 0;
        for (std::size_t b = 0; b < 4; ++b) u |= std::uint32_t((*raw)[4 * i + b]) << (8 * b);
        t.floats[i] = std::bit_cast<float>(u);
      }
    } else if (t.floats.size() != n) {
      throw FormatError(fmt::format("tensor '{}' has {} values, expected {}", t.name,
                                    t.floats.size(), n),
                        base);
    }
  } else if (t.data_type == kInt64) {
    if (raw) {
      if (raw->size() != n * 8) throw FormatError("int64 raw_data length mismatch", raw_offset);
      t.ints.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t u = 0;
        for (std::size_t b = 0; b < 8; ++b) u |= std::uint64_t((*raw)[8 * i + b]) << (8 * b);
        t.ints[i] = std::int64_t(u);
      }
    } else if (t.ints.size() != n) {
      throw FormatError(fmt::format("tensor '{}' has {} values, expected {}", t.name, t.ints.size(), n),
                        base);
    }
  } else {
    throw FormatError(fmt::format("tensor '{}' has unsupported data type {}", t.name, t.data_type), base);
  }
  return t;
}

inline Attribute parse_attribute(pb::ByteView bytes, std::size_t base) {
  Attribute a;
  pb::Reader r(bytes, base);
  pb::WireField f;
  while (r.next(f)) {
    switch (f.field_number) {
      case 1: expect_type(f, pb::WireType::len_delimited, "attribute name"); a.name = to_string(f); break;
      case 2: expect_type(f, pb::WireType::fixed32, "attribute f"); a.f = f.as_float(); break;
      case 3: expect_type(f, pb::WireType::varint, "attribute i"); a.i = f.as_int64(); break;
      case 4: expect_type(f, pb::WireType::len_delimited, "attribute s"); a.s = to_string(f); break;
      case 7: pb::append_repeated_float(f, a.floats, f.offset); break;
      case 8: pb::append_repeated_varint(f, a.ints, r.absolute(f)); break;
      case 20: expect_type(f, pb::WireType::varint, "attribute type"); a.type = f.as_int64(); break;
      default: break;
    }
  }
  return a;
}

inline Node parse_node(pb::ByteView bytes, std::size_t base) {
  Node n;
  n.offset = base;
  pb::Reader r(bytes, base);
  pb::WireField f;
  while (r.next(f)) {
    switch (f.field_number) {
      case 1: expect_type(f, pb::WireType::len_delimited, "node input"); n.inputs.push_back(to_string(f)); break;
      case 2: expect_type(f, pb::WireType::len_delimited, "node output"); n.outputs.push_back(to_string(f)); break;
      case 3: expect_type(f, pb::WireType::len_delimited, "node name"); n.name = to_string(f); break;
      case 4: expect_type(f, pb::WireType::len_delimited, "op_type"); n.op_type = to_string(f); break;
      case 5:
        expect_type(f, pb::WireType::len_delimited, "attribute");
        n.attributes.push_back(parse_attribute(f.bytes, r.absolute(f)));
        break;
      case 7: expect_type(f, pb::WireType::len_delimited, "domain"); n.domain = to_string(f); break;
      default: break;
    }
  }
  return n;
}

inline ValueInfo parse_value_info(pb::ByteView bytes, std::size_t base) {
  ValueInfo v;
  pb::Reader r(bytes, base);
  pb::WireField f;
  while (r.next(f)) {
    if (f.field_number == 1) {
      expect_type(f, pb::WireType::len_delimited, "value name");
      v.name = to_string(f);
    } else if (f.field_number == 2) {
      expect_type(f, pb::WireType::len_delimited, "type");
      pb::Reader tr(f.bytes, r.absolute(f));
      pb::WireField tf;
      while (tr.next(tf)) {
        if (tf.field_number != 1) continue;  // tensor_type
        expect_type(tf, pb::WireType::len_delimited, "tensor_type");
        pb::Reader ttr(tf.bytes, tr.absolute(tf));
        pb::WireField ttf;
        while (ttr.next(ttf)) {
          if (ttf.field_number != 2) continue;  // shape
          expect_type(ttf, pb::WireType::len_delimited, "shape");
          pb::Reader sr(ttf.bytes, ttr.absolute(ttf));
          pb::WireField sf;
          while (sr.next(sf)) {
            if (sf.field_number != 1) continue;  // dim
            expect_type(sf, pb::WireType::len_delimited, "dim");
            pb::Reader dr(sf.bytes, sr.absolute(sf));
            pb::WireField df;
            std::int64_t dim = -1;
            while (dr.next(df))
              if (df.field_number == 1 && df.wire_type == pb::WireType::varint) dim = df.as_int64();
            v.dims.push_back(dim);
          }
        }
      }
    }
  }
  return v;
}

inline Graph parse_graph(pb::ByteView bytes, std::size_t base) {
  Graph g;
  pb::Reader r(bytes, base);
  pb::WireField f;
  while (r.next(f)) {
    switch (f.field_number) {
      case 1:
        expect_type(f, pb::WireType::len_delimited, "node");
        g.nodes.push_back(parse_node(f.bytes, r.absolute(f)));
        break;
      case 5: {
        expect_type(f, pb::WireType::len_delimited, "initializer");
        auto t = parse_tensor(f.bytes, r.absolute(f));
        auto name = t.name;
        g.initializers[name] = std::move(t);
        break;
      }
      case 11:
        expect_type(f, pb::WireType::len_delimited, "graph input");
        g.inputs.push_back(parse_value_info(f.bytes, r.absolute(f)));
        break;
      case 12:
        expect_type(f, pb::WireType::len_delimited, "graph output");
        g.outputs.push_back(parse_value_info(f.bytes, r.absolute(f)));
        break;
      default: break;
    }
  }
  return g;
}

// Kahn ordering; every node input must be the graph input, an initializer, or
// the output of another node.
inline std::vector<const Node*> topological_order(const Graph& g, const std::string& input) {
  std::set<std::string> available{input};
  for (const auto& [name, _] : g.initializers) available.insert(name);
  std::map<std::string, const Node*> producer;
  for (const auto& n : g.nodes)
    for (const auto& o : n.outputs) producer[o] = &n;
  for (const auto& n : g.nodes)
    for (const auto& in : n.inputs)
      if (!in.empty() && !available.count(in) && !producer.count(in))
        throw FormatError(fmt::format("dangling reference '{}' in node '{}'", in, n.name), n.offset);

  std::vector<const Node*> order;
  std::vector<bool> done(g.nodes.size(), false);
  bool progress = true;
  while (order.size() < g.nodes.size() && progress) {
    progress = false;
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      if (done[i]) continue;
      const Node& n = g.nodes[i];
      if (std::all_of(n.inputs.begin(), n.inputs.end(),
                      [&](const std::string& s) { return s.empty() || available.count(s); })) {
        for (const auto& o : n.outputs) available.insert(o);
        order.push_back(&n);
        done[i] = true;
        progress = true;
      }
    }
  }
  if (order.size() != g.nodes.size()) throw FormatError("graph contains a cycle");
  return order;
}

enum class Layout { nhwc, nchw, flat };

inline const TensorData& initializer(const Graph& g, const Node& n, std::size_t idx, const char* role) {
  if (n.inputs.size() <= idx || n.inputs[idx].empty())
    throw FormatError(fmt::format("{} node '{}' is missing its {} input", n.op_type, n.name, role), n.offset);
  auto it = g.initializers.find(n.inputs[idx]);
  if (it == g.initializers.end())
    throw FormatError(fmt::format("{} input '{}' of node '{}' must be an initializer", role,
                                  n.inputs[idx], n.name),
                      n.offset);
  if (it->second.data_type != kFloat && std::string(role) != "shape")
    throw FormatError(fmt::format("{} '{}' must be float", role, n.inputs[idx]), n.offset);
  return it->second;
}

inline std::int8_t binary_weight(float v, const Node& n) {
  if (v == 1.0f) return 1;
  if (v == -1.0f) return -1;
  throw InvalidModel(fmt::format("{} node '{}': weight {} is not +-1", n.op_type, n.name, v));
}

inline void require_zero_bias(const Graph& g, const Node& n, std::size_t idx) {
  if (n.inputs.size() <= idx || n.inputs[idx].empty()) return;
  const auto& b = initializer(g, n, idx, "bias");
  for (float v : b.floats)
    if (v != 0.0f)
      throw InvalidModel(fmt::format("{} node '{}' has a non-zero bias", n.op_type, n.name));
}

inline void require_ints(const Node& n, const std::string& attr, const std::vector<std::int64_t>& want,
                         const std::vector<std::int64_t>& dflt) {
  if (n.attr_ints(attr, dflt) != want)
    throw FormatError(fmt::format("{} node '{}': unsupported {} attribute", n.op_type, n.name, attr),
                      n.offset);
}

}  // namespace detail

inline Network parse_model(pb::ByteView bytes) {
  using namespace detail;
  pb::Reader r(bytes);
  pb::WireField f;
  std::optional<Graph> graph;
  std::vector<std::pair<std::string, std::int64_t>> opsets;
  while (r.next(f)) {
    if (f.field_number == 7) {
      expect_type(f, pb::WireType::len_delimited, "graph");
      graph = parse_graph(f.bytes, r.absolute(f));
    } else if (f.field_number == 8) {
      expect_type(f, pb::WireType::len_delimited, "opset_import");
      pb::Reader orr(f.bytes, r.absolute(f));
      pb::WireField of;
      std::string domain;
      std::int64_t version = 0;
      while (orr.next(of)) {
        if (of.field_number == 1 && of.wire_type == pb::WireType::len_delimited) domain = to_string(of);
        if (of.field_number == 2 && of.wire_type == pb::WireType::varint) version = of.as_int64();
      }
      opsets.emplace_back(domain, version);
    }
  }
  if (!graph) throw FormatError("model has no graph");
  bool opset_ok = false;
  for (const auto& [domain, version] : opsets) {
    if (domain.empty() || domain == "ai.onnx") {
      if (version != kOpsetVersion)
        throw FormatError(fmt::format("unsupported opset version {} (supported: {})", version,
                                      kOpsetVersion));
      opset_ok = true;
    }
  }
  if (!opset_ok) throw FormatError(fmt::format("model does not import the default opset {}", kOpsetVersion));

  const Graph& g = *graph;
  const ValueInfo* in = nullptr;
  for (const auto& v : g.inputs)
    if (!g.initializers.count(v.name)) {
      in = &v;
      break;
    }
  if (!in) throw FormatError("graph has no data input");
  if (g.outputs.size() != 1) throw FormatError("graph must have exactly one output");

  Network net;
  Layout layout;
  Shape shape;  // internal channel-last shape of the current value
  auto dim = [&](std::int64_t d) -> std::size_t {
    if (d <= 0) throw FormatError(fmt::format("input '{}' has a non-positive or symbolic dimension", in->name));
    return std::size_t(d);
  };
  if (in->dims.size() == 4) {
    if (in->dims[0] != 1 && in->dims[0] != -1) throw FormatError("batch dimension must be 1");
    shape = {dim(in->dims[1]), dim(in->dims[2]), dim(in->dims[3])};
    layout = Layout::nhwc;
  } else if (in->dims.size() == 2) {
    if (in->dims[0] != 1 && in->dims[0] != -1) throw FormatError("batch dimension must be 1");
    shape = {dim(in->dims[1])};
    layout = Layout::flat;
  } else {
    throw FormatError(fmt::format("input '{}' must be rank 4 (NHWC) or rank 2", in->name));
  }
  net.input_shape = shape;

  std::string current = in->name;
  bool pending_sign = false;
  bool chw_flatten = false;  // next dense layer reads a channel-first flattening
  Shape chw_shape;

  auto push = [&](Layer layer) {
    shape = output_shape(layer, shape);
    net.layers.push_back(std::move(layer));
  };

  for (const Node* node : topological_order(g, in->name)) {
    const Node& n = *node;
    if (!n.domain.empty() && n.domain != "ai.onnx") throw UnsupportedOp(n.domain + "::" + n.op_type);
    if (n.inputs.empty() || n.inputs[0] != current || n.outputs.empty())
      throw FormatError(fmt::format("node '{}' ({}) does not continue the single-input chain", n.name,
                                    n.op_type),
                        n.offset);
    const std::string& op = n.op_type;

    if (op == "Transpose") {
      auto perm = n.attr_ints("perm", {});
      if (layout == Layout::nhwc && perm == std::vector<std::int64_t>{0, 3, 1, 2})
        layout = Layout::nchw;
      else if (layout == Layout::nchw && perm == std::vector<std::int64_t>{0, 2, 3, 1})
        layout = Layout::nhwc;
      else
        throw FormatError(fmt::format("unsupported Transpose perm in node '{}'", n.name), n.offset);
    } else if (op == "Sign") {
      pending_sign = true;
    } else if (op == "Conv") {
      if (layout != Layout::nchw) throw FormatError("Conv input must be NCHW", n.offset);
      const auto& w = initializer(g, n, 1, "weight");
      if (w.dims.size() != 4 || shape.size() != 3 || std::size_t(w.dims[1]) != shape[2])
        throw FormatError(fmt::format("Conv node '{}' weight dims do not match input channels", n.name), n.offset);
      require_zero_bias(g, n, 2);
      require_ints(n, "strides", {1, 1}, {1, 1});
      require_ints(n, "dilations", {1, 1}, {1, 1});
      require_ints(n, "pads", {0, 0, 0, 0}, {0, 0, 0, 0});
      if (n.attr_int("group", 1) != 1) throw FormatError("grouped Conv is not supported", n.offset);
      if (auto* ap = n.attr("auto_pad"); ap && ap->s != "NOTSET" && ap->s != "VALID")
        throw FormatError("Conv auto_pad must be NOTSET or VALID", n.offset);
      QConv c;
      c.out_channels = std::size_t(w.dims[0]);
      c.in_channels = std::size_t(w.dims[1]);
      c.kernel_h = std::size_t(w.dims[2]);
      c.kernel_w = std::size_t(w.dims[3]);
      require_ints(n, "kernel_shape", {w.dims[2], w.dims[3]}, {w.dims[2], w.dims[3]});
      c.weights.resize(w.floats.size());
      // ONNX [out][in][kh][kw] -> internal [out][kh][kw][in]
      for (std::size_t o = 0; o < c.out_channels; ++o)
        for (std::size_t ch = 0; ch < c.in_channels; ++ch)
          for (std::size_t ky = 0; ky < c.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < c.kernel_w; ++kx)
              c.weights[((o * c.kernel_h + ky) * c.kernel_w + kx) * c.in_channels + ch] = binary_weight(
                  w.floats[((o * c.in_channels + ch) * c.kernel_h + ky) * c.kernel_w + kx], n);
      c.quantize_input = pending_sign;
      pending_sign = false;
      push(std::move(c));
    } else if (op == "MaxPool") {
      if (layout != Layout::nchw) throw FormatError("MaxPool input must be NCHW", n.offset);
      auto k = n.attr_ints("kernel_shape", {});
      if (k.size() != 2 || k[0] != k[1] || k[0] <= 0)
        throw FormatError("MaxPool needs a square kernel_shape", n.offset);
      auto s = n.attr_ints("strides", {1, 1});
      if (s.size() != 2 || s[0] != s[1] || s[0] <= 0) throw FormatError("MaxPool strides must be equal", n.offset);
      require_ints(n, "pads", {0, 0, 0, 0}, {0, 0, 0, 0});
      if (n.attr_int("ceil_mode", 0) != 0) throw FormatError("MaxPool ceil_mode is not supported", n.offset);
      if (n.outputs.size() > 1 && !n.outputs[1].empty())
        throw FormatError("MaxPool indices output is not supported", n.offset);
      push(MaxPool{std::size_t(k[0]), std::size_t(s[0])});
    } else if (op == "BatchNormalization") {
      if (layout == Layout::nhwc) throw FormatError("BatchNormalization input must be NCHW or flat", n.offset);
      if (pending_sign)
        throw FormatError(fmt::format("Sign feeding BatchNormalization '{}' is not supported", n.name), n.offset);
      if (n.attr_int("training_mode", 0) != 0) throw FormatError("training-mode BatchNormalization", n.offset);
      BatchNorm b;
      b.gamma = initializer(g, n, 1, "scale").floats;
      b.beta = initializer(g, n, 2, "bias").floats;
      b.moving_mean = initializer(g, n, 3, "mean").floats;
      b.moving_variance = initializer(g, n, 4, "var").floats;
      auto* eps = n.attr("epsilon");
      b.eps_bn = eps ? eps->f : 1e-5f;
      push(std::move(b));
    } else if (op == "Flatten" || op == "Reshape") {
      if (op == "Flatten" && n.attr_int("axis", 1) != 1)
        throw FormatError("Flatten axis must be 1", n.offset);
      if (op == "Reshape") {
        auto it = n.inputs.size() > 1 ? g.initializers.find(n.inputs[1]) : g.initializers.end();
        if (it == g.initializers.end() || it->second.data_type != kInt64)
          throw FormatError("Reshape shape must be an int64 initializer", n.offset);
        const auto& d = it->second.ints;
        const auto total = std::int64_t(shape_size(shape));
        if (d.size() != 2 || (d[0] != 1 && d[0] != -1 && d[0] != 0) || (d[1] != -1 && d[1] != total))
          throw FormatError("Reshape is only supported as a flatten to [1, N]", n.offset);
      }
      if (layout == Layout::nchw) {
        chw_flatten = true;
        chw_shape = shape;
      }
      if (layout != Layout::flat) push(Flatten{});
      layout = Layout::flat;
    } else if (op == "MatMul" || op == "Gemm") {
      if (layout != Layout::flat) throw FormatError(fmt::format("{} input must be flat", op), n.offset);
      const auto& w = initializer(g, n, 1, "weight");
      if (w.dims.size() != 2) throw FormatError(fmt::format("{} weight must be 2-D", op), n.offset);
      bool trans_b = false;
      if (op == "Gemm") {
        if (n.attr_int("transA", 0) != 0) throw FormatError("Gemm transA is not supported", n.offset);
        auto* alpha = n.attr("alpha");
        if (alpha && alpha->f != 1.0f) throw FormatError("Gemm alpha must be 1", n.offset);
        trans_b = n.attr_int("transB", 0) != 0;
        require_zero_bias(g, n, 2);
      }
      QDense d;
      d.in_features = std::size_t(trans_b ? w.dims[1] : w.dims[0]);
      d.out_features = std::size_t(trans_b ? w.dims[0] : w.dims[1]);
      if (shape.size() != 1 || d.in_features != shape[0])
        throw FormatError(fmt::format("{} node '{}' expects {} inputs, chain provides {}", op, n.name,
                                      d.in_features, shape_size(shape)),
                          n.offset);
      d.weights.resize(d.in_features * d.out_features);
      for (std::size_t o = 0; o < d.out_features; ++o)
        for (std::size_t i = 0; i < d.in_features; ++i) {
          // Internal inputs are channel-last; map to the channel-first flattening if needed.
          std::size_t src = i;
          if (chw_flatten) {
            const std::size_t H = chw_shape[0], W = chw_shape[1], C = chw_shape[2];
            const std::size_t ch = i % C, col = (i / C) % W, row = i / (C * W);
            src = (ch * H + row) * W + col;
          }
          const float v = trans_b ? w.floats[o * d.in_features + src] : w.floats[src * d.out_features + o];
          d.weights[o * d.in_features + i] = binary_weight(v, n);
        }
      chw_flatten = false;
      d.quantize_input = pending_sign;
      pending_sign = false;
      push(std::move(d));
    } else {
      throw UnsupportedOp(op);
    }
    current = n.outputs[0];
  }
  if (current != g.outputs[0].name)
    throw FormatError(fmt::format("graph output '{}' is not produced by the chain", g.outputs[0].name));
  if (pending_sign) throw FormatError("trailing Sign node without a consumer");
  if (shape.size() != 1) throw FormatError("network output is not a vector");
  net.num_classes = shape[0];
  validate(net);
  return net;
}

namespace detail {

inline pb::Writer value_info(const std::string& name, const std::vector<std::int64_t>& dims) {
  pb::Writer shape;
  for (auto d : dims) {
    pb::Writer dim;
    dim.int64(1, d);
    shape.message(1, dim);
  }
  pb::Writer tensor_type;
  tensor_type.varint(1, kFloat);
  tensor_type.message(2, shape);
  pb::Writer type;
  type.message(1, tensor_type);
  pb::Writer vi;
  vi.string(1, name);
  vi.message(2, type);
  return vi;
}

inline pb::Writer float_tensor(const std::string& name, const std::vector<std::int64_t>& dims,
                               const std::vector<float>& values) {
  pb::Writer t;
  for (auto d : dims) t.int64(1, d);
  t.varint(2, kFloat);
  t.string(8, name);
  pb::Bytes raw;
  raw.reserve(values.size() * 4);
  for (float v : values) {
    auto u = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) raw.push_back(std::uint8_t(u >> (8 * b)));
  }
  t.bytes(9, raw);
  return t;
}

inline pb::Writer ints_attr(const std::string& name, const std::vector<std::int64_t>& v) {
  pb::Writer a;
  a.string(1, name);
  for (auto x : v) a.int64(8, x);
  a.varint(20, 7);  // INTS
  return a;
}

inline pb::Writer int_attr(const std::string& name, std::int64_t v) {
  pb::Writer a;
  a.string(1, name);
  a.int64(3, v);
  a.varint(20, 2);  // INT
  return a;
}

inline pb::Writer float_attr(const std::string& name, float v) {
  pb::Writer a;
  a.string(1, name);
  a.float32(2, v);
  a.varint(20, 1);  // FLOAT
  return a;
}

class GraphWriter {
public:
  std::string value(const std::string& hint) { return fmt::format("{}_{}", hint, counter_++); }

  void node(const std::string& op, std::vector<std::string> inputs, const std::string& output,
            std::vector<pb::Writer> attrs = {}) {
    pb::Writer n;
    for (const auto& i : inputs) n.string(1, i);
    n.string(2, output);
    n.string(3, fmt::format("{}_{}", op, nodes_));
    n.string(4, op);
    for (const auto& a : attrs) n.message(5, a);
    graph_.message(1, n);
    ++nodes_;
  }

  void initializer(const pb::Writer& t) { inits_.push_back(t); }
  pb::Writer& graph() { return graph_; }
  const std::vector<pb::Writer>& initializers() const { return inits_; }

private:
  pb::Writer graph_;
  std::vector<pb::Writer> inits_;
  std::size_t counter_ = 0;
  std::size_t nodes_ = 0;
};

}  // namespace detail

// Input is NHWC [1, H, W, C] (or [1, N] for vector inputs) so that the flat
// input order matches VNN-LIB X indexing; spatial operators run in NCHW between
// Transpose nodes.
inline pb::Bytes serialize_model(const Network& net) {
  using namespace detail;
  validate(net);
  GraphWriter gw;
  std::vector<std::int64_t> in_dims{1};
  for (auto d : net.input_shape) in_dims.push_back(std::int64_t(d));
  Layout layout = net.input_shape.size() == 3 ? Layout::nhwc : Layout::flat;
  Shape shape = net.input_shape;
  std::string cur = "input";

  std::string final_name;
  auto emit = [&](const std::string& op, std::vector<std::string> inputs,
                  std::vector<pb::Writer> attrs = {}) {
    std::string out = final_name.empty() ? gw.value(op) : final_name;
    gw.node(op, std::move(inputs), out, std::move(attrs));
    cur = out;
  };
  auto to_nchw = [&] {
    if (layout == Layout::nhwc) {
      emit("Transpose", {cur}, {ints_attr("perm", {0, 3, 1, 2})});
      layout = Layout::nchw;
    }
  };
  auto sign_if = [&](bool q) {
    if (q) emit("Sign", {cur});
  };

  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const Layer& layer = net.layers[i];
    std::visit(
        overloaded{
            [&](const QConv& c) {
              to_nchw();
              sign_if(c.quantize_input);
              std::vector<float> w(c.weights.size());
              for (std::size_t o = 0; o < c.out_channels; ++o)
                for (std::size_t ch = 0; ch < c.in_channels; ++ch)
                  for (std::size_t ky = 0; ky < c.kernel_h; ++ky)
                    for (std::size_t kx = 0; kx < c.kernel_w; ++kx)
                      w[((o * c.in_channels + ch) * c.kernel_h + ky) * c.kernel_w + kx] =
                          float(c.weight(o, ky, kx, ch));
              const std::string wname = fmt::format("layer{}.weight", i);
              gw.initializer(float_tensor(wname,
                                          {std::int64_t(c.out_channels), std::int64_t(c.in_channels),
                                           std::int64_t(c.kernel_h), std::int64_t(c.kernel_w)},
                                          w));
              emit("Conv", {cur, wname},
                   {ints_attr("kernel_shape", {std::int64_t(c.kernel_h), std::int64_t(c.kernel_w)}),
                    ints_attr("strides", {1, 1}), ints_attr("pads", {0, 0, 0, 0}),
                    ints_attr("dilations", {1, 1}), int_attr("group", 1)});
            },
            [&](const MaxPool& m) {
              to_nchw();
              emit("MaxPool", {cur},
                   {ints_attr("kernel_shape", {std::int64_t(m.pool), std::int64_t(m.pool)}),
                    ints_attr("strides", {std::int64_t(m.stride), std::int64_t(m.stride)})});
            },
            [&](const BatchNorm& b) {
              if (shape.size() == 3) to_nchw();
              const std::vector<std::int64_t> dims{std::int64_t(b.channels())};
              std::vector<std::string> ins{cur};
              const char* parts[] = {"scale", "bias", "mean", "var"};
              const std::vector<float>* vals[] = {&b.gamma, &b.beta, &b.moving_mean, &b.moving_variance};
              for (int k = 0; k < 4; ++k) {
                std::string name = fmt::format("layer{}.{}", i, parts[k]);
                gw.initializer(float_tensor(name, dims, *vals[k]));
                ins.push_back(name);
              }
              emit("BatchNormalization", ins, {float_attr("epsilon", b.eps_bn)});
            },
            [&](const Flatten&) {
              if (layout == Layout::nchw) {
                emit("Transpose", {cur}, {ints_attr("perm", {0, 2, 3, 1})});
                layout = Layout::nhwc;
              }
              if (layout == Layout::nhwc) emit("Flatten", {cur}, {int_attr("axis", 1)});
              layout = Layout::flat;
            },
            [&](const QDense& d) {
              sign_if(d.quantize_input);
              std::vector<float> w(d.weights.size());
              for (std::size_t o = 0; o < d.out_features; ++o)
                for (std::size_t k = 0; k < d.in_features; ++k)
                  w[k * d.out_features + o] = float(d.weight(o, k));
              const std::string wname = fmt::format("layer{}.weight", i);
              gw.initializer(float_tensor(
                  wname, {std::int64_t(d.in_features), std::int64_t(d.out_features)}, w));
              if (i + 1 == net.layers.size()) final_name = "output";
              emit("MatMul", {cur, wname});
            },
        },
        layer);
    shape = output_shape(layer, shape);
  }

  pb::Writer& graph = gw.graph();
  graph.string(2, "bnn");
  for (const auto& t : gw.initializers()) graph.message(5, t);
  graph.message(11, value_info("input", in_dims));
  graph.message(12, value_info(cur, {1, std::int64_t(net.num_classes)}));

  pb::Writer opset;
  opset.string(1, "");
  opset.int64(2, kOpsetVersion);
  pb::Writer model;
  model.int64(1, kIrVersion);
  model.string(2, "bnnverify");
  model.string(3, "1.0");
  model.message(7, graph);
  model.message(8, opset);
  return model.take();
}

inline pb::Bytes read_file(const std::filesystem::path& path) { return read_bytes(path); }

inline Network load_model(const std::filesystem::path& path) { return parse_model(read_file(path)); }

inline void save_model(const Network& net, const std::filesystem::path& path) {
  write_bytes(path, serialize_model(net));
}

}  // namespace bnnv::onnx

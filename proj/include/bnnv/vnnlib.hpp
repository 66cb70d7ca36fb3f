#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bnnv/io.hpp"
#include "bnnv/network.hpp"

namespace bnnv {

struct Bound {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Bound&) const = default;
};

struct PropertySource {
  std::uint64_t image_index = 0;
  double epsilon = 0.0;
  bool operator==(const PropertySource&) const = default;
};

// Untargeted L-infinity robustness query: inputs X_i range over input_bounds,
// and a counterexample is any point where some Y_j (j != target) reaches Y_target.
struct RobustnessProperty {
  std::size_t num_inputs = 0;
  std::size_t num_outputs = 0;
  std::vector<Bound> input_bounds;
  Label target_label = 0;
  std::optional<PropertySource> source;

  bool operator==(const RobustnessProperty&) const = default;
};

struct Witness {
  std::vector<double> input_values;
  std::optional<std::vector<double>> output_values;
  bool operator==(const Witness&) const = default;
};

// True iff some j != target has logits[j] >= logits[target] (ties count).
inline bool violates(std::span<const double> logits, Label target) {
  for (std::size_t j = 0; j < logits.size(); ++j)
    if (j != target && logits[j] >= logits[target]) return true;
  return false;
}

// max_{j != target} (Y_j - Y_target); non-negative exactly when `violates`.
inline double runner_up_margin(std::span<const double> logits, Label target) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < logits.size(); ++j)
    if (j != target) best = std::max(best, logits[j] - logits[target]);
  return best;
}

inline RobustnessProperty make_property(const Tensor& image, double epsilon, Label label,
                                        bool clip = false, std::size_t num_outputs = 43,
                                        std::optional<PropertySource> source = {}) {
  if (label >= num_outputs)
    throw Error(fmt::format("target label {} out of range [0, {})", label, num_outputs));
  if (!(epsilon >= 0.0)) throw Error("epsilon must be non-negative");
  RobustnessProperty p;
  p.num_inputs = image.size();
  p.num_outputs = num_outputs;
  p.target_label = label;
  p.source = source;
  p.input_bounds.reserve(image.size());
  for (double v : image.data()) {
    Bound b{v - epsilon, v + epsilon};
    if (clip) {
      b.lo = std::clamp(b.lo, 0.0, 255.0);
      b.hi = std::clamp(b.hi, 0.0, 255.0);
    }
    p.input_bounds.push_back(b);
  }
  return p;
}

inline void check_compatible(const Network& net, const RobustnessProperty& prop) {
  if (prop.num_inputs != shape_size(net.input_shape) || prop.input_bounds.size() != prop.num_inputs)
    throw ShapeError("property inputs", {shape_size(net.input_shape)}, {prop.num_inputs});
  if (prop.num_outputs != net.num_classes)
    throw ShapeError("property outputs", {net.num_classes}, {prop.num_outputs});
  if (prop.target_label >= prop.num_outputs)
    throw Error(fmt::format("target label {} out of range", prop.target_label));
}

inline std::string property_filename(std::size_t model_size, std::uint64_t image_index, double epsilon) {
  return fmt::format("model_{}_idx_{}_eps_{:.5f}.vnnlib", model_size, image_index, epsilon);
}

// Renders: declarations for X_0..X_{P-1} and Y_0..Y_{L-1}, an upper and a lower
// bound per input, then the negated robustness property as one disjunction.
inline std::string render_property(const RobustnessProperty& p) {
  std::string out;
  out.reserve(p.num_inputs * 80 + p.num_outputs * 40);
  auto it = std::back_inserter(out);
  fmt::format_to(it, "; Local robustness: {} inputs, {} outputs, target label {}\n", p.num_inputs,
                 p.num_outputs, p.target_label);
  if (p.source)
    fmt::format_to(it, "; source: image_index={} epsilon={}\n", p.source->image_index, p.source->epsilon);
  out += "\n";
  for (std::size_t i = 0; i < p.num_inputs; ++i) fmt::format_to(it, "(declare-const X_{} Real)\n", i);
  out += "\n";
  for (std::size_t j = 0; j < p.num_outputs; ++j) fmt::format_to(it, "(declare-const Y_{} Real)\n", j);
  out += "\n";
  for (std::size_t i = 0; i < p.num_inputs; ++i) {
    fmt::format_to(it, "(assert (<= X_{} {:.8f}))\n", i, p.input_bounds[i].hi);
    fmt::format_to(it, "(assert (>= X_{} {:.8f}))\n", i, p.input_bounds[i].lo);
  }
  out += "\n(assert (or";
  bool first = true;
  for (std::size_t j = 0; j < p.num_outputs; ++j) {
    if (j == p.target_label) continue;
    fmt::format_to(it, "{}(>= Y_{} Y_{})", first ? " " : "\n            ", j, p.target_label);
    first = false;
  }
  out += "))\n";
  return out;
}

inline std::string generate_property(const Tensor& image, double epsilon, Label label, bool clip = false,
                                     std::size_t num_outputs = 43,
                                     std::optional<PropertySource> source = {}) {
  return render_property(make_property(image, epsilon, label, clip, num_outputs, source));
}

namespace sexpr {

struct Node {
  std::string atom;  // empty for lists
  std::vector<Node> items;
  std::size_t line = 0;
  bool is_list() const { return atom.empty(); }
};

class Parser {
public:
  explicit Parser(std::string_view text) : text_(text) {}

  std::vector<Node> parse_all() {
    std::vector<Node> out;
    while (skip(), pos_ < text_.size()) out.push_back(parse_one());
    return out;
  }

private:
  void skip() {
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (c == ';') {
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (c == '\n') ++line_;
        ++pos_;
      } else {
        break;
      }
    }
  }

  Node parse_one() {
    skip();
    if (pos_ >= text_.size()) throw FormatError("unexpected end of input", line_, "line");
    Node n;
    n.line = line_;
    if (text_[pos_] == '(') {
      ++pos_;
      for (;;) {
        skip();
        if (pos_ >= text_.size()) throw FormatError("unbalanced '('", n.line, "line");
        if (text_[pos_] == ')') {
          ++pos_;
          return n;
        }
        n.items.push_back(parse_one());
      }
    }
    if (text_[pos_] == ')') throw FormatError("unexpected ')'", line_, "line");
    std::size_t start = pos_;
    while (pos_ < text_.size() && text_[pos_] != '(' && text_[pos_] != ')' && text_[pos_] != ';' &&
           !std::isspace(static_cast<unsigned char>(text_[pos_])))
      ++pos_;
    n.atom = std::string(text_.substr(start, pos_ - start));
    return n;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
};

}  // namespace sexpr

namespace detail {

// "X_12" -> 12 for the given prefix letter.
inline std::optional<std::size_t> var_index(const sexpr::Node& n, char prefix) {
  if (n.is_list() || n.atom.size() < 3 || n.atom[0] != prefix || n.atom[1] != '_') return std::nullopt;
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(n.atom.data() + 2, n.atom.data() + n.atom.size(), v);
  if (ec != std::errc{} || p != n.atom.data() + n.atom.size()) return std::nullopt;
  return v;
}

inline std::optional<double> number(const sexpr::Node& n) {
  if (n.is_list()) {
    if (n.items.size() == 2 && n.items[0].atom == "-")
      if (auto v = number(n.items[1])) return -*v;
    return std::nullopt;
  }
  double v = 0;
  const char* b = n.atom.data();
  const char* e = b + n.atom.size();
  if (b != e && *b == '+') ++b;
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc{} || p != e) return std::nullopt;
  return v;
}

}  // namespace detail

inline RobustnessProperty parse_property(std::string_view text) {
  using detail::number;
  using detail::var_index;
  auto nodes = sexpr::Parser(text).parse_all();

  std::size_t num_x = 0, num_y = 0;
  std::vector<std::optional<double>> lo, hi;
  std::optional<std::size_t> target;
  std::vector<bool> disjunct_seen;
  bool have_output_assert = false;

  auto bad = [](const sexpr::Node& n, const std::string& what) {
    return FormatError(what, n.line, "line");
  };
  auto ensure = [](std::vector<std::optional<double>>& v, std::size_t i) {
    if (v.size() <= i) v.resize(i + 1);
  };

  // First pass: declarations.
  for (const auto& n : nodes) {
    if (!n.is_list() || n.items.empty()) throw bad(n, "expected a command");
    if (n.items[0].atom != "declare-const") continue;
    if (n.items.size() != 3 || n.items[2].atom != "Real")
      throw bad(n, "declare-const must declare a Real");
    if (auto i = var_index(n.items[1], 'X'))
      num_x = std::max(num_x, *i + 1);
    else if (auto j = var_index(n.items[1], 'Y'))
      num_y = std::max(num_y, *j + 1);
    else
      throw bad(n, fmt::format("unknown variable '{}'", n.items[1].atom));
  }

  auto parse_disjunct = [&](const sexpr::Node& d) {
    if (!d.is_list() || d.items.size() != 3) throw bad(d, "unsupported output constraint");
    std::optional<std::size_t> j, t;
    if (d.items[0].atom == ">=") {
      j = var_index(d.items[1], 'Y');
      t = var_index(d.items[2], 'Y');
    } else if (d.items[0].atom == "<=") {
      t = var_index(d.items[1], 'Y');
      j = var_index(d.items[2], 'Y');
    }
    if (!j || !t) throw bad(d, "output constraint must compare two Y variables");
    if (*j >= num_y || *t >= num_y) throw bad(d, "undeclared output variable");
    if (target && *target != *t)
      throw bad(d, fmt::format("disjunction mixes targets Y_{} and Y_{}", *target, *t));
    if (*j == *t) throw bad(d, "disjunct compares a variable with itself");
    target = *t;
    disjunct_seen[*j] = true;
  };

  for (const auto& n : nodes) {
    const std::string& cmd = n.items[0].atom;
    if (cmd == "declare-const") continue;
    if (cmd != "assert") throw bad(n, fmt::format("unknown command '{}'", cmd));
    if (n.items.size() != 2 || !n.items[1].is_list() || n.items[1].items.empty())
      throw bad(n, "malformed assert");
    const auto& body = n.items[1];
    const std::string& op = body.items[0].atom;
    if (op == "or") {
      if (have_output_assert) throw bad(n, "more than one output assertion");
      have_output_assert = true;
      disjunct_seen.assign(num_y, false);
      for (std::size_t k = 1; k < body.items.size(); ++k) parse_disjunct(body.items[k]);
      continue;
    }
    if ((op == "<=" || op == ">=") && body.items.size() == 3) {
      const bool lhs_x = var_index(body.items[1], 'X').has_value();
      const bool rhs_x = var_index(body.items[2], 'X').has_value();
      if (lhs_x != rhs_x) {
        const auto& var = lhs_x ? body.items[1] : body.items[2];
        const auto c = number(lhs_x ? body.items[2] : body.items[1]);
        if (!c) throw bad(n, "input bound must be a numeric constant");
        const std::size_t i = *var_index(var, 'X');
        if (i >= num_x) throw bad(n, fmt::format("undeclared input variable X_{}", i));
        // (<= X c) and (>= c X) bound from above.
        const bool upper = (op == "<=") == lhs_x;
        auto& target_vec = upper ? hi : lo;
        ensure(target_vec, i);
        auto& slot = target_vec[i];
        slot = slot ? (upper ? std::min(*slot, *c) : std::max(*slot, *c)) : *c;
        continue;
      }
      if (var_index(body.items[1], 'Y') && var_index(body.items[2], 'Y')) {
        if (have_output_assert) throw bad(n, "more than one output assertion");
        have_output_assert = true;
        disjunct_seen.assign(num_y, false);
        parse_disjunct(body);
        continue;
      }
    }
    throw bad(n, fmt::format("unsupported assertion '{}'", op));
  }

  if (num_x == 0) throw FormatError("no input variables declared");
  if (num_y < 2) throw FormatError("fewer than two output variables declared");
  if (!have_output_assert || !target) throw FormatError("missing output disjunction");
  for (std::size_t j = 0; j < num_y; ++j)
    if (j != *target && !disjunct_seen[j])
      throw FormatError(fmt::format("disjunction is not of the single-target shape: Y_{} >= Y_{} missing", j,
                                    *target));

  RobustnessProperty p;
  p.num_inputs = num_x;
  p.num_outputs = num_y;
  p.target_label = *target;
  lo.resize(num_x);
  hi.resize(num_x);
  p.input_bounds.resize(num_x);
  for (std::size_t i = 0; i < num_x; ++i) {
    if (!lo[i]) throw FormatError(fmt::format("missing lower bound for X_{}", i));
    if (!hi[i]) throw FormatError(fmt::format("missing upper bound for X_{}", i));
    if (*lo[i] > *hi[i]) throw FormatError(fmt::format("empty interval for X_{}", i));
    p.input_bounds[i] = {*lo[i], *hi[i]};
  }

  // Optional provenance comment written by render_property.
  if (auto pos = text.find("; source: image_index="); pos != std::string_view::npos) {
    std::istringstream line(std::string(text.substr(pos, text.find('\n', pos) - pos)));
    std::string word;
    PropertySource src;
    bool ok = true;
    while (line >> word) {
      if (word.rfind("image_index=", 0) == 0) ok &= bool(std::istringstream(word.substr(12)) >> src.image_index);
      if (word.rfind("epsilon=", 0) == 0) ok &= bool(std::istringstream(word.substr(8)) >> src.epsilon);
    }
    if (ok) p.source = src;
  }
  return p;
}

inline RobustnessProperty load_property(const std::filesystem::path& path) {
  return parse_property(read_text(path));
}

// Shortest decimal that round-trips to the same double.
inline std::string exact_decimal(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// Counterexample text in the competition convention:
//   sat
//   ((X_0 v0)
//    (X_1 v1)
//    ...
//    (Y_0 y0)
//    ...)
inline std::string render_witness(const Witness& w) {
  std::string out = "sat\n(";
  bool first = true;
  auto entry = [&](char prefix, std::size_t i, double v) {
    out += first ? "(" : "\n (";
    first = false;
    out += fmt::format("{}_{} {})", prefix, i, exact_decimal(v));
  };
  for (std::size_t i = 0; i < w.input_values.size(); ++i) entry('X', i, w.input_values[i]);
  if (w.output_values)
    for (std::size_t j = 0; j < w.output_values->size(); ++j) entry('Y', j, (*w.output_values)[j]);
  out += ")\n";
  return out;
}

inline Witness parse_witness(std::string_view text) {
  auto nodes = sexpr::Parser(text).parse_all();
  std::vector<std::optional<double>> xs, ys;
  auto visit = [&](auto&& self, const sexpr::Node& n) -> void {
    if (!n.is_list()) return;
    if (n.items.size() == 2 && !n.items[0].is_list()) {
      auto x = detail::var_index(n.items[0], 'X');
      auto y = detail::var_index(n.items[0], 'Y');
      if (x || y) {
        auto v = detail::number(n.items[1]);
        if (!v) throw FormatError("witness value is not a number", n.line, "line");
        auto& vec = x ? xs : ys;
        const std::size_t i = x ? *x : *y;
        if (vec.size() <= i) vec.resize(i + 1);
        vec[i] = *v;
        return;
      }
    }
    for (const auto& c : n.items) self(self, c);
  };
  for (const auto& n : nodes) {
    if (!n.is_list()) {
      if (n.atom == "sat" || n.atom == "unsat") continue;
      throw FormatError(fmt::format("unexpected token '{}' in witness", n.atom), n.line, "line");
    }
    visit(visit, n);
  }
  Witness w;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!xs[i]) throw FormatError(fmt::format("witness is missing X_{}", i));
    w.input_values.push_back(*xs[i]);
  }
  if (w.input_values.empty()) throw FormatError("witness has no input values");
  if (!ys.empty()) {
    w.output_values.emplace();
    for (std::size_t j = 0; j < ys.size(); ++j) {
      if (!ys[j]) throw FormatError(fmt::format("witness is missing Y_{}", j));
      w.output_values->push_back(*ys[j]);
    }
  }
  return w;
}

inline bool in_bounds(const RobustnessProperty& prop, std::span<const double> x) {
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!(x[i] >= prop.input_bounds[i].lo && x[i] <= prop.input_bounds[i].hi)) return false;
  return true;
}

// Independent re-check of a counterexample through the reference forward pass.
inline bool check_witness(const Network& net, const RobustnessProperty& prop, const Witness& w) {
  check_compatible(net, prop);
  if (w.input_values.size() != prop.num_inputs)
    throw ShapeError("witness inputs", {prop.num_inputs}, {w.input_values.size()});
  if (w.output_values && w.output_values->size() != prop.num_outputs)
    throw ShapeError("witness outputs", {prop.num_outputs}, {w.output_values->size()});
  if (!in_bounds(prop, w.input_values)) return false;
  const Tensor y = network_forward(net, Tensor(net.input_shape, w.input_values));
  return violates(y.data(), prop.target_label);
}

}  // namespace bnnv

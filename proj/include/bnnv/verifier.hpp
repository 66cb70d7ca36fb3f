#pragma once

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "bnnv/compiled.hpp"
#include "bnnv/interval.hpp"
#include "bnnv/vnnlib.hpp"

namespace bnnv {

enum class VerdictKind { Verified, Falsified, Unknown, Timeout };

// Competition result strings: the property file encodes the negation, so a
// counterexample is "sat".
inline const char* verdict_string(VerdictKind k) {
  switch (k) {
    case VerdictKind::Verified: return "unsat";
    case VerdictKind::Falsified: return "sat";
    case VerdictKind::Unknown: return "unknown";
    case VerdictKind::Timeout: return "timeout";
  }
  return "unknown";
}

struct VerifyStats {
  std::uint64_t nodes = 0;
  double seconds = 0.0;
};

struct Verdict {
  VerdictKind kind = VerdictKind::Unknown;
  std::optional<Witness> witness;
  VerifyStats stats;
};

namespace detail {

class Stopwatch {
public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

private:
  std::chrono::steady_clock::time_point start_;
};

inline Witness make_witness(std::vector<double> x, std::vector<double> y) {
  Witness w;
  w.input_values = std::move(x);
  w.output_values = std::move(y);
  return w;
}

}  // namespace detail

inline Verdict verify_ibp(const Network& net, const RobustnessProperty& prop) {
  detail::Stopwatch clock;
  check_compatible(net, prop);
  const auto logits = ibp_propagate(net, IntervalTensor::from_property(prop, net.input_shape));
  Verdict v;
  v.kind = dominates(logits, prop.target_label) ? VerdictKind::Verified : VerdictKind::Unknown;
  v.stats = {1, clock.seconds()};
  return v;
}

// ---------------------------------------------------------------------------
// sign(BN(x)) as a threshold test on x.

struct ThresholdRule {
  enum class Kind { AtLeast, AtMost, AlwaysPositive, AlwaysNegative };
  Kind kind = Kind::AtLeast;
  double threshold = 0.0;

  // Sign bit produced for pre-BN value x: true means +1.
  bool fires(double x) const {
    switch (kind) {
      case Kind::AtLeast: return x >= threshold;
      case Kind::AtMost: return x <= threshold;
      case Kind::AlwaysPositive: return true;
      case Kind::AlwaysNegative: return false;
    }
    return false;
  }
  bool operator==(const ThresholdRule&) const = default;
};

// mean - beta * sqrt(var + eps) / gamma, in real arithmetic.
inline double closed_form_threshold(const BatchNorm& bn, std::size_t c) {
  return double(bn.moving_mean[c]) -
         double(bn.beta[c]) * std::sqrt(double(bn.moving_variance[c]) + double(bn.eps_bn)) /
             double(bn.gamma[c]);
}

namespace detail {

// Monotone map from finite doubles onto unsigned integers.
inline std::uint64_t order_key(double x) {
  const auto u = std::bit_cast<std::uint64_t>(x);
  return (u >> 63) ? ~u : (u | (std::uint64_t{1} << 63));
}
inline double from_order_key(std::uint64_t k) {
  return std::bit_cast<double>((k >> 63) ? (k & ~(std::uint64_t{1} << 63)) : ~k);
}

}  // namespace detail

// The rule reproduces sign_value(bn_scalar(...)) exactly for every finite x:
// the threshold is located by bisection over the ordered doubles on the same
// floating-point expression that inference evaluates.
inline ThresholdRule fold_bn_sign_channel(const BatchNorm& bn, std::size_t c) {
  using Kind = ThresholdRule::Kind;
  const double g = bn.gamma[c];
  auto pos = [&](double x) { return bn_scalar(bn, c, x) >= 0.0; };
  const double lowest = std::numeric_limits<double>::lowest();
  const double highest = std::numeric_limits<double>::max();
  if (g == 0.0) return {pos(0.0) ? Kind::AlwaysPositive : Kind::AlwaysNegative, 0.0};

  if (g > 0.0) {
    if (pos(lowest)) return {Kind::AlwaysPositive, lowest};
    if (!pos(highest)) return {Kind::AlwaysNegative, highest};
    // Smallest x with pos(x).
    std::uint64_t a = detail::order_key(lowest), b = detail::order_key(highest);
    while (b - a > 1) {
      const std::uint64_t m = a + (b - a) / 2;
      (pos(detail::from_order_key(m)) ? b : a) = m;
    }
    return {Kind::AtLeast, detail::from_order_key(b)};
  }
  if (pos(highest)) return {Kind::AlwaysPositive, highest};
  if (!pos(lowest)) return {Kind::AlwaysNegative, lowest};
  // Largest x with pos(x).
  std::uint64_t a = detail::order_key(lowest), b = detail::order_key(highest);
  while (b - a > 1) {
    const std::uint64_t m = a + (b - a) / 2;
    (pos(detail::from_order_key(m)) ? a : b) = m;
  }
  return {Kind::AtMost, detail::from_order_key(a)};
}

inline std::vector<ThresholdRule> fold_bn_sign(const BatchNorm& bn) {
  std::vector<ThresholdRule> rules;
  rules.reserve(bn.channels());
  for (std::size_t c = 0; c < bn.channels(); ++c) rules.push_back(fold_bn_sign_channel(bn, c));
  return rules;
}

// ---------------------------------------------------------------------------
// Exhaustive integer-grid oracle.

struct IntRange {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
};

inline std::vector<IntRange> integer_hull(const RobustnessProperty& prop) {
  std::vector<IntRange> r(prop.num_inputs);
  for (std::size_t i = 0; i < prop.num_inputs; ++i) {
    const double lo = std::ceil(prop.input_bounds[i].lo), hi = std::floor(prop.input_bounds[i].hi);
    if (!(lo <= hi) || std::abs(lo) > 1e15 || std::abs(hi) > 1e15)
      throw Error(fmt::format("input X_{} has no integer value in [{}, {}]", i, prop.input_bounds[i].lo,
                              prop.input_bounds[i].hi));
    r[i] = {std::int64_t(lo), std::int64_t(hi)};
  }
  return r;
}

inline constexpr std::uint64_t kBruteForceBudget = 10'000'000;

// Enumerates every integer point of the box, X_0 most significant, and returns
// the first counterexample in that order.
inline Verdict brute_force_verify(const Network& net, const RobustnessProperty& prop,
                                  std::uint64_t budget = kBruteForceBudget) {
  detail::Stopwatch clock;
  check_compatible(net, prop);
  const auto hull = integer_hull(prop);
  std::uint64_t points = 1;
  for (const auto& r : hull) {
    const auto width = std::uint64_t(r.hi - r.lo) + 1;
    if (width > budget || points > budget / width)
      throw BudgetExceeded(fmt::format("integer grid exceeds the enumeration budget of {} points", budget));
    points *= width;
  }
  const CompiledNetwork cnet(net);
  std::vector<double> x(hull.size());
  for (std::size_t i = 0; i < hull.size(); ++i) x[i] = double(hull[i].lo);
  Verdict v;
  for (std::uint64_t n = 0; n < points; ++n) {
    auto y = cnet.logits(x);
    ++v.stats.nodes;
    if (violates(y, prop.target_label)) {
      v.kind = VerdictKind::Falsified;
      v.witness = detail::make_witness(x, std::move(y));
      break;
    }
    for (std::size_t i = hull.size(); i-- > 0;) {
      if (x[i] < double(hull[i].hi)) {
        x[i] += 1.0;
        break;
      }
      x[i] = double(hull[i].lo);
    }
  }
  if (v.kind != VerdictKind::Falsified) v.kind = VerdictKind::Verified;
  v.stats.seconds = clock.seconds();
  return v;
}

// ---------------------------------------------------------------------------
// Branch and bound over input boxes.

struct BabConfig {
  double timeout_seconds = 480.0;
  std::uint64_t max_nodes = 100'000;
  bool integer_grid = true;
};

namespace detail {

// A node stores only the dimensions narrowed relative to the root box.
struct BabNode {
  double priority = 0.0;
  std::uint64_t seq = 0;
  std::vector<std::pair<std::uint32_t, Bound>> narrowed;  // sorted by dimension

  bool operator<(const BabNode& o) const {
    // std::priority_queue pops the largest; larger margin first, then older.
    if (priority != o.priority) return priority < o.priority;
    return seq > o.seq;
  }
};

inline void narrow(std::vector<std::pair<std::uint32_t, Bound>>& v, std::uint32_t dim, Bound b) {
  auto it = std::lower_bound(v.begin(), v.end(), dim,
                             [](const auto& e, std::uint32_t d) { return e.first < d; });
  if (it != v.end() && it->first == dim)
    it->second = b;
  else
    v.insert(it, {dim, b});
}

}  // namespace detail

inline Verdict bab_verify(const Network& net, const RobustnessProperty& prop, const BabConfig& cfg = {}) {
  detail::Stopwatch clock;
  check_compatible(net, prop);
  Verdict v;
  auto finish = [&](VerdictKind k) {
    v.kind = k;
    v.stats.seconds = clock.seconds();
    return v;
  };
  if (!(cfg.timeout_seconds > 0.0)) return finish(VerdictKind::Timeout);

  std::vector<Bound> root = prop.input_bounds;
  if (cfg.integer_grid)
    for (std::size_t i = 0; const auto& r : integer_hull(prop)) root[i++] = {double(r.lo), double(r.hi)};

  const CompiledNetwork cnet(net);
  const Label t = prop.target_label;
  IntervalTensor box(net.input_shape, std::vector<double>(root.size()), std::vector<double>(root.size()));
  std::vector<double> center(root.size());

  std::priority_queue<detail::BabNode> queue;
  std::uint64_t seq = 0;
  queue.push({std::numeric_limits<double>::infinity(), seq++, {}});

  while (!queue.empty()) {
    if (clock.seconds() >= cfg.timeout_seconds) return finish(VerdictKind::Timeout);
    if (v.stats.nodes >= cfg.max_nodes) return finish(VerdictKind::Unknown);
    detail::BabNode node = queue.top();
    queue.pop();
    ++v.stats.nodes;

    for (std::size_t i = 0; i < root.size(); ++i) {
      box.lo[i] = root[i].lo;
      box.hi[i] = root[i].hi;
    }
    for (const auto& [d, b] : node.narrowed) {
      box.lo[d] = b.lo;
      box.hi[d] = b.hi;
    }

    const auto out = ibp_propagate(net, box);
    const double margin = violation_margin(out, t);
    if (margin < 0.0) continue;

    // Probe the box centre for a concrete counterexample.
    for (std::size_t i = 0; i < box.size(); ++i) {
      const double mid = box.lo[i] + (box.hi[i] - box.lo[i]) / 2;
      center[i] = cfg.integer_grid ? std::floor(mid) : mid;
    }
    auto y = cnet.logits(center);
    if (violates(y, t)) {
      v.witness = detail::make_witness(center, std::move(y));
      return finish(VerdictKind::Falsified);
    }

    // Widest dimension, lowest index on ties.
    std::size_t dim = 0;
    double width = -1.0;
    for (std::size_t i = 0; i < box.size(); ++i)
      if (box.hi[i] - box.lo[i] > width) {
        width = box.hi[i] - box.lo[i];
        dim = i;
      }
    if (width <= 0.0) continue;  // a point box is decided exactly by the checks above
    Bound left, right;
    if (cfg.integer_grid) {
      const double m = std::floor(box.lo[dim] + (box.hi[dim] - box.lo[dim]) / 2);
      left = {box.lo[dim], m};
      right = {m + 1.0, box.hi[dim]};
    } else {
      const double m = box.lo[dim] + (box.hi[dim] - box.lo[dim]) / 2;
      if (!(m > box.lo[dim] && m < box.hi[dim])) return finish(VerdictKind::Unknown);
      left = {box.lo[dim], m};
      right = {m, box.hi[dim]};
    }
    for (const Bound& b : {left, right}) {
      detail::BabNode child{margin, seq++, node.narrowed};
      detail::narrow(child.narrowed, std::uint32_t(dim), b);
      queue.push(std::move(child));
    }
  }
  return finish(VerdictKind::Verified);
}

}  // namespace bnnv

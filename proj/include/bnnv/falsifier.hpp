#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "bnnv/compiled.hpp"
#include "bnnv/random.hpp"
#include "bnnv/verifier.hpp"
#include "bnnv/vnnlib.hpp"

namespace bnnv {

struct AttackConfig {
  std::uint64_t max_samples = 10'000;
  std::uint64_t seed = 0;
  std::uint64_t greedy_passes = 5;
  bool integer_grid = true;
  double time_limit_seconds = 0.0;  // 0 = no limit
};

namespace detail {

inline void check_attack_config(const AttackConfig& cfg) {
  if (cfg.max_samples < 1) throw Error("max_samples must be at least 1");
}

// Candidate range per input: the integer hull in grid mode, else the bounds.
inline std::vector<Bound> attack_box(const RobustnessProperty& prop, bool integer_grid) {
  if (!integer_grid) return prop.input_bounds;
  std::vector<Bound> box;
  box.reserve(prop.num_inputs);
  for (const auto& r : integer_hull(prop)) box.push_back({double(r.lo), double(r.hi)});
  return box;
}

inline bool out_of_time(const Stopwatch& clock, const AttackConfig& cfg) {
  return cfg.time_limit_seconds > 0.0 && clock.seconds() >= cfg.time_limit_seconds;
}

// Re-checks a candidate through the reference forward pass before handing it out.
inline std::optional<Witness> confirmed(const Network& net, const RobustnessProperty& prop,
                                        std::vector<double> x, std::vector<double> y) {
  Witness w = make_witness(std::move(x), std::move(y));
  if (!check_witness(net, prop, w)) return std::nullopt;
  w.output_values = network_forward(net, Tensor(net.input_shape, w.input_values)).values();
  return w;
}

}  // namespace detail

// Uniform samples from the box; the first violating sample is returned.
inline std::optional<Witness> random_attack(const Network& net, const RobustnessProperty& prop,
                                            const AttackConfig& cfg = {}) {
  detail::Stopwatch clock;
  detail::check_attack_config(cfg);
  check_compatible(net, prop);
  const auto box = detail::attack_box(prop, cfg.integer_grid);
  const CompiledNetwork cnet(net);
  Rng rng(cfg.seed);
  std::vector<double> x(box.size());
  for (std::uint64_t s = 0; s < cfg.max_samples; ++s) {
    if (detail::out_of_time(clock, cfg)) break;
    for (std::size_t i = 0; i < box.size(); ++i)
      x[i] = cfg.integer_grid
                 ? double(uniform_int(rng, std::int64_t(box[i].lo), std::int64_t(box[i].hi)))
                 : uniform_real(rng, box[i].lo, box[i].hi);
    auto y = cnet.logits(x);
    if (violates(y, prop.target_label))
      if (auto w = detail::confirmed(net, prop, x, std::move(y))) return w;
  }
  return std::nullopt;
}

// Coordinate ascent on max_{j != t}(Y_j - Y_t), starting from the box centre.
// One pass visits every input once and moves it to whichever bound extreme
// gives the larger objective, if that strictly improves on the current value.
// `trace`, when given, receives the objective after every accepted move.
inline std::optional<Witness> greedy_attack(const Network& net, const RobustnessProperty& prop,
                                            const AttackConfig& cfg = {},
                                            std::vector<double>* trace = nullptr) {
  detail::Stopwatch clock;
  detail::check_attack_config(cfg);
  check_compatible(net, prop);
  const auto box = detail::attack_box(prop, cfg.integer_grid);
  const CompiledNetwork cnet(net);
  const Label t = prop.target_label;

  std::vector<double> x(box.size());
  for (std::size_t i = 0; i < box.size(); ++i) {
    const double mid = box[i].lo + (box[i].hi - box[i].lo) / 2;
    x[i] = cfg.integer_grid ? std::floor(mid) : mid;
  }
  IncrementalEval eval(cnet, x);
  auto logits = [&] { return std::vector<double>(eval.logits().begin(), eval.logits().end()); };
  auto y = logits();
  double best = runner_up_margin(y, t);
  if (trace) trace->push_back(best);
  if (violates(y, t)) return detail::confirmed(net, prop, x, std::move(y));

  for (std::uint64_t pass = 0; pass < cfg.greedy_passes; ++pass) {
    bool moved = false;
    for (std::size_t i = 0; i < box.size(); ++i) {
      if (detail::out_of_time(clock, cfg)) return std::nullopt;
      const double keep = x[i];
      double best_v = keep, best_m = best;
      for (double cand : {box[i].lo, box[i].hi}) {
        if (cand == keep) continue;
        eval.set(i, cand);
        const double m = runner_up_margin(eval.logits(), t);
        if (m > best_m) {
          best_m = m;
          best_v = cand;
        }
      }
      x[i] = best_v;
      eval.set(i, best_v);
      if (best_v == keep) continue;
      moved = true;
      best = best_m;
      if (trace) trace->push_back(best);
      if (best >= 0.0) {
        if (auto w = detail::confirmed(net, prop, x, logits())) return w;
      }
    }
    if (!moved) break;
  }
  return std::nullopt;
}

// The "falsify" engine: greedy descent first, then random sampling with the
// remaining time.
inline Verdict falsify(const Network& net, const RobustnessProperty& prop, const AttackConfig& cfg = {}) {
  detail::Stopwatch clock;
  Verdict v;
  auto finish = [&](VerdictKind k) {
    v.kind = k;
    v.stats.seconds = clock.seconds();
    return v;
  };
  if (auto w = greedy_attack(net, prop, cfg)) {
    v.witness = std::move(w);
    return finish(VerdictKind::Falsified);
  }
  AttackConfig rest = cfg;
  if (cfg.time_limit_seconds > 0.0) {
    rest.time_limit_seconds = cfg.time_limit_seconds - clock.seconds();
    if (rest.time_limit_seconds <= 0.0) return finish(VerdictKind::Timeout);
  }
  if (auto w = random_attack(net, prop, rest)) {
    v.witness = std::move(w);
    return finish(VerdictKind::Falsified);
  }
  const bool timed_out = cfg.time_limit_seconds > 0.0 && clock.seconds() >= cfg.time_limit_seconds;
  return finish(timed_out ? VerdictKind::Timeout : VerdictKind::Unknown);
}

}  // namespace bnnv

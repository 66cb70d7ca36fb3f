#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace bnnv {

// The toolkit only draws from std::mt19937_64, whose output sequence is fixed by
// the standard. Distributions are implemented here because the std:: ones are
// implementation-defined, and generated benchmarks must be byte-identical
// across standard libraries.
using Rng = std::mt19937_64;

// Uniform integer in [0, n). n must be positive.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do v = rng();
  while (v >= limit);
  return v % n;
}

inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(uniform_below(rng, static_cast<std::uint64_t>(hi - lo) + 1));
}

// Uniform double in [0, 1).
inline double uniform_unit(Rng& rng) { return double(rng() >> 11) * 0x1.0p-53; }

inline double uniform_real(Rng& rng, double lo, double hi) {
  double v = lo + uniform_unit(rng) * (hi - lo);
  return v > hi ? hi : v;
}

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_below(rng, i)]);
}

}  // namespace bnnv

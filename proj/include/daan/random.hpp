#pragma once

#include <cstdint>
#include <random>
#include <utility>

namespace daan {

// Every stochastic component draws from this engine. The helpers below avoid
// the standard distributions, whose algorithms vary between library vendors,
// so a seed reproduces the same run on any toolchain.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = Rng::max() - Rng::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

// Fisher-Yates over any random-access container.
template <typename Container>
void shuffle(Container& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[uniform_index(rng, i)]);
  }
}

}  // namespace daan

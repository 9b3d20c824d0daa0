#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

namespace kairos {

// Seeded generator with explicitly defined derived distributions. The
// standard <random> distributions are implementation-defined, so anything
// that must reproduce across toolchains goes through these helpers instead.
//
//   uniform01()  = (next() >> 11) * 2^-53            in [0, 1)
//   below(n)     = next() % n                         (Fisher–Yates draws)
//   normal()     = Box–Muller on two uniform01 draws, cosine branch
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  double uniform01() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  std::uint64_t below(std::uint64_t n) { return next() % n; }

  double normal() {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

// Seeded Fisher–Yates over 0..n-1: for i = n-1 down to 1,
// swap(i, rng.below(i + 1)).
inline std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i-- > 1;) {
    std::swap(idx[i], idx[rng.below(i + 1)]);
  }
  return idx;
}

}  // namespace kairos

#pragma once

#include <cstdint>
#include <random>

#include "gridstate/types.hpp"

namespace gridstate {

/// splitmix64 finalizer; mixes a global seed with a stream counter so
/// parallel Monte-Carlo workers get independent, reproducible streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t counter) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (counter + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d4a2c62ed4b1a5ULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::uint64_t stream)
      : engine_(derive_seed(seed, stream)) {}

  double gaussian(double sigma = 1.0) { return sigma * normal_(engine_); }
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * unit_(engine_);
  }
  std::uint64_t integer(std::uint64_t bound) {  // in [0, bound)
    std::uniform_int_distribution<std::uint64_t> d(0, bound - 1);
    return d(engine_);
  }

  /// Circularly symmetric complex sample with E|x|^2 = sigma^2.
  Complex circular_gaussian(double sigma) {
    const double s = sigma / std::sqrt(2.0);
    return {gaussian(s), gaussian(s)};
  }

  Vec gaussian_vector(Index n, double sigma = 1.0) {
    Vec v(n);
    for (Index i = 0; i < n; ++i) v(i) = gaussian(sigma);
    return v;
  }

  CVec circular_gaussian_vector(Index n, double sigma = 1.0) {
    CVec v(n);
    for (Index i = 0; i < n; ++i) v(i) = circular_gaussian(sigma);
    return v;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

}  // namespace gridstate

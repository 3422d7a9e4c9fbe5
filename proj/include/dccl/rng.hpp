#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "dccl/util.hpp"

namespace dccl {

/// Deterministic 64-bit seeded generator with named substream derivation.
///
/// All sampling is built directly on mt19937_64 output so that sequences are
/// identical across standard-library implementations. `derive` produces an
/// independent stream keyed on (root seed, name), independent of how many
/// draws were taken from the parent.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  SeededRng derive(std::string_view name) const {
    std::uint64_t h = fnv1a64(&seed_, sizeof(seed_));
    h = fnv1a64(name, h);
    return SeededRng(h);
  }

  SeededRng derive(std::uint64_t salt) const {
    std::uint64_t h = fnv1a64(&seed_, sizeof(seed_));
    h = fnv1a64(&salt, sizeof(salt), h);
    return SeededRng(h);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform real in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Log-uniform over [lo, hi], lo > 0.
  double log_uniform(double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }

  /// Standard normal via Box-Muller (one value per call, spare discarded).
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Uniform integer in [0, n), rejection sampled (n >= 1).
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// In-place Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace dccl

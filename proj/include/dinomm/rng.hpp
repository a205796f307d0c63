#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dinomm/error.hpp"

namespace dinomm {

// Counter-based generator: output depends only on (key, counter), so streams
// can be split hierarchically and replayed independently of draw order
// elsewhere. std::* distributions are never used; every draw is specified
// here so sequences are bit-identical across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(key) {}

  static Rng from_seed(std::uint64_t seed) { return Rng(mix(seed, 0x7478656e6f6d6dULL)); }

  // Derives an independent substream. Children with distinct ids never share
  // a key with each other or with the parent.
  Rng split(std::uint64_t child) const { return Rng(mix(key_, 0x9e3779b97f4a7c15ULL + child)); }

  std::uint64_t next_u64() { return mix(key_, counter_++); }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) via rejection.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw ValueError("Rng::uniform_index: n must be positive");
    const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  // Box-Muller without caching the second value: two draws per normal keeps
  // the counter advance independent of call history.
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stdev) { return mean + stdev * normal(); }

  // Standard normal conditioned on [lo, hi], by rejection.
  double truncated_normal(double lo = -2.0, double hi = 2.0) {
    if (!(lo < hi)) throw ValueError("Rng::truncated_normal: lo must be < hi");
    double z = normal();
    while (z < lo || z > hi) z = normal();
    return z;
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::uint64_t i = items.size(); i > 1; --i) {
      const std::uint64_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  // SplitMix64-style finalizer over key + golden-gamma * counter.
  static std::uint64_t mix(std::uint64_t key, std::uint64_t counter) {
    std::uint64_t z = key + 0x9e3779b97f4a7c15ULL * (counter + 1);
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_;
  std::uint64_t counter_{0};
};

}  // namespace dinomm

#pragma once

#include <cstdint>
#include <string_view>

namespace pco {

/// Counter-based generator: output k is the SplitMix64 finalizer applied to
/// seed + (k + 1) * golden-gamma. Any draw can be recomputed from (seed, k),
/// so trials never share mutable generator state.
class CounterRng {
 public:
  static constexpr std::string_view kAlgorithm = "splitmix64-ctr/v1";

  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t at(std::uint64_t counter) const {
    return mix(seed_ + (counter + 1) * 0x9E3779B97F4A7C15ULL);
  }

  std::uint64_t next_u64() { return at(counter_++); }

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, bound); bound > 0. Lemire-style rejection keeps it unbiased.
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  // Independent stream for trial `index` of a campaign seeded with `base`.
  static std::uint64_t derive(std::uint64_t base, std::uint64_t index) {
    return mix(mix(base) ^ (index * 0xD1B54A32D192ED03ULL + 0x632BE59BD9B4E019ULL));
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace pco

#pragma once

#include <cstdint>

namespace fplab {

// SplitMix64 (Steele, Lea, Flood). Every seeded stream in the library is
// built on this generator so schedules, weights and draws are identical
// across platforms and standard library implementations.
class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) {}

  constexpr std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1) with 53 random bits.
  constexpr double next_unit() { return static_cast<double>(next() >> 11) * 0x1p-53; }

  // Uniform integer in [0, bound) by rejection; bound > 0.
  constexpr std::uint64_t next_below(std::uint64_t bound) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t r;
    do {
      r = next();
    } while (r >= limit);
    return r % bound;
  }

 private:
  std::uint64_t state_;
};

}  // namespace fplab

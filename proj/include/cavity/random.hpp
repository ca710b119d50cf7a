#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace cavity {

// SplitMix64 (Steele, Lea & Flood). Every draw is produced by integer
// arithmetic, so streams are identical on every platform; derived
// distributions below use only basic libm calls.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n), n > 0, unbiased by rejection.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do v = next();
    while (v >= limit);
    return v % n;
  }

  // Box-Muller; one draw per call, no cached spare.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

inline std::uint64_t mix64(std::uint64_t x) { return SplitMix64(x).next(); }

// FNV-1a of a purpose tag, used to name substreams.
constexpr std::uint64_t stream_tag(std::string_view name) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

// Seed of an independent substream: mix64(seed ^ mix64(tag)). Changing how
// many draws one purpose consumes never shifts another purpose's stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) { return mix64(seed ^ mix64(tag)); }

inline SplitMix64 substream(std::uint64_t seed, std::string_view purpose) {
  return SplitMix64(derive_seed(seed, stream_tag(purpose)));
}

// Seed of case k under a global seed (k is also the CSV case index).
inline std::uint64_t case_seed(std::uint64_t global_seed, std::uint64_t k) {
  return derive_seed(global_seed, stream_tag("case") + k);
}

}  // namespace cavity

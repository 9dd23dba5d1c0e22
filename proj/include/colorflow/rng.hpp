#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace colorflow {

// SplitMix64. Small, fast, and the output sequence is fixed by the standard
// constants, so seeded runs are reproducible across platforms and compilers
// (std::uniform_real_distribution is implementation-defined, which would
// break bit-exact reruns).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // in [0,1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
  float uniform_f() { return float(next_u64() >> 40) * 0x1.0p-24f; }

  // unbiased integer in [0,n), Lemire's multiply-shift
  std::uint64_t below(std::uint64_t n) {
    return std::uint64_t((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  // standard normal, Marsaglia polar
  double normal() {
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    return u * std::sqrt(-2.0 * std::log(s) / s);
  }

 private:
  std::uint64_t state_;
};

// Seed derivation for independent streams (per iteration, per image, ...).
inline std::uint64_t seed_mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t seed_of_string(std::string_view s) {
  // FNV-1a
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace colorflow

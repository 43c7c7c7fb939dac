#pragma once

// Seed derivation and a counter-based generator.
//
// Every random stream in the toolkit is keyed by a root seed plus a tuple of
// identifiers (split, class, sample index, replicate, ...). Streams never
// depend on the order in which work is scheduled.

#include <cstdint>
#include <limits>
#include <string_view>

namespace sarshap {

inline constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// SplitMix64 as a UniformRandomBitGenerator. Output k is a pure function of
// (seed, k), so a stream can be positioned anywhere without replay.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return splitmix64_mix(state_);
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

inline constexpr std::uint64_t derive_seed(std::uint64_t root) noexcept { return splitmix64_mix(root); }

template <typename... Rest>
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t key, Rest... rest) noexcept {
  return derive_seed(splitmix64_mix(root ^ splitmix64_mix(key + 0x9e3779b97f4a7c15ULL)),
                     static_cast<std::uint64_t>(rest)...);
}

// FNV-1a, used to turn sample identifiers into seed keys.
inline constexpr std::uint64_t hash_string(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace sarshap

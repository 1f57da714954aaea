#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fpliif {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Well-known stream ids; any other integer is a valid stream too.
enum class Stream : std::uint64_t {
  kInit = 1,
  kShuffle = 2,
  kAugment = 3,
  kSynth = 4,
  kBench = 5,
};

/// Substream seed for (root, stream): mix64(mix64(root) ^ stream).
constexpr std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  return mix64(mix64(root) ^ stream);
}

constexpr std::uint64_t derive_seed(std::uint64_t root, Stream stream) {
  return derive_seed(root, static_cast<std::uint64_t>(stream));
}

inline Rng make_rng(std::uint64_t root, Stream stream) { return Rng(derive_seed(root, stream)); }

// Uniform in [0, 1) from the top 53 bits; identical on every standard library.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

}  // namespace fpliif

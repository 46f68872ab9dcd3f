#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedlab {

using Rng = std::mt19937_64;

// Stream tags keep independent random consumers apart under one experiment seed.
enum class Stream : std::uint64_t {
  Sampling = 1,
  Noise = 2,
  Init = 3,
  Data = 4,
  Partition = 5,
  Verify = 6,
};

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Hashes an ordered key (seed, stream, client, round, step, ...) into a seed.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> key) noexcept {
  std::uint64_t h = 0x6A09E667F3BCC909ULL;
  for (std::uint64_t k : key) h = mix64(h ^ mix64(k));
  return h;
}

inline Rng make_rng(std::initializer_list<std::uint64_t> key) { return Rng(derive_seed(key)); }

}  // namespace fedlab

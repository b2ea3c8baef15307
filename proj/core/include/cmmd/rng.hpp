#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace cmmd {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream seed for a (seed, purpose, indices...) tuple.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = mix64(seed);
  for (std::uint64_t p : parts) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

// Purpose tags keep derived streams disjoint.
enum class SeedPurpose : std::uint64_t {
  kGenerate = 1,
  kSplit = 2,
  kOffsets = 3,
  kEpoch = 4,
  kValidation = 5,
  kInit = 6,
  kNoise = 7,
  kEval = 8,
  kRoster = 9,
  kProbe = 10,
};

inline std::uint64_t derive_seed(std::uint64_t seed, SeedPurpose purpose, std::uint64_t a = 0, std::uint64_t b = 0,
                                 std::uint64_t c = 0) noexcept {
  return derive_seed(seed, {static_cast<std::uint64_t>(purpose), a, b, c});
}

}  // namespace cmmd

#pragma once

#include <cstdint>
#include <random>

namespace lunabell {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent sub-seeds from a run seed.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stream identifiers for sub-seed derivation. Values are part of the
/// reproducibility contract: changing one changes every persisted run.
enum class SeedStream : std::uint64_t {
  alice_choices = 1,
  bob_choices = 2,
  pairs = 3,
  alice_singles = 4,
  bob_singles = 5,
  dark_counts = 6,
  emissions = 7,
  detection = 8,
};

constexpr std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream) noexcept {
  return mix64(seed ^ mix64(static_cast<std::uint64_t>(stream)));
}

inline Rng make_rng(std::uint64_t seed, SeedStream stream) {
  return Rng(derive_seed(seed, stream));
}

} // namespace lunabell

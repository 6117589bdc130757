#pragma once

// Independent reference implementations used only by tests. Nothing here may
// call into the code paths it is used to check.

#include "lunabell/tagstream.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace lunabell::testing {

using tagstream::CoincidencePair;
using tagstream::TimeTag;

/// O(n*m) reference for alice-ordered greedy-nearest-unique pairing: every
/// Alice tag scans the whole Bob stream for the closest unused tag.
inline std::vector<CoincidencePair> brute_force_coincidences(std::span<const TimeTag> alice,
                                                             std::span<const TimeTag> bob,
                                                             std::uint64_t window_ps) {
  std::vector<bool> used(bob.size(), false);
  std::vector<CoincidencePair> out;
  for (const auto &a : alice) {
    std::ptrdiff_t best = -1;
    std::int64_t best_d = 0;
    for (std::size_t j = 0; j < bob.size(); ++j) {
      if (used[j])
        continue;
      const std::int64_t delta = static_cast<std::int64_t>(bob[j].time_ps) - static_cast<std::int64_t>(a.time_ps);
      const std::int64_t d = delta < 0 ? -delta : delta;
      if (d > static_cast<std::int64_t>(window_ps))
        continue;
      if (best < 0 || d < best_d) {
        best = static_cast<std::ptrdiff_t>(j);
        best_d = d;
      }
    }
    if (best >= 0) {
      used[static_cast<std::size_t>(best)] = true;
      const auto &b = bob[static_cast<std::size_t>(best)];
      out.push_back({a, b, static_cast<std::int64_t>(b.time_ps) - static_cast<std::int64_t>(a.time_ps)});
    }
  }
  return out;
}

/// Uniform random sorted stream built from raw mt19937_64 output only, so the
/// sequence is identical on every standard library.
inline std::vector<TimeTag> uniform_stream(std::uint64_t seed, std::size_t n, std::uint64_t span_ps, int arm) {
  std::mt19937_64 rng(seed);
  std::vector<TimeTag> tags(n);
  for (auto &t : tags) {
    t.time_ps = rng() % span_ps;
    t.channel = static_cast<std::uint8_t>(arm * 2 + static_cast<int>(rng() & 1U));
  }
  std::sort(tags.begin(), tags.end(), tagstream::tag_less);
  return tags;
}

inline std::uint64_t fnv1a(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffU;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t pair_digest(std::span<const CoincidencePair> pairs) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto &p : pairs) {
    h = fnv1a(h, p.alice.time_ps);
    h = fnv1a(h, p.alice.channel);
    h = fnv1a(h, p.bob.time_ps);
    h = fnv1a(h, p.bob.channel);
    h = fnv1a(h, static_cast<std::uint64_t>(p.delta_ps));
  }
  return h;
}

/// Full width at half maximum of a Gaussian from its sigma, via the closed form
/// 2 sqrt(2 ln 2) sigma computed here from scratch.
inline double gaussian_fwhm(double sigma) { return 2.0 * std::sqrt(2.0 * std::log(2.0)) * sigma; }

} // namespace lunabell::testing

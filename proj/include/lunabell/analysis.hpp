#pragma once

#include "lunabell/errors.hpp"

#include <array>
#include <cstdint>
#include <string_view>

namespace lunabell::analysis {

/// Coincidence counts for one setting pair, by outcome signs.
struct OutcomeCounts {
  std::uint64_t pp{0};
  std::uint64_t pm{0};
  std::uint64_t mp{0};
  std::uint64_t mm{0};

  std::uint64_t total() const { return pp + pm + mp + mm; }
  void add(int alice_sign, int bob_sign);
  OutcomeCounts &operator+=(const OutcomeCounts &o);
  friend bool operator==(const OutcomeCounts &, const OutcomeCounts &) = default;
};

/// Counts for the four setting pairs, indexed 2 * alice_setting + bob_setting:
/// (a,b), (a,b'), (a',b), (a',b').
struct SettingCounts {
  std::array<OutcomeCounts, 4> by_setting{};

  static constexpr std::size_t index(int alice_setting, int bob_setting) {
    return static_cast<std::size_t>(2 * alice_setting + bob_setting);
  }
  OutcomeCounts &at(int alice_setting, int bob_setting) { return by_setting[index(alice_setting, bob_setting)]; }
  const OutcomeCounts &at(int alice_setting, int bob_setting) const {
    return by_setting[index(alice_setting, bob_setting)];
  }
  std::uint64_t total() const;
  SettingCounts &operator+=(const SettingCounts &o);
  friend bool operator==(const SettingCounts &, const SettingCounts &) = default;
};

struct CorrelationEstimate {
  double value{0.0};
  double sigma{0.0};
  std::uint64_t n{0};
};

/// Sign convention tag: S = E(a,b) - E(a,b') + E(a',b) + E(a',b').
inline constexpr std::string_view kChshConvention = "+E00-E01+E10+E11";
inline constexpr std::array<int, 4> kChshSigns{+1, -1, +1, +1};

struct ChshResult {
  double s_value{0.0};
  double sigma{0.0};
  std::array<CorrelationEstimate, 4> correlations{};
  std::string_view convention{kChshConvention};
};

class UndefinedCorrelation : public Error {
public:
  using Error::Error;
};

class NoViolation : public Error {
public:
  using Error::Error;
};

/// E = (N++ + N-- - N+- - N-+) / N with sigma = sqrt((1 - E^2) / N).
CorrelationEstimate correlation(const OutcomeCounts &counts);

ChshResult chsh(const SettingCounts &counts);

/// Largest |S| reachable by a deterministic local strategy, by enumeration
/// of all 16 output assignments.
double local_bound_oracle();

/// S for one deterministic strategy: outputs for Alice's two settings and
/// Bob's two settings.
int deterministic_chsh(int a0, int a1, int b0, int b1);

double expected_coincidences(double pair_rate_per_s, double pair_loss_db, double duration_s);

/// Run time needed for the ideal violation (2 sqrt(2) V - 2) to reach
/// k_sigma standard errors, with counts split evenly over the four settings.
///
/// Per setting the correlation is E = V / sqrt(2) with error sqrt((1-E^2)/N),
/// so sigma_S = sqrt(4 (1 - E^2) / N) and
///   N = 4 (1 - E^2) k^2 / (2 sqrt(2) V - 2)^2,   T = 4 N / (R 10^(-L/10)).
/// Throws NoViolation when V <= 1/sqrt(2).
double time_to_violation(double visibility, double pair_rate_per_s, double pair_loss_db, double k_sigma);

/// Parametric bootstrap of sigma_S: each setting's counts are redrawn as a
/// multinomial with the observed frequencies and totals.
double bootstrap_sigma(const SettingCounts &counts, int resamples, std::uint64_t seed);

} // namespace lunabell::analysis

#pragma once

#include "lunabell/errors.hpp"
#include "lunabell/rng.hpp"
#include "lunabell/tagstream.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace lunabell::photonics {

using tagstream::Picoseconds;
using tagstream::TimeTag;

/// 2 * sqrt(2 ln 2): FWHM of a unit-sigma Gaussian.
inline constexpr double kFwhmPerSigma = 2.3548200450309493;
inline constexpr Picoseconds kPsPerSecond = 1'000'000'000'000ULL;

/// Nonlinear-crystal parameters entering the pair-generation ratio law
/// G ~ chi_eff^2 / |n_s' - n_i'|.
struct PhaseMatchingSpec {
  double chi_eff{1.0};
  double n_group_signal{1.0};
  double n_group_idler{1.0};
};

class SingularRate : public Error {
public:
  using Error::Error;
};

/// Generation-rate ratio of crystal `a` over crystal `b`.
double relative_pair_rate(const PhaseMatchingSpec &a, const PhaseMatchingSpec &b);

struct SourceSpec {
  double pair_rate_per_s{1.0e9};
  double visibility{0.806};
  int state_sign{+1}; ///< +1 for Phi+-like correlations, -1 for Phi--like

  void validate() const;
};

/// Analyzer angles in degrees for setting index 0 and 1 on each side.
struct AnalyzerSettings {
  std::array<double, 2> alice_deg{0.0, 45.0};
  std::array<double, 2> bob_deg{22.5, 67.5};

  void validate() const;
};

struct DetectorSpec {
  double efficiency{1.0};
  double jitter_fwhm_ps{40.0};
  double dark_rate_per_s{0.0};
  /// Two-channel coincidence resolution of the time-to-digital converter.
  /// Each channel carries half of it in quadrature.
  double tdc_fwhm_ps{60.0};

  void validate() const;
  /// Gaussian sigma applied to each tag on this arm.
  double tag_sigma_ps() const;
};

struct JointOutcome {
  int alice_sign{+1};
  int bob_sign{+1};
};

/// P(alice_sign, bob_sign) for one pair of analyzer angles.
struct JointTable {
  std::array<double, 4> p{}; ///< ordered ++, +-, -+, --

  static constexpr std::size_t index(int alice_sign, int bob_sign) {
    return static_cast<std::size_t>((alice_sign > 0 ? 0 : 2) + (bob_sign > 0 ? 0 : 1));
  }
  double operator()(int alice_sign, int bob_sign) const { return p[index(alice_sign, bob_sign)]; }
  double correlation() const { return p[0] - p[1] - p[2] + p[3]; }
  /// Maps u in [0, 1) onto an outcome by cumulative probability.
  JointOutcome pick(double u) const;
};

JointTable joint_outcome_probabilities(double theta_a_deg, double theta_b_deg, const SourceSpec &source);

/// Quadrature sum of FWHM contributions.
double system_timing_fwhm(std::span<const double> components_ps);

/// Homogeneous Poisson emission times in [start, start + duration), strictly
/// increasing (coincident picosecond stamps are pushed forward by 1 ps).
std::vector<Picoseconds> sample_pair_emissions(const SourceSpec &source, double duration_s, std::uint64_t seed,
                                               Picoseconds start_ps = 0);

/// Piecewise-constant analyzer setting for one observer, keyed by the time
/// the setting became ready.
class SettingSchedule {
public:
  struct Change {
    Picoseconds prepared_ps{0};
    int setting{0};
  };

  /// Changes must arrive in non-decreasing time order.
  void add(Picoseconds prepared_ps, int setting);
  std::optional<int> active_at(Picoseconds t) const;
  std::optional<Picoseconds> first_prepared() const;
  std::span<const Change> changes() const { return changes_; }
  bool empty() const { return changes_.empty(); }

private:
  std::vector<Change> changes_;
};

struct DetectionModel {
  std::array<DetectorSpec, 2> detectors{};
  std::array<double, 2> arm_loss_db{51.5, 51.5};
  AnalyzerSettings angles{};
  /// Generate photons whose partner was lost (they only feed accidentals).
  bool uncorrelated_singles{true};

  void validate() const;
  /// Per-photon survival probability: channel transmittance times efficiency.
  double survival(int arm) const;
};

struct DetectedStreams {
  std::vector<TimeTag> alice;
  std::vector<TimeTag> bob;

  void sort();
};

/// Raw mode: every emission is thinned photon by photon.
DetectedStreams detect_stream(std::span<const Picoseconds> emissions, const SettingSchedule &alice,
                              const SettingSchedule &bob, const DetectionModel &model, const SourceSpec &source,
                              std::uint64_t seed);

/// Thinned mode: samples only the surviving categories (both arms, Alice
/// only, Bob only) plus dark counts, each as its own Poisson process.
///
/// Generation is incremental: calling advance() with increasing horizons
/// yields exactly the same tags as one call to the final horizon.
class ThinnedGenerator {
public:
  ThinnedGenerator(const SourceSpec &source, const DetectionModel &model, std::uint64_t seed,
                   Picoseconds start_ps);

  /// Appends every tag originating in [cursor, until) to `out` (unsorted).
  void advance(Picoseconds until, const SettingSchedule &alice, const SettingSchedule &bob, DetectedStreams &out);
  Picoseconds cursor() const { return cursor_; }
  double pair_rate_per_s() const { return pair_rate_; }

private:
  /// Poisson arrival clock kept as integer picoseconds plus a fraction so
  /// precision does not degrade over multi-hour runs.
  struct Process {
    Rng rng;
    std::exponential_distribution<double> gap;
    Picoseconds whole{0};
    double frac{0.0};
    bool active{false};

    Process(std::uint64_t seed, double rate_per_s, Picoseconds start);
    Picoseconds next_time() const { return whole; }
    void step();
  };

  Picoseconds jittered(Picoseconds t, double sigma, Rng &rng, std::normal_distribution<double> &normal) const;

  SourceSpec source_;
  DetectionModel model_;
  Picoseconds cursor_;
  double pair_rate_;
  std::array<double, 2> sigma_;
  Process pairs_;
  Process alice_only_;
  Process bob_only_;
  std::array<Process, 4> darks_;
  std::normal_distribution<double> pair_normal_{0.0, 1.0};
  std::normal_distribution<double> alice_normal_{0.0, 1.0};
  std::normal_distribution<double> bob_normal_{0.0, 1.0};
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

} // namespace lunabell::photonics

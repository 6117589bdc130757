#pragma once

#include "lunabell/linkbudget.hpp"
#include "lunabell/photonics.hpp"
#include "lunabell/spacetime.hpp"
#include "lunabell/tagstream.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace lunabell::session {

enum class Mode { headless, interactive, replay };
enum class ChoiceSource { rng, replay, live };
enum class DetectionMode { raw, thinned };

std::string_view to_string(Mode m);
std::string_view to_string(ChoiceSource c);
std::string_view to_string(DetectionMode d);

/// Everything needed to reproduce a run, together with the seed.
struct SessionConfig {
  std::string preset{"paper_lab_103db"};
  Mode mode{Mode::headless};
  std::uint64_t seed{1};
  double duration_s{10800.0};
  ChoiceSource choice_source{ChoiceSource::rng};
  /// Choice log consumed when choice_source == replay.
  std::string choice_log;
  /// Simulated seconds per wall-clock second; interactive runs must use 1.
  double time_compression{1.0};
  DetectionMode detection_mode{DetectionMode::thinned};
  tagstream::Picoseconds coincidence_window_ps{500};

  photonics::SourceSpec source{};
  std::array<linkbudget::ArmBudget, 2> arms{};
  std::array<photonics::DetectorSpec, 2> detectors{};
  photonics::AnalyzerSettings angles{};
  bool uncorrelated_singles{false};

  /// Filter trials through the Earth-Moon validity windows.
  bool earth_moon_geometry{false};
  spacetime::GeometryConfig geometry{};
  spacetime::TimingBudget timing{};

  /// Headless human-choice model: interval between presses drawn uniformly
  /// from [1/max, 1/min] seconds.
  double choice_rate_min_hz{2.0};
  double choice_rate_max_hz{4.0};

  void validate() const;

  double pair_loss_db() const;
  photonics::DetectionModel detection_model() const;
  tagstream::Picoseconds system_delay_ps() const;

  /// Canonical key=value serialization; stable field order, exact doubles.
  std::string serialize() const;
  /// SHA-256 of serialize(), hex encoded.
  std::string hash() const;

  friend bool operator==(const SessionConfig &a, const SessionConfig &b) { return a.serialize() == b.serialize(); }
};

/// Named scenarios: paper_lab_103db, paper_table1, interactive_90db, and
/// "custom" (library defaults, expected to be overridden key by key).
SessionConfig preset_config(std::string_view name);
std::vector<std::string> preset_config_names();

/// Parses key=value text with [section] headers. Keys not mentioned keep the
/// values of the preset named by the top-level `preset` key (or `base`).
SessionConfig parse_config(std::string_view text, const SessionConfig &base = preset_config("paper_lab_103db"));
SessionConfig load_config(const std::filesystem::path &path,
                          const SessionConfig &base = preset_config("paper_lab_103db"));
void save_config(const std::filesystem::path &path, const SessionConfig &config);

} // namespace lunabell::session

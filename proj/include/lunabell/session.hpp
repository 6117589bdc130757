#pragma once

#include "lunabell/analysis.hpp"
#include "lunabell/config.hpp"
#include "lunabell/photonics.hpp"
#include "lunabell/tagstream.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lunabell::session {

using tagstream::Picoseconds;

enum class Observer { alice = 0, bob = 1 };
std::string_view to_string(Observer o);
Observer parse_observer(std::string_view s);

struct ChoiceEvent {
  Picoseconds choice_ps{0};
  Observer observer{Observer::alice};
  int setting{0};

  friend bool operator==(const ChoiceEvent &, const ChoiceEvent &) = default;
};

/// Canonical log order: time, then observer.
bool choice_less(const ChoiceEvent &a, const ChoiceEvent &b);

inline constexpr int kChoiceLogSchema = 1;

/// Setting log problem; line() is 1-based, 0 when not tied to a line.
class ChoiceLogError : public Error {
public:
  ChoiceLogError(std::string path, std::size_t line, const std::string &what);
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

class SchemaMismatch : public ChoiceLogError {
public:
  using ChoiceLogError::ChoiceLogError;
};

struct ChoiceLog {
  int schema{kChoiceLogSchema};
  std::string config_hash;
  std::vector<ChoiceEvent> events;
};

/// Header lines `# lunabell-choices schema=N` and `# config_hash=H`, then one
/// `t_choice_ps observer setting` record per line in canonical order.
std::string format_choice_log(const ChoiceLog &log);
ChoiceLog parse_choice_log(std::string_view text, const std::string &path = "<memory>");
ChoiceLog read_choice_log(const std::filesystem::path &path);
void write_choice_log(const std::filesystem::path &path, const ChoiceLog &log);

/// Human-choice model: per observer, presses separated by uniform intervals
/// in [1/max_rate, 1/min_rate], settings uniform over {0, 1}.
std::vector<ChoiceEvent> generate_choices(const SessionConfig &config);

/// One setting choice and what became of it.
struct TrialRecord {
  Observer observer{Observer::alice};
  double choice_time_s{0.0};
  double prepared_time_s{0.0};
  int setting{0};
  std::optional<double> detection_time_s;
  std::optional<int> outcome;
  /// Absent while undetected (pending).
  std::optional<spacetime::TrialValidity> validity;

  friend bool operator==(const TrialRecord &, const TrialRecord &) = default;
};

struct ValidityTally {
  std::uint64_t valid{0};
  std::uint64_t invalid{0};
  std::uint64_t pending{0};

  std::uint64_t total() const { return valid + invalid + pending; }
  friend bool operator==(const ValidityTally &, const ValidityTally &) = default;
};

struct RunReport {
  std::optional<analysis::ChshResult> chsh;
  analysis::SettingCounts counts;
  std::uint64_t total_trials{0};
  std::uint64_t alice_trials{0};
  std::uint64_t bob_trials{0};
  ValidityTally locality;
  ValidityTally freedom_of_choice;
  ValidityTally combined;

  std::uint64_t alice_tags{0};
  std::uint64_t bob_tags{0};
  /// Every pair found by the coincidence engine.
  std::uint64_t coincidences{0};
  /// Pairs that entered the counts (attributed to trials and, with the
  /// Earth-Moon geometry, valid on both sides).
  std::uint64_t counted_coincidences{0};
  double expected_coincidences{0.0};
  double active_pair_loss_db{0.0};
  double photon_window_s{0.0};

  std::string mode;
  std::string preset;
  std::uint64_t seed{0};
  std::string config_hash;
  double duration_s{0.0};
  double wall_time_s{0.0};

  /// Machine-readable key=value form. `include_wall_time` is false for the
  /// hashed form, which must be reproducible.
  std::string to_kv(bool include_wall_time = true) const;
  /// key=value lines describing physics only (no run metadata); used to
  /// compare runs that differ only in how they were driven.
  std::string physics_kv() const;
  std::string to_text() const;
  /// SHA-256 of to_kv(false).
  std::string hash() const;
};

/// Everything derived from (config, choices, tags).
struct RunAnalysis {
  RunReport report;
  std::vector<TrialRecord> trials;
  std::vector<tagstream::CoincidencePair> pairs;
};

/// Instant from which photons are generated: both observers have a prepared
/// setting. Absent when either observer never chose.
std::optional<Picoseconds> photon_start(const SessionConfig &config, std::span<const ChoiceEvent> choices);

/// Builds the per-observer setting schedules (prepared = choice + delay).
std::pair<photonics::SettingSchedule, photonics::SettingSchedule>
build_schedules(const SessionConfig &config, std::span<const ChoiceEvent> choices);

/// Pairs, attributes detections to trials, applies validity and tallies.
/// `tags` must be sorted.
RunAnalysis analyze_run(const SessionConfig &config, std::span<const ChoiceEvent> choices,
                        const photonics::DetectedStreams &tags, Picoseconds end_ps);

/// Simulates photons for the given choices over [start, end).
photonics::DetectedStreams simulate_tags(const SessionConfig &config, std::span<const ChoiceEvent> choices,
                                         Picoseconds end_ps);

/// Files in a run directory.
namespace artifact {
inline constexpr const char *config = "config.ini";
inline constexpr const char *choices = "choices.log";
inline constexpr const char *alice_tags = "alice.tags";
inline constexpr const char *bob_tags = "bob.tags";
inline constexpr const char *pairs = "pairs.txt";
inline constexpr const char *report_text = "report.txt";
inline constexpr const char *report_kv = "report.kv";
} // namespace artifact

void persist_run(const std::filesystem::path &dir, const SessionConfig &config,
                 std::span<const ChoiceEvent> choices, const photonics::DetectedStreams &tags,
                 const RunAnalysis &analysis);

/// Headless run. Writes the run directory when `out_dir` is non-empty.
RunAnalysis run_headless(const SessionConfig &config, const std::filesystem::path &out_dir = {});

/// Recomputes the report of a persisted run from its artifacts. Only the
/// wall time differs from the original report.
RunAnalysis run_replay(const std::filesystem::path &run_dir);

} // namespace lunabell::session

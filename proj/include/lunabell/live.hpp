#pragma once

#include "lunabell/session.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

namespace lunabell::session {

/// Monotonic session clock in picoseconds since session start.
class Clock {
public:
  virtual ~Clock() = default;
  virtual Picoseconds now() const = 0;
};

class SteadyClock : public Clock {
public:
  SteadyClock() : start_(std::chrono::steady_clock::now()) {}
  Picoseconds now() const override;

private:
  std::chrono::steady_clock::time_point start_;
};

/// Test clock; only moves when told to.
class ManualClock : public Clock {
public:
  explicit ManualClock(Picoseconds t = 0) : t_(t) {}
  Picoseconds now() const override { return t_.load(); }
  void set(Picoseconds t);
  void advance(Picoseconds dt) { set(now() + dt); }

private:
  std::atomic<Picoseconds> t_;
};

enum class LiveState { waiting, armed, paused, closed };
std::string_view to_string(LiveState s);

/// Immutable view of a live session handed to subscribers.
struct StatsSnapshot {
  std::uint64_t seq{0};
  double session_time_s{0.0};
  LiveState state{LiveState::waiting};
  analysis::SettingCounts counts;
  std::uint64_t coincidences{0};
  std::uint64_t counted_coincidences{0};
  std::optional<analysis::ChshResult> chsh;
  ValidityTally locality;
  ValidityTally freedom_of_choice;
  ValidityTally combined;
  std::uint64_t alice_choices{0};
  std::uint64_t bob_choices{0};
  double active_pair_loss_db{0.0};
};

/// Deterministic session state machine. Not thread-safe; LiveSession
/// serializes access to it.
///
/// Photons are generated once both observers have a prepared setting, from
/// the later of the two first preparation times, exactly as in a headless
/// run with the same choices.
class SessionCore {
public:
  explicit SessionCore(SessionConfig config);

  /// Choice made at `t`; takes effect at t + system delay. Throws
  /// InvalidArgument if that lies behind already generated photons.
  void on_choice(Observer who, int setting, Picoseconds t);
  /// Generates photons up to `t`. With `record` false they are drawn and
  /// dropped, which keeps the random streams aligned across pauses.
  void advance_to(Picoseconds t, bool record = true);

  RunAnalysis analyze() const;
  /// Final analysis at `end`; the returned config snapshot carries the
  /// actual duration.
  RunAnalysis finish(Picoseconds end);

  Picoseconds now() const { return now_; }
  /// Earliest choice time that is still accepted.
  Picoseconds earliest_choice() const;
  const SessionConfig &config() const { return config_; }
  const std::vector<ChoiceEvent> &choices() const { return choices_; }
  const photonics::DetectedStreams &tags() const;

private:
  SessionConfig config_;
  std::vector<ChoiceEvent> choices_;
  photonics::SettingSchedule alice_;
  photonics::SettingSchedule bob_;
  std::optional<photonics::ThinnedGenerator> generator_;
  mutable photonics::DetectedStreams tags_;
  mutable bool sorted_{true};
  photonics::DetectedStreams scratch_;
  Picoseconds now_{0};
};

StatsSnapshot make_snapshot(const RunAnalysis &analysis, std::uint64_t seq, double session_time_s,
                            LiveState state);

struct ChoiceAck {
  Observer observer{Observer::alice};
  int setting{0};
  Picoseconds choice_ps{0};
  Picoseconds prepared_ps{0};
};

/// Live interactive session.
///
/// Producers (observer feeds) call submit()/connect()/disconnect() from any
/// thread; every mutation is queued and applied by one worker in order.
/// Subscribers get a snapshot at least every `stats_period`.
class LiveSession {
public:
  using Subscriber = std::function<void(std::shared_ptr<const StatsSnapshot>)>;

  struct Options {
    std::chrono::milliseconds stats_period{250};
    /// Run directory written on close; empty to skip persistence.
    std::filesystem::path out_dir;
    /// Without a worker, pump() must be called by the owner.
    bool worker{true};
  };

  LiveSession(SessionConfig config, std::shared_ptr<const Clock> clock, Options options);
  ~LiveSession();
  LiveSession(const LiveSession &) = delete;
  LiveSession &operator=(const LiveSession &) = delete;

  /// Attaches a feed to an observer. A feed may drive only one observer.
  void connect(Observer who, const std::string &feed_id);
  /// Detaching a feed pauses the session until it reconnects.
  void disconnect(Observer who);
  bool connected(Observer who) const;

  /// Stamps the choice with the session clock and queues it. Throws
  /// InvalidArgument unless the session is armed.
  ChoiceAck submit(Observer who, int setting);

  std::uint64_t subscribe(Subscriber s);
  void unsubscribe(std::uint64_t id);

  /// Applies queued events, generates up to the clock, and publishes a
  /// snapshot if one is due (or `force`).
  void pump(bool force = false);

  std::shared_ptr<const StatsSnapshot> latest() const;
  LiveState state() const;

  /// Stops the worker, finalizes at the current clock, persists, and
  /// publishes a last snapshot matching the report. Idempotent.
  const RunAnalysis &close();
  const std::optional<RunAnalysis> &result() const { return result_; }

private:
  struct Event {
    enum class Kind { choice, connect, disconnect } kind;
    Observer who{Observer::alice};
    int setting{0};
    Picoseconds t{0};
  };

  void worker_loop();
  void apply(const Event &e);
  void publish(std::shared_ptr<const StatsSnapshot> snap);
  LiveState derive_state() const;

  std::shared_ptr<const Clock> clock_;
  Options options_;

  // Queue and feed bookkeeping shared with producers.
  mutable std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::deque<Event> queue_;
  std::array<std::optional<std::string>, 2> feeds_;
  Picoseconds last_stamp_{0};
  bool armed_{false};
  bool stopping_{false};
  std::atomic<LiveState> state_{LiveState::waiting};

  // Owned by whoever is pumping (worker, or the owner after close()).
  std::mutex core_mutex_;
  SessionCore core_;
  std::array<bool, 2> attached_{false, false};
  bool ever_armed_{false};
  std::uint64_t seq_{0};
  Picoseconds last_publish_{0};
  bool published_once_{false};

  mutable std::mutex sub_mutex_;
  std::map<std::uint64_t, Subscriber> subscribers_;
  std::uint64_t next_sub_{1};
  std::shared_ptr<const StatsSnapshot> latest_;

  std::optional<RunAnalysis> result_;
  std::thread worker_;
};

} // namespace lunabell::session

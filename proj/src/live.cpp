#include "lunabell/live.hpp"

#include "lunabell/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace lunabell::session {

using photonics::kPsPerSecond;

namespace {

double to_seconds(Picoseconds t) { return static_cast<double>(t) / static_cast<double>(kPsPerSecond); }

Picoseconds limit_ps(const SessionConfig &c) {
  return static_cast<Picoseconds>(std::llround(c.duration_s * static_cast<double>(kPsPerSecond)));
}

} // namespace

Picoseconds SteadyClock::now() const {
  const auto d = std::chrono::steady_clock::now() - start_;
  return static_cast<Picoseconds>(std::chrono::duration_cast<std::chrono::nanoseconds>(d).count()) * 1000U;
}

void ManualClock::set(Picoseconds t) {
  if (t < t_.load())
    throw InvalidArgument("clock cannot run backwards");
  t_.store(t);
}

std::string_view to_string(LiveState s) {
  switch (s) {
  case LiveState::waiting:
    return "waiting";
  case LiveState::armed:
    return "armed";
  case LiveState::paused:
    return "paused";
  case LiveState::closed:
    return "closed";
  }
  return "?";
}

// --- SessionCore ------------------------------------------------------------

SessionCore::SessionCore(SessionConfig config) : config_(std::move(config)) {
  config_.validate();
  if (config_.mode != Mode::interactive)
    throw ConfigError(fmt::format("live sessions need mode = interactive, got {}", to_string(config_.mode)));
  if (config_.detection_mode != DetectionMode::thinned)
    throw ConfigError("live sessions generate photons in thinned mode");
}

Picoseconds SessionCore::earliest_choice() const {
  if (!generator_)
    return 0;
  const Picoseconds delay = config_.system_delay_ps();
  return generator_->cursor() > delay ? generator_->cursor() - delay : 0;
}

void SessionCore::on_choice(Observer who, int setting, Picoseconds t) {
  if (setting != 0 && setting != 1)
    throw InvalidArgument(fmt::format("setting must be 0 or 1, got {}", setting));
  if (t < earliest_choice())
    throw InvalidArgument("choice arrives after photons for its preparation time were generated");
  auto &schedule = who == Observer::alice ? alice_ : bob_;
  const Picoseconds prepared = t + config_.system_delay_ps();
  if (!schedule.empty() && prepared < schedule.changes().back().prepared_ps)
    throw InvalidArgument("choices must arrive in time order");
  schedule.add(prepared, setting);
  choices_.push_back({t, who, setting});
  if (!generator_ && !alice_.empty() && !bob_.empty()) {
    const Picoseconds start = std::max(*alice_.first_prepared(), *bob_.first_prepared());
    generator_.emplace(config_.source, config_.detection_model(), config_.seed, start);
  }
}

void SessionCore::advance_to(Picoseconds t, bool record) {
  if (t < now_)
    throw InvalidArgument("session time cannot run backwards");
  now_ = t;
  if (!generator_ || t <= generator_->cursor())
    return;
  if (record) {
    const auto before = std::make_pair(tags_.alice.size(), tags_.bob.size());
    generator_->advance(t, alice_, bob_, tags_);
    if (tags_.alice.size() != before.first || tags_.bob.size() != before.second)
      sorted_ = false;
  } else {
    scratch_.alice.clear();
    scratch_.bob.clear();
    generator_->advance(t, alice_, bob_, scratch_);
  }
}

const photonics::DetectedStreams &SessionCore::tags() const {
  if (!sorted_) {
    tags_.sort();
    sorted_ = true;
  }
  return tags_;
}

RunAnalysis SessionCore::analyze() const {
  std::vector<ChoiceEvent> ordered = choices_;
  std::stable_sort(ordered.begin(), ordered.end(), choice_less);
  return analyze_run(config_, ordered, tags(), now_);
}

RunAnalysis SessionCore::finish(Picoseconds end) {
  advance_to(end);
  config_.duration_s = to_seconds(end);
  std::stable_sort(choices_.begin(), choices_.end(), choice_less);
  return analyze_run(config_, choices_, tags(), end);
}

StatsSnapshot make_snapshot(const RunAnalysis &a, std::uint64_t seq, double session_time_s, LiveState state) {
  const auto &r = a.report;
  StatsSnapshot s;
  s.seq = seq;
  s.session_time_s = session_time_s;
  s.state = state;
  s.counts = r.counts;
  s.coincidences = r.coincidences;
  s.counted_coincidences = r.counted_coincidences;
  s.chsh = r.chsh;
  s.locality = r.locality;
  s.freedom_of_choice = r.freedom_of_choice;
  s.combined = r.combined;
  s.alice_choices = r.alice_trials;
  s.bob_choices = r.bob_trials;
  s.active_pair_loss_db = r.active_pair_loss_db;
  return s;
}

// --- LiveSession ------------------------------------------------------------

LiveSession::LiveSession(SessionConfig config, std::shared_ptr<const Clock> clock, Options options)
    : clock_(std::move(clock)), options_(std::move(options)), core_(std::move(config)) {
  if (!clock_)
    throw InvalidArgument("live session needs a clock");
  if (options_.stats_period.count() <= 0 || options_.stats_period > std::chrono::milliseconds(500))
    throw ConfigError("stats period must be in (0, 500] ms");
  latest_ = std::make_shared<const StatsSnapshot>(make_snapshot(core_.analyze(), 0, 0.0, LiveState::waiting));
  if (options_.worker)
    worker_ = std::thread([this] { worker_loop(); });
}

LiveSession::~LiveSession() {
  {
    std::lock_guard lock(queue_mutex_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  if (worker_.joinable())
    worker_.join();
}

void LiveSession::connect(Observer who, const std::string &feed_id) {
  std::lock_guard lock(queue_mutex_);
  if (state_ == LiveState::closed)
    throw InvalidArgument("session is closed");
  const auto self = static_cast<std::size_t>(who);
  const auto other = 1 - self;
  if (feeds_[other] && *feeds_[other] == feed_id)
    throw ConfigError(fmt::format("feed '{}' already drives {}; each observer needs its own feed", feed_id,
                                  to_string(static_cast<Observer>(other))));
  if (feeds_[self] && *feeds_[self] != feed_id)
    throw InvalidArgument(fmt::format("{} is already driven by another feed", to_string(who)));
  feeds_[self] = feed_id;
  armed_ = feeds_[0] && feeds_[1];
  queue_.push_back({Event::Kind::connect, who, 0, std::max(clock_->now(), last_stamp_)});
  last_stamp_ = queue_.back().t;
  state_ = armed_ ? LiveState::armed : (state_ == LiveState::paused ? LiveState::paused : LiveState::waiting);
  queue_cv_.notify_all();
}

void LiveSession::disconnect(Observer who) {
  std::lock_guard lock(queue_mutex_);
  const auto self = static_cast<std::size_t>(who);
  if (!feeds_[self] || state_ == LiveState::closed)
    return;
  const bool was_armed = armed_;
  feeds_[self].reset();
  armed_ = false;
  queue_.push_back({Event::Kind::disconnect, who, 0, std::max(clock_->now(), last_stamp_)});
  last_stamp_ = queue_.back().t;
  if (was_armed || state_ == LiveState::paused)
    state_ = LiveState::paused;
  queue_cv_.notify_all();
}

bool LiveSession::connected(Observer who) const {
  std::lock_guard lock(queue_mutex_);
  return feeds_[static_cast<std::size_t>(who)].has_value();
}

ChoiceAck LiveSession::submit(Observer who, int setting) {
  if (setting != 0 && setting != 1)
    throw InvalidArgument(fmt::format("setting must be 0 or 1, got {}", setting));
  std::lock_guard lock(queue_mutex_);
  if (state_ != LiveState::armed)
    throw InvalidArgument(fmt::format("session is {}, not accepting choices", to_string(state_.load())));
  const Picoseconds t = std::max(clock_->now(), last_stamp_);
  if (t >= limit_ps(core_.config()))
    throw InvalidArgument("session time limit reached");
  last_stamp_ = t;
  queue_.push_back({Event::Kind::choice, who, setting, t});
  queue_cv_.notify_all();
  return {who, setting, t, t + core_.config().system_delay_ps()};
}

std::uint64_t LiveSession::subscribe(Subscriber s) {
  std::lock_guard lock(sub_mutex_);
  const auto id = next_sub_++;
  subscribers_.emplace(id, std::move(s));
  return id;
}

void LiveSession::unsubscribe(std::uint64_t id) {
  std::lock_guard lock(sub_mutex_);
  subscribers_.erase(id);
}

std::shared_ptr<const StatsSnapshot> LiveSession::latest() const {
  std::lock_guard lock(sub_mutex_);
  return latest_;
}

LiveState LiveSession::state() const { return state_.load(); }

LiveState LiveSession::derive_state() const {
  if (attached_[0] && attached_[1])
    return LiveState::armed;
  return ever_armed_ ? LiveState::paused : LiveState::waiting;
}

void LiveSession::apply(const Event &e) {
  const bool recording = attached_[0] && attached_[1];
  core_.advance_to(std::min(std::max(e.t, core_.now()), limit_ps(core_.config())), recording);
  switch (e.kind) {
  case Event::Kind::choice:
    if (e.t < limit_ps(core_.config()))
      core_.on_choice(e.who, e.setting, e.t);
    break;
  case Event::Kind::connect:
    attached_[static_cast<std::size_t>(e.who)] = true;
    ever_armed_ = ever_armed_ || (attached_[0] && attached_[1]);
    break;
  case Event::Kind::disconnect:
    attached_[static_cast<std::size_t>(e.who)] = false;
    break;
  }
}

void LiveSession::pump(bool force) {
  std::lock_guard core_lock(core_mutex_);
  if (result_)
    return;
  std::deque<Event> batch;
  Picoseconds now = 0;
  {
    std::lock_guard lock(queue_mutex_);
    batch.swap(queue_);
    // Read under the queue lock: later stamps can never precede `now`.
    now = std::max(clock_->now(), last_stamp_);
  }
  for (const auto &e : batch)
    apply(e);
  const Picoseconds end = std::min(now, limit_ps(core_.config()));
  core_.advance_to(std::max(end, core_.now()), attached_[0] && attached_[1]);

  const auto period = static_cast<Picoseconds>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(options_.stats_period).count() * 1000);
  if (force || !published_once_ || now >= last_publish_ + period || !batch.empty()) {
    last_publish_ = now;
    published_once_ = true;
    publish(std::make_shared<const StatsSnapshot>(
        make_snapshot(core_.analyze(), ++seq_, to_seconds(core_.now()), derive_state())));
  }
}

void LiveSession::publish(std::shared_ptr<const StatsSnapshot> snap) {
  std::vector<Subscriber> targets;
  {
    std::lock_guard lock(sub_mutex_);
    latest_ = snap;
    for (const auto &[id, s] : subscribers_)
      targets.push_back(s);
  }
  for (const auto &s : targets)
    s(snap);
}

void LiveSession::worker_loop() {
  std::unique_lock lock(queue_mutex_);
  while (!stopping_) {
    queue_cv_.wait_for(lock, options_.stats_period, [this] { return stopping_ || !queue_.empty(); });
    if (stopping_)
      break;
    lock.unlock();
    pump();
    lock.lock();
  }
}

const RunAnalysis &LiveSession::close() {
  {
    std::lock_guard lock(queue_mutex_);
    stopping_ = true;
    state_ = LiveState::closed;
    feeds_ = {};
    armed_ = false;
  }
  queue_cv_.notify_all();
  if (worker_.joinable())
    worker_.join();

  std::lock_guard core_lock(core_mutex_);
  if (result_)
    return *result_;
  std::deque<Event> batch;
  Picoseconds now = 0;
  {
    std::lock_guard lock(queue_mutex_);
    batch.swap(queue_);
    now = std::max(clock_->now(), last_stamp_);
  }
  for (const auto &e : batch)
    apply(e);
  const Picoseconds end = std::max(std::min(now, limit_ps(core_.config())), core_.now());
  core_.advance_to(end, attached_[0] && attached_[1]);
  result_ = core_.finish(end);
  if (!options_.out_dir.empty())
    persist_run(options_.out_dir, core_.config(), core_.choices(), core_.tags(), *result_);
  publish(std::make_shared<const StatsSnapshot>(
      make_snapshot(*result_, ++seq_, to_seconds(end), LiveState::closed)));
  return *result_;
}

} // namespace lunabell::session

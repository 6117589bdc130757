#pragma once

#include "lunabell/live.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>

namespace lunabell::service {

using json = nlohmann::json;

inline constexpr int kProtocolVersion = 1;

/// Error codes carried by `error` messages.
namespace code {
inline constexpr const char *bad_message = "bad_message";
inline constexpr const char *unknown_session = "unknown_session";
inline constexpr const char *role_conflict = "role_conflict";
inline constexpr const char *one_feed_per_observer = "one_feed_per_observer";
inline constexpr const char *not_observer = "not_observer";
inline constexpr const char *not_armed = "not_armed";
inline constexpr const char *not_closed = "not_closed";
inline constexpr const char *closed = "closed";
} // namespace code

json error_message(std::string_view code, std::string_view message, std::string_view in_reply_to = {});
json stats_message(const std::string &session_id, const session::StatsSnapshot &s);
json report_message(const std::string &session_id, const session::RunAnalysis &a);

/// Transport-independent session API. Every request and reply is one JSON
/// message of type hello, claim_role, choice, stats, report or error.
class SessionService {
public:
  struct Options {
    session::SessionConfig config = session::preset_config("interactive_90db");
    /// Clock per new session; defaults to a SteadyClock.
    std::function<std::shared_ptr<const session::Clock>()> clock_factory;
    /// Each closed session is persisted under runs_dir/<session id>.
    std::filesystem::path runs_dir;
    session::LiveSession::Options live{};
  };

  explicit SessionService(Options options);
  ~SessionService();

  json handle(const json &message);

  using StatsSink = std::function<void(const json &)>;
  /// Receives `stats` messages and, once the session closes, one `report`.
  /// Throws std::out_of_range for unknown sessions.
  std::uint64_t subscribe(const std::string &session_id, StatsSink sink);
  void unsubscribe(const std::string &session_id, std::uint64_t id);

  /// Transport lost a client: its observer roles are released, which pauses
  /// the session until they are claimed again.
  void client_disconnected(const std::string &session_id, const std::string &client_id);

  std::shared_ptr<session::LiveSession> session(const std::string &id) const;
  std::vector<std::string> session_ids() const;
  /// Drives every session without a worker thread (tests with manual clocks).
  void pump_all(bool force = false);

private:
  struct Entry {
    std::shared_ptr<session::LiveSession> live;
    std::map<std::string, std::string> roles; ///< role -> client id
    std::map<std::string, json> acks;         ///< choice id -> ack
    std::map<std::uint64_t, StatsSink> sinks;
    std::map<std::uint64_t, std::uint64_t> live_subs; ///< sink id -> LiveSession subscription
    std::optional<json> report;
    std::mutex mutex;
  };

  std::uint64_t next_sink_{1};

  json hello(const json &m);
  json claim_role(const json &m);
  json choice(const json &m);
  json stats(const json &m);
  json report(const json &m);

  std::shared_ptr<Entry> find(const json &m) const;

  Options options_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::uint64_t next_session_{1};
  std::uint64_t next_client_{1};
};

/// Serves the API over HTTP:
///   POST /api/message                 one message in, one message out
///   GET  /api/sessions/{id}/events    Server-Sent Events: stats, then report
///   GET  /api/sessions/{id}/report    final report (error until closed)
///   GET  /api/health
/// Blocks until stop() is called from another thread.
class HttpServer {
public:
  explicit HttpServer(SessionService &service);
  ~HttpServer();
  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string &host, int port);
  void listen();
  void stop();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

} // namespace lunabell::service

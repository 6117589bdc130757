#include "lunabell/service.hpp"

#include "lunabell/errors.hpp"

#include <fmt/format.h>

namespace lunabell::service {

using session::LiveState;
using session::Observer;

namespace {

/// Request problem reported back as an error message.
struct Reject {
  std::string code;
  std::string message;
};

std::string require_string(const json &m, const char *key) {
  auto it = m.find(key);
  if (it == m.end() || !it->is_string() || it->get_ref<const std::string &>().empty())
    throw Reject{code::bad_message, fmt::format("field '{}' must be a non-empty string", key)};
  return it->get<std::string>();
}

json tally_json(const session::ValidityTally &t) {
  return {{"valid", t.valid}, {"invalid", t.invalid}, {"pending", t.pending}};
}

json counts_json(const analysis::SettingCounts &c) {
  json out = json::object();
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      const auto &o = c.at(a, b);
      out[fmt::format("{}{}", a, b)] = {o.pp, o.pm, o.mp, o.mm};
    }
  return out;
}

json chsh_json(const std::optional<analysis::ChshResult> &r) {
  if (!r)
    return nullptr;
  json corr = json::object();
  for (std::size_t k = 0; k < 4; ++k) {
    const auto &e = r->correlations[k];
    corr[fmt::format("{}{}", k / 2, k % 2)] = {{"value", e.value}, {"sigma", e.sigma}, {"n", e.n}};
  }
  return {{"value", r->s_value}, {"sigma", r->sigma}, {"convention", r->convention}, {"correlations", corr}};
}

std::optional<Observer> observer_role(const std::string &role) {
  if (role == "alice")
    return Observer::alice;
  if (role == "bob")
    return Observer::bob;
  return std::nullopt;
}

} // namespace

json error_message(std::string_view code, std::string_view message, std::string_view in_reply_to) {
  json m = {{"type", "error"}, {"code", code}, {"message", message}};
  if (!in_reply_to.empty())
    m["in_reply_to"] = in_reply_to;
  return m;
}

json stats_message(const std::string &session_id, const session::StatsSnapshot &s) {
  return {
      {"type", "stats"},
      {"session_id", session_id},
      {"seq", s.seq},
      {"session_time_s", s.session_time_s},
      {"state", session::to_string(s.state)},
      {"coincidences", s.coincidences},
      {"counted_coincidences", s.counted_coincidences},
      {"counts", counts_json(s.counts)},
      {"S", chsh_json(s.chsh)},
      {"validity",
       {{"locality", tally_json(s.locality)},
        {"freedom_of_choice", tally_json(s.freedom_of_choice)},
        {"combined", tally_json(s.combined)}}},
      {"choices", {{"alice", s.alice_choices}, {"bob", s.bob_choices}}},
      {"active_pair_loss_db", s.active_pair_loss_db},
  };
}

json report_message(const std::string &session_id, const session::RunAnalysis &a) {
  const auto &r = a.report;
  return {
      {"type", "report"},
      {"session_id", session_id},
      {"report_hash", r.hash()},
      {"report",
       {{"mode", r.mode},
        {"preset", r.preset},
        {"seed", r.seed},
        {"config_hash", r.config_hash},
        {"duration_s", r.duration_s},
        {"wall_time_s", r.wall_time_s},
        {"active_pair_loss_db", r.active_pair_loss_db},
        {"coincidences", r.coincidences},
        {"counted_coincidences", r.counted_coincidences},
        {"expected_coincidences", r.expected_coincidences},
        {"counts", counts_json(r.counts)},
        {"S", chsh_json(r.chsh)},
        {"trials", {{"total", r.total_trials}, {"alice", r.alice_trials}, {"bob", r.bob_trials}}},
        {"validity",
         {{"locality", tally_json(r.locality)},
          {"freedom_of_choice", tally_json(r.freedom_of_choice)},
          {"combined", tally_json(r.combined)}}}}},
      {"text", r.to_text()},
  };
}

SessionService::SessionService(Options options) : options_(std::move(options)) {
  options_.config.validate();
  if (options_.config.mode != session::Mode::interactive)
    throw ConfigError("the session service needs an interactive configuration");
  if (!options_.clock_factory)
    options_.clock_factory = [] { return std::make_shared<session::SteadyClock>(); };
}

SessionService::~SessionService() = default;

std::shared_ptr<SessionService::Entry> SessionService::find(const json &m) const {
  const auto id = require_string(m, "session_id");
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end())
    throw Reject{code::unknown_session, fmt::format("no session '{}'", id)};
  return it->second;
}

json SessionService::handle(const json &message) {
  std::string type;
  try {
    if (!message.is_object())
      throw Reject{code::bad_message, "message must be a JSON object"};
    type = require_string(message, "type");
    if (type == "hello")
      return hello(message);
    if (type == "claim_role")
      return claim_role(message);
    if (type == "choice")
      return choice(message);
    if (type == "stats")
      return stats(message);
    if (type == "report")
      return report(message);
    throw Reject{code::bad_message, fmt::format("unknown message type '{}'", type)};
  } catch (const Reject &r) {
    return error_message(r.code, r.message, type);
  } catch (const json::exception &e) {
    return error_message(code::bad_message, e.what(), type);
  }
}

json SessionService::hello(const json &m) {
  std::shared_ptr<Entry> entry;
  std::string id;
  std::string client;
  bool created = false;
  {
    std::lock_guard lock(mutex_);
    client = m.contains("client_id") ? m.at("client_id").get<std::string>() : "";
    if (client.empty())
      client = fmt::format("client-{}", next_client_++);
  }
  if (m.contains("session_id") && !m.at("session_id").is_null()) {
    entry = find(m);
    id = m.at("session_id").get<std::string>();
  } else {
    std::lock_guard lock(mutex_);
    id = fmt::format("s{}", next_session_++);
    auto live_opts = options_.live;
    if (!options_.runs_dir.empty())
      live_opts.out_dir = options_.runs_dir / id;
    entry = std::make_shared<Entry>();
    entry->live = std::make_shared<session::LiveSession>(options_.config, options_.clock_factory(), live_opts);
    sessions_.emplace(id, entry);
    created = true;
  }
  std::lock_guard lock(entry->mutex);
  const auto &cfg = options_.config;
  return {
      {"type", "hello"},
      {"protocol", kProtocolVersion},
      {"session_id", id},
      {"client_id", client},
      {"created", created},
      {"state", session::to_string(entry->live->state())},
      {"roles", {{"alice", entry->roles.count("alice") > 0}, {"bob", entry->roles.count("bob") > 0}}},
      {"preset", cfg.preset},
      {"active_pair_loss_db", cfg.pair_loss_db()},
      {"system_delay_s", cfg.timing.system_delay_s},
      {"duration_s", cfg.duration_s},
  };
}

json SessionService::claim_role(const json &m) {
  auto entry = find(m);
  const auto id = m.at("session_id").get<std::string>();
  const auto client = require_string(m, "client_id");
  const auto role = require_string(m, "role");
  const bool release = m.value("release", false);
  const auto obs = observer_role(role);
  if (!obs && role != "spectator")
    throw Reject{code::bad_message, fmt::format("role must be alice, bob or spectator, got '{}'", role)};

  std::lock_guard lock(entry->mutex);
  if (entry->live->state() == LiveState::closed && !release)
    throw Reject{code::closed, "session is closed"};
  if (obs) {
    auto held = entry->roles.find(role);
    if (release) {
      if (held != entry->roles.end() && held->second == client) {
        entry->roles.erase(held);
        entry->live->disconnect(*obs);
      }
    } else {
      if (held != entry->roles.end() && held->second != client)
        throw Reject{code::role_conflict, fmt::format("role {} is already claimed", role)};
      const std::string other = role == "alice" ? "bob" : "alice";
      if (auto o = entry->roles.find(other); o != entry->roles.end() && o->second == client)
        throw Reject{code::one_feed_per_observer,
                     fmt::format("client {} already drives {}; each observer needs its own client", client, other)};
      try {
        entry->live->connect(*obs, client);
      } catch (const Error &e) {
        throw Reject{code::closed, e.what()};
      }
      entry->roles[role] = client;
    }
  }
  return {
      {"type", "claim_role"},
      {"session_id", id},
      {"client_id", client},
      {"role", role},
      {"granted", !release},
      {"released", release},
      {"state", session::to_string(entry->live->state())},
  };
}

json SessionService::choice(const json &m) {
  auto entry = find(m);
  const auto id = m.at("session_id").get<std::string>();
  const auto client = require_string(m, "client_id");
  const auto choice_id = require_string(m, "choice_id");
  const auto setting_it = m.find("setting");
  if (setting_it == m.end() || !setting_it->is_number_integer() || (*setting_it != 0 && *setting_it != 1))
    throw Reject{code::bad_message, "field 'setting' must be 0 or 1"};
  const int setting = setting_it->get<int>();

  std::lock_guard lock(entry->mutex);
  if (auto done = entry->acks.find(choice_id); done != entry->acks.end()) {
    json ack = done->second;
    ack["duplicate"] = true;
    return ack;
  }
  std::optional<Observer> who;
  for (const auto &[role, holder] : entry->roles)
    if (holder == client)
      who = observer_role(role);
  if (!who)
    throw Reject{code::not_observer, fmt::format("client {} holds no observer role", client)};
  session::ChoiceAck ack;
  try {
    ack = entry->live->submit(*who, setting);
  } catch (const InvalidArgument &e) {
    throw Reject{code::not_armed, e.what()};
  }
  json reply = {
      {"type", "choice"},
      {"session_id", id},
      {"choice_id", choice_id},
      {"accepted", true},
      {"duplicate", false},
      {"observer", session::to_string(ack.observer)},
      {"setting", ack.setting},
      {"t_choice_ps", ack.choice_ps},
      {"t_prepared_ps", ack.prepared_ps},
  };
  if (m.contains("client_time_ms"))
    reply["client_time_ms"] = m.at("client_time_ms");
  entry->acks.emplace(choice_id, reply);
  return reply;
}

json SessionService::stats(const json &m) {
  auto entry = find(m);
  return stats_message(m.at("session_id").get<std::string>(), *entry->live->latest());
}

json SessionService::report(const json &m) {
  auto entry = find(m);
  const auto id = m.at("session_id").get<std::string>();
  const bool close = m.value("close", false);
  std::vector<StatsSink> sinks;
  json out;
  {
    std::lock_guard lock(entry->mutex);
    if (entry->report)
      return *entry->report;
    if (!close)
      throw Reject{code::not_closed, "session still open; send report with close=true to end it"};
    entry->roles.clear();
    entry->report = report_message(id, entry->live->close());
    for (const auto &[sid, s] : entry->sinks)
      sinks.push_back(s);
    out = *entry->report;
  }
  for (const auto &s : sinks)
    s(out);
  return out;
}

std::uint64_t SessionService::subscribe(const std::string &session_id, StatsSink sink) {
  std::shared_ptr<Entry> entry;
  std::uint64_t sid = 0;
  {
    std::lock_guard lock(mutex_);
    entry = sessions_.at(session_id);
    sid = next_sink_++;
  }
  std::lock_guard lock(entry->mutex);
  sink(stats_message(session_id, *entry->live->latest()));
  if (entry->report) {
    sink(*entry->report);
    return sid;
  }
  entry->sinks.emplace(sid, sink);
  entry->live_subs[sid] = entry->live->subscribe(
      [session_id, sink](std::shared_ptr<const session::StatsSnapshot> s) { sink(stats_message(session_id, *s)); });
  return sid;
}

void SessionService::unsubscribe(const std::string &session_id, std::uint64_t id) {
  std::shared_ptr<Entry> entry;
  {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end())
      return;
    entry = it->second;
  }
  std::lock_guard lock(entry->mutex);
  entry->sinks.erase(id);
  if (auto it = entry->live_subs.find(id); it != entry->live_subs.end()) {
    entry->live->unsubscribe(it->second);
    entry->live_subs.erase(it);
  }
}

void SessionService::client_disconnected(const std::string &session_id, const std::string &client_id) {
  std::shared_ptr<Entry> entry;
  {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end())
      return;
    entry = it->second;
  }
  std::lock_guard lock(entry->mutex);
  for (auto it = entry->roles.begin(); it != entry->roles.end();) {
    if (it->second == client_id) {
      entry->live->disconnect(*observer_role(it->first));
      it = entry->roles.erase(it);
    } else {
      ++it;
    }
  }
}

std::shared_ptr<session::LiveSession> SessionService::session(const std::string &id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second->live;
}

std::vector<std::string> SessionService::session_ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> ids;
  for (const auto &[id, e] : sessions_)
    ids.push_back(id);
  return ids;
}

void SessionService::pump_all(bool force) {
  std::vector<std::shared_ptr<Entry>> entries;
  {
    std::lock_guard lock(mutex_);
    for (const auto &[id, e] : sessions_)
      entries.push_back(e);
  }
  for (const auto &e : entries)
    e->live->pump(force);
}

} // namespace lunabell::service

#include "lunabell/session.hpp"

#include "lunabell/digest.hpp"
#include "lunabell/errors.hpp"
#include "lunabell/rng.hpp"
#include "lunabell/tagfile.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <random>
#include <sstream>

namespace lunabell::session {

namespace fs = std::filesystem;
using photonics::kPsPerSecond;

std::string_view to_string(Observer o) { return o == Observer::alice ? "alice" : "bob"; }

Observer parse_observer(std::string_view s) {
  if (s == "alice")
    return Observer::alice;
  if (s == "bob")
    return Observer::bob;
  throw InvalidArgument(fmt::format("unknown observer '{}'", s));
}

bool choice_less(const ChoiceEvent &a, const ChoiceEvent &b) {
  if (a.choice_ps != b.choice_ps)
    return a.choice_ps < b.choice_ps;
  return a.observer < b.observer;
}

ChoiceLogError::ChoiceLogError(std::string path, std::size_t line, const std::string &what)
    : Error(line > 0 ? fmt::format("{}:{}: {}", path, line, what) : fmt::format("{}: {}", path, what)), line_(line) {}

// --- choice log -------------------------------------------------------------

namespace {

constexpr std::string_view kLogMagic = "# lunabell-choices schema=";
constexpr std::string_view kHashPrefix = "# config_hash=";

double to_seconds(Picoseconds t) { return static_cast<double>(t) / static_cast<double>(kPsPerSecond); }

Picoseconds to_ps(double s) { return static_cast<Picoseconds>(std::llround(s * static_cast<double>(kPsPerSecond))); }

template <typename T> bool parse_number(std::string_view s, T &out) {
  const auto *end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t'))
      ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t')
      ++i;
    if (i > start)
      out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::string read_file(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path &path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw Error(fmt::format("cannot create {}", path.string()));
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.flush();
  if (!out)
    throw Error(fmt::format("write failed on {}", path.string()));
}

} // namespace

std::string format_choice_log(const ChoiceLog &log) {
  std::string out = fmt::format("{}{}\n{}{}\n", kLogMagic, log.schema, kHashPrefix, log.config_hash);
  for (const auto &e : log.events)
    out += fmt::format("{} {} {}\n", e.choice_ps, to_string(e.observer), e.setting);
  return out;
}

ChoiceLog parse_choice_log(std::string_view text, const std::string &path) {
  ChoiceLog log;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool have_schema = false;
  bool have_hash = false;
  std::optional<ChoiceEvent> prev;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const bool terminated = nl != std::string_view::npos;
    std::string_view line = text.substr(pos, terminated ? nl - pos : std::string_view::npos);
    pos = terminated ? nl + 1 : text.size();
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.remove_suffix(1);

    if (!have_schema) {
      if (line.substr(0, kLogMagic.size()) != kLogMagic)
        throw ChoiceLogError(path, line_no, "missing choice log header");
      int schema = 0;
      if (!parse_number(line.substr(kLogMagic.size()), schema))
        throw ChoiceLogError(path, line_no, "malformed schema version");
      if (schema != kChoiceLogSchema)
        throw SchemaMismatch(path, line_no,
                             fmt::format("choice log schema {} is not supported (expected {})", schema,
                                         kChoiceLogSchema));
      log.schema = schema;
      have_schema = true;
      continue;
    }
    if (!have_hash) {
      if (line.substr(0, kHashPrefix.size()) != kHashPrefix)
        throw ChoiceLogError(path, line_no, "missing config_hash header");
      log.config_hash = std::string(line.substr(kHashPrefix.size()));
      have_hash = true;
      continue;
    }
    if (line.empty() && !terminated)
      break;
    if (!terminated)
      throw ChoiceLogError(path, line_no, "truncated record (no line terminator)");
    const auto f = split_ws(line);
    if (f.size() != 3)
      throw ChoiceLogError(path, line_no, fmt::format("expected 't_choice_ps observer setting', got '{}'", line));
    ChoiceEvent e;
    if (!parse_number(f[0], e.choice_ps))
      throw ChoiceLogError(path, line_no, fmt::format("bad time '{}'", f[0]));
    if (f[1] == "alice")
      e.observer = Observer::alice;
    else if (f[1] == "bob")
      e.observer = Observer::bob;
    else
      throw ChoiceLogError(path, line_no, fmt::format("bad observer '{}'", f[1]));
    if (f[2] == "0")
      e.setting = 0;
    else if (f[2] == "1")
      e.setting = 1;
    else
      throw ChoiceLogError(path, line_no, fmt::format("bad setting '{}'", f[2]));
    if (prev && !choice_less(*prev, e))
      throw ChoiceLogError(path, line_no, "records out of order");
    prev = e;
    log.events.push_back(e);
  }
  if (!have_schema)
    throw ChoiceLogError(path, 1, "missing choice log header");
  if (!have_hash)
    throw ChoiceLogError(path, 2, "missing config_hash header");
  return log;
}

ChoiceLog read_choice_log(const fs::path &path) { return parse_choice_log(read_file(path), path.string()); }

void write_choice_log(const fs::path &path, const ChoiceLog &log) { write_file(path, format_choice_log(log)); }

std::vector<ChoiceEvent> generate_choices(const SessionConfig &config) {
  config.validate();
  const Picoseconds end = to_ps(config.duration_s);
  std::vector<ChoiceEvent> out;
  for (auto obs : {Observer::alice, Observer::bob}) {
    Rng rng = make_rng(config.seed, obs == Observer::alice ? SeedStream::alice_choices : SeedStream::bob_choices);
    std::uniform_real_distribution<double> gap(1.0 / config.choice_rate_max_hz, 1.0 / config.choice_rate_min_hz);
    std::bernoulli_distribution coin(0.5);
    double t = 0.0;
    while (true) {
      t += gap(rng);
      const Picoseconds ps = to_ps(t);
      if (ps >= end)
        break;
      out.push_back({ps, obs, coin(rng) ? 1 : 0});
    }
  }
  std::sort(out.begin(), out.end(), choice_less);
  return out;
}

// --- analysis ---------------------------------------------------------------

std::pair<photonics::SettingSchedule, photonics::SettingSchedule>
build_schedules(const SessionConfig &config, std::span<const ChoiceEvent> choices) {
  const Picoseconds delay = config.system_delay_ps();
  std::pair<photonics::SettingSchedule, photonics::SettingSchedule> s;
  for (const auto &c : choices)
    (c.observer == Observer::alice ? s.first : s.second).add(c.choice_ps + delay, c.setting);
  return s;
}

std::optional<Picoseconds> photon_start(const SessionConfig &config, std::span<const ChoiceEvent> choices) {
  const auto [a, b] = build_schedules(config, choices);
  auto fa = a.first_prepared();
  auto fb = b.first_prepared();
  if (!fa || !fb)
    return std::nullopt;
  return std::max(*fa, *fb);
}

photonics::DetectedStreams simulate_tags(const SessionConfig &config, std::span<const ChoiceEvent> choices,
                                         Picoseconds end_ps) {
  photonics::DetectedStreams out;
  const auto start = photon_start(config, choices);
  if (!start || *start >= end_ps)
    return out;
  const auto [alice, bob] = build_schedules(config, choices);
  const auto model = config.detection_model();
  if (config.detection_mode == DetectionMode::thinned) {
    photonics::ThinnedGenerator gen(config.source, model, config.seed, *start);
    gen.advance(end_ps, alice, bob, out);
  } else {
    const auto emissions = photonics::sample_pair_emissions(config.source, to_seconds(end_ps - *start),
                                                            config.seed, *start);
    out = photonics::detect_stream(emissions, alice, bob, model, config.source, config.seed);
  }
  out.sort();
  return out;
}

namespace {

struct ObserverTrials {
  std::vector<Picoseconds> prepared;      ///< per trial, increasing
  std::vector<std::size_t> record_index;  ///< into RunAnalysis::trials
};

std::optional<std::size_t> trial_at(const ObserverTrials &t, Picoseconds time) {
  auto it = std::upper_bound(t.prepared.begin(), t.prepared.end(), time);
  if (it == t.prepared.begin())
    return std::nullopt;
  return static_cast<std::size_t>(it - t.prepared.begin() - 1);
}

void tally(ValidityTally &t, const std::optional<spacetime::TrialValidity> &v, bool (*ok)(const spacetime::TrialValidity &)) {
  if (!v)
    ++t.pending;
  else if (ok(*v))
    ++t.valid;
  else
    ++t.invalid;
}

} // namespace

RunAnalysis analyze_run(const SessionConfig &config, std::span<const ChoiceEvent> choices,
                        const photonics::DetectedStreams &tags, Picoseconds end_ps) {
  config.validate();
  RunAnalysis out;
  auto &r = out.report;
  r.mode = std::string(to_string(config.mode));
  r.preset = config.preset;
  r.seed = config.seed;
  r.config_hash = config.hash();
  r.duration_s = to_seconds(end_ps);
  r.active_pair_loss_db = config.pair_loss_db();
  r.alice_tags = tags.alice.size();
  r.bob_tags = tags.bob.size();

  std::array<ObserverTrials, 2> per;
  const Picoseconds delay = config.system_delay_ps();
  for (const auto &c : choices) {
    auto &p = per[static_cast<int>(c.observer)];
    if (!p.prepared.empty() && c.choice_ps + delay < p.prepared.back())
      throw InvalidArgument("choices must be in time order per observer");
    TrialRecord t;
    t.observer = c.observer;
    t.choice_time_s = to_seconds(c.choice_ps);
    t.prepared_time_s = to_seconds(c.choice_ps + delay);
    t.setting = c.setting;
    p.prepared.push_back(c.choice_ps + delay);
    p.record_index.push_back(out.trials.size());
    out.trials.push_back(t);
  }

  if (const auto start = photon_start(config, choices); start && *start < end_ps) {
    r.photon_window_s = to_seconds(end_ps - *start);
    const auto model = config.detection_model();
    r.expected_coincidences =
        config.source.pair_rate_per_s * model.survival(0) * model.survival(1) * r.photon_window_s;
  }

  out.pairs = tagstream::find_coincidences(tags.alice, tags.bob, {config.coincidence_window_ps});
  r.coincidences = out.pairs.size();

  // Earliest attributed detection per trial.
  std::vector<std::optional<tagstream::TimeTag>> first(out.trials.size());
  auto note = [&](std::size_t rec, const tagstream::TimeTag &tag) {
    if (!first[rec] || tagstream::tag_less(tag, *first[rec]))
      first[rec] = tag;
  };
  auto validity = [&](std::size_t rec, Picoseconds t) {
    return spacetime::validate_trial(out.trials[rec].prepared_time_s, to_seconds(t), config.timing,
                                     config.geometry);
  };

  for (const auto &p : out.pairs) {
    const auto ia = trial_at(per[0], p.alice.time_ps);
    const auto ib = trial_at(per[1], p.bob.time_ps);
    if (!ia || !ib)
      continue;
    const std::size_t ra = per[0].record_index[*ia];
    const std::size_t rb = per[1].record_index[*ib];
    note(ra, p.alice);
    note(rb, p.bob);
    if (config.earth_moon_geometry &&
        !(validity(ra, p.alice.time_ps).combined_ok() && validity(rb, p.bob.time_ps).combined_ok()))
      continue;
    r.counts.at(out.trials[ra].setting, out.trials[rb].setting)
        .add(tagstream::channel::sign_of(p.alice.channel), tagstream::channel::sign_of(p.bob.channel));
    ++r.counted_coincidences;
  }

  for (std::size_t i = 0; i < out.trials.size(); ++i) {
    auto &t = out.trials[i];
    if (first[i]) {
      t.detection_time_s = to_seconds(first[i]->time_ps);
      t.outcome = tagstream::channel::sign_of(first[i]->channel);
      t.validity = validity(i, first[i]->time_ps);
    }
    (t.observer == Observer::alice ? r.alice_trials : r.bob_trials)++;
    tally(r.locality, t.validity, [](const spacetime::TrialValidity &v) { return v.locality_ok; });
    tally(r.freedom_of_choice, t.validity, [](const spacetime::TrialValidity &v) { return v.foc_ok; });
    tally(r.combined, t.validity, [](const spacetime::TrialValidity &v) { return v.combined_ok(); });
  }
  r.total_trials = out.trials.size();

  try {
    r.chsh = analysis::chsh(r.counts);
  } catch (const analysis::UndefinedCorrelation &) {
    r.chsh.reset();
  }
  return out;
}

// --- report -----------------------------------------------------------------

namespace {

std::string physics_lines(const RunReport &r) {
  std::string out;
  auto kv = [&](std::string_view k, const auto &v) { out += fmt::format("{}={}\n", k, v); };
  kv("duration_s", r.duration_s);
  kv("active_pair_loss_db", r.active_pair_loss_db);
  kv("photon_window_s", r.photon_window_s);
  kv("alice_tags", r.alice_tags);
  kv("bob_tags", r.bob_tags);
  kv("coincidences", r.coincidences);
  kv("counted_coincidences", r.counted_coincidences);
  kv("expected_coincidences", r.expected_coincidences);
  kv("trials_total", r.total_trials);
  kv("trials_alice", r.alice_trials);
  kv("trials_bob", r.bob_trials);
  for (const auto &[name, t] : {std::pair<std::string_view, const ValidityTally &>{"locality", r.locality},
                                {"foc", r.freedom_of_choice},
                                {"combined", r.combined}}) {
    kv(fmt::format("{}_valid", name), t.valid);
    kv(fmt::format("{}_invalid", name), t.invalid);
    kv(fmt::format("{}_pending", name), t.pending);
  }
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      const auto &c = r.counts.at(a, b);
      kv(fmt::format("counts_{}{}", a, b), fmt::format("{} {} {} {}", c.pp, c.pm, c.mp, c.mm));
    }
  if (r.chsh) {
    for (std::size_t k = 0; k < 4; ++k) {
      const auto &e = r.chsh->correlations[k];
      kv(fmt::format("E_{}{}", k / 2, k % 2), fmt::format("{} {} {}", e.value, e.sigma, e.n));
    }
    kv("S", r.chsh->s_value);
    kv("S_sigma", r.chsh->sigma);
    kv("S_convention", r.chsh->convention);
  } else {
    kv("S", "undefined");
  }
  return out;
}

} // namespace

std::string RunReport::physics_kv() const { return physics_lines(*this); }

std::string RunReport::to_kv(bool include_wall_time) const {
  std::string out = fmt::format("mode={}\npreset={}\nseed={}\nconfig_hash={}\n", mode, preset, seed, config_hash);
  out += physics_lines(*this);
  if (include_wall_time)
    out += fmt::format("wall_time_s={}\n", wall_time_s);
  return out;
}

std::string RunReport::hash() const { return sha256_hex(to_kv(false)); }

std::string RunReport::to_text() const {
  std::string out = "Run report\n";
  out += fmt::format("  mode {}, preset {}, seed {}\n", mode, preset, seed);
  out += fmt::format("  duration {:.3f} s (photons for {:.3f} s)\n", duration_s, photon_window_s);
  out += fmt::format("  active pair loss {:.2f} dB\n", active_pair_loss_db);
  out += fmt::format("  coincidences: {} observed, {} counted, {:.1f} expected\n", coincidences,
                     counted_coincidences, expected_coincidences);
  out += fmt::format("  tags: alice {}, bob {}\n", alice_tags, bob_tags);
  out += "\n  setting   N++     N+-     N-+     N--     E\n";
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      const auto &c = counts.at(a, b);
      std::string e = "-";
      if (chsh)
        e = fmt::format("{:+.3f} +/- {:.3f}", chsh->correlations[analysis::SettingCounts::index(a, b)].value,
                        chsh->correlations[analysis::SettingCounts::index(a, b)].sigma);
      out += fmt::format("  ({}{}){:>9} {:>7} {:>7} {:>7}   {}\n", a == 0 ? "a" : "a'", b == 0 ? ",b " : ",b'",
                         c.pp, c.pm, c.mp, c.mm, e);
    }
  if (chsh)
    out += fmt::format("\n  S = {:.3f} +/- {:.3f}  ({})\n", chsh->s_value, chsh->sigma, chsh->convention);
  else
    out += "\n  S undefined (a setting pair has no counts)\n";
  out += fmt::format("\n  trials: {} (alice {}, bob {})\n", total_trials, alice_trials, bob_trials);
  out += fmt::format("  locality           valid {:>7}  invalid {:>7}  pending {:>7}\n", locality.valid,
                     locality.invalid, locality.pending);
  out += fmt::format("  freedom-of-choice  valid {:>7}  invalid {:>7}  pending {:>7}\n", freedom_of_choice.valid,
                     freedom_of_choice.invalid, freedom_of_choice.pending);
  out += fmt::format("  combined           valid {:>7}  invalid {:>7}  pending {:>7}\n", combined.valid,
                     combined.invalid, combined.pending);
  out += fmt::format("\n  config hash {}\n  report hash {}\n  wall time {:.3f} s\n", config_hash, hash(),
                     wall_time_s);
  return out;
}

// --- runs -------------------------------------------------------------------

void persist_run(const fs::path &dir, const SessionConfig &config, std::span<const ChoiceEvent> choices,
                 const photonics::DetectedStreams &tags, const RunAnalysis &analysis) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw Error(fmt::format("cannot create run directory {}: {}", dir.string(), ec.message()));
  save_config(dir / artifact::config, config);
  write_choice_log(dir / artifact::choices,
                   {kChoiceLogSchema, config.hash(), std::vector<ChoiceEvent>(choices.begin(), choices.end())});
  tagstream::write_tags(dir / artifact::alice_tags, tags.alice);
  tagstream::write_tags(dir / artifact::bob_tags, tags.bob);

  std::string pairs = "# alice_ps alice_channel bob_ps bob_channel delta_ps\n";
  for (const auto &p : analysis.pairs)
    pairs += fmt::format("{} {} {} {} {}\n", p.alice.time_ps, p.alice.channel, p.bob.time_ps, p.bob.channel,
                         p.delta_ps);
  write_file(dir / artifact::pairs, pairs);
  write_file(dir / artifact::report_text, analysis.report.to_text());
  write_file(dir / artifact::report_kv, analysis.report.to_kv());
}

RunAnalysis run_headless(const SessionConfig &config, const fs::path &out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();
  if (config.mode != Mode::headless)
    throw ConfigError(fmt::format("run_headless needs mode = headless, got {}", to_string(config.mode)));

  const Picoseconds end = to_ps(config.duration_s);
  std::vector<ChoiceEvent> choices;
  if (config.choice_source == ChoiceSource::replay) {
    const auto log = read_choice_log(config.choice_log);
    for (const auto &e : log.events)
      if (e.choice_ps < end)
        choices.push_back(e);
  } else {
    choices = generate_choices(config);
  }

  const auto tags = simulate_tags(config, choices, end);
  auto result = analyze_run(config, choices, tags, end);
  result.report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!out_dir.empty())
    persist_run(out_dir, config, choices, tags, result);
  return result;
}

RunAnalysis run_replay(const fs::path &run_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto config = load_config(run_dir / artifact::config);
  const auto log = read_choice_log(run_dir / artifact::choices);
  if (log.config_hash != config.hash())
    throw ChoiceLogError((run_dir / artifact::choices).string(), 2,
                         fmt::format("config_hash {} does not match the config snapshot ({})", log.config_hash,
                                     config.hash()));
  photonics::DetectedStreams tags;
  tags.alice = tagstream::read_tags(run_dir / artifact::alice_tags);
  tags.bob = tagstream::read_tags(run_dir / artifact::bob_tags);

  auto result = analyze_run(config, log.events, tags, to_ps(config.duration_s));
  result.report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

} // namespace lunabell::session

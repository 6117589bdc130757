#include "lunabell/config.hpp"

#include "lunabell/digest.hpp"
#include "lunabell/errors.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace lunabell::session {

std::string_view to_string(Mode m) {
  switch (m) {
  case Mode::headless:
    return "headless";
  case Mode::interactive:
    return "interactive";
  case Mode::replay:
    return "replay";
  }
  return "?";
}

std::string_view to_string(ChoiceSource c) {
  switch (c) {
  case ChoiceSource::rng:
    return "rng";
  case ChoiceSource::replay:
    return "replay";
  case ChoiceSource::live:
    return "live";
  }
  return "?";
}

std::string_view to_string(DetectionMode d) { return d == DetectionMode::raw ? "raw" : "thinned"; }

namespace {

double parse_double(const std::string &key, const std::string &v) {
  double out = 0.0;
  const auto *end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end)
    throw ConfigError(fmt::format("{}: expected a number, got '{}'", key, v));
  return out;
}

std::uint64_t parse_u64(const std::string &key, const std::string &v) {
  std::uint64_t out = 0;
  const auto *end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end)
    throw ConfigError(fmt::format("{}: expected a non-negative integer, got '{}'", key, v));
  return out;
}

int parse_int(const std::string &key, const std::string &v) {
  int out = 0;
  const auto *end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end)
    throw ConfigError(fmt::format("{}: expected an integer, got '{}'", key, v));
  return out;
}

bool parse_bool(const std::string &key, const std::string &v) {
  if (v == "true" || v == "1")
    return true;
  if (v == "false" || v == "0")
    return false;
  throw ConfigError(fmt::format("{}: expected true or false, got '{}'", key, v));
}

Mode parse_mode(const std::string &v) {
  for (auto m : {Mode::headless, Mode::interactive, Mode::replay})
    if (to_string(m) == v)
      return m;
  throw ConfigError(fmt::format("mode: unknown value '{}'", v));
}

ChoiceSource parse_choice_source(const std::string &v) {
  for (auto c : {ChoiceSource::rng, ChoiceSource::replay, ChoiceSource::live})
    if (to_string(c) == v)
      return c;
  throw ConfigError(fmt::format("choice_source: unknown value '{}'", v));
}

DetectionMode parse_detection_mode(const std::string &v) {
  if (v == "raw")
    return DetectionMode::raw;
  if (v == "thinned")
    return DetectionMode::thinned;
  throw ConfigError(fmt::format("detection_mode: unknown value '{}'", v));
}

std::string fmt_double(double v) { return fmt::format("{}", v); }
std::string fmt_bool(bool v) { return v ? "true" : "false"; }

struct Field {
  std::string section; ///< empty for top-level keys
  std::string key;
  std::function<std::string(const SessionConfig &)> get;
  std::function<void(SessionConfig &, const std::string &)> set;
};

#define LB_DOUBLE(sec, name, expr)                                                                                 \
  Field {                                                                                                          \
    sec, name, [](const SessionConfig &c) { return fmt_double(c.expr); },                                          \
        [](SessionConfig &c, const std::string &v) { c.expr = parse_double(name, v); }                             \
  }
#define LB_BOOL(sec, name, expr)                                                                                   \
  Field {                                                                                                          \
    sec, name, [](const SessionConfig &c) { return fmt_bool(c.expr); },                                            \
        [](SessionConfig &c, const std::string &v) { c.expr = parse_bool(name, v); }                               \
  }

std::vector<Field> arm_fields(const std::string &sec, int i) {
  return {
      {sec, "label", [i](const SessionConfig &c) { return c.arms[i].label; },
       [i](SessionConfig &c, const std::string &v) { c.arms[i].label = v; }},
      {sec, "geometric_db", [i](const SessionConfig &c) { return fmt_double(c.arms[i].geometric_db); },
       [i](SessionConfig &c, const std::string &v) { c.arms[i].geometric_db = parse_double("geometric_db", v); }},
      {sec, "atmospheric_db", [i](const SessionConfig &c) { return fmt_double(c.arms[i].atmospheric_db); },
       [i](SessionConfig &c, const std::string &v) { c.arms[i].atmospheric_db = parse_double("atmospheric_db", v); }},
      {sec, "optics_db", [i](const SessionConfig &c) { return fmt_double(c.arms[i].optics_db); },
       [i](SessionConfig &c, const std::string &v) { c.arms[i].optics_db = parse_double("optics_db", v); }},
      {sec, "detector_db", [i](const SessionConfig &c) { return fmt_double(c.arms[i].detector_db); },
       [i](SessionConfig &c, const std::string &v) { c.arms[i].detector_db = parse_double("detector_db", v); }},
      {sec, "efficiency", [i](const SessionConfig &c) { return fmt_double(c.detectors[i].efficiency); },
       [i](SessionConfig &c, const std::string &v) { c.detectors[i].efficiency = parse_double("efficiency", v); }},
      {sec, "jitter_fwhm_ps", [i](const SessionConfig &c) { return fmt_double(c.detectors[i].jitter_fwhm_ps); },
       [i](SessionConfig &c, const std::string &v) {
         c.detectors[i].jitter_fwhm_ps = parse_double("jitter_fwhm_ps", v);
       }},
      {sec, "dark_rate_per_s", [i](const SessionConfig &c) { return fmt_double(c.detectors[i].dark_rate_per_s); },
       [i](SessionConfig &c, const std::string &v) {
         c.detectors[i].dark_rate_per_s = parse_double("dark_rate_per_s", v);
       }},
      {sec, "tdc_fwhm_ps", [i](const SessionConfig &c) { return fmt_double(c.detectors[i].tdc_fwhm_ps); },
       [i](SessionConfig &c, const std::string &v) { c.detectors[i].tdc_fwhm_ps = parse_double("tdc_fwhm_ps", v); }},
      {sec, "angle0_deg",
       [i](const SessionConfig &c) { return fmt_double(i == 0 ? c.angles.alice_deg[0] : c.angles.bob_deg[0]); },
       [i](SessionConfig &c, const std::string &v) {
         (i == 0 ? c.angles.alice_deg : c.angles.bob_deg)[0] = parse_double("angle0_deg", v);
       }},
      {sec, "angle1_deg",
       [i](const SessionConfig &c) { return fmt_double(i == 0 ? c.angles.alice_deg[1] : c.angles.bob_deg[1]); },
       [i](SessionConfig &c, const std::string &v) {
         (i == 0 ? c.angles.alice_deg : c.angles.bob_deg)[1] = parse_double("angle1_deg", v);
       }},
  };
}

const std::vector<Field> &fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f{
        {"", "preset", [](const SessionConfig &c) { return c.preset; },
         [](SessionConfig &c, const std::string &v) { c.preset = v; }},
        {"", "mode", [](const SessionConfig &c) { return std::string(to_string(c.mode)); },
         [](SessionConfig &c, const std::string &v) { c.mode = parse_mode(v); }},
        {"", "seed", [](const SessionConfig &c) { return std::to_string(c.seed); },
         [](SessionConfig &c, const std::string &v) { c.seed = parse_u64("seed", v); }},
        LB_DOUBLE("", "duration_s", duration_s),
        {"", "choice_source", [](const SessionConfig &c) { return std::string(to_string(c.choice_source)); },
         [](SessionConfig &c, const std::string &v) { c.choice_source = parse_choice_source(v); }},
        {"", "choice_log", [](const SessionConfig &c) { return c.choice_log; },
         [](SessionConfig &c, const std::string &v) { c.choice_log = v; }},
        LB_DOUBLE("", "time_compression", time_compression),
        {"", "detection_mode", [](const SessionConfig &c) { return std::string(to_string(c.detection_mode)); },
         [](SessionConfig &c, const std::string &v) { c.detection_mode = parse_detection_mode(v); }},
        {"", "coincidence_window_ps", [](const SessionConfig &c) { return std::to_string(c.coincidence_window_ps); },
         [](SessionConfig &c, const std::string &v) {
           c.coincidence_window_ps = parse_u64("coincidence_window_ps", v);
         }},
        LB_DOUBLE("source", "pair_rate_per_s", source.pair_rate_per_s),
        LB_DOUBLE("source", "visibility", source.visibility),
        {"source", "state_sign", [](const SessionConfig &c) { return std::to_string(c.source.state_sign); },
         [](SessionConfig &c, const std::string &v) { c.source.state_sign = parse_int("state_sign", v); }},
        LB_BOOL("source", "uncorrelated_singles", uncorrelated_singles),
    };
    for (auto &x : arm_fields("alice", 0))
      f.push_back(std::move(x));
    for (auto &x : arm_fields("bob", 1))
      f.push_back(std::move(x));
    f.push_back(LB_BOOL("geometry", "enabled", earth_moon_geometry));
    f.push_back(LB_DOUBLE("geometry", "side_length_km", geometry.side_length_km));
    f.push_back(LB_DOUBLE("geometry", "light_speed_km_s", geometry.light_speed_km_s));
    f.push_back(LB_BOOL("geometry", "use_paper_rounding", geometry.use_paper_rounding));
    f.push_back(LB_DOUBLE("timing", "reaction_time_s", timing.reaction_time_s));
    f.push_back(LB_DOUBLE("timing", "system_delay_s", timing.system_delay_s));
    f.push_back(LB_DOUBLE("timing", "delta_t_s", timing.delta_t_s));
    f.push_back(LB_DOUBLE("choices", "rate_min_hz", choice_rate_min_hz));
    f.push_back(LB_DOUBLE("choices", "rate_max_hz", choice_rate_max_hz));
    return f;
  }();
  return table;
}

#undef LB_DOUBLE
#undef LB_BOOL

std::string full_key(const Field &f) { return f.section.empty() ? f.key : f.section + "." + f.key; }

} // namespace

void SessionConfig::validate() const {
  if (!(duration_s >= 0.0) || !std::isfinite(duration_s))
    throw ConfigError(fmt::format("duration_s must be finite and >= 0, got {}", duration_s));
  if (!(time_compression >= 1.0) || !std::isfinite(time_compression))
    throw ConfigError(fmt::format("time_compression must be >= 1, got {}", time_compression));
  if (mode == Mode::interactive && time_compression != 1.0)
    throw ConfigError("interactive mode requires time_compression = 1");
  if (mode == Mode::interactive && choice_source != ChoiceSource::live)
    throw ConfigError("interactive mode takes its choices from the live feed (choice_source = live)");
  if (mode != Mode::interactive && choice_source == ChoiceSource::live)
    throw ConfigError("choice_source = live is only valid in interactive mode");
  if (choice_source == ChoiceSource::replay && choice_log.empty())
    throw ConfigError("choice_source = replay needs a choice_log path");
  if (coincidence_window_ps == 0)
    throw ConfigError("coincidence_window_ps must be > 0");
  if (!(choice_rate_min_hz > 0.0) || !(choice_rate_max_hz >= choice_rate_min_hz) ||
      !std::isfinite(choice_rate_max_hz))
    throw ConfigError(fmt::format("choice rates must satisfy 0 < min <= max, got [{}, {}]", choice_rate_min_hz,
                                  choice_rate_max_hz));
  try {
    source.validate();
    angles.validate();
    for (const auto &a : arms)
      a.validate();
    for (const auto &d : detectors)
      d.validate();
    geometry.validate();
    timing.validate();
  } catch (const InvalidArgument &e) {
    throw ConfigError(e.what());
  }
}

double SessionConfig::pair_loss_db() const { return linkbudget::scenario_total(arms).pair_loss_db; }

photonics::DetectionModel SessionConfig::detection_model() const {
  photonics::DetectionModel m;
  m.detectors = detectors;
  m.arm_loss_db = {linkbudget::arm_total(arms[0]), linkbudget::arm_total(arms[1])};
  m.angles = angles;
  m.uncorrelated_singles = uncorrelated_singles;
  return m;
}

tagstream::Picoseconds SessionConfig::system_delay_ps() const {
  return static_cast<tagstream::Picoseconds>(std::llround(timing.system_delay_s * 1e12));
}

std::string SessionConfig::serialize() const {
  std::string out;
  std::string section;
  for (const auto &f : fields()) {
    if (f.section != section) {
      section = f.section;
      out += fmt::format("\n[{}]\n", section);
    }
    out += fmt::format("{} = {}\n", f.key, f.get(*this));
  }
  return out;
}

std::string SessionConfig::hash() const { return sha256_hex(serialize()); }

SessionConfig preset_config(std::string_view name) {
  SessionConfig c;
  c.preset = std::string(name);
  const auto link = linkbudget::preset(name == "custom" ? "paper_lab_103db" : name);
  c.arms = link.arms;
  // Detector efficiency is already booked in the arm budget.
  for (auto &d : c.detectors)
    d = photonics::DetectorSpec{};
  if (name == "paper_lab_103db") {
    c.duration_s = 10800.0;
  } else if (name == "paper_table1") {
    c.duration_s = 10800.0;
    c.earth_moon_geometry = true;
  } else if (name == "interactive_90db") {
    c.mode = Mode::interactive;
    c.choice_source = ChoiceSource::live;
    c.duration_s = 3600.0;
    c.earth_moon_geometry = true;
  }
  return c;
}

std::vector<std::string> preset_config_names() {
  auto names = linkbudget::preset_names();
  names.push_back("custom");
  return names;
}

SessionConfig parse_config(std::string_view text, const SessionConfig &base) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error &e) {
    throw ConfigError(fmt::format("config line {}: {}", e.line(), e.message()));
  }

  std::set<std::string> known;
  std::set<std::string> sections;
  for (const auto &f : fields()) {
    known.insert(full_key(f));
    sections.insert(f.section);
  }
  for (const auto &[k, v] : tree) {
    if (v.empty()) {
      if (!known.count(k) && !(sections.count(k) && v.data().empty()))
        throw ConfigError(fmt::format("unknown config key '{}'", k));
      continue;
    }
    for (const auto &[sub, leaf] : v) {
      if (!leaf.empty() || !known.count(k + "." + sub))
        throw ConfigError(fmt::format("unknown config key '{}.{}'", k, sub));
    }
  }

  SessionConfig c = base;
  if (auto p = tree.get_optional<std::string>("preset"); p && tree.get_child("preset").empty())
    c = preset_config(*p);
  for (const auto &f : fields()) {
    const auto path = pt::ptree::path_type(full_key(f), '.');
    if (auto v = tree.get_optional<std::string>(path))
      f.set(c, *v);
  }
  c.validate();
  return c;
}

SessionConfig load_config(const std::filesystem::path &path, const SessionConfig &base) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), base);
  } catch (const ConfigError &e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void save_config(const std::filesystem::path &path, const SessionConfig &config) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw Error(fmt::format("cannot write config '{}'", path.string()));
  out << config.serialize();
  if (!out)
    throw Error(fmt::format("write failed for '{}'", path.string()));
}

} // namespace lunabell::session

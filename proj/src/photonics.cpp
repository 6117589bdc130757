#include "lunabell/photonics.hpp"

#include "lunabell/linkbudget.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numbers>

namespace lunabell::photonics {

double relative_pair_rate(const PhaseMatchingSpec &a, const PhaseMatchingSpec &b) {
  const auto brightness = [](const PhaseMatchingSpec &s, std::string_view name) {
    if (!(s.chi_eff > 0.0))
      throw InvalidArgument(fmt::format("crystal {}: chi_eff must be > 0", name));
    const double dn = std::abs(s.n_group_signal - s.n_group_idler);
    if (dn == 0.0)
      throw SingularRate(fmt::format("crystal {}: equal signal and idler group indices give an unbounded rate", name));
    return s.chi_eff * s.chi_eff / dn;
  };
  return brightness(a, "a") / brightness(b, "b");
}

void SourceSpec::validate() const {
  if (!(pair_rate_per_s >= 0.0) || !std::isfinite(pair_rate_per_s))
    throw InvalidArgument(fmt::format("pair rate must be >= 0, got {}", pair_rate_per_s));
  if (!(visibility >= 0.0 && visibility <= 1.0))
    throw InvalidArgument(fmt::format("visibility must lie in [0, 1], got {}", visibility));
  if (state_sign != 1 && state_sign != -1)
    throw InvalidArgument(fmt::format("state sign must be +1 or -1, got {}", state_sign));
}

void AnalyzerSettings::validate() const {
  for (double a : {alice_deg[0], alice_deg[1], bob_deg[0], bob_deg[1]}) {
    if (!(a >= 0.0 && a < 180.0))
      throw InvalidArgument(fmt::format("analyzer angle {} deg outside [0, 180)", a));
  }
}

void DetectorSpec::validate() const {
  if (!(efficiency >= 0.0 && efficiency <= 1.0))
    throw InvalidArgument(fmt::format("detector efficiency must lie in [0, 1], got {}", efficiency));
  if (!(jitter_fwhm_ps >= 0.0) || !(tdc_fwhm_ps >= 0.0))
    throw InvalidArgument("timing FWHM values must be >= 0");
  if (!(dark_rate_per_s >= 0.0))
    throw InvalidArgument(fmt::format("dark rate must be >= 0, got {}", dark_rate_per_s));
}

double DetectorSpec::tag_sigma_ps() const {
  const double tdc_per_channel = tdc_fwhm_ps / std::numbers::sqrt2;
  return std::hypot(jitter_fwhm_ps, tdc_per_channel) / kFwhmPerSigma;
}

JointOutcome JointTable::pick(double u) const {
  static constexpr std::array<JointOutcome, 4> outcomes{{{+1, +1}, {+1, -1}, {-1, +1}, {-1, -1}}};
  double acc = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    acc += p[i];
    if (u < acc)
      return outcomes[i];
  }
  return outcomes[3];
}

JointTable joint_outcome_probabilities(double theta_a_deg, double theta_b_deg, const SourceSpec &source) {
  source.validate();
  const double dtheta = (theta_a_deg - theta_b_deg) * std::numbers::pi / 180.0;
  const double e = source.state_sign * source.visibility * std::cos(2.0 * dtheta);
  const double same = 0.25 * (1.0 + e);
  const double diff = 0.25 * (1.0 - e);
  return {{same, diff, diff, same}};
}

double system_timing_fwhm(std::span<const double> components_ps) {
  double sum = 0.0;
  for (double f : components_ps) {
    if (!(f >= 0.0))
      throw InvalidArgument(fmt::format("timing component must be >= 0, got {}", f));
    sum += f * f;
  }
  return std::sqrt(sum);
}

std::vector<Picoseconds> sample_pair_emissions(const SourceSpec &source, double duration_s, std::uint64_t seed,
                                               Picoseconds start_ps) {
  source.validate();
  if (!(duration_s >= 0.0))
    throw InvalidArgument(fmt::format("duration must be >= 0, got {}", duration_s));
  std::vector<Picoseconds> out;
  if (source.pair_rate_per_s == 0.0 || duration_s == 0.0)
    return out;
  const auto end = start_ps + static_cast<Picoseconds>(std::llround(duration_s * 1e12));
  out.reserve(static_cast<std::size_t>(source.pair_rate_per_s * duration_s * 1.01) + 16);

  Rng rng = make_rng(seed, SeedStream::emissions);
  std::exponential_distribution<double> gap(source.pair_rate_per_s / 1e12);
  Picoseconds whole = start_ps;
  double frac = 0.0;
  for (;;) {
    const double total = frac + gap(rng);
    const double step = std::floor(total);
    whole += static_cast<Picoseconds>(step);
    frac = total - step;
    if (whole >= end)
      break;
    Picoseconds t = whole;
    if (!out.empty() && t <= out.back())
      t = out.back() + 1;
    if (t >= end)
      break;
    out.push_back(t);
  }
  return out;
}

void SettingSchedule::add(Picoseconds prepared_ps, int setting) {
  if (setting != 0 && setting != 1)
    throw InvalidArgument(fmt::format("setting index must be 0 or 1, got {}", setting));
  if (!changes_.empty() && prepared_ps < changes_.back().prepared_ps)
    throw InvalidArgument("setting changes must be added in time order");
  changes_.push_back({prepared_ps, setting});
}

std::optional<int> SettingSchedule::active_at(Picoseconds t) const {
  auto it = std::upper_bound(changes_.begin(), changes_.end(), t,
                             [](Picoseconds v, const Change &c) { return v < c.prepared_ps; });
  if (it == changes_.begin())
    return std::nullopt;
  return std::prev(it)->setting;
}

std::optional<Picoseconds> SettingSchedule::first_prepared() const {
  if (changes_.empty())
    return std::nullopt;
  return changes_.front().prepared_ps;
}

void DetectionModel::validate() const {
  for (const auto &d : detectors)
    d.validate();
  for (double db : arm_loss_db) {
    if (!(db >= 0.0))
      throw InvalidArgument(fmt::format("arm loss must be >= 0 dB, got {}", db));
  }
  angles.validate();
}

double DetectionModel::survival(int arm) const {
  const auto i = static_cast<std::size_t>(arm);
  return linkbudget::transmittance(arm_loss_db[i]) * detectors[i].efficiency;
}

void DetectedStreams::sort() {
  std::sort(alice.begin(), alice.end(), tagstream::tag_less);
  std::sort(bob.begin(), bob.end(), tagstream::tag_less);
}

namespace {

int setting_or_throw(const SettingSchedule &schedule, Picoseconds t, std::string_view who) {
  auto s = schedule.active_at(t);
  if (!s)
    throw ConfigError(fmt::format("photon at {} ps has no prepared {} setting", t, who));
  return *s;
}

Picoseconds apply_jitter(Picoseconds t, double sigma, Rng &rng, std::normal_distribution<double> &normal) {
  if (sigma <= 0.0)
    return t;
  const double shifted = static_cast<double>(t) + sigma * normal(rng);
  if (shifted <= 0.0)
    return 0;
  return static_cast<Picoseconds>(std::llround(shifted));
}

void append_dark_counts(Picoseconds from, Picoseconds until, const DetectionModel &model, Rng &rng,
                        DetectedStreams &out) {
  if (until <= from)
    return;
  const double span_s = static_cast<double>(until - from) / 1e12;
  for (int arm = 0; arm < 2; ++arm) {
    const double rate = model.detectors[static_cast<std::size_t>(arm)].dark_rate_per_s;
    if (rate <= 0.0)
      continue;
    for (int sign : {+1, -1}) {
      std::poisson_distribution<std::uint64_t> count(rate * span_s);
      std::uniform_int_distribution<Picoseconds> when(from, until - 1);
      const auto n = count(rng);
      auto &stream = arm == 0 ? out.alice : out.bob;
      for (std::uint64_t i = 0; i < n; ++i)
        stream.push_back({when(rng), tagstream::channel::make(arm, sign), 0});
    }
  }
}

} // namespace

DetectedStreams detect_stream(std::span<const Picoseconds> emissions, const SettingSchedule &alice,
                              const SettingSchedule &bob, const DetectionModel &model, const SourceSpec &source,
                              std::uint64_t seed) {
  source.validate();
  model.validate();
  const double pa = model.survival(0);
  const double pb = model.survival(1);
  const double sa = model.detectors[0].tag_sigma_ps();
  const double sb = model.detectors[1].tag_sigma_ps();

  Rng rng = make_rng(seed, SeedStream::detection);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  DetectedStreams out;
  for (Picoseconds t : emissions) {
    const int set_a = setting_or_throw(alice, t, "alice");
    const int set_b = setting_or_throw(bob, t, "bob");
    const bool hit_a = unit(rng) < pa;
    const bool hit_b = unit(rng) < pb;
    if (!hit_a && !hit_b)
      continue;
    if (hit_a && hit_b) {
      const auto table = joint_outcome_probabilities(model.angles.alice_deg[static_cast<std::size_t>(set_a)],
                                                     model.angles.bob_deg[static_cast<std::size_t>(set_b)], source);
      const auto o = table.pick(unit(rng));
      out.alice.push_back({apply_jitter(t, sa, rng, normal), tagstream::channel::make(0, o.alice_sign), 0});
      out.bob.push_back({apply_jitter(t, sb, rng, normal), tagstream::channel::make(1, o.bob_sign), 0});
    } else if (!model.uncorrelated_singles) {
      continue;
    } else if (hit_a) {
      const int sign = unit(rng) < 0.5 ? +1 : -1;
      out.alice.push_back({apply_jitter(t, sa, rng, normal), tagstream::channel::make(0, sign), 0});
    } else {
      const int sign = unit(rng) < 0.5 ? +1 : -1;
      out.bob.push_back({apply_jitter(t, sb, rng, normal), tagstream::channel::make(1, sign), 0});
    }
  }
  if (!emissions.empty())
    append_dark_counts(emissions.front(), emissions.back() + 1, model, rng, out);
  out.sort();
  return out;
}

ThinnedGenerator::Process::Process(std::uint64_t seed, double rate_per_s, Picoseconds start)
    : rng(seed), gap(rate_per_s > 0.0 ? rate_per_s / 1e12 : 1.0), whole(start), active(rate_per_s > 0.0) {
  if (active)
    step();
}

void ThinnedGenerator::Process::step() {
  const double total = frac + gap(rng);
  if (!(total < 1.0e19)) {
    active = false;
    return;
  }
  const double whole_step = std::floor(total);
  whole += static_cast<Picoseconds>(whole_step);
  frac = total - whole_step;
}

namespace {
std::uint64_t dark_seed(std::uint64_t seed, int channel) {
  return mix64(derive_seed(seed, SeedStream::dark_counts) + static_cast<std::uint64_t>(channel));
}
double dark_rate(const DetectionModel &m, int channel) {
  return m.detectors[static_cast<std::size_t>(tagstream::channel::arm_of(static_cast<std::uint8_t>(channel)))]
      .dark_rate_per_s;
}
} // namespace

ThinnedGenerator::ThinnedGenerator(const SourceSpec &source, const DetectionModel &model, std::uint64_t seed,
                                   Picoseconds start_ps)
    : source_((source.validate(), source)), model_((model.validate(), model)), cursor_(start_ps),
      pair_rate_(source.pair_rate_per_s * model.survival(0) * model.survival(1)),
      sigma_{model.detectors[0].tag_sigma_ps(), model.detectors[1].tag_sigma_ps()},
      pairs_(derive_seed(seed, SeedStream::pairs), pair_rate_, start_ps),
      alice_only_(derive_seed(seed, SeedStream::alice_singles),
                  model.uncorrelated_singles ? source.pair_rate_per_s * model.survival(0) * (1.0 - model.survival(1))
                                             : 0.0,
                  start_ps),
      bob_only_(derive_seed(seed, SeedStream::bob_singles),
                model.uncorrelated_singles ? source.pair_rate_per_s * (1.0 - model.survival(0)) * model.survival(1)
                                           : 0.0,
                start_ps),
      darks_{Process(dark_seed(seed, 0), dark_rate(model, 0), start_ps),
             Process(dark_seed(seed, 1), dark_rate(model, 1), start_ps),
             Process(dark_seed(seed, 2), dark_rate(model, 2), start_ps),
             Process(dark_seed(seed, 3), dark_rate(model, 3), start_ps)} {}

Picoseconds ThinnedGenerator::jittered(Picoseconds t, double sigma, Rng &rng,
                                       std::normal_distribution<double> &normal) const {
  return apply_jitter(t, sigma, rng, normal);
}

void ThinnedGenerator::advance(Picoseconds until, const SettingSchedule &alice, const SettingSchedule &bob,
                               DetectedStreams &out) {
  if (until <= cursor_)
    return;

  while (pairs_.active && pairs_.next_time() < until) {
    const Picoseconds t = pairs_.next_time();
    const int set_a = setting_or_throw(alice, t, "alice");
    const int set_b = setting_or_throw(bob, t, "bob");
    const auto table = joint_outcome_probabilities(model_.angles.alice_deg[static_cast<std::size_t>(set_a)],
                                                   model_.angles.bob_deg[static_cast<std::size_t>(set_b)], source_);
    const auto o = table.pick(unit_(pairs_.rng));
    out.alice.push_back({jittered(t, sigma_[0], pairs_.rng, pair_normal_), tagstream::channel::make(0, o.alice_sign), 0});
    out.bob.push_back({jittered(t, sigma_[1], pairs_.rng, pair_normal_), tagstream::channel::make(1, o.bob_sign), 0});
    pairs_.step();
  }
  while (alice_only_.active && alice_only_.next_time() < until) {
    const Picoseconds t = alice_only_.next_time();
    const int sign = unit_(alice_only_.rng) < 0.5 ? +1 : -1;
    out.alice.push_back({jittered(t, sigma_[0], alice_only_.rng, alice_normal_), tagstream::channel::make(0, sign), 0});
    alice_only_.step();
  }
  while (bob_only_.active && bob_only_.next_time() < until) {
    const Picoseconds t = bob_only_.next_time();
    const int sign = unit_(bob_only_.rng) < 0.5 ? +1 : -1;
    out.bob.push_back({jittered(t, sigma_[1], bob_only_.rng, bob_normal_), tagstream::channel::make(1, sign), 0});
    bob_only_.step();
  }
  for (std::size_t ch = 0; ch < darks_.size(); ++ch) {
    auto &p = darks_[ch];
    const auto channel = static_cast<std::uint8_t>(ch);
    auto &stream = tagstream::channel::arm_of(channel) == 0 ? out.alice : out.bob;
    while (p.active && p.next_time() < until) {
      stream.push_back({p.next_time(), channel, 0});
      p.step();
    }
  }
  cursor_ = until;
}

} // namespace lunabell::photonics

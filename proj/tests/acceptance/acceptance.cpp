// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include "lunabell/analysis.hpp"
#include "lunabell/config.hpp"
#include "lunabell/linkbudget.hpp"
#include "lunabell/photonics.hpp"
#include "lunabell/session.hpp"
#include "lunabell/spacetime.hpp"
#include "lunabell/tagfile.hpp"
#include "lunabell/tagstream.hpp"

#include "../support/oracles.hpp"
#include "../support/tempdir.hpp"

#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

using namespace lunabell;
namespace ch = lunabell::tagstream::channel;

namespace {

struct Outcome {
  bool pass{true};
  std::string detail;

  void require(bool ok, const std::string &what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + ("failed: " + what);
    }
  }
  void note(const std::string &what) { detail += (detail.empty() ? "" : "; ") + what; }
};

bool run_criterion(const std::string &name, double limit_s, const std::function<Outcome()> &body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception &e) {
    o.pass = false;
    o.note(fmt::format("exception: {}", e.what()));
  }
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  o.require(elapsed < limit_s, fmt::format("runtime {:.2f} s over {:.0f} s", elapsed, limit_s));
  std::cout << fmt::format("{} {:<22} {} [{:.2f} s, limit {:.0f} s]", o.pass ? "PASS" : "FAIL", name, o.detail,
                           elapsed, limit_s)
            << std::endl;
  return o.pass;
}

// ---------------------------------------------------------------------------

Outcome link_budget() {
  Outcome o;
  const double earth = linkbudget::geometric_loss_db({3e-6, 3.8e8, 30.0});
  const double moon = linkbudget::geometric_loss_db({3e-6, 3.8e8, 2.4});
  o.note(fmt::format("aperture 30 m {:.3f} dB, 2.4 m {:.3f} dB", earth, moon));
  o.require(earth >= 31.5 && earth <= 32.5, "30 m aperture loss in [31.5, 32.5]");
  o.require(std::abs(moon - 53.5) <= 0.5, "2.4 m aperture loss 53.5 +/- 0.5");

  const auto table = linkbudget::preset("paper_table1");
  const double a0 = linkbudget::arm_total(table.arms[0]);
  const double a1 = linkbudget::arm_total(table.arms[1]);
  o.note(fmt::format("table arms {} + {} = {} dB", a0, a1, table.pair_loss_db));
  o.require(a0 == 41.5 && a1 == 60.0, "table arm totals 41.5 and 60");
  o.require(table.pair_loss_db == 101.5, "table pair total 101.5");

  const auto lab = linkbudget::preset("paper_lab_103db");
  o.note(fmt::format("lab {} / {} dB per photon, {} dB per pair", linkbudget::arm_total(lab.arms[0]),
                     linkbudget::arm_total(lab.arms[1]), lab.pair_loss_db));
  o.require(linkbudget::arm_total(lab.arms[0]) == 51.5 && linkbudget::arm_total(lab.arms[1]) == 51.5,
            "lab 51.5 dB per photon");
  o.require(lab.pair_loss_db == 103.0, "lab 103 dB per pair");
  return o;
}

Outcome spacetime_windows() {
  using namespace spacetime;
  Outcome o;
  const TimingBudget timing{0.45, 0.05, 0.5};
  const GeometryConfig geometry{};
  const double loc = admissible_window(Loophole::locality, timing, geometry).window_s;
  const double foc = admissible_window(Loophole::freedom_of_choice, timing, geometry).window_s;
  o.note(fmt::format("locality {:.17g} s, freedom-of-choice {:.17g} s", loc, foc));
  o.require(loc == 0.78, "locality window 0.78 s");
  o.require(foc == 2.06, "freedom-of-choice window 2.06 s");

  // Property suite against an independent light-cone oracle.
  constexpr double c = kLightSpeedKmS;
  std::mt19937_64 rng(20240917);
  std::uniform_real_distribution<double> pos(-4e5, 4e5);
  std::uniform_real_distribution<double> time(-5.0, 5.0);
  std::uniform_real_distribution<double> shift(-100.0, 100.0);
  auto random_event = [&] { return SpacetimeEvent{"", {pos(rng), pos(rng), pos(rng)}, time(rng)}; };
  int failures = 0;
  int oracle_checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_event();
    const auto b = random_event();
    const auto ab = classify_interval(a, b);
    bool ok = ab == classify_interval(b, a);
    ok = ok && classify_interval(a, a) == IntervalClass::light_like;

    const double dx = std::hypot(a.position_km.x - b.position_km.x, a.position_km.y - b.position_km.y,
                                 a.position_km.z - b.position_km.z);
    const double reach = c * std::abs(a.time_s - b.time_s);
    if (std::abs(dx - reach) > 1.0) {
      ++oracle_checked;
      ok = ok && ab == (dx > reach ? IntervalClass::space_like : IntervalClass::time_like);
      // Rigid translation in space and time keeps the class.
      const Vec3 d{shift(rng), shift(rng), shift(rng)};
      const double dt = shift(rng) * 1e-3;
      auto moved = [&](const SpacetimeEvent &e) {
        return SpacetimeEvent{"", {e.position_km.x + d.x, e.position_km.y + d.y, e.position_km.z + d.z},
                              e.time_s + dt};
      };
      ok = ok && classify_interval(moved(a), moved(b)) == ab;
    }

    // Constructed cases: equal times, equal places, and on the light cone.
    const SpacetimeEvent same_time{"", b.position_km, a.time_s};
    if (dx > 1.0)
      ok = ok && classify_interval(a, same_time) == IntervalClass::space_like;
    const SpacetimeEvent same_place{"", a.position_km, a.time_s + 0.01 + std::abs(b.time_s)};
    ok = ok && classify_interval(a, same_place) == IntervalClass::time_like;
    const SpacetimeEvent on_cone{"", b.position_km, a.time_s + dx / c};
    ok = ok && classify_interval(a, on_cone) == IntervalClass::light_like;
    if (!ok)
      ++failures;
  }
  o.note(fmt::format("1000 random cases, {} off-cone checked against oracle, {} failures", oracle_checked,
                     failures));
  o.require(failures == 0, "classify_interval properties");
  return o;
}

/// Session config for an ideal bench source: no loss and one pair every
/// 10 us on average, so every pair is matched unambiguously. Photons start
/// once both observers have a prepared setting (at most 0.55 s in), leaving
/// at least 10 s of emission.
session::SessionConfig bench_config(double visibility, photonics::DetectorSpec detector, std::uint64_t seed) {
  auto c = session::preset_config("custom");
  c.seed = seed;
  c.duration_s = 10.55;
  c.source.pair_rate_per_s = 1e5;
  c.source.visibility = visibility;
  for (auto &arm : c.arms)
    arm = linkbudget::ArmBudget{arm.label, 0.0, 0.0, 0.0, 0.0};
  c.detectors = {detector, detector};
  c.uncorrelated_singles = false;
  c.earth_moon_geometry = false;
  c.validate();
  return c;
}

Outcome timing_composition() {
  Outcome o;
  const std::array<double, 3> parts{40.0, 40.0, 60.0};
  const double fwhm = photonics::system_timing_fwhm(parts);
  o.note(fmt::format("composed {:.4f} ps", fwhm));
  o.require(std::abs(fwhm - 82.46) <= 0.01, "composed FWHM 82.46 +/- 0.01 ps");

  const auto run = session::run_headless(bench_config(0.806, photonics::DetectorSpec{1.0, 40.0, 0.0, 60.0}, 7));
  const auto h = tagstream::delta_histogram(run.pairs, 1.0, 400.0);
  const auto mc = h.fwhm();
  o.note(fmt::format("Monte Carlo {} pairs: FWHM {} ps", run.pairs.size(),
                     mc ? fmt::format("{:.2f}", *mc) : std::string("undefined")));
  o.require(run.pairs.size() >= 990'000, "about 1e6 pairs simulated");
  o.require(mc && std::abs(*mc - 82.5) <= 2.0, "Monte Carlo FWHM within 2 ps of 82.5");
  return o;
}

Outcome experiment() {
  Outcome o;
  constexpr int kRuns = 100;
  constexpr double kTargetS = 2.28;
  analysis::SettingCounts pooled;
  double count_sum = 0.0;
  int outside_4sigma = 0;
  double worst_pull = 0.0;
  double worst_sigma_err = 0.0;
  int undefined = 0;
  double expected = 0.0;
  for (int i = 1; i <= kRuns; ++i) {
    auto cfg = session::preset_config("paper_lab_103db");
    cfg.seed = static_cast<std::uint64_t>(i);
    const auto r = session::run_headless(cfg).report;
    expected = r.expected_coincidences;
    count_sum += static_cast<double>(r.counted_coincidences);
    pooled += r.counts;
    if (!r.chsh) {
      ++undefined;
      continue;
    }
    const double boot = analysis::bootstrap_sigma(r.counts, 2000, 1000 + static_cast<std::uint64_t>(i));
    const double pull = std::abs(r.chsh->s_value - kTargetS) / boot;
    worst_pull = std::max(worst_pull, pull);
    if (pull > 4.0)
      ++outside_4sigma;
    worst_sigma_err = std::max(worst_sigma_err, std::abs(r.chsh->sigma - boot) / boot);
  }
  const double mean_count = count_sum / kRuns;
  const auto s = analysis::chsh(pooled);
  o.note(fmt::format("mean count {:.1f} (model {:.1f}, target 541)", mean_count, expected));
  o.note(fmt::format("pooled S {:.4f} +/- {:.4f}", s.s_value, s.sigma));
  o.note(fmt::format("worst |S-2.28| {:.2f} bootstrap sigma", worst_pull));
  o.note(fmt::format("worst sigma vs bootstrap {:.1f}%", 100.0 * worst_sigma_err));
  o.require(undefined == 0, fmt::format("{} runs without a defined S", undefined));
  o.require(std::abs(mean_count - 541.0) <= 0.05 * 541.0, "mean count within 5% of 541");
  o.require(std::abs(s.s_value - kTargetS) <= 0.02, "pooled S within 0.02 of 2.28");
  o.require(outside_4sigma == 0, fmt::format("{} runs beyond 4 bootstrap sigma", outside_4sigma));
  o.require(worst_sigma_err <= 0.20, "reported sigma within 20% of bootstrap");
  return o;
}

Outcome bounds() {
  Outcome o;
  const double local = analysis::local_bound_oracle();
  o.note(fmt::format("local bound {}", local));
  o.require(local == 2.0, "local bound exactly 2");

  const photonics::SourceSpec ideal{1e9, 1.0, +1};
  const photonics::AnalyzerSettings angles{};
  double s = 0.0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      s += analysis::kChshSigns[analysis::SettingCounts::index(a, b)] *
           photonics::joint_outcome_probabilities(angles.alice_deg[a], angles.bob_deg[b], ideal).correlation();
  o.note(fmt::format("analytic S {:.12f}", s));
  o.require(std::abs(s - 2.0 * std::numbers::sqrt2) <= 1e-9, "analytic S = 2 sqrt 2 within 1e-9");

  const auto run = session::run_headless(bench_config(1.0, photonics::DetectorSpec{1.0, 0.0, 0.0, 0.0}, 11));
  const auto &r = run.report;
  o.require(r.counted_coincidences >= 990'000, "about 1e6 pairs counted");
  o.require(r.chsh.has_value(), "Monte Carlo S defined");
  if (r.chsh) {
    const double pull = std::abs(r.chsh->s_value - 2.0 * std::numbers::sqrt2) / r.chsh->sigma;
    o.note(fmt::format("Monte Carlo {} pairs: S {:.4f} +/- {:.4f} ({:.2f} sigma)", r.counted_coincidences,
                       r.chsh->s_value, r.chsh->sigma, pull));
    o.require(pull <= 3.0, "Monte Carlo S within 3 sigma of 2 sqrt 2");
  }
  return o;
}

Outcome coincidence_engine() {
  Outcome o;
  int mismatches = 0;
  std::size_t total_pairs = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const std::uint64_t span = 200'000 + 20'000 * i;
    const std::uint64_t window = 100 + 50 * (i % 20);
    const auto a = testing::uniform_stream(2 * i + 1, 1000, span, 0);
    const auto b = testing::uniform_stream(2 * i + 2, 1000, span, 1);
    const auto got = tagstream::find_coincidences(a, b, {window});
    total_pairs += got.size();
    if (got != testing::brute_force_coincidences(a, b, window))
      ++mismatches;
  }
  o.note(fmt::format("100 streams, {} pairs, {} mismatches", total_pairs, mismatches));
  o.require(mismatches == 0, "exact agreement with brute-force oracle");

  // 10^7-tag file holding both arms: correlated pairs 1 ns or more apart.
  testing::TempDir dir;
  const auto path = dir / "synthetic.tags";
  constexpr std::size_t kPairs = 5'000'000;
  {
    std::mt19937_64 rng(99);
    std::exponential_distribution<double> gap(1.0 / 200'000.0);
    std::normal_distribution<double> jitter(0.0, 35.0);
    tagstream::TagWriter w(path);
    tagstream::Picoseconds t = 1'000'000;
    for (std::size_t i = 0; i < kPairs; ++i) {
      t += 1000 + static_cast<tagstream::Picoseconds>(gap(rng));
      tagstream::TimeTag x{t, ch::make(0, (rng() & 1U) ? 1 : -1), 0};
      tagstream::TimeTag y{static_cast<tagstream::Picoseconds>(static_cast<double>(t) + std::round(jitter(rng))),
                           ch::make(1, (rng() & 1U) ? 1 : -1), 0};
      if (tagstream::tag_less(y, x))
        std::swap(x, y);
      w.write(x);
      w.write(y);
    }
    w.close();
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto all = tagstream::read_tags(path);
  std::vector<tagstream::TimeTag> alice, bob;
  alice.reserve(kPairs);
  bob.reserve(kPairs);
  for (const auto &t : all)
    (ch::arm_of(t.channel) == 0 ? alice : bob).push_back(t);
  const auto t1 = std::chrono::steady_clock::now();
  const auto pairs = tagstream::find_coincidences(alice, bob, {500});
  const auto t2 = std::chrono::steady_clock::now();
  const double read_s = std::chrono::duration<double>(t1 - t0).count();
  const double match_s = std::chrono::duration<double>(t2 - t1).count();
  const double rate = static_cast<double>(all.size()) / match_s;
  o.note(fmt::format("{} tags read in {:.2f} s, matched in {:.2f} s: {:.3g} tags/s ({})", all.size(), read_s,
                     match_s, rate, rate >= 1e6 ? "advisory 1e6 met" : "advisory 1e6 NOT met"));
  o.require(all.size() == 2 * kPairs, "file holds 1e7 tags");
  o.require(pairs.size() == kPairs, fmt::format("all {} synthetic pairs found (got {})", kPairs, pairs.size()));
  return o;
}

Outcome planner() {
  Outcome o;
  const double v = 0.806, rate = 1e9, loss = 103.0, k = 3.0;
  const double got = analysis::time_to_violation(v, rate, loss, k);
  const double e = v / std::sqrt(2.0);
  const double excess = 2.0 * std::sqrt(2.0) * v - 2.0;
  const double per_setting = 4.0 * (1.0 - e * e) * k * k / (excess * excess);
  const double independent = 4.0 * per_setting / (rate * std::pow(10.0, -loss / 10.0));
  o.note(fmt::format("time_to_violation {:.1f} s, closed form {:.1f} s", got, independent));
  o.require(std::abs(got - independent) <= 1e-9 * independent, "matches closed form");
  o.require(std::abs(got - 2.47e4) <= 0.05 * 2.47e4, "2.47e4 s +/- 5%");
  return o;
}

Outcome reproducibility() {
  Outcome o;
  std::mt19937_64 rng(424242);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::array<std::string, 3> presets{"paper_lab_103db", "paper_table1", "custom"};
  int mismatches = 0;
  std::string kinds;
  for (int i = 0; i < 10; ++i) {
    auto c = session::preset_config(presets[rng() % presets.size()]);
    c.seed = rng();
    c.duration_s = 60.0 + 3540.0 * unit(rng);
    c.source.visibility = 0.7 + 0.3 * unit(rng);
    c.coincidence_window_ps = 200 + rng() % 1000;
    c.uncorrelated_singles = (rng() & 1U) != 0;
    for (auto &d : c.detectors)
      d.dark_rate_per_s = 50.0 * unit(rng);
    if (i % 3 == 0) {
      c.detection_mode = session::DetectionMode::raw;
      c.source.pair_rate_per_s = 2e4;
      c.duration_s = 30.0 + 60.0 * unit(rng);
      for (auto &arm : c.arms)
        arm = linkbudget::ArmBudget{arm.label, 3.0 * unit(rng), 0.0, 1.0, 0.5};
    }
    if (c.uncorrelated_singles) {
      // Keep the singles volume near a few million tags.
      const auto m = c.detection_model();
      const double singles = c.source.pair_rate_per_s * std::max(m.survival(0), m.survival(1));
      c.duration_s = std::min(c.duration_s, 2e6 / singles);
    }
    testing::TempDir dir;
    const auto run = session::run_headless(c, dir.path() / "run");
    const auto replay = session::run_replay(dir.path() / "run");
    if (run.report.hash() != replay.report.hash())
      ++mismatches;
    kinds += fmt::format("{}{}/{:.0f}s/{}", kinds.empty() ? "" : " ", c.preset, c.duration_s,
                         run.report.alice_tags + run.report.bob_tags);
  }
  o.note(fmt::format("10 configs (preset/duration/tags) [{}], {} hash mismatches", kinds, mismatches));
  o.require(mismatches == 0, "replayed report hash identical");
  return o;
}

} // namespace

int main() {
  int failed = 0;
  failed += !run_criterion("link-budget", 1, link_budget);
  failed += !run_criterion("spacetime-windows", 1, spacetime_windows);
  failed += !run_criterion("timing-composition", 30, timing_composition);
  failed += !run_criterion("experiment", 300, experiment);
  failed += !run_criterion("local-quantum-bounds", 60, bounds);
  failed += !run_criterion("coincidence-engine", 120, coincidence_engine);
  failed += !run_criterion("planner", 1, planner);
  failed += !run_criterion("reproducibility", 120, reproducibility);
  std::cout << fmt::format("{} of 8 criteria passed", 8 - failed) << std::endl;
  return failed == 0 ? 0 : 1;
}

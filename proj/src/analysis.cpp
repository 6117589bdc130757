#include "lunabell/analysis.hpp"

#include "lunabell/linkbudget.hpp"
#include "lunabell/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numbers>
#include <random>

namespace lunabell::analysis {

void OutcomeCounts::add(int alice_sign, int bob_sign) {
  if (alice_sign > 0)
    ++(bob_sign > 0 ? pp : pm);
  else
    ++(bob_sign > 0 ? mp : mm);
}

OutcomeCounts &OutcomeCounts::operator+=(const OutcomeCounts &o) {
  pp += o.pp;
  pm += o.pm;
  mp += o.mp;
  mm += o.mm;
  return *this;
}

std::uint64_t SettingCounts::total() const {
  std::uint64_t n = 0;
  for (const auto &c : by_setting)
    n += c.total();
  return n;
}

SettingCounts &SettingCounts::operator+=(const SettingCounts &o) {
  for (std::size_t i = 0; i < by_setting.size(); ++i)
    by_setting[i] += o.by_setting[i];
  return *this;
}

CorrelationEstimate correlation(const OutcomeCounts &c) {
  const auto n = c.total();
  if (n == 0)
    throw UndefinedCorrelation("correlation undefined for a setting pair with no coincidences");
  const double e = (static_cast<double>(c.pp) + static_cast<double>(c.mm) - static_cast<double>(c.pm) -
                    static_cast<double>(c.mp)) /
                   static_cast<double>(n);
  return {e, std::sqrt(std::max(0.0, 1.0 - e * e) / static_cast<double>(n)), n};
}

ChshResult chsh(const SettingCounts &counts) {
  ChshResult r;
  double var = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    try {
      r.correlations[i] = correlation(counts.by_setting[i]);
    } catch (const UndefinedCorrelation &) {
      throw UndefinedCorrelation(
          fmt::format("setting pair ({},{}) has no coincidences; S is undefined", i / 2, i % 2));
    }
    r.s_value += kChshSigns[i] * r.correlations[i].value;
    var += r.correlations[i].sigma * r.correlations[i].sigma;
  }
  r.sigma = std::sqrt(var);
  return r;
}

int deterministic_chsh(int a0, int a1, int b0, int b1) { return a0 * b0 - a0 * b1 + a1 * b0 + a1 * b1; }

double local_bound_oracle() {
  int best = 0;
  for (int bits = 0; bits < 16; ++bits) {
    const auto out = [bits](int k) { return (bits >> k) & 1 ? -1 : +1; };
    best = std::max(best, std::abs(deterministic_chsh(out(0), out(1), out(2), out(3))));
  }
  return best;
}

double expected_coincidences(double pair_rate_per_s, double pair_loss_db, double duration_s) {
  if (!(pair_rate_per_s >= 0.0) || !(duration_s >= 0.0))
    throw InvalidArgument("rate and duration must be >= 0");
  return pair_rate_per_s * linkbudget::transmittance(pair_loss_db) * duration_s;
}

double time_to_violation(double visibility, double pair_rate_per_s, double pair_loss_db, double k_sigma) {
  const double margin = 2.0 * std::numbers::sqrt2 * visibility - 2.0;
  if (!(margin > 0.0))
    throw NoViolation(fmt::format("visibility {} cannot exceed the local bound (needs V > 1/sqrt(2))", visibility));
  if (!(k_sigma > 0.0))
    throw InvalidArgument("k_sigma must be > 0");
  if (!(pair_rate_per_s > 0.0))
    throw InvalidArgument("pair rate must be > 0");
  const double e = visibility / std::numbers::sqrt2;
  const double per_setting = 4.0 * (1.0 - e * e) * k_sigma * k_sigma / (margin * margin);
  return 4.0 * per_setting / (pair_rate_per_s * linkbudget::transmittance(pair_loss_db));
}

double bootstrap_sigma(const SettingCounts &counts, int resamples, std::uint64_t seed) {
  if (resamples < 2)
    throw InvalidArgument("bootstrap needs at least 2 resamples");
  Rng rng(mix64(seed));
  std::array<std::discrete_distribution<int>, 4> draw;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto &c = counts.by_setting[i];
    if (c.total() == 0)
      throw UndefinedCorrelation("bootstrap needs counts in every setting pair");
    draw[i] = std::discrete_distribution<int>(
        {double(c.pp), double(c.pm), double(c.mp), double(c.mm)});
  }
  double sum = 0.0;
  double sum_sq = 0.0;
  int used = 0;
  for (int r = 0; r < resamples; ++r) {
    SettingCounts resampled;
    for (std::size_t i = 0; i < 4; ++i) {
      auto &out = resampled.by_setting[i];
      for (std::uint64_t k = 0; k < counts.by_setting[i].total(); ++k) {
        switch (draw[i](rng)) {
        case 0: ++out.pp; break;
        case 1: ++out.pm; break;
        case 2: ++out.mp; break;
        default: ++out.mm; break;
        }
      }
    }
    const double s = chsh(resampled).s_value;
    sum += s;
    sum_sq += s * s;
    ++used;
  }
  const double mean = sum / used;
  return std::sqrt(std::max(0.0, (sum_sq - used * mean * mean) / (used - 1)));
}

} // namespace lunabell::analysis

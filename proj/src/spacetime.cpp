#include "lunabell/spacetime.hpp"

#include "lunabell/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace lunabell::spacetime {

double Vec3::norm() const { return std::sqrt(x * x + y * y + z * z); }

std::string_view to_string(IntervalClass c) {
  switch (c) {
  case IntervalClass::space_like: return "space-like";
  case IntervalClass::time_like: return "time-like";
  case IntervalClass::light_like: return "light-like";
  }
  return "unknown";
}

std::string_view to_string(Loophole l) {
  switch (l) {
  case Loophole::locality: return "locality";
  case Loophole::freedom_of_choice: return "freedom-of-choice";
  case Loophole::combined: return "combined";
  }
  return "unknown";
}

void GeometryConfig::validate() const {
  if (!(side_length_km > 0.0) || !std::isfinite(side_length_km))
    throw InvalidArgument(fmt::format("side_length_km must be positive, got {}", side_length_km));
  if (!(light_speed_km_s > 0.0) || !std::isfinite(light_speed_km_s))
    throw InvalidArgument(fmt::format("light_speed_km_s must be positive, got {}", light_speed_km_s));
}

void TimingBudget::validate() const {
  if (!(reaction_time_s >= 0.0) || !(system_delay_s >= 0.0) || !(delta_t_s >= 0.0))
    throw InvalidArgument("timing budget entries must be non-negative");
  if (delta_t_s < system_delay_s)
    throw InvalidArgument(
        fmt::format("delta_t ({} s) is shorter than the system delay ({} s)", delta_t_s, system_delay_s));
}

std::array<SpacetimeEvent, 3> lagrange_positions(const GeometryConfig &config, LagrangePoint point) {
  config.validate();
  const double s = config.side_length_km;
  const double h = s * std::sqrt(3.0) / 2.0;
  // Mirroring the Moon across the x-axis swaps which apex the source occupies.
  const double moon_y = point == LagrangePoint::L4 ? h : -h;
  return {{
      {"earth", {s, 0.0, 0.0}, 0.0},
      {"moon", {s / 2.0, moon_y, 0.0}, 0.0},
      {point == LagrangePoint::L4 ? "source-L4" : "source-L5", {0.0, 0.0, 0.0}, 0.0},
  }};
}

double one_way_light_time(const GeometryConfig &config) {
  config.validate();
  return config.use_paper_rounding ? kRoundedLightTimeS : config.side_length_km / config.light_speed_km_s;
}

IntervalClass classify_interval(const SpacetimeEvent &e1, const SpacetimeEvent &e2, double light_speed_km_s,
                                double tol_s) {
  const double dx = (e1.position_km - e2.position_km).norm();
  const double reach = light_speed_km_s * std::abs(e1.time_s - e2.time_s);
  const double slack = light_speed_km_s * tol_s;
  if (dx > reach + slack)
    return IntervalClass::space_like;
  if (dx < reach - slack)
    return IntervalClass::time_like;
  return IntervalClass::light_like;
}

LoopholeWindow admissible_window(Loophole loophole, const TimingBudget &timing, const GeometryConfig &config) {
  timing.validate();
  const double light = one_way_light_time(config);
  const double locality = std::max(0.0, light - timing.delta_t_s);
  const double foc = std::max(0.0, 2.0 * light - timing.delta_t_s);
  switch (loophole) {
  case Loophole::locality: return {loophole, locality};
  case Loophole::freedom_of_choice: return {loophole, foc};
  case Loophole::combined: return {loophole, std::min(locality, foc)};
  }
  return {loophole, 0.0};
}

TrialValidity validate_trial(double prepared_time_s, double detection_time_s, const TimingBudget &timing,
                             const GeometryConfig &config) {
  if (detection_time_s < prepared_time_s)
    throw InvalidArgument(fmt::format("detection at {} s precedes preparation at {} s", detection_time_s,
                                      prepared_time_s));
  const double delay = detection_time_s - prepared_time_s;
  return {
      delay <= admissible_window(Loophole::locality, timing, config).window_s,
      delay <= admissible_window(Loophole::freedom_of_choice, timing, config).window_s,
  };
}

std::string window_report(const TimingBudget &timing, const GeometryConfig &config) {
  const auto positions = lagrange_positions(config);
  const double light = one_way_light_time(config);
  const double exact = config.side_length_km / config.light_speed_km_s;
  const double loc = admissible_window(Loophole::locality, timing, config).window_s;
  const double foc = admissible_window(Loophole::freedom_of_choice, timing, config).window_s;
  const double comb = admissible_window(Loophole::combined, timing, config).window_s;

  std::string out;
  out += fmt::format("Earth-Moon-L4 triangle, side {:.0f} km\n", config.side_length_km);
  for (const auto &e : positions)
    out += fmt::format("  {:<10} ({:>12.1f}, {:>12.1f}, {:>6.1f}) km\n", e.label, e.position_km.x,
                       e.position_km.y, e.position_km.z);
  out += fmt::format("one-way light time  {:.4f} s ({})\n", light,
                     config.use_paper_rounding ? "rounded" : "side/c");
  out += fmt::format("choice-to-setting delay  {:.3f} s (reaction {:.3f} s + system {:.3f} s)\n",
                     timing.delta_t_s, timing.reaction_time_s, timing.system_delay_s);
  out += fmt::format("valid photons must arrive within:\n");
  out += fmt::format("  locality           {:.4f} s of setting preparation\n", loc);
  out += fmt::format("  freedom-of-choice  {:.4f} s of setting preparation\n", foc);
  out += fmt::format("  both               {:.4f} s\n", comb);
  out += "\n";
  out += fmt::format("side_length_km={:.17g}\n", config.side_length_km);
  out += fmt::format("light_speed_km_s={:.17g}\n", config.light_speed_km_s);
  out += fmt::format("use_paper_rounding={}\n", config.use_paper_rounding ? 1 : 0);
  out += fmt::format("light_time_exact_s={:.17g}\n", exact);
  out += fmt::format("light_time_s={:.17g}\n", light);
  out += fmt::format("delta_t_s={:.17g}\n", timing.delta_t_s);
  out += fmt::format("window_locality_s={:.17g}\n", loc);
  out += fmt::format("window_foc_s={:.17g}\n", foc);
  out += fmt::format("window_combined_s={:.17g}\n", comb);
  return out;
}

} // namespace lunabell::spacetime

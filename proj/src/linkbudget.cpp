#include "lunabell/linkbudget.hpp"

#include "lunabell/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace lunabell::linkbudget {

void ArmBudget::validate() const {
  for (double v : {geometric_db, atmospheric_db, optics_db, detector_db}) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw InvalidArgument(fmt::format("arm '{}': loss components must be finite and >= 0, got {}", label, v));
  }
}

double geometric_loss_db(const ApertureLink &link) {
  if (!(link.divergence_rad > 0.0) || !(link.distance_m > 0.0) || !(link.aperture_diameter_m > 0.0))
    throw InvalidArgument("aperture link parameters must all be positive");
  const double spot = link.divergence_rad * link.distance_m;
  return std::max(0.0, 20.0 * std::log10(spot / link.aperture_diameter_m));
}

double arm_total(const ArmBudget &arm) {
  arm.validate();
  return arm.geometric_db + arm.atmospheric_db + arm.optics_db + arm.detector_db;
}

LinkScenario scenario_total(const std::array<ArmBudget, 2> &arms) {
  return {arms, arm_total(arms[0]) + arm_total(arms[1])};
}

double transmittance(double db) {
  if (!(db >= 0.0))
    throw InvalidArgument(fmt::format("attenuation must be >= 0 dB, got {}", db));
  return std::pow(10.0, -db / 10.0);
}

LinkScenario preset(std::string_view name) {
  if (name == "paper_table1") {
    return scenario_total({{
        {"earth", 32.0, 3.0, 6.0, 0.5},
        {"moon", 53.5, 0.0, 6.0, 0.5},
    }});
  }
  if (name == "paper_lab_103db") {
    // 38.5 dB attenuator + 3 dB fiber coupling + 10 dB detector efficiency.
    return scenario_total({{
        {"alice", 38.5, 0.0, 3.0, 10.0},
        {"bob", 38.5, 0.0, 3.0, 10.0},
    }});
  }
  if (name == "interactive_90db") {
    return scenario_total({{
        {"alice", 32.0, 0.0, 3.0, 10.0},
        {"bob", 32.0, 0.0, 3.0, 10.0},
    }});
  }
  throw ConfigError(fmt::format("unknown link preset '{}'", name));
}

std::vector<std::string> preset_names() { return {"paper_table1", "paper_lab_103db", "interactive_90db"}; }

std::string render_report(const LinkScenario &s) {
  const auto &a = s.arms[0];
  const auto &b = s.arms[1];
  std::string out;
  const auto row = [&](std::string_view name, double x, double y) {
    out += fmt::format("| {:<22} | {:>9.1f} dB | {:>9.1f} dB |\n", name, x, y);
  };
  out += fmt::format("| {:<22} | {:>12} | {:>12} |\n", "", a.label, b.label);
  row("Geometry / attenuator", a.geometric_db, b.geometric_db);
  row("Atmosphere", a.atmospheric_db, b.atmospheric_db);
  row("Optical components", a.optics_db, b.optics_db);
  row("Detection efficiency", a.detector_db, b.detector_db);
  row("Total loss", arm_total(a), arm_total(b));
  out += fmt::format("| Two arms total loss: {:.1f} dB (pair transmittance {:.4g})\n", s.pair_loss_db,
                     transmittance(s.pair_loss_db));
  out += "\n";
  for (int i = 0; i < 2; ++i) {
    const auto &arm = s.arms[static_cast<std::size_t>(i)];
    out += fmt::format("arm{}.label={}\n", i, arm.label);
    out += fmt::format("arm{}.geometric_db={:.17g}\n", i, arm.geometric_db);
    out += fmt::format("arm{}.atmospheric_db={:.17g}\n", i, arm.atmospheric_db);
    out += fmt::format("arm{}.optics_db={:.17g}\n", i, arm.optics_db);
    out += fmt::format("arm{}.detector_db={:.17g}\n", i, arm.detector_db);
    out += fmt::format("arm{}.total_db={:.17g}\n", i, arm_total(arm));
  }
  out += fmt::format("pair_loss_db={:.17g}\n", s.pair_loss_db);
  out += fmt::format("pair_transmittance={:.17g}\n", transmittance(s.pair_loss_db));
  return out;
}

} // namespace lunabell::linkbudget

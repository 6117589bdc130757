#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace lunabell::linkbudget {

/// Attenuation of one photon's path, split into geometric, atmospheric, optical and detector terms.
/// For laboratory presets the geometric slot holds the variable attenuator
/// standing in for the channel.
struct ArmBudget {
  std::string label;
  double geometric_db{0.0};
  double atmospheric_db{0.0};
  double optics_db{0.0};
  double detector_db{0.0};

  void validate() const;
};

/// Top-hat beam of full divergence `divergence_rad` captured by a circular
/// aperture `distance_m` away.
struct ApertureLink {
  double divergence_rad{0.0};
  double distance_m{0.0};
  double aperture_diameter_m{0.0};
};

struct LinkScenario {
  std::array<ArmBudget, 2> arms;
  double pair_loss_db{0.0};
};

double geometric_loss_db(const ApertureLink &link);

/// Sum of the four components. Throws on a negative component.
double arm_total(const ArmBudget &arm);

LinkScenario scenario_total(const std::array<ArmBudget, 2> &arms);

/// 10^(-db/10). Throws on negative db.
double transmittance(double db);

/// Built-in scenarios: "paper_table1", "paper_lab_103db", "interactive_90db".
LinkScenario preset(std::string_view name);
std::vector<std::string> preset_names();

/// Per-arm loss table followed by key=value lines.
std::string render_report(const LinkScenario &scenario);

} // namespace lunabell::linkbudget

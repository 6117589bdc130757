#pragma once

#include <array>
#include <string>
#include <string_view>

namespace lunabell::spacetime {

/// Vacuum light speed in km/s.
inline constexpr double kLightSpeedKmS = 299'792.458;
/// Earth-Moon distance used for the L4/L5 triangle, km.
inline constexpr double kEarthMoonKm = 3.8e5;
/// Rounded one-way light time across one triangle side, s.
inline constexpr double kRoundedLightTimeS = 1.28;
/// Default tolerance for interval classification, s.
inline constexpr double kDefaultIntervalTolS = 1e-6;

struct Vec3 {
  double x{0.0};
  double y{0.0};
  double z{0.0};

  friend Vec3 operator-(const Vec3 &a, const Vec3 &b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  double norm() const;
};

/// Labeled point in space (km) and scenario time (s).
struct SpacetimeEvent {
  std::string label;
  Vec3 position_km;
  double time_s{0.0};
};

struct GeometryConfig {
  double side_length_km{kEarthMoonKm};
  double light_speed_km_s{kLightSpeedKmS};
  /// When set, window arithmetic uses the rounded 1.28 s light time
  /// instead of side_length / light_speed.
  bool use_paper_rounding{true};

  void validate() const;
};

/// Delay budget between a human setting choice and the prepared setting.
struct TimingBudget {
  double reaction_time_s{0.45};
  double system_delay_s{0.05};
  /// Total choice-to-prepared delay; bounds reaction + system delay.
  double delta_t_s{0.5};

  void validate() const;
};

enum class IntervalClass { space_like, time_like, light_like };
enum class Loophole { locality, freedom_of_choice, combined };
enum class LagrangePoint { L4, L5 };

std::string_view to_string(IntervalClass c);
std::string_view to_string(Loophole l);

struct LoopholeWindow {
  Loophole loophole{Loophole::combined};
  double window_s{0.0};
};

struct TrialValidity {
  bool locality_ok{false};
  bool foc_ok{false};

  bool combined_ok() const { return locality_ok && foc_ok; }
  friend bool operator==(const TrialValidity &, const TrialValidity &) = default;
};

/// Earth, Moon and source (at L4 or L5) at t = 0, forming an equilateral
/// triangle. The source sits at the origin with both bodies in the xy-plane.
std::array<SpacetimeEvent, 3> lagrange_positions(const GeometryConfig &config,
                                                 LagrangePoint point = LagrangePoint::L4);

/// Light time across one triangle side, honoring use_paper_rounding.
double one_way_light_time(const GeometryConfig &config);

IntervalClass classify_interval(const SpacetimeEvent &e1, const SpacetimeEvent &e2,
                                double light_speed_km_s = kLightSpeedKmS,
                                double tol_s = kDefaultIntervalTolS);

/// Longest prepared-to-detection delay for which a photon still closes the
/// given loophole. Clamped at zero.
LoopholeWindow admissible_window(Loophole loophole, const TimingBudget &timing,
                                 const GeometryConfig &config);

/// Throws InvalidArgument when detection precedes preparation.
TrialValidity validate_trial(double prepared_time_s, double detection_time_s,
                             const TimingBudget &timing, const GeometryConfig &config);

/// Human-readable window summary followed by key=value lines.
std::string window_report(const TimingBudget &timing, const GeometryConfig &config);

} // namespace lunabell::spacetime

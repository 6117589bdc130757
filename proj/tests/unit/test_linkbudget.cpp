#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lunabell/errors.hpp"
#include "lunabell/linkbudget.hpp"

#include <cmath>
#include <random>

using namespace lunabell;
using namespace lunabell::linkbudget;

TEST_CASE("geometric loss for the Earth and Moon receivers") {
  const double earth = geometric_loss_db({3e-6, 3.8e8, 30.0});
  CHECK(earth >= 31.5);
  CHECK(earth <= 32.5);
  CHECK(earth == doctest::Approx(31.5957).epsilon(1e-5));
  const double moon = geometric_loss_db({3e-6, 3.8e8, 2.4});
  CHECK(moon == doctest::Approx(53.5).epsilon(0.5 / 53.5));
  CHECK(moon == doctest::Approx(53.5339).epsilon(1e-5));
}

TEST_CASE("geometric loss clamps when the aperture captures the spot") {
  CHECK(geometric_loss_db({1e-6, 1000.0, 0.001}) == 0.0);
  CHECK(geometric_loss_db({1e-6, 1000.0, 5.0}) == 0.0);
}

TEST_CASE("geometric loss rejects non-positive inputs") {
  CHECK_THROWS_AS(geometric_loss_db({0.0, 1.0, 1.0}), InvalidArgument);
  CHECK_THROWS_AS(geometric_loss_db({1e-6, -1.0, 1.0}), InvalidArgument);
  CHECK_THROWS_AS(geometric_loss_db({1e-6, 1.0, 0.0}), InvalidArgument);
}

TEST_CASE("geometric loss monotonicity and aperture doubling") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (int i = 0; i < 200; ++i) {
    const ApertureLink base{3e-6 * u(rng), 3.8e8 * u(rng), 2.0 * u(rng)};
    const double l0 = geometric_loss_db(base);
    CHECK(geometric_loss_db({base.divergence_rad * 1.1, base.distance_m, base.aperture_diameter_m}) > l0);
    CHECK(geometric_loss_db({base.divergence_rad, base.distance_m * 1.1, base.aperture_diameter_m}) > l0);
    CHECK(geometric_loss_db({base.divergence_rad, base.distance_m, base.aperture_diameter_m * 1.1}) < l0);
    const double doubled = geometric_loss_db({base.divergence_rad, base.distance_m, base.aperture_diameter_m * 2});
    CHECK(l0 - doubled == doctest::Approx(20.0 * std::log10(2.0)).epsilon(1e-9));
  }
}

TEST_CASE("arm totals") {
  CHECK(arm_total({"earth", 32.0, 3.0, 6.0, 0.5}) == 41.5);
  CHECK(arm_total({"moon", 53.5, 0.0, 6.0, 0.5}) == 60.0);
  CHECK(arm_total({"zero", 0, 0, 0, 0}) == 0.0);
  CHECK_THROWS_AS(arm_total({"bad", 1.0, -0.1, 0, 0}), InvalidArgument);
}

TEST_CASE("scenario totals and presets") {
  const auto table = preset("paper_table1");
  CHECK(arm_total(table.arms[0]) == 41.5);
  CHECK(arm_total(table.arms[1]) == 60.0);
  CHECK(table.pair_loss_db == 101.5);

  const auto lab = preset("paper_lab_103db");
  CHECK(arm_total(lab.arms[0]) == 51.5);
  CHECK(arm_total(lab.arms[1]) == 51.5);
  CHECK(lab.pair_loss_db == 103.0);

  CHECK(preset("interactive_90db").pair_loss_db == 90.0);
  CHECK(scenario_total({ArmBudget{"a"}, ArmBudget{"b"}}).pair_loss_db == 0.0);
  CHECK_THROWS_AS(preset("nope"), ConfigError);
}

TEST_CASE("scenario total is permutation invariant") {
  const auto t = preset("paper_table1");
  CHECK(scenario_total({t.arms[1], t.arms[0]}).pair_loss_db == t.pair_loss_db);
}

TEST_CASE("transmittance") {
  CHECK(transmittance(0.0) == 1.0);
  CHECK(transmittance(10.0) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(transmittance(103.0) == doctest::Approx(5.011872336e-11).epsilon(1e-9));
  CHECK_THROWS_AS(transmittance(-1.0), InvalidArgument);

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> db(0.0, 80.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = db(rng);
    const double b = db(rng);
    const double lhs = transmittance(a + b);
    const double rhs = transmittance(a) * transmittance(b);
    CHECK(std::abs(lhs - rhs) / rhs < 1e-12);
  }
}

TEST_CASE("rendered report") {
  const auto text = render_report(preset("paper_table1"));
  CHECK(text.find("pair_loss_db=101.5") != std::string::npos);
  CHECK(text.find("Two arms total loss: 101.5 dB") != std::string::npos);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lunabell/tagstream.hpp"

#include "../support/oracles.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

using namespace lunabell;
using namespace lunabell::tagstream;

TEST_CASE("coincidence examples") {
  const CoincidenceConfig cfg{50};
  CHECK(find_coincidences({}, {}, cfg).empty());

  const std::vector<TimeTag> a{{1000, channel::alice_plus, 0}};
  const std::vector<TimeTag> b{{1030, channel::bob_minus, 0}};
  const auto pairs = find_coincidences(a, b, cfg);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].delta_ps == 30);
  CHECK(pairs[0].alice == a[0]);
  CHECK(pairs[0].bob == b[0]);

  const std::vector<TimeTag> far{{1051, channel::bob_plus, 0}};
  CHECK(find_coincidences(a, far, cfg).empty());
  const std::vector<TimeTag> edge{{950, channel::bob_plus, 0}};
  CHECK(find_coincidences(a, edge, cfg).size() == 1);
}

TEST_CASE("nearest unused partner wins and ties go to the earlier bob tag") {
  const CoincidenceConfig cfg{100};
  const std::vector<TimeTag> a{{1000, 0, 0}, {1010, 0, 0}};
  const std::vector<TimeTag> b{{990, 2, 0}, {1010, 2, 0}};
  const auto pairs = find_coincidences(a, b, cfg);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].bob.time_ps == 990); // tie at |10|, earlier wins
  CHECK(pairs[1].bob.time_ps == 1010);

  const std::vector<TimeTag> one{{1000, 0, 0}};
  const std::vector<TimeTag> two{{960, 2, 0}, {1020, 2, 0}};
  CHECK(find_coincidences(one, two, cfg)[0].bob.time_ps == 1020);
}

TEST_CASE("unsorted input is rejected with the violating position") {
  const std::vector<TimeTag> ok{{1, 0, 0}, {5, 0, 0}};
  const std::vector<TimeTag> bad{{1, 2, 0}, {9, 2, 0}, {3, 2, 0}};
  try {
    (void)find_coincidences(ok, bad, {10});
    FAIL("expected UnsortedStream");
  } catch (const UnsortedStream &e) {
    CHECK(e.stream() == "bob");
    CHECK(e.index() == 2);
  }
  try {
    (void)find_coincidences(bad, ok, {10});
    FAIL("expected UnsortedStream");
  } catch (const UnsortedStream &e) {
    CHECK(e.stream() == "alice");
    CHECK(e.index() == 2);
  }
  CHECK_THROWS_AS(CoincidenceMatcher(CoincidenceConfig{0}), InvalidArgument);
}

TEST_CASE("engine matches the frozen brute-force golden data") {
  std::ifstream golden(LUNABELL_TEST_DATA "/coincidence_golden.txt");
  REQUIRE(golden);
  std::string line;
  int checked = 0;
  while (std::getline(golden, line)) {
    if (line.empty() || line[0] == '#')
      continue;
    std::istringstream in(line);
    std::uint64_t seed = 0;
    std::size_t count = 0;
    std::string digest;
    in >> seed >> count >> digest;
    const auto a = testing::uniform_stream(seed * 2, 1000, 1'000'000, 0);
    const auto b = testing::uniform_stream(seed * 2 + 1, 1000, 1'000'000, 1);
    const auto pairs = find_coincidences(a, b, {500});
    CHECK(pairs.size() == count);
    CHECK(pairs == testing::brute_force_coincidences(a, b, 500));
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(testing::pair_digest(pairs)));
    CHECK(digest == hex);
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("engine matches the oracle on dense, bursty and tied streams") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t na = rng() % 300;
    const std::size_t nb = rng() % 300;
    const std::uint64_t span = 1 + rng() % 20'000;
    const std::uint64_t window = 1 + rng() % 400;
    auto a = testing::uniform_stream(rng(), na, span, 0);
    auto b = testing::uniform_stream(rng(), nb, span, 1);
    const auto got = find_coincidences(a, b, {window});
    CHECK(got == testing::brute_force_coincidences(a, b, window));

    // Properties.
    CHECK(got.size() <= std::min(na, nb));
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(std::abs(got[i].delta_ps) <= static_cast<std::int64_t>(window));
      if (i > 0)
        CHECK(got[i].alice.time_ps >= got[i - 1].alice.time_ps);
    }

    // Shift invariance.
    const std::uint64_t shift = rng() % 1'000'000'000;
    for (auto &t : a)
      t.time_ps += shift;
    for (auto &t : b)
      t.time_ps += shift;
    const auto shifted = find_coincidences(a, b, {window});
    REQUIRE(shifted.size() == got.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(shifted[i].delta_ps == got[i].delta_ps);
      CHECK(shifted[i].alice.time_ps == got[i].alice.time_ps + shift);
    }
  }
}

TEST_CASE("no tag is paired twice") {
  // Unique timestamps so tags can be identified by time alone.
  std::mt19937_64 rng(5);
  std::vector<TimeTag> a, b;
  for (std::uint64_t i = 0; i < 2000; ++i) {
    a.push_back({i * 100 + rng() % 100, 0, 0});
    b.push_back({i * 100 + rng() % 100, 2, 0});
  }
  const auto pairs = find_coincidences(a, b, {300});
  std::set<std::uint64_t> seen_a, seen_b;
  for (const auto &p : pairs) {
    CHECK(seen_a.insert(p.alice.time_ps).second);
    CHECK(seen_b.insert(p.bob.time_ps).second);
  }
  CHECK(pairs.size() > 1000);
}

TEST_CASE("buffer is bounded by window occupancy, not stream length") {
  // Bursts of 50 tags separated by long gaps, repeated many times.
  std::vector<TimeTag> a, b;
  for (std::uint64_t burst = 0; burst < 2000; ++burst) {
    const std::uint64_t base = burst * 1'000'000;
    for (std::uint64_t k = 0; k < 50; ++k) {
      a.push_back({base + k * 3, 0, 0});
      b.push_back({base + k * 3 + 1, 2, 0});
    }
  }
  CoincidenceMatcher m({500});
  std::size_t next = 0;
  auto src = [&]() -> std::optional<TimeTag> {
    if (next == b.size())
      return std::nullopt;
    return b[next++];
  };
  std::size_t n = 0;
  for (const auto &t : a)
    n += m.push_alice(t, src).has_value() ? 1 : 0;
  CHECK(n == a.size());
  CHECK(m.peak_buffered() <= 50);
}

TEST_CASE("accidental rate") {
  CHECK(accidental_rate(1e5, 1e5, 0) == 0.0);
  CHECK(accidental_rate(1e5, 1e5, 500) == doctest::Approx(5.0));
  CHECK(accidental_rate(2e5, 1e5, 500) == doctest::Approx(2.0 * accidental_rate(1e5, 1e5, 500)));
  CHECK(accidental_rate(1e5, 2e5, 500) == doctest::Approx(2.0 * accidental_rate(1e5, 1e5, 500)));
  CHECK_THROWS_AS(accidental_rate(-1.0, 1.0, 1), InvalidArgument);
}

TEST_CASE("histogram: all-zero deltas land in one central bin") {
  std::vector<double> zeros(1000, 0.0);
  const auto h = delta_histogram(zeros, 4.0, 100.0);
  CHECK(h.entries() == 1000);
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    if (h.counts[i] != 0) {
      ++nonzero;
      CHECK(h.bin_center(i) == 0.0);
    }
  }
  CHECK(nonzero == 1);
}

TEST_CASE("histogram: Gaussian FWHM") {
  std::mt19937_64 rng(1234);
  std::normal_distribution<double> g(0.0, 35.0);
  std::vector<double> d(1'000'000);
  for (auto &x : d)
    x = g(rng);
  const auto h = delta_histogram(d, 2.0, 400.0);
  CHECK(h.entries() + h.underflow + h.overflow == d.size());
  const auto w = h.fwhm();
  REQUIRE(w.has_value());
  CHECK(std::abs(*w - testing::gaussian_fwhm(35.0)) <= 2.0);
}

TEST_CASE("histogram: uniform deltas are flat") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-500.0, 500.0);
  std::vector<double> d(400'000);
  for (auto &x : d)
    x = u(rng);
  const auto h = delta_histogram(d, 10.0, 495.0);
  const double mean = static_cast<double>(h.entries()) / static_cast<double>(h.counts.size());
  for (auto c : h.counts)
    CHECK(std::abs(static_cast<double>(c) - mean) < 5.0 * std::sqrt(mean));
}

TEST_CASE("histogram: empty input and bad bins") {
  const auto h = delta_histogram(std::span<const double>{}, 1.0, 10.0);
  CHECK(h.empty());
  CHECK_FALSE(h.fwhm().has_value());
  CHECK_THROWS_AS(delta_histogram(std::span<const double>{}, 0.0, 10.0), InvalidArgument);
}

TEST_CASE("histogram from pairs and raw streams agree for isolated pairs") {
  std::vector<TimeTag> a, b;
  for (std::uint64_t i = 0; i < 100; ++i) {
    a.push_back({i * 1'000'000, 0, 0});
    b.push_back({i * 1'000'000 + (i % 7) * 5, 2, 0});
  }
  const auto pairs = find_coincidences(a, b, {500});
  const auto hp = delta_histogram(pairs, 5.0, 100.0);
  const auto hs = delta_histogram(a, b, 5.0, 100.0);
  CHECK(hp.counts == hs.counts);
  CHECK(hp.entries() == 100);
}

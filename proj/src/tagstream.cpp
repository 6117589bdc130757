#include "lunabell/tagstream.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace lunabell::tagstream {

UnsortedStream::UnsortedStream(std::string stream, std::size_t index)
    : Error(fmt::format("{} stream is not time-sorted at index {}", stream, index)), stream_(std::move(stream)),
      index_(index) {}

std::optional<std::size_t> first_order_violation(std::span<const TimeTag> stream) {
  for (std::size_t i = 1; i < stream.size(); ++i) {
    if (stream[i].time_ps < stream[i - 1].time_ps)
      return i;
  }
  return std::nullopt;
}

CoincidenceMatcher::CoincidenceMatcher(CoincidenceConfig config) : config_(config) {
  if (config_.window_ps == 0)
    throw InvalidArgument("coincidence window must be > 0 ps");
}

void CoincidenceMatcher::evict(Picoseconds alice_time) {
  // Later Alice tags are never earlier than this one, so anything that has
  // fallen behind the window (or is already taken) at the front is dead.
  while (!buffer_.empty() &&
         (buffer_.front().used || buffer_.front().tag.time_ps + config_.window_ps < alice_time))
    buffer_.pop_front();
}

std::optional<CoincidencePair> CoincidenceMatcher::match(const TimeTag &alice) {
  Pending *best = nullptr;
  std::uint64_t best_dist = 0;
  for (auto &p : buffer_) {
    if (p.used)
      continue;
    const std::uint64_t dist =
        p.tag.time_ps >= alice.time_ps ? p.tag.time_ps - alice.time_ps : alice.time_ps - p.tag.time_ps;
    if (dist > config_.window_ps)
      continue;
    if (best == nullptr || dist < best_dist) {
      best = &p;
      best_dist = dist;
    }
  }
  if (best == nullptr)
    return std::nullopt;
  best->used = true;
  return CoincidencePair{alice, best->tag,
                         static_cast<std::int64_t>(best->tag.time_ps) - static_cast<std::int64_t>(alice.time_ps)};
}

std::vector<CoincidencePair> find_coincidences(std::span<const TimeTag> alice, std::span<const TimeTag> bob,
                                               const CoincidenceConfig &config) {
  if (auto i = first_order_violation(alice))
    throw UnsortedStream("alice", *i);
  if (auto i = first_order_violation(bob))
    throw UnsortedStream("bob", *i);

  CoincidenceMatcher matcher(config);
  std::size_t next = 0;
  auto source = [&]() -> std::optional<TimeTag> {
    if (next == bob.size())
      return std::nullopt;
    return bob[next++];
  };
  std::vector<CoincidencePair> pairs;
  for (const auto &a : alice) {
    if (auto p = matcher.push_alice(a, source))
      pairs.push_back(*p);
  }
  return pairs;
}

double accidental_rate(double rate_a_per_s, double rate_b_per_s, Picoseconds window_ps) {
  if (!(rate_a_per_s >= 0.0) || !(rate_b_per_s >= 0.0))
    throw InvalidArgument("singles rates must be >= 0");
  return rate_a_per_s * rate_b_per_s * static_cast<double>(window_ps) * 1e-12;
}

std::uint64_t DeltaHistogram::entries() const {
  std::uint64_t n = 0;
  for (auto c : counts)
    n += c;
  return n;
}

std::optional<double> DeltaHistogram::fwhm() const {
  if (counts.empty())
    return std::nullopt;
  const auto peak_it = std::max_element(counts.begin(), counts.end());
  if (*peak_it == 0)
    return std::nullopt;
  const auto peak = static_cast<std::size_t>(peak_it - counts.begin());
  const double half = static_cast<double>(*peak_it) / 2.0;

  std::optional<double> left;
  for (std::size_t i = peak; i-- > 0;) {
    const double lo = static_cast<double>(counts[i]);
    if (lo < half) {
      const double hi = static_cast<double>(counts[i + 1]);
      left = bin_center(i) + (half - lo) / (hi - lo) * bin_width_ps;
      break;
    }
  }
  std::optional<double> right;
  for (std::size_t i = peak + 1; i < counts.size(); ++i) {
    const double lo = static_cast<double>(counts[i]);
    if (lo < half) {
      const double hi = static_cast<double>(counts[i - 1]);
      right = bin_center(i) - (half - lo) / (hi - lo) * bin_width_ps;
      break;
    }
  }
  if (!left || !right)
    return std::nullopt;
  return *right - *left;
}

namespace {

DeltaHistogram make_histogram(double bin_width_ps, double span_ps) {
  if (!(bin_width_ps > 0.0))
    throw InvalidArgument(fmt::format("bin width must be > 0, got {}", bin_width_ps));
  if (!(span_ps >= 0.0))
    throw InvalidArgument(fmt::format("histogram span must be >= 0, got {}", span_ps));
  const auto half_bins = static_cast<std::int64_t>(std::ceil(span_ps / bin_width_ps - 0.5));
  DeltaHistogram h;
  h.bin_width_ps = bin_width_ps;
  h.first_bin = -half_bins;
  h.counts.assign(static_cast<std::size_t>(2 * half_bins + 1), 0);
  return h;
}

void fill(DeltaHistogram &h, double delta) {
  const auto k = static_cast<std::int64_t>(std::floor(delta / h.bin_width_ps + 0.5));
  const std::int64_t idx = k - h.first_bin;
  if (idx < 0)
    ++h.underflow;
  else if (idx >= static_cast<std::int64_t>(h.counts.size()))
    ++h.overflow;
  else
    ++h.counts[static_cast<std::size_t>(idx)];
}

} // namespace

DeltaHistogram delta_histogram(std::span<const double> deltas_ps, double bin_width_ps, double span_ps) {
  auto h = make_histogram(bin_width_ps, span_ps);
  for (double d : deltas_ps)
    fill(h, d);
  return h;
}

DeltaHistogram delta_histogram(std::span<const CoincidencePair> pairs, double bin_width_ps, double span_ps) {
  auto h = make_histogram(bin_width_ps, span_ps);
  for (const auto &p : pairs)
    fill(h, static_cast<double>(p.delta_ps));
  return h;
}

DeltaHistogram delta_histogram(std::span<const TimeTag> alice, std::span<const TimeTag> bob, double bin_width_ps,
                               double span_ps) {
  if (auto i = first_order_violation(alice))
    throw UnsortedStream("alice", *i);
  if (auto i = first_order_violation(bob))
    throw UnsortedStream("bob", *i);
  auto h = make_histogram(bin_width_ps, span_ps);
  const auto reach = static_cast<Picoseconds>(std::ceil(span_ps));
  std::size_t lo = 0;
  for (const auto &a : alice) {
    while (lo < bob.size() && bob[lo].time_ps + reach < a.time_ps)
      ++lo;
    for (std::size_t j = lo; j < bob.size() && bob[j].time_ps <= a.time_ps + reach; ++j)
      fill(h, static_cast<double>(static_cast<std::int64_t>(bob[j].time_ps) - static_cast<std::int64_t>(a.time_ps)));
  }
  return h;
}

} // namespace lunabell::tagstream

#pragma once

#include "lunabell/errors.hpp"

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lunabell::tagstream {

using Picoseconds = std::uint64_t;

/// Channel assignment: arm in bit 1, outcome sign in bit 0 (0 = +1 port).
namespace channel {
inline constexpr std::uint8_t alice_plus = 0;
inline constexpr std::uint8_t alice_minus = 1;
inline constexpr std::uint8_t bob_plus = 2;
inline constexpr std::uint8_t bob_minus = 3;
inline constexpr std::uint8_t limit = 16;

constexpr std::uint8_t make(int arm, int sign) {
  return static_cast<std::uint8_t>(arm * 2 + (sign > 0 ? 0 : 1));
}
constexpr int sign_of(std::uint8_t ch) { return (ch & 1U) == 0 ? +1 : -1; }
constexpr int arm_of(std::uint8_t ch) { return (ch >> 1U) & 1U; }
} // namespace channel

struct TimeTag {
  Picoseconds time_ps{0};
  std::uint8_t channel{0};
  std::uint8_t flags{0};

  friend bool operator==(const TimeTag &, const TimeTag &) = default;
};

/// Canonical stream order: time, then channel, then flags.
inline bool tag_less(const TimeTag &a, const TimeTag &b) {
  if (a.time_ps != b.time_ps)
    return a.time_ps < b.time_ps;
  if (a.channel != b.channel)
    return a.channel < b.channel;
  return a.flags < b.flags;
}

struct CoincidencePair {
  TimeTag alice;
  TimeTag bob;
  std::int64_t delta_ps{0}; ///< bob - alice

  friend bool operator==(const CoincidencePair &, const CoincidencePair &) = default;
};

struct CoincidenceConfig {
  Picoseconds window_ps{500};
};

/// Raised when a stream handed to the pairing engine is not time-sorted.
class UnsortedStream : public Error {
public:
  UnsortedStream(std::string stream, std::size_t index);
  const std::string &stream() const { return stream_; }
  std::size_t index() const { return index_; }

private:
  std::string stream_;
  std::size_t index_;
};

/// Index of the first tag whose time is earlier than its predecessor.
std::optional<std::size_t> first_order_violation(std::span<const TimeTag> stream);

/// Single forward pass pairing engine.
///
/// Alice tags are taken in stream order; each is paired with the unused Bob
/// tag of smallest |dt| within the window, ties going to the earlier Bob tag.
/// Only Bob tags inside [t_alice - window, t_alice + window] are buffered, so
/// memory is bounded by the densest window span rather than stream length.
class CoincidenceMatcher {
public:
  explicit CoincidenceMatcher(CoincidenceConfig config);

  /// Feed the next Alice tag; Bob tags are pulled from `next_bob` as needed.
  /// `next_bob` returns std::nullopt at end of stream.
  template <typename BobSource>
  std::optional<CoincidencePair> push_alice(const TimeTag &alice, BobSource &next_bob);

  std::size_t peak_buffered() const { return peak_buffered_; }
  std::size_t alice_seen() const { return alice_seen_; }

private:
  struct Pending {
    TimeTag tag;
    bool used{false};
  };

  void evict(Picoseconds alice_time);
  std::optional<CoincidencePair> match(const TimeTag &alice);

  CoincidenceConfig config_;
  std::deque<Pending> buffer_;
  std::optional<TimeTag> lookahead_;
  bool bob_exhausted_{false};
  Picoseconds last_alice_{0};
  Picoseconds last_bob_{0};
  std::size_t alice_seen_{0};
  std::size_t bob_seen_{0};
  std::size_t peak_buffered_{0};
};

/// Whole-stream convenience wrapper. Throws UnsortedStream on unsorted input.
std::vector<CoincidencePair> find_coincidences(std::span<const TimeTag> alice, std::span<const TimeTag> bob,
                                               const CoincidenceConfig &config);

/// Expected uncorrelated coincidences per second, window taken as the full
/// acceptance width.
double accidental_rate(double rate_a_per_s, double rate_b_per_s, Picoseconds window_ps);

/// Time-difference histogram with bins centered on multiples of bin width.
struct DeltaHistogram {
  double bin_width_ps{1.0};
  std::int64_t first_bin{0}; ///< index of counts[0]; bin k is centered on k * bin_width
  std::vector<std::uint64_t> counts;
  std::uint64_t underflow{0};
  std::uint64_t overflow{0};

  double bin_center(std::size_t i) const {
    return static_cast<double>(first_bin + static_cast<std::int64_t>(i)) * bin_width_ps;
  }
  std::uint64_t entries() const;
  bool empty() const { return entries() == 0; }
  /// Linear interpolation at half maximum; nullopt when empty or when the
  /// peak does not fall below half maximum on both sides inside the range.
  std::optional<double> fwhm() const;
};

/// Histogram covering [-span_ps, +span_ps].
DeltaHistogram delta_histogram(std::span<const double> deltas_ps, double bin_width_ps, double span_ps);
DeltaHistogram delta_histogram(std::span<const CoincidencePair> pairs, double bin_width_ps, double span_ps);
/// Start-multistop correlation of every Alice/Bob tag pair within the span.
DeltaHistogram delta_histogram(std::span<const TimeTag> alice, std::span<const TimeTag> bob,
                               double bin_width_ps, double span_ps);

// ---------------------------------------------------------------------------

template <typename BobSource>
std::optional<CoincidencePair> CoincidenceMatcher::push_alice(const TimeTag &alice, BobSource &next_bob) {
  if (alice_seen_ > 0 && alice.time_ps < last_alice_)
    throw UnsortedStream("alice", alice_seen_);
  last_alice_ = alice.time_ps;
  ++alice_seen_;
  evict(alice.time_ps);

  const Picoseconds horizon = alice.time_ps + config_.window_ps;
  while (!bob_exhausted_) {
    if (!lookahead_) {
      lookahead_ = next_bob();
      if (!lookahead_) {
        bob_exhausted_ = true;
        break;
      }
      if (bob_seen_ > 0 && lookahead_->time_ps < last_bob_)
        throw UnsortedStream("bob", bob_seen_);
      last_bob_ = lookahead_->time_ps;
      ++bob_seen_;
    }
    if (lookahead_->time_ps > horizon)
      break;
    if (lookahead_->time_ps + config_.window_ps >= alice.time_ps)
      buffer_.push_back({*lookahead_, false});
    lookahead_.reset();
  }
  if (buffer_.size() > peak_buffered_)
    peak_buffered_ = buffer_.size();
  return match(alice);
}

} // namespace lunabell::tagstream

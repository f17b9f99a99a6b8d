#pragma once

// Deterministic one-way link emulation on a virtual clock.
//
// A channel schedules every record at send time:
//
//   delivery = now + max(min_delay, law()) + size_bytes * 8 / bandwidth
//
// where the default law is base_delay + N(0, jitter_sigma). Ordered channels
// (reliable streams) never drop and clamp delivery to stay FIFO. Datagram
// channels drop each record independently with probability loss_prob.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "teleop/messages.hpp"
#include "teleop/rng.hpp"

namespace teleop {

struct ChannelSpec {
  Micros base_delay_us = 0;
  double jitter_sigma_us = 0.0;
  Micros min_delay_us = 0;
  double loss_prob = 0.0;
  double bandwidth_bps = 0.0;  // 0 = infinite
  bool ordered = true;
  std::uint64_t seed = 0;
};

/// Invariant violations of a ChannelSpec as "field: message" strings.
inline std::vector<std::string> check(const ChannelSpec& spec) {
  std::vector<std::string> errors;
  if (spec.min_delay_us < 0) errors.push_back("min_delay_us: must be >= 0");
  if (spec.base_delay_us < spec.min_delay_us) {
    errors.push_back("base_delay_us: must be >= min_delay_us");
  }
  if (!(spec.jitter_sigma_us >= 0.0) || !std::isfinite(spec.jitter_sigma_us)) {
    errors.push_back("jitter_sigma_us: must be finite and >= 0");
  }
  if (!(spec.loss_prob >= 0.0 && spec.loss_prob <= 1.0)) {
    errors.push_back("loss_prob: must be in [0, 1]");
  }
  if (spec.ordered && spec.loss_prob != 0.0) {
    errors.push_back("loss_prob: ordered channels never drop; must be 0");
  }
  if (!(spec.bandwidth_bps >= 0.0) || !std::isfinite(spec.bandwidth_bps)) {
    errors.push_back("bandwidth_bps: must be finite and >= 0");
  }
  return errors;
}

struct ScheduledDelivery {
  std::uint64_t id = 0;
  Micros send_time_us = 0;
  Micros delivery_time_us = 0;
  std::size_t size_bytes = 0;
  bool dropped = false;

  friend bool operator==(const ScheduledDelivery&,
                         const ScheduledDelivery&) = default;
};

template <class Payload>
struct Delivered {
  ScheduledDelivery info;
  Payload payload;
};

class ChannelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raw one-way delay sample in microseconds, before the min_delay floor.
using DelayLaw = std::function<Micros(Rng&)>;

inline DelayLaw gaussian_delay_law(const ChannelSpec& spec) {
  return [base = spec.base_delay_us, sigma = spec.jitter_sigma_us](Rng& rng) {
    // Always draw, so sigma = 0 consumes the stream like sigma > 0 does.
    const double jitter = sigma * rng.normal();
    return base + static_cast<Micros>(std::llround(jitter));
  };
}

/// One impaired, single-owner link. Payload is whatever the endpoints
/// exchange; byte strings by default.
template <class Payload = std::string>
class EmulatedChannel {
 public:
  /// stream_id separates the random streams of channels sharing a seed.
  explicit EmulatedChannel(ChannelSpec spec, std::uint64_t stream_id = 0)
      : spec_(spec),
        rng_(spec.seed, stream_id),
        law_(gaussian_delay_law(spec)) {
    if (auto errors = check(spec_); !errors.empty()) {
      throw std::invalid_argument("invalid channel spec: " + errors.front());
    }
  }

  const ChannelSpec& spec() const { return spec_; }

  /// Replaces the delay law (e.g. for trace replay).
  void set_delay_law(DelayLaw law) { law_ = std::move(law); }

  ScheduledDelivery send(Payload payload, Micros now_us,
                         std::size_t size_bytes) {
    if (closed_) throw ChannelError("send on closed channel");
    if (last_send_us_ && now_us < *last_send_us_) {
      throw ChannelError("non-monotone send time");
    }
    last_send_us_ = now_us;

    ScheduledDelivery d;
    d.id = next_id_++;
    d.send_time_us = now_us;
    d.size_bytes = size_bytes;

    const Micros propagation = std::max(spec_.min_delay_us, law_(rng_));
    Micros serialization = 0;
    if (spec_.bandwidth_bps > 0.0) {
      serialization = static_cast<Micros>(std::llround(
          static_cast<double>(size_bytes) * 8.0 * 1e6 / spec_.bandwidth_bps));
    }
    d.delivery_time_us = now_us + propagation + serialization;

    ++sent_;
    if (spec_.ordered) {
      d.delivery_time_us = std::max(d.delivery_time_us, last_delivery_us_);
      last_delivery_us_ = d.delivery_time_us;
    } else if (rng_.uniform() < spec_.loss_prob) {
      d.dropped = true;
      ++dropped_;
      return d;
    }
    pending_.push(Entry{d, std::move(payload)});
    return d;
  }

  ScheduledDelivery send(Payload payload, Micros now_us)
    requires requires(const Payload& p) { p.size(); }
  {
    const auto size = payload.size();
    return send(std::move(payload), now_us, size);
  }

  /// Everything due at or before now_us, in delivery order (ties by send
  /// order). Each record is returned once.
  std::vector<Delivered<Payload>> poll(Micros now_us) {
    std::vector<Delivered<Payload>> out;
    while (!pending_.empty() && pending_.top().info.delivery_time_us <= now_us) {
      // top() is const; the payload is moved out just before pop().
      auto& top = const_cast<Entry&>(pending_.top());
      out.push_back(Delivered<Payload>{top.info, std::move(top.payload)});
      pending_.pop();
    }
    delivered_ += out.size();
    return out;
  }

  /// Delivery time of the earliest pending record, if any.
  std::optional<Micros> next_delivery_time() const {
    if (pending_.empty()) return std::nullopt;
    return pending_.top().info.delivery_time_us;
  }

  void close() { closed_ = true; }
  bool closed() const { return closed_; }

  std::size_t in_flight() const { return pending_.size(); }
  std::uint64_t sent() const { return sent_; }
  std::uint64_t dropped() const { return dropped_; }
  std::uint64_t delivered() const { return delivered_; }

 private:
  struct Entry {
    ScheduledDelivery info;
    Payload payload;
  };
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const {
      if (a.info.delivery_time_us != b.info.delivery_time_us) {
        return a.info.delivery_time_us > b.info.delivery_time_us;
      }
      return a.info.id > b.info.id;
    }
  };

  ChannelSpec spec_;
  Rng rng_;
  DelayLaw law_;
  std::priority_queue<Entry, std::vector<Entry>, Later> pending_;
  std::optional<Micros> last_send_us_;
  Micros last_delivery_us_ = std::numeric_limits<Micros>::min();
  std::uint64_t next_id_ = 0;
  std::uint64_t sent_ = 0;
  std::uint64_t dropped_ = 0;
  std::uint64_t delivered_ = 0;
  bool closed_ = false;
};

/// Maps the steady clock onto channel microseconds for real-time mode.
class WallClock {
 public:
  WallClock() : origin_(std::chrono::steady_clock::now()) {}

  Micros now_us() const { return to_micros(std::chrono::steady_clock::now()); }

  Micros to_micros(std::chrono::steady_clock::time_point tp) const {
    return std::chrono::duration_cast<std::chrono::microseconds>(tp - origin_)
        .count();
  }

  std::chrono::steady_clock::time_point to_time_point(Micros us) const {
    return origin_ + std::chrono::microseconds(us);
  }

 private:
  std::chrono::steady_clock::time_point origin_;
};

}  // namespace teleop

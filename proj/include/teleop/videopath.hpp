#pragma once

// Camera -> encode -> transmit -> decode -> display as a per-frame delay
// ledger, plus the clock-on-monitor measurement model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "teleop/messages.hpp"
#include "teleop/netem.hpp"
#include "teleop/rng.hpp"

namespace teleop {

struct VideoPathSpec {
  double fps = 30.0;
  Micros capture_extra_us = 0;
  Micros encode_us = 60'000;
  ChannelSpec net_channel{.base_delay_us = 80'000,
                          .jitter_sigma_us = 25'000.0,
                          .min_delay_us = 40'000,
                          .loss_prob = 0.0,
                          .bandwidth_bps = 0.0,
                          .ordered = false,
                          .seed = 0};
  std::size_t frame_bytes = 20'000;
  Micros decode_us = 20'000;
  double display_hz = 60.0;
  Micros capture_phase_us = 0;
  Micros display_phase_us = 0;
};

inline std::vector<std::string> check(const VideoPathSpec& s) {
  std::vector<std::string> errors;
  if (!(s.fps > 0.0)) errors.push_back("fps: must be > 0");
  if (!(s.display_hz > 0.0)) errors.push_back("display_hz: must be > 0");
  if (s.capture_extra_us < 0) errors.push_back("capture_extra_us: must be >= 0");
  if (s.encode_us < 0) errors.push_back("encode_us: must be >= 0");
  if (s.decode_us < 0) errors.push_back("decode_us: must be >= 0");
  for (const auto& e : check(s.net_channel)) errors.push_back("net_channel." + e);
  return errors;
}

struct VideoFrameRecord {
  std::uint64_t frame_id = 0;
  Micros event_time_us = 0;
  Micros capture_us = 0;
  Micros encode_done_us = 0;
  Micros arrive_us = 0;
  Micros decode_done_us = 0;
  Micros display_us = 0;
  Micros g2g_us = 0;

  friend bool operator==(const VideoFrameRecord&, const VideoFrameRecord&) = default;
};

/// Time of tick k on a grid at rate_hz: ceil(k * 1e6 / rate_hz). Integral
/// rates are computed exactly.
inline Micros grid_time(std::int64_t k, double rate_hz) {
  if (rate_hz == std::floor(rate_hz) && rate_hz < 1e9) {
    const auto rate = static_cast<std::int64_t>(rate_hz);
    const std::int64_t num = k * 1'000'000;
    const std::int64_t q = num / rate;
    return (num % rate > 0) ? q + 1 : q;  // ceil for either sign
  }
  return static_cast<Micros>(
      std::ceil(static_cast<long double>(k) * 1e6L / static_cast<long double>(rate_hz)));
}

/// First tick at or after t_us on the grid phase + grid_time(k, rate_hz).
/// An infinite rate means no quantization.
inline Micros next_tick(Micros t_us, double rate_hz, Micros phase_us = 0) {
  if (std::isinf(rate_hz)) return t_us;
  auto k = static_cast<std::int64_t>(std::floor(
               static_cast<long double>(t_us - phase_us) * rate_hz / 1e6L)) - 1;
  while (phase_us + grid_time(k, rate_hz) < t_us) ++k;
  return phase_us + grid_time(k, rate_hz);
}

/// Display latency of a finished ledger. Throws on an incomplete or
/// non-causal record.
inline Micros g2g_sample(const VideoFrameRecord& r) {
  const Micros stages[] = {r.event_time_us, r.capture_us, r.encode_done_us,
                           r.arrive_us, r.decode_done_us, r.display_us};
  if (!std::is_sorted(std::begin(stages), std::end(stages))) {
    throw std::invalid_argument("g2g_sample: incomplete or non-causal ledger for frame " +
                                std::to_string(r.frame_id));
  }
  return r.display_us - r.event_time_us;
}

/// Runs sorted scene events through the pipeline. Events sharing a capture
/// tick ride the same frame. The video leg goes through `net`; frames it drops
/// produce no record. Each display refresh presents at most one new frame.
template <class Payload>
std::vector<VideoFrameRecord> pipeline_run(const VideoPathSpec& spec,
                                           std::span<const Micros> event_times,
                                           EmulatedChannel<Payload>& net) {
  if (!std::is_sorted(event_times.begin(), event_times.end())) {
    throw std::invalid_argument("pipeline_run: event times must be sorted");
  }
  struct Frame {
    Micros capture_us;
    Micros encode_done_us;
    ScheduledDelivery delivery;
    std::vector<Micros> events;
  };
  std::vector<Frame> frames;
  for (Micros e : event_times) {
    const Micros capture = next_tick(e, spec.fps, spec.capture_phase_us);
    if (frames.empty() || frames.back().capture_us != capture) {
      frames.push_back({capture, capture + spec.capture_extra_us + spec.encode_us, {}, {}});
    }
    frames.back().events.push_back(e);
  }
  for (auto& f : frames) {
    f.delivery = net.send(Payload{}, f.encode_done_us, spec.frame_bytes);
  }
  if (!frames.empty()) net.poll(std::numeric_limits<Micros>::max());

  // Present frames in decode-completion order, one per refresh.
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (!frames[i].delivery.dropped) order.push_back(i);
  }
  auto decode_done = [&](std::size_t i) {
    return frames[i].delivery.delivery_time_us + spec.decode_us;
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return decode_done(a) < decode_done(b);
  });
  std::vector<Micros> display(frames.size(), 0);
  std::optional<Micros> last_display;
  for (std::size_t i : order) {
    Micros ready = decode_done(i);
    if (last_display && !std::isinf(spec.display_hz)) {
      ready = std::max(ready, *last_display + 1);
    }
    display[i] = next_tick(ready, spec.display_hz, spec.display_phase_us);
    last_display = display[i];
  }

  std::vector<VideoFrameRecord> records;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    if (f.delivery.dropped) continue;
    for (Micros e : f.events) {
      VideoFrameRecord r;
      r.frame_id = i;
      r.event_time_us = e;
      r.capture_us = f.capture_us;
      r.encode_done_us = f.encode_done_us;
      r.arrive_us = f.delivery.delivery_time_us;
      r.decode_done_us = decode_done(i);
      r.display_us = display[i];
      r.g2g_us = g2g_sample(r);
      records.push_back(r);
    }
  }
  return records;
}

/// One scene event per frame period, uniformly placed inside the period.
inline std::vector<Micros> uniform_frame_events(double fps, Micros start_us,
                                                Micros end_us, Rng& rng) {
  std::vector<Micros> events;
  for (std::int64_t k = 0;; ++k) {
    const auto lo = start_us + grid_time(k, fps);
    const auto hi = start_us + grid_time(k + 1, fps);
    if (lo >= end_us) break;
    events.push_back(rng.uniform_int(lo, hi - 1));
  }
  return events;
}

/// Reading of the clock-filmed-on-two-monitors method. A running clock
/// updating at clock_hz is shown in front of the vehicle camera; the recording
/// camera samples at camera_hz and sees both the live clock and its image
/// delayed by true_g2g_us. The reading is the difference of the two displayed
/// clock values, so its error is bounded by one clock update period.
inline double clock_method_reading(Micros true_g2g_us, double clock_hz,
                                   double camera_hz, double phase_clock_us,
                                   double phase_camera_us) {
  if (!(clock_hz > 0.0) || !(camera_hz > 0.0)) {
    throw std::invalid_argument("clock_method_reading: rates must be > 0");
  }
  const double g = static_cast<double>(true_g2g_us);
  // First recording-camera sample at or after the delayed image appears.
  double sample = g;
  if (!std::isinf(camera_hz)) {
    const double period = 1e6 / camera_hz;
    sample = phase_camera_us + std::ceil((g - phase_camera_us) / period) * period;
  }
  auto displayed = [&](double t) {
    if (std::isinf(clock_hz)) return t;
    const double period = 1e6 / clock_hz;
    return phase_clock_us + std::floor((t - phase_clock_us) / period) * period;
  };
  return displayed(sample) - displayed(sample - g);
}

}  // namespace teleop

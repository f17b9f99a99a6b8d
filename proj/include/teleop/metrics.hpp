#pragma once

// Measurement procedures: timestamp-echo RTT, summary statistics,
// interarrival jitter, loss, steering lag and distance-at-speed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "teleop/messages.hpp"

namespace teleop {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Summary statistics

struct MetricSummary {
  std::size_t n = 0;
  double mean_us = 0.0;
  double std_us = 0.0;  // sample (n - 1) convention; 0 for n == 1
  Micros min_us = 0;
  Micros p50_us = 0;
  Micros p95_us = 0;
  Micros p99_us = 0;
  Micros max_us = 0;

  friend bool operator==(const MetricSummary&, const MetricSummary&) = default;
};

/// Nearest-rank percentile of an ascending-sorted, non-empty series.
inline Micros nearest_rank(std::span<const Micros> sorted, double pct) {
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

inline MetricSummary summarize(std::span<const Micros> samples) {
  if (samples.empty()) throw MetricError("summarize: empty sample set");
  std::vector<Micros> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());

  MetricSummary s;
  s.n = sorted.size();
  // Integer sum is exact; the only rounding is the final division.
  __int128 total = 0;
  for (Micros v : sorted) total += v;
  const long double mean =
      static_cast<long double>(total) / static_cast<long double>(s.n);
  s.mean_us = static_cast<double>(mean);
  if (s.n > 1) {
    long double ss = 0;
    for (Micros v : sorted) {
      const long double d = static_cast<long double>(v) - mean;
      ss += d * d;
    }
    s.std_us = static_cast<double>(std::sqrt(ss / static_cast<long double>(s.n - 1)));
  }
  s.min_us = sorted.front();
  s.max_us = sorted.back();
  s.p50_us = nearest_rank(sorted, 50);
  s.p95_us = nearest_rank(sorted, 95);
  s.p99_us = nearest_rank(sorted, 99);
  return s;
}

// ---------------------------------------------------------------------------
// Round-trip time from the timestamp echo

/// recv_time_us - echo_ts_us, or nullopt for the "no command yet" sentinel.
/// Both timestamps must come from the same (the sender's) clock.
inline std::optional<Micros> rtt_from_echo(const Telemetry& t, Micros recv_time_us) {
  if (!t.has_echo()) return std::nullopt;
  const Micros rtt = recv_time_us - t.echo_ts_us;
  if (rtt < 0) {
    throw MetricError("rtt_from_echo: negative round trip (" + std::to_string(rtt) +
                      " us); timestamps are not from the same clock");
  }
  return rtt;
}

struct RttSample {
  std::uint64_t seq = 0;
  Micros send_us = 0;
  Micros recv_us = 0;
  Micros rtt_us = 0;

  friend bool operator==(const RttSample&, const RttSample&) = default;
};

/// Collects one RTT sample per command seq; the first echo to arrive wins.
class RttCollector {
 public:
  std::optional<RttSample> add(const Telemetry& t, Micros recv_time_us) {
    const auto rtt = rtt_from_echo(t, recv_time_us);
    if (!rtt) return std::nullopt;
    if (!seen_.insert(t.echo_seq).second) return std::nullopt;
    RttSample s{t.echo_seq, t.echo_ts_us, recv_time_us, *rtt};
    samples_.push_back(s);
    return s;
  }

  const std::vector<RttSample>& samples() const { return samples_; }

  std::vector<Micros> values() const {
    std::vector<Micros> v;
    v.reserve(samples_.size());
    for (const auto& s : samples_) v.push_back(s.rtt_us);
    return v;
  }

 private:
  std::unordered_set<std::uint64_t> seen_;
  std::vector<RttSample> samples_;
};

// ---------------------------------------------------------------------------
// Jitter and loss

/// Smoothed interarrival jitter over per-packet transit times (receive minus
/// send): J += (|D| - J) / 16 for each consecutive transit difference D,
/// starting from J = 0.
inline double interarrival_jitter(std::span<const Micros> transit_us) {
  if (transit_us.size() < 2) {
    throw MetricError("interarrival_jitter: need at least 2 packets");
  }
  double j = 0.0;
  for (std::size_t i = 1; i < transit_us.size(); ++i) {
    const double d = static_cast<double>(transit_us[i] - transit_us[i - 1]);
    j += (std::abs(d) - j) / 16.0;
  }
  return j;
}

inline double loss_rate(std::uint64_t sent, std::uint64_t delivered) {
  if (sent == 0) throw MetricError("loss_rate: nothing sent");
  if (delivered > sent) throw MetricError("loss_rate: delivered exceeds sent");
  return static_cast<double>(sent - delivered) / static_cast<double>(sent);
}

// ---------------------------------------------------------------------------
// Steering lag by normalized cross-correlation

struct TimedSample {
  Micros t_us = 0;
  double value = 0.0;
};

struct SteeringLagEstimate {
  Micros lag_us = 0;
  double correlation_peak = 0.0;
  Micros window_us = 0;
  Micros grid_us = 0;
};

namespace detail {

// Native sample interval as the mean spacing. Robust to bursty arrival, where
// a median of near-zero gaps would blow up the resampling grid.
inline Micros native_interval(std::span<const TimedSample> s) {
  if (s.size() < 2 || s.back().t_us <= s.front().t_us) {
    throw MetricError("steering_lag: series has no time span");
  }
  return std::max<Micros>(1, (s.back().t_us - s.front().t_us) /
                                 static_cast<Micros>(s.size() - 1));
}

/// Linear interpolation of a time-sorted series at ascending grid times.
inline std::vector<double> resample(std::span<const TimedSample> s, Micros start,
                                    Micros step, std::size_t count) {
  std::vector<double> out(count);
  std::size_t j = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const Micros t = start + static_cast<Micros>(k) * step;
    while (j + 1 < s.size() && s[j + 1].t_us <= t) ++j;
    if (j + 1 >= s.size() || s[j].t_us >= t) {
      out[k] = s[j].value;
      continue;
    }
    const auto& a = s[j];
    const auto& b = s[j + 1];
    const double w = static_cast<double>(t - a.t_us) / static_cast<double>(b.t_us - a.t_us);
    out[k] = a.value + w * (b.value - a.value);
  }
  return out;
}

/// Pearson correlation of x[i] and y[i + lag] over the overlap, each side
/// mean-removed over its own window. nullopt if either window is constant.
inline std::optional<double> pearson_at_lag(const std::vector<double>& x,
                                            const std::vector<double>& y,
                                            std::size_t lag) {
  const std::size_t n = x.size() - lag;
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i + lag];
  }
  mx /= n;
  my /= n;
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const long double dx = x[i] - mx;
    const long double dy = y[i + lag] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0 || syy <= 0) return std::nullopt;
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

}  // namespace detail

/// Estimates how far the realized steering trails the command. Both series are
/// resampled onto a common uniform grid (the finer native rate) and the
/// correlation is maximized over lags in [0, window_us]; ties go to the
/// smaller lag.
inline SteeringLagEstimate steering_lag(std::span<const TimedSample> u_series,
                                        std::span<const TimedSample> theta_series,
                                        Micros window_us) {
  if (u_series.size() < 2 || theta_series.size() < 2) {
    throw MetricError("steering_lag: need at least 2 samples per series");
  }
  auto by_time = [](const TimedSample& a, const TimedSample& b) { return a.t_us < b.t_us; };
  if (!std::is_sorted(u_series.begin(), u_series.end(), by_time) ||
      !std::is_sorted(theta_series.begin(), theta_series.end(), by_time)) {
    throw MetricError("steering_lag: series must be time-sorted");
  }
  const Micros start = std::max(u_series.front().t_us, theta_series.front().t_us);
  const Micros end = std::min(u_series.back().t_us, theta_series.back().t_us);
  const Micros span = end - start;
  if (span < 10'000'000) {
    throw MetricError("steering_lag: common span " + std::to_string(span) +
                      " us is shorter than 10 s");
  }
  if (window_us < 0 || window_us > span / 2) {
    throw MetricError("steering_lag: window must be in [0, span/2]");
  }

  const Micros grid = std::min(detail::native_interval(u_series),
                               detail::native_interval(theta_series));
  const auto count = static_cast<std::size_t>(span / grid) + 1;
  const auto u = detail::resample(u_series, start, grid, count);
  const auto theta = detail::resample(theta_series, start, grid, count);
  auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  };
  if (constant(u) || constant(theta)) {
    throw MetricError("steering_lag: degenerate (constant) series, no estimate");
  }

  const auto max_lag = static_cast<std::size_t>(window_us / grid);
  SteeringLagEstimate best{0, -std::numeric_limits<double>::infinity(), window_us, grid};
  bool found = false;
  for (std::size_t lag = 0; lag <= max_lag; ++lag) {
    const auto r = detail::pearson_at_lag(u, theta, lag);
    if (!r) continue;
    if (!found || *r > best.correlation_peak) {
      best.lag_us = static_cast<Micros>(lag) * grid;
      best.correlation_peak = *r;
      found = true;
    }
  }
  if (!found) throw MetricError("steering_lag: no lag with non-degenerate overlap");
  best.correlation_peak = std::clamp(best.correlation_peak, -1.0, 1.0);
  return best;
}

// ---------------------------------------------------------------------------
// Safety arithmetic

inline double kmh_to_mps(double kmh) { return kmh / 3.6; }

/// Distance covered at speed_mps during latency_us.
inline double distance_at_latency(double speed_mps, Micros latency_us) {
  if (speed_mps < 0.0 || latency_us < 0) {
    throw MetricError("distance_at_latency: inputs must be non-negative");
  }
  return speed_mps * static_cast<double>(latency_us) * 1e-6;
}

}  // namespace teleop

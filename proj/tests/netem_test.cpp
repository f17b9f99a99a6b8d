#include "teleop/netem.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include <gtest/gtest.h>

namespace teleop {
namespace {

ChannelSpec fixed_delay(Micros base) {
  ChannelSpec s;
  s.base_delay_us = base;
  return s;
}

TEST(Send, FixedDelay) {
  EmulatedChannel<> ch(fixed_delay(20'000));
  const auto d = ch.send("x", 0);
  EXPECT_FALSE(d.dropped);
  EXPECT_EQ(d.delivery_time_us, 20'000);
}

TEST(Send, BandwidthAddsSerialization) {
  auto spec = fixed_delay(1'000);
  spec.bandwidth_bps = 8'000'000;  // 1 byte per microsecond
  EmulatedChannel<> ch(spec);
  EXPECT_EQ(ch.send(std::string(500, 'a'), 0).delivery_time_us, 1'500);
}

TEST(Send, TotalLossDropsEverything) {
  ChannelSpec spec = fixed_delay(1'000);
  spec.ordered = false;
  spec.loss_prob = 1.0;
  EmulatedChannel<> ch(spec);
  for (Micros t = 0; t < 1000; ++t) EXPECT_TRUE(ch.send("x", t).dropped);
  EXPECT_TRUE(ch.poll(1'000'000).empty());
  EXPECT_EQ(ch.dropped(), 1000u);
}

TEST(Send, OrderedClampsToFifo) {
  EmulatedChannel<> ch(fixed_delay(0));
  std::vector<Micros> raw{30'000, 5'000};
  std::size_t next = 0;
  ch.set_delay_law([&](Rng&) { return raw.at(next++); });
  const auto a = ch.send("a", 0);
  const auto b = ch.send("b", 1'000);
  EXPECT_EQ(a.delivery_time_us, 30'000);
  // Unclamped it would land at 6 ms, ahead of the first record.
  EXPECT_EQ(b.delivery_time_us, 30'000);
  const auto out = ch.poll(30'000);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].payload, "a");
  EXPECT_EQ(out[1].payload, "b");
}

TEST(Send, DatagramMayReorder) {
  ChannelSpec spec = fixed_delay(0);
  spec.ordered = false;
  EmulatedChannel<> ch(spec);
  std::vector<Micros> raw{30'000, 5'000};
  std::size_t next = 0;
  ch.set_delay_law([&](Rng&) { return raw.at(next++); });
  ch.send("a", 0);
  EXPECT_EQ(ch.send("b", 1'000).delivery_time_us, 6'000);
  const auto out = ch.poll(40'000);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].payload, "b");
}

TEST(Send, MinDelayFloor) {
  auto spec = fixed_delay(10'000);
  spec.min_delay_us = 8'000;
  spec.jitter_sigma_us = 50'000;
  spec.seed = 3;
  EmulatedChannel<> ch(spec);
  for (Micros t = 0; t < 20'000; t += 1) {
    const auto d = ch.send("x", t);
    EXPECT_GE(d.delivery_time_us, d.send_time_us + spec.min_delay_us);
  }
}

TEST(Send, Errors) {
  EmulatedChannel<> ch(fixed_delay(10));
  ch.send("x", 100);
  EXPECT_THROW(ch.send("y", 99), ChannelError);
  ch.close();
  EXPECT_THROW(ch.send("z", 200), ChannelError);

  ChannelSpec bad;
  bad.base_delay_us = 5;
  bad.min_delay_us = 10;
  EXPECT_THROW(EmulatedChannel<>{bad}, std::invalid_argument);
  ChannelSpec lossy_stream;
  lossy_stream.loss_prob = 0.1;
  EXPECT_FALSE(check(lossy_stream).empty());
  ChannelSpec over;
  over.ordered = false;
  over.loss_prob = 1.5;
  ASSERT_EQ(check(over).size(), 1u);
  EXPECT_EQ(check(over).front().rfind("loss_prob", 0), 0u);
}

TEST(Poll, EmptyChannel) {
  EmulatedChannel<> ch(fixed_delay(10));
  EXPECT_TRUE(ch.poll(1'000'000).empty());
}

TEST(Poll, BoundaryIsInclusive) {
  EmulatedChannel<> ch(fixed_delay(20'000));
  ch.send("x", 0);
  EXPECT_TRUE(ch.poll(19'999).empty());
  EXPECT_EQ(ch.poll(20'000).size(), 1u);
  EXPECT_TRUE(ch.poll(30'000).empty());
}

// Oracle: the full schedule returned by send(), minus drops, sorted by
// (delivery, send order), must equal the concatenation of incremental polls.
TEST(Poll, ReplayMatchesSchedule) {
  ChannelSpec spec;
  spec.base_delay_us = 20'000;
  spec.jitter_sigma_us = 8'000;
  spec.ordered = false;
  spec.loss_prob = 0.1;
  spec.seed = 99;
  EmulatedChannel<> ch(spec);
  std::vector<ScheduledDelivery> expected;
  for (int i = 0; i < 100; ++i) {
    const auto d = ch.send(std::to_string(i), i * 1'000);
    if (!d.dropped) expected.push_back(d);
  }
  std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
    return std::tie(a.delivery_time_us, a.id) < std::tie(b.delivery_time_us, b.id);
  });

  std::vector<ScheduledDelivery> got;
  for (Micros t = 0; t <= 200'000; t += 777) {
    for (auto& d : ch.poll(t)) {
      EXPECT_EQ(d.payload, std::to_string(d.info.id));
      got.push_back(d.info);
    }
  }
  for (auto& d : ch.poll(1'000'000)) got.push_back(d.info);
  EXPECT_EQ(got, expected);
  EXPECT_EQ(ch.delivered() + ch.dropped(), ch.sent());
}

TEST(Determinism, SameSpecSameSchedule) {
  ChannelSpec spec;
  spec.base_delay_us = 20'000;
  spec.jitter_sigma_us = 3'000;
  spec.ordered = false;
  spec.loss_prob = 0.2;
  spec.seed = 7;
  EmulatedChannel<> a(spec, 4), b(spec, 4), other(spec, 5);
  bool differs = false;
  for (int i = 0; i < 500; ++i) {
    const auto da = a.send("p", i * 100);
    EXPECT_EQ(da, b.send("p", i * 100));
    differs |= !(da == other.send("p", i * 100));
  }
  EXPECT_TRUE(differs) << "stream ids must give independent draws";
}

TEST(DelayStatistics, NoJitterIsExact) {
  EmulatedChannel<> ch(fixed_delay(21'000));
  for (int i = 0; i < 1000; ++i) {
    const auto d = ch.send("x", i * 10'000);
    ASSERT_EQ(d.delivery_time_us - d.send_time_us, 21'000);
  }
}

TEST(DelayStatistics, MeanWithinFourSigmaOverRootN) {
  ChannelSpec spec;
  spec.base_delay_us = 21'000;
  spec.jitter_sigma_us = 3'000;
  spec.ordered = false;
  spec.seed = 11;
  EmulatedChannel<> ch(spec);
  const int n = 20'000;
  double sum = 0, sum_sq = 0;
  for (int i = 0; i < n; ++i) {
    const auto d = ch.send("x", i * 10'000);
    const double delay = static_cast<double>(d.delivery_time_us - d.send_time_us);
    sum += delay;
    sum_sq += delay * delay;
  }
  const double mean = sum / n;
  EXPECT_NEAR(mean, 21'000.0, 4.0 * 3'000.0 / std::sqrt(n));
  const double sd = std::sqrt(sum_sq / n - mean * mean);
  EXPECT_NEAR(sd, 3'000.0, 100.0);
}

TEST(ZeroLoss, LongCampaignDatagramCount) {
  ChannelSpec spec;
  spec.base_delay_us = 13'800;
  spec.jitter_sigma_us = 700;
  spec.ordered = false;
  spec.loss_prob = 0.0;
  spec.seed = 1;
  EmulatedChannel<> ch(spec);
  for (int i = 0; i < 85'068; ++i) ch.send("d", i * 100);
  ch.poll(std::numeric_limits<Micros>::max());
  EXPECT_EQ(ch.dropped(), 0u);
  EXPECT_EQ(ch.delivered(), 85'068u);
}

TEST(Ordered, SequenceStrictlyIncreasing) {
  ChannelSpec spec;
  spec.base_delay_us = 21'000;
  spec.jitter_sigma_us = 15'000;
  spec.seed = 5;
  EmulatedChannel<> ch(spec);
  for (int i = 0; i < 2000; ++i) ch.send(std::to_string(i), i * 1'000);
  int last = -1;
  for (Micros t = 0; t < 3'000'000; t += 5'000) {
    for (auto& d : ch.poll(t)) {
      const int seq = std::stoi(d.payload);
      ASSERT_GT(seq, last);
      last = seq;
    }
  }
  EXPECT_EQ(last, 1999);
}

}  // namespace
}  // namespace teleop

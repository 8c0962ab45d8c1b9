#include <spadion/simulator.hpp>

#include "stats_oracle.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

using namespace spadion;

namespace {

RateBudget only_dark(double rate) {
  RateBudget b;
  b.dark_counts = rate;
  return b;
}

EventStream events_at(std::initializer_list<Tick> ticks, double duration) {
  EventStream s;
  s.duration = duration;
  for (Tick t : ticks) s.events.push_back({t, Source::dark});
  return s;
}

}  // namespace

TEST(SimulateStream, ZeroRatesGiveEmptyStream) {
  Scenario sc;
  sc.budget = RateBudget{};
  EXPECT_TRUE(simulate_stream(sc, true).empty());
  EXPECT_TRUE(simulate_stream(sc, false).empty());
}

TEST(SimulateStream, NoIonRemovesOnlyFluorescence) {
  Scenario sc;
  sc.trial_duration = 1.0;
  const auto s = simulate_stream(sc, false);
  EXPECT_EQ(s.count(Source::fluorescence), 0u);
  EXPECT_GT(s.count(Source::repump), 0u);
  EXPECT_GT(s.count(Source::rf), 0u);
  EXPECT_GT(simulate_stream(sc, true).count(Source::fluorescence), 0u);
}

TEST(SimulateStream, DarkCountMeanOverSeededRuns) {
  // 1.2 kcps for 50 s: Poisson(60000); mean of 100 runs has σ = sqrt(600)
  double sum = 0.0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    sum += static_cast<double>(simulate_rates(only_dark(1200.0), 50.0, seed, no_dead_time()).size());
  }
  EXPECT_NEAR(sum / 100.0, 60000.0, 3.0 * std::sqrt(60000.0 / 100.0));
}

TEST(SimulateStream, NonparalyzableDeadTimeRate) {
  const double tau = 1e-6;
  for (double lambda_tau : {0.01, 0.05, 0.1}) {
    const double lambda = lambda_tau / tau;
    const double duration = 2e6 / lambda;
    const auto s = simulate_rates(only_dark(lambda), duration, 42, DeadTimeModel{tau});
    const double observed = static_cast<double>(s.size()) / duration;
    const double expected = lambda / (1.0 + lambda * tau);
    EXPECT_NEAR(observed / expected, 1.0, 0.02) << "lambda*tau = " << lambda_tau;
    EXPECT_DOUBLE_EQ(nonparalyzable_rate(lambda, tau), expected);
  }
}

TEST(SimulateStream, StrictlyIncreasingWithDeadTimeGaps) {
  Scenario sc;
  sc.trial_duration = 2.0;
  const DeadTimeModel dead{1e-6};
  const auto s = simulate_stream(sc, true, dead);
  ASSERT_TRUE(s.strictly_increasing());
  for (std::size_t i = 1; i < s.size(); ++i) {
    ASSERT_GE(s.events[i].time - s.events[i - 1].time, 1000);
  }
  for (const auto& e : s.events) {
    ASSERT_GE(e.time, 0);
    ASSERT_LT(e.time, s.duration_ticks());
  }
}

TEST(SimulateStream, ZeroDeadTimeStillStrictlyIncreasing) {
  const auto s = simulate_rates(only_dark(5e6), 0.2, 9, no_dead_time());
  EXPECT_TRUE(s.strictly_increasing());
}

TEST(SimulateStream, Deterministic) {
  Scenario sc;
  sc.trial_duration = 1.0;
  sc.rng_seed = 77;
  const auto a = simulate_stream(sc, true);
  const auto b = simulate_stream(sc, true);
  EXPECT_EQ(a, b);
  sc.rng_seed = 78;
  EXPECT_NE(a, simulate_stream(sc, true));
}

TEST(SimulateStream, SuperpositionMatchesSingleSource) {
  // merged streams of λ1 and λ2 against a single stream of λ1+λ2 (KS on gaps)
  const double l1 = 4000.0, l2 = 2500.0, duration = 2.0;
  int rejections = 0;
  for (std::uint64_t run = 0; run < 20; ++run) {
    auto a = simulate_rates(only_dark(l1), duration, derive_seed(1000, run), no_dead_time());
    const auto b = simulate_rates(only_dark(l2), duration, derive_seed(2000, run), no_dead_time());
    a.events.insert(a.events.end(), b.events.begin(), b.events.end());
    std::sort(a.events.begin(), a.events.end(), [](const Event& x, const Event& y) { return x.time < y.time; });
    const auto c = simulate_rates(only_dark(l1 + l2), duration, derive_seed(3000, run), no_dead_time());
    auto gaps = [](const EventStream& s) {
      std::vector<double> g;
      for (std::size_t i = 1; i < s.size(); ++i) g.push_back(static_cast<double>(s.events[i].time - s.events[i - 1].time));
      return g;
    };
    if (oracle::ks_two_sample_pvalue(gaps(a), gaps(c)) <= 0.01) ++rejections;
  }
  // 20 runs at the 1% level: the expected number of rejections is 0.2
  EXPECT_LE(rejections, 1);
}

TEST(SimulateStream, PoissonCountingStatistics) {
  const double rate = 11700.0, gate = 1e-3;
  int passes = 0;
  const int reps = 40;
  for (int rep = 0; rep < reps; ++rep) {
    const auto s = simulate_rates(only_dark(rate), 10.0, derive_seed(555, rep), no_dead_time());
    const auto counts = gate_and_count(s, gate);
    if (oracle::poisson_chi2_pvalue(counts, rate * gate) > 0.01) ++passes;
  }
  EXPECT_GE(passes, static_cast<int>(std::ceil(0.95 * reps)));
}

TEST(GateAndCount, EmptyStreamGivesZeros) {
  const auto counts = gate_and_count(events_at({}, 1.0), 0.1);
  ASSERT_EQ(counts.size(), 10u);
  for (auto c : counts) EXPECT_EQ(c, 0);
}

TEST(GateAndCount, HandCountedWindows) {
  const auto counts = gate_and_count(events_at({1'000'000, 2'000'000, 26'000'000}, 0.05), 0.025);
  EXPECT_EQ(counts, (std::vector<std::int64_t>{2, 1}));
}

TEST(GateAndCount, TrailingPartialWindowDropped) {
  const auto counts = gate_and_count(events_at({1'000'000, 59'000'000}, 0.06), 0.025);
  ASSERT_EQ(counts.size(), 2u);
  EXPECT_EQ(counts[0] + counts[1], 1);
}

TEST(GateAndCount, GateLongerThanStreamRejected) {
  EXPECT_THROW(gate_and_count(events_at({}, 0.01), 0.025), std::invalid_argument);
  EXPECT_THROW(gate_and_count(events_at({}, 0.01), 0.0), std::invalid_argument);
}

TEST(GateAndCount, ReferenceBudgetIonRate) {
  Scenario sc;
  sc.rng_seed = 2024;
  const auto s = simulate_stream(sc, true, no_dead_time());
  const auto counts = gate_and_count(s, 0.025);
  ASSERT_EQ(counts.size(), 2000u);
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::int64_t{0}));
  EXPECT_EQ(total, static_cast<double>(s.size()));
  EXPECT_NEAR(total / 2000.0, 292.5, 3.0 * std::sqrt(292.5 / 2000.0));
}

// ---------------------------------------------------------------------------
// Front end
// ---------------------------------------------------------------------------

namespace {

FrontEndParams fixed_pulse(double volts) {
  FrontEndParams p;
  p.pulse_amplitude_min = p.pulse_amplitude_max = volts;
  return p;
}

}  // namespace

TEST(FrontEnd, SinglePulseWidthAboutOneMicrosecond) {
  auto p = fixed_pulse(0.3);
  p.schmitt_high = 0.08;
  p.schmitt_low = 0.04;
  const double fs = 500e6;
  const auto out = simulate_frontend(events_at({2000}, 10e-6), p, fs, 1);
  ASSERT_EQ(out.digital.size(), 1u);
  EXPECT_EQ(out.digital.events[0].label, Source::dark);
  std::size_t above = 0;
  for (double v : out.waveform) above += v > p.schmitt_low ? 1 : 0;
  const double width = static_cast<double>(above) / fs;
  EXPECT_NEAR(width, 1e-6, 0.5e-6);
}

TEST(FrontEnd, CrossingTimeFollowsEvent) {
  auto p = fixed_pulse(0.3);
  const auto out = simulate_frontend(events_at({3000}, 8e-6), p, 1e9, 1);
  ASSERT_EQ(out.digital.size(), 1u);
  const Tick t = out.digital.events[0].time;
  EXPECT_GE(t, 3000);
  EXPECT_LT(t, 3000 + 200);
}

TEST(FrontEnd, RfBelowThresholdGivesNoCounts) {
  FrontEndParams p;
  p.rf_pickup_amplitude = 0.04;  // far below 50 mV even before filter attenuation
  const auto out = simulate_frontend(events_at({}, 20e-6), p, 1e9, 1);
  EXPECT_TRUE(out.digital.empty());
}

TEST(FrontEnd, RfAboveThresholdCountsEveryPeriod) {
  FrontEndParams p;
  p.rf_pickup_amplitude = 2.0;
  const double fs = 2e9, duration = 20e-6;
  const auto out = simulate_frontend(events_at({}, duration), p, fs, 1);

  // first-order low-pass steady state: |H| = 1/sqrt(1 + (f/fc)²)
  const double gain = 1.0 / std::sqrt(1.0 + std::pow(p.rf_frequency / p.lowpass_cutoff, 2));
  ASSERT_GT(gain * p.rf_pickup_amplitude, p.schmitt_high);
  // a sinusoid whose peak clears the high threshold and whose trough falls
  // below the low threshold fires once per period
  const double periods = duration * p.rf_frequency;
  EXPECT_GE(static_cast<double>(out.digital.size()), std::floor(periods) - 2.0);
  EXPECT_LE(static_cast<double>(out.digital.size()), std::ceil(periods) + 1.0);
  for (const auto& e : out.digital.events) EXPECT_EQ(e.label, Source::rf);
  EXPECT_TRUE(out.digital.strictly_increasing());
}

TEST(FrontEnd, NonOverlappingPulsesPreserveCount) {
  const auto events = simulate_rates(only_dark(2000.0), 0.25, 5, DeadTimeModel{1e-6});
  ASSERT_GT(events.size(), 300u);
  const auto out = simulate_frontend(events, FrontEndParams{}, 20e6, 5);
  const double ratio = static_cast<double>(out.digital.size()) / static_cast<double>(events.size());
  EXPECT_NEAR(ratio, 1.0, 0.01);
}

TEST(FrontEnd, Deterministic) {
  const auto events = simulate_rates(only_dark(20000.0), 0.01, 5, DeadTimeModel{});
  FrontEndParams p;
  p.rf_pickup_amplitude = 0.3;
  const auto a = simulate_frontend(events, p, 50e6, 9);
  const auto b = simulate_frontend(events, p, 50e6, 9);
  EXPECT_EQ(a.waveform, b.waveform);
  EXPECT_EQ(a.digital, b.digital);
}

TEST(FrontEnd, SampleRateTooLowRejected) {
  EXPECT_THROW(simulate_frontend(events_at({}, 1e-5), FrontEndParams{}, 10e6, 1), std::invalid_argument);
}

TEST(FrontEnd, InvalidThresholdsRejected) {
  FrontEndParams p;
  p.schmitt_low = p.schmitt_high;
  EXPECT_THROW(simulate_frontend(events_at({}, 1e-5), p, 1e9, 1), std::invalid_argument);
}

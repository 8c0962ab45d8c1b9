#pragma once

// Timestamped detector event generation: superposed homogeneous Poisson
// sources, nonparalyzable dead time, 1 ns quantization, and an optional
// analog front end (quench pulse -> first-order low-pass -> Schmitt trigger).

#include <spadion/model.hpp>
#include <spadion/rng.hpp>
#include <spadion/units.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace spadion {

struct Event {
  Tick time = 0;
  Source label = Source::dark;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Events on [0, duration), sorted by time, strictly increasing.
struct EventStream {
  std::vector<Event> events;
  double duration = 0.0;  // s

  std::size_t size() const noexcept { return events.size(); }
  bool empty() const noexcept { return events.empty(); }
  Tick duration_ticks() const { return static_cast<Tick>(std::llround(duration / seconds_per_tick)); }

  std::size_t count(Source s) const {
    return static_cast<std::size_t>(
        std::count_if(events.begin(), events.end(), [s](const Event& e) { return e.label == s; }));
  }

  bool strictly_increasing() const {
    return std::adjacent_find(events.begin(), events.end(),
                              [](const Event& a, const Event& b) { return b.time <= a.time; }) == events.end();
  }

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

struct DeadTimeModel {
  enum class Mode { nonparalyzable };

  double dead_time = 1.0 * units::us;
  Mode mode = Mode::nonparalyzable;

  void validate() const {
    if (!(dead_time >= 0.0)) throw std::invalid_argument("DeadTimeModel: dead_time must be >= 0");
  }

  /// Minimum separation in ticks. Coincidences inside one 1 ns tick cannot
  /// be resolved, so the floor is one tick even for dead_time = 0.
  Tick min_separation() const { return std::max<Tick>(1, std::llround(dead_time / seconds_per_tick)); }

  friend bool operator==(const DeadTimeModel&, const DeadTimeModel&) = default;
};

inline DeadTimeModel no_dead_time() { return DeadTimeModel{0.0}; }

/// Expected observed rate of a nonparalyzable counter.
inline double nonparalyzable_rate(double true_rate, double dead_time) { return true_rate / (1.0 + true_rate * dead_time); }

namespace detail {

inline void append_poisson_arrivals(std::vector<Event>& out, double rate, double duration, Source label,
                                    std::uint64_t seed) {
  if (!(rate > 0.0)) return;
  Engine rng = make_engine(seed);
  std::exponential_distribution<double> gap(rate);
  const Tick end = static_cast<Tick>(std::llround(duration / seconds_per_tick));
  double t = gap(rng);
  while (t < duration) {
    const Tick tick = static_cast<Tick>(std::floor(t / seconds_per_tick));
    if (tick < end) out.push_back({tick, label});
    t += gap(rng);
  }
}

inline void apply_dead_time(std::vector<Event>& events, const DeadTimeModel& dead) {
  const Tick sep = dead.min_separation();
  std::size_t kept = 0;
  Tick last = 0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (kept == 0 || events[i].time - last >= sep) {
      last = events[i].time;
      events[kept++] = events[i];
    }
  }
  events.resize(kept);
}

}  // namespace detail

/// Merges the given per-source rates into one stream. Each source draws from
/// its own child seed of `seed`.
inline EventStream simulate_rates(const RateBudget& rates, double duration, std::uint64_t seed,
                                  const DeadTimeModel& dead) {
  rates.validate();
  dead.validate();
  if (!(duration > 0.0)) throw std::invalid_argument("simulate: duration must be > 0");
  EventStream stream;
  stream.duration = duration;
  for (Source s : all_sources) {
    detail::append_poisson_arrivals(stream.events, rates[s], duration, s,
                                    derive_seed(seed, static_cast<std::uint64_t>(s)));
  }
  std::sort(stream.events.begin(), stream.events.end(), [](const Event& a, const Event& b) {
    return a.time != b.time ? a.time < b.time : a.label < b.label;
  });
  detail::apply_dead_time(stream.events, dead);
  return stream;
}

/// One trial of the scenario with or without the ion. Without the ion the
/// fluorescence source is switched off; backgrounds are unchanged.
inline EventStream simulate_stream(const Scenario& scenario, bool ion_present, const DeadTimeModel& dead = {}) {
  scenario.validate();
  RateBudget rates = scenario.budget;
  if (!ion_present) rates.fluorescence = 0.0;
  return simulate_rates(rates, scenario.trial_duration, scenario.rng_seed, dead);
}

/// Counts per consecutive window of length `gate` over [0, duration). A
/// trailing partial window is dropped.
inline std::vector<std::int64_t> gate_and_count(const EventStream& stream, double gate) {
  if (!(gate > 0.0)) throw std::invalid_argument("gate_and_count: gate must be > 0");
  const Tick gate_ticks = static_cast<Tick>(std::llround(gate / seconds_per_tick));
  if (gate_ticks <= 0) throw std::invalid_argument("gate_and_count: gate shorter than timestamp resolution");
  const Tick windows = stream.duration_ticks() / gate_ticks;
  if (windows == 0) throw std::invalid_argument("gate_and_count: gate longer than stream duration");
  std::vector<std::int64_t> counts(static_cast<std::size_t>(windows), 0);
  const Tick covered = windows * gate_ticks;
  for (const auto& e : stream.events) {
    if (e.time < 0 || e.time >= covered) continue;
    ++counts[static_cast<std::size_t>(e.time / gate_ticks)];
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Analog front end
// ---------------------------------------------------------------------------

struct FrontEndParams {
  double quench_resistance = 300e3;  // ohm; recorded, no behavioural effect
  double pulse_amplitude_min = 100.0 * units::mv;
  double pulse_amplitude_max = 500.0 * units::mv;
  double pulse_time_constant = 0.5 * units::us;
  double lowpass_cutoff = 1.6 * units::mhz;
  double rf_frequency = 17.7 * units::mhz;
  double rf_pickup_amplitude = 0.0;  // V at the filter input
  double schmitt_high = 50.0 * units::mv;
  double schmitt_low = 25.0 * units::mv;

  void validate() const {
    if (!(schmitt_high > schmitt_low && schmitt_low > 0.0)) {
      throw std::invalid_argument("FrontEndParams: need schmitt_high > schmitt_low > 0");
    }
    if (!(lowpass_cutoff > 0.0)) throw std::invalid_argument("FrontEndParams: lowpass_cutoff must be > 0");
    if (!(pulse_amplitude_min >= 0.0 && pulse_amplitude_max >= pulse_amplitude_min)) {
      throw std::invalid_argument("FrontEndParams: bad pulse amplitude range");
    }
    if (!(rf_pickup_amplitude >= 0.0)) throw std::invalid_argument("FrontEndParams: rf amplitude must be >= 0");
    if (!(pulse_time_constant > 0.0)) throw std::invalid_argument("FrontEndParams: pulse_time_constant must be > 0");
    if (!(rf_frequency >= 0.0)) throw std::invalid_argument("FrontEndParams: rf_frequency must be >= 0");
  }

  friend bool operator==(const FrontEndParams&, const FrontEndParams&) = default;
};

struct FrontEndResult {
  double sample_rate = 0.0;
  std::vector<double> waveform;  // filtered volts at t = i / sample_rate
  EventStream digital;
};

inline constexpr std::size_t max_frontend_samples = 200'000'000;

/// Renders the analog waveform for `events` and digitizes it with the
/// Schmitt trigger. Digital events inherit the label of the most recent
/// input event still ringing (within 5 pulse + filter time constants);
/// crossings with no such event are attributed to rf pickup.
inline FrontEndResult simulate_frontend(const EventStream& events, const FrontEndParams& params, double sample_rate,
                                        std::uint64_t seed) {
  params.validate();
  if (!(sample_rate >= 10.0 * params.lowpass_cutoff)) {
    throw std::invalid_argument("simulate_frontend: sample_rate must be >= 10x lowpass_cutoff");
  }
  const double samples_f = std::floor(events.duration * sample_rate);
  if (samples_f > static_cast<double>(max_frontend_samples)) {
    throw std::length_error("simulate_frontend: waveform too long; shorten the stream");
  }
  const auto samples = static_cast<std::size_t>(samples_f);
  const double dt = 1.0 / sample_rate;
  const double pulse_decay = std::exp(-dt / params.pulse_time_constant);
  const double filter_tau = 1.0 / (2.0 * pi * params.lowpass_cutoff);
  const double alpha = 1.0 - std::exp(-dt / filter_tau);
  const double omega = 2.0 * pi * params.rf_frequency;
  const double attribution_window = 5.0 * (params.pulse_time_constant + filter_tau);

  Engine rng = make_engine(seed);
  std::uniform_real_distribution<double> amplitude(params.pulse_amplitude_min, params.pulse_amplitude_max);

  FrontEndResult out;
  out.sample_rate = sample_rate;
  out.waveform.resize(samples);
  out.digital.duration = events.duration;

  double pulse = 0.0;
  double filtered = 0.0;
  double previous = 0.0;
  bool armed = true;
  std::size_t next = 0;
  const Event* latest = nullptr;
  for (std::size_t n = 0; n < samples; ++n) {
    const double t = static_cast<double>(n) * dt;
    pulse *= pulse_decay;
    while (next < events.events.size() && tick_to_seconds(events.events[next].time) <= t) {
      const double age = t - tick_to_seconds(events.events[next].time);
      pulse += amplitude(rng) * std::exp(-age / params.pulse_time_constant);
      latest = &events.events[next];
      ++next;
    }
    const double raw = pulse + params.rf_pickup_amplitude * std::sin(omega * t);
    filtered += alpha * (raw - filtered);
    out.waveform[n] = filtered;

    if (armed && filtered >= params.schmitt_high) {
      armed = false;
      // linear interpolation of the crossing between samples n-1 and n
      double tc = t;
      if (n > 0 && filtered != previous) tc = t - dt * (filtered - params.schmitt_high) / (filtered - previous);
      Tick tick = static_cast<Tick>(std::floor(tc / seconds_per_tick));
      if (!out.digital.events.empty()) tick = std::max(tick, out.digital.events.back().time + 1);
      Source label = Source::rf;
      if (latest != nullptr && tc - tick_to_seconds(latest->time) <= attribution_window) label = latest->label;
      out.digital.events.push_back({tick, label});
    } else if (!armed && filtered <= params.schmitt_low) {
      armed = true;
    }
    previous = filtered;
  }
  return out;
}

}  // namespace spadion

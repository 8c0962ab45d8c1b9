#pragma once

// Ion/no-ion discrimination: fixed-window optimal thresholding and adaptive
// Bayesian sequential detection with a variable gate time.

#include <spadion/model.hpp>
#include <spadion/parallel.hpp>
#include <spadion/rng.hpp>
#include <spadion/simulator.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace spadion {

// ---------------------------------------------------------------------------
// Fixed-window thresholding
// ---------------------------------------------------------------------------

/// Counts strictly above `threshold` are classified as ion.
struct ThresholdResult {
  std::int64_t threshold = 0;
  double fidelity = 0.5;
  double miss_rate = 0.0;         // ion classified as empty
  double false_alarm_rate = 0.0;  // empty classified as ion
  double window = 0.0;
  std::vector<std::int64_t> histogram_ion;    // index = count
  std::vector<std::int64_t> histogram_empty;
};

inline std::vector<std::int64_t> count_histogram(std::span<const std::int64_t> counts, std::size_t bins) {
  std::vector<std::int64_t> h(bins, 0);
  for (auto c : counts) {
    if (c < 0) throw std::invalid_argument("count_histogram: negative count");
    ++h[static_cast<std::size_t>(c)];
  }
  return h;
}

/// Scans every integer threshold and returns the equal-prior optimum; ties
/// go to the smaller threshold.
inline ThresholdResult threshold_fidelity(std::span<const std::int64_t> ion_counts,
                                          std::span<const std::int64_t> empty_counts, double window) {
  if (ion_counts.empty() || empty_counts.empty()) throw std::invalid_argument("threshold_fidelity: empty input");
  std::int64_t max_count = 0;
  for (auto c : ion_counts) max_count = std::max(max_count, c);
  for (auto c : empty_counts) max_count = std::max(max_count, c);

  ThresholdResult out;
  out.window = window;
  const auto bins = static_cast<std::size_t>(max_count) + 1;
  out.histogram_ion = count_histogram(ion_counts, bins);
  out.histogram_empty = count_histogram(empty_counts, bins);

  const double n_ion = static_cast<double>(ion_counts.size());
  const double n_empty = static_cast<double>(empty_counts.size());
  std::int64_t ion_at_or_below = 0;
  std::int64_t empty_at_or_below = 0;
  out.fidelity = -1.0;
  for (std::size_t k = 0; k < bins; ++k) {
    ion_at_or_below += out.histogram_ion[k];
    empty_at_or_below += out.histogram_empty[k];
    const double miss = static_cast<double>(ion_at_or_below) / n_ion;
    const double false_alarm = static_cast<double>(static_cast<std::int64_t>(empty_counts.size()) - empty_at_or_below) / n_empty;
    const double f = 1.0 - 0.5 * (miss + false_alarm);
    if (f > out.fidelity) {
      out.fidelity = f;
      out.threshold = static_cast<std::int64_t>(k);
      out.miss_rate = miss;
      out.false_alarm_rate = false_alarm;
    }
  }
  return out;
}

namespace detail {

/// P(N <= k) for k = 0..k_max, N ~ Poisson(mean).
inline std::vector<double> poisson_cdf_table(double mean, std::int64_t k_max) {
  std::vector<double> cdf(static_cast<std::size_t>(k_max) + 1, 0.0);
  if (mean == 0.0) {
    std::fill(cdf.begin(), cdf.end(), 1.0);
    return cdf;
  }
  double acc = 0.0;
  for (std::int64_t k = 0; k <= k_max; ++k) {
    const double kd = static_cast<double>(k);
    acc += std::exp(kd * std::log(mean) - mean - std::lgamma(kd + 1.0));
    cdf[static_cast<std::size_t>(k)] = std::min(acc, 1.0);
  }
  return cdf;
}

}  // namespace detail

struct AnalyticThreshold {
  std::int64_t threshold = 0;
  double fidelity = 0.5;
};

/// Exact Poisson tail sums for every threshold; closed-form counterpart of
/// threshold_fidelity.
inline AnalyticThreshold analytic_threshold_fidelity(double ion_rate, double empty_rate, double window) {
  if (!(empty_rate >= 0.0 && ion_rate >= empty_rate)) {
    throw std::invalid_argument("analytic_threshold_fidelity: need ion_rate >= empty_rate >= 0");
  }
  if (!(window > 0.0)) throw std::invalid_argument("analytic_threshold_fidelity: window must be > 0");
  const double mu1 = ion_rate * window;
  const double mu0 = empty_rate * window;
  const auto k_max = static_cast<std::int64_t>(std::ceil(mu1 + 12.0 * std::sqrt(mu1) + 30.0));
  const auto cdf1 = detail::poisson_cdf_table(mu1, k_max);
  const auto cdf0 = detail::poisson_cdf_table(mu0, k_max);
  AnalyticThreshold best{0, -1.0};
  for (std::int64_t k = 0; k <= k_max; ++k) {
    const auto i = static_cast<std::size_t>(k);
    // 1 - (P1(N<=k) + P0(N>k))/2, arranged so identical rates give exactly 0.5
    const double f = 0.5 + 0.5 * (cdf0[i] - cdf1[i]);
    if (f > best.fidelity) best = {k, f};
  }
  return best;
}

struct ThresholdCurvePoint {
  double window = 0.0;
  AnalyticThreshold result;
};

inline std::vector<ThresholdCurvePoint> threshold_curve(double ion_rate, double empty_rate,
                                                        std::span<const double> windows) {
  std::vector<ThresholdCurvePoint> out;
  out.reserve(windows.size());
  for (double w : windows) out.push_back({w, analytic_threshold_fidelity(ion_rate, empty_rate, w)});
  return out;
}

// ---------------------------------------------------------------------------
// Wald bound
// ---------------------------------------------------------------------------

struct WaldBound {
  double mean_time_ion = 0.0;    // s
  double mean_time_empty = 0.0;  // s
  double average() const { return 0.5 * (mean_time_ion + mean_time_empty); }
};

/// Per-second KL divergence of a Poisson process at `rate` from one at `other`.
inline double poisson_kl_rate(double rate, double other) { return rate * std::log(rate / other) - rate + other; }

/// Wald's approximation ln((1-a)/a)/D for the mean decision time of a
/// sequential test with symmetric error `error`.
inline WaldBound wald_bound(double ion_rate, double empty_rate, double error) {
  if (!(empty_rate > 0.0 && ion_rate > empty_rate)) throw std::invalid_argument("wald_bound: need ion_rate > empty_rate > 0");
  if (!(error > 0.0 && error < 0.5)) throw std::invalid_argument("wald_bound: error must lie in (0, 0.5)");
  const double log_odds = std::log((1.0 - error) / error);
  return {log_odds / poisson_kl_rate(ion_rate, empty_rate), log_odds / poisson_kl_rate(empty_rate, ion_rate)};
}

// ---------------------------------------------------------------------------
// Adaptive Bayesian detection
// ---------------------------------------------------------------------------

struct BayesianConfig {
  double target_posterior = 0.99;
  double sub_bin = 100e-6;  // s
  double max_time = 50.0 * units::ms;
  double prior_ion = 0.5;
  bool record_trace = true;

  void validate() const {
    if (!(target_posterior > 0.5 && target_posterior < 1.0)) {
      throw std::invalid_argument("BayesianConfig: target_posterior must lie in (0.5, 1)");
    }
    if (!(sub_bin > 0.0 && sub_bin <= max_time)) throw std::invalid_argument("BayesianConfig: need 0 < sub_bin <= max_time");
    if (!(prior_ion > 0.0 && prior_ion < 1.0)) throw std::invalid_argument("BayesianConfig: prior_ion must lie in (0,1)");
  }
};

enum class Decision { ion, no_ion, undecided };

struct PosteriorSample {
  double time = 0.0;           // s, end of the sub-bin
  double posterior_ion = 0.5;
};

struct DetectionOutcome {
  Decision decision = Decision::undecided;
  double stopping_time = 0.0;
  /// Posterior of the decided hypothesis (of the MAP one when undecided).
  double final_posterior = 0.5;
  double posterior_ion = 0.5;
  /// Accumulated log-likelihood ratio ln P(data|ion)/P(data|empty).
  double log_likelihood_ratio = 0.0;
  std::size_t bins = 0;
  std::vector<PosteriorSample> posterior_trace;

  /// Undecided outcomes fall back to the MAP hypothesis; exact ties go to no_ion.
  Decision map_decision() const {
    if (decision != Decision::undecided) return decision;
    return posterior_ion > 0.5 ? Decision::ion : Decision::no_ion;
  }
};

/// Log-likelihood ratio of `total_counts` over `bins` sub-bins of width
/// `sub_bin`. Depends on the data only through the totals.
inline double poisson_log_likelihood_ratio(std::int64_t total_counts, std::size_t bins, double ion_rate,
                                           double empty_rate, double sub_bin) {
  if (ion_rate == empty_rate) return 0.0;
  const double exposure = static_cast<double>(bins) * sub_bin;
  if (empty_rate == 0.0) {
    return total_counts > 0 ? std::numeric_limits<double>::infinity() : -ion_rate * exposure;
  }
  return static_cast<double>(total_counts) * std::log(ion_rate / empty_rate) - (ion_rate - empty_rate) * exposure;
}

inline double logistic(double log_odds) {
  if (log_odds == std::numeric_limits<double>::infinity()) return 1.0;
  if (log_odds == -std::numeric_limits<double>::infinity()) return 0.0;
  return 1.0 / (1.0 + std::exp(-log_odds));
}

inline void validate_detection_rates(double ion_rate, double empty_rate) {
  if (!(empty_rate >= 0.0 && ion_rate >= empty_rate)) throw std::invalid_argument("bayesian_detect: need ion_rate >= empty_rate >= 0");
}

/// Sequential update over pre-binned counts. Stops as soon as either
/// posterior reaches the target, or when the bins run out.
inline DetectionOutcome bayesian_detect_counts(std::span<const std::int64_t> bin_counts, double ion_rate,
                                               double empty_rate, const BayesianConfig& config) {
  config.validate();
  validate_detection_rates(ion_rate, empty_rate);
  const double prior_log_odds = std::log(config.prior_ion / (1.0 - config.prior_ion));
  const double stop_log_odds = std::log(config.target_posterior / (1.0 - config.target_posterior));

  DetectionOutcome out;
  out.posterior_ion = config.prior_ion;
  std::int64_t total = 0;
  for (std::size_t i = 0; i < bin_counts.size(); ++i) {
    total += bin_counts[i];
    const double llr = poisson_log_likelihood_ratio(total, i + 1, ion_rate, empty_rate, config.sub_bin);
    const double log_odds = prior_log_odds + llr;
    out.log_likelihood_ratio = llr;
    out.posterior_ion = logistic(log_odds);
    out.bins = i + 1;
    out.stopping_time = static_cast<double>(i + 1) * config.sub_bin;
    if (config.record_trace) out.posterior_trace.push_back({out.stopping_time, out.posterior_ion});
    if (log_odds >= stop_log_odds) {
      out.decision = Decision::ion;
      break;
    }
    if (log_odds <= -stop_log_odds) {
      out.decision = Decision::no_ion;
      break;
    }
  }
  out.final_posterior = out.map_decision() == Decision::ion ? out.posterior_ion : 1.0 - out.posterior_ion;
  return out;
}

/// Counts per sub-bin over [0, min(max_time, stream duration)).
inline std::vector<std::int64_t> bin_stream(const EventStream& stream, double sub_bin, double max_time) {
  const Tick width = static_cast<Tick>(std::llround(sub_bin / seconds_per_tick));
  if (width <= 0) throw std::invalid_argument("bin_stream: sub_bin shorter than timestamp resolution");
  const Tick horizon = std::min(stream.duration_ticks(), static_cast<Tick>(std::llround(max_time / seconds_per_tick)));
  std::vector<std::int64_t> counts(static_cast<std::size_t>(horizon / width), 0);
  const Tick covered = static_cast<Tick>(counts.size()) * width;
  for (const auto& e : stream.events) {
    if (e.time >= covered) break;
    ++counts[static_cast<std::size_t>(e.time / width)];
  }
  return counts;
}

inline DetectionOutcome bayesian_detect(const EventStream& stream, double ion_rate, double empty_rate,
                                        const BayesianConfig& config) {
  config.validate();
  const auto counts = bin_stream(stream, config.sub_bin, config.max_time);
  return bayesian_detect_counts(counts, ion_rate, empty_rate, config);
}

// ---------------------------------------------------------------------------
// Fidelity vs mean detection time
// ---------------------------------------------------------------------------

struct FidelityOptions {
  double sub_bin = 100e-6;  // s
  double max_time = 50.0 * units::ms;
  double prior_ion = 0.5;
  DeadTimeModel dead_time{};
  /// Fixed windows for the analytic thresholding comparison curve.
  std::vector<double> threshold_windows;
};

struct FidelityPoint {
  double target = 0.0;
  double achieved_fidelity = 0.0;  // equal-prior mean of the two accuracies
  double accuracy_ion = 0.0;
  double accuracy_empty = 0.0;
  double mean_time = 0.0;  // s, equal-weight mean over both hypotheses
  double mean_time_ion = 0.0;
  double mean_time_empty = 0.0;
  /// Mean posterior of the chosen hypothesis; equals the expected accuracy
  /// when inference and generating models agree.
  double mean_final_posterior = 0.0;
  double undecided_fraction = 0.0;
  double wald_mean_time = std::numeric_limits<double>::quiet_NaN();
  std::size_t trials = 0;  // per hypothesis
};

struct FidelityCurve {
  double ion_rate = 0.0;
  double empty_rate = 0.0;
  std::vector<FidelityPoint> bayesian;
  std::vector<ThresholdCurvePoint> threshold;
};

/// Runs `trials` simulated ion-present and ion-absent streams through the
/// Bayesian detector for each target posterior. Every target sees the same
/// simulated streams, so mean time is monotone in the target by
/// construction.
inline FidelityCurve fidelity_curve(const Scenario& scenario, std::span<const double> targets, std::size_t trials,
                                    const FidelityOptions& options = {}) {
  scenario.validate();
  if (targets.empty()) throw std::invalid_argument("fidelity_curve: no targets");
  if (trials == 0) throw std::invalid_argument("fidelity_curve: trials must be >= 1");

  FidelityCurve curve;
  curve.ion_rate = scenario.budget.ion_total();
  curve.empty_rate = scenario.budget.background_total();

  std::vector<BayesianConfig> configs;
  for (double t : targets) {
    BayesianConfig c{t, options.sub_bin, options.max_time, options.prior_ion, false};
    c.validate();
    configs.push_back(c);
  }
  validate_detection_rates(curve.ion_rate, curve.empty_rate);

  struct TrialRecord {
    bool correct = false;
    bool undecided = false;
    double time = 0.0;
    double posterior = 0.0;
  };
  const std::size_t n_targets = configs.size();
  // [hypothesis][trial][target]
  std::vector<TrialRecord> records(2 * trials * n_targets);

  RateBudget empty_rates = scenario.budget;
  empty_rates.fluorescence = 0.0;

  parallel_for(2 * trials, [&](std::size_t job) {
    const std::size_t hyp = job / trials;  // 0 = ion present, 1 = empty
    const std::size_t trial = job % trials;
    const std::uint64_t seed = derive_seed(derive_seed(scenario.rng_seed, hyp + 1), trial);
    const auto stream = simulate_rates(hyp == 0 ? scenario.budget : empty_rates, options.max_time, seed,
                                       options.dead_time);
    const auto counts = bin_stream(stream, options.sub_bin, options.max_time);
    const Decision truth = hyp == 0 ? Decision::ion : Decision::no_ion;
    for (std::size_t k = 0; k < n_targets; ++k) {
      const auto outcome = bayesian_detect_counts(counts, curve.ion_rate, curve.empty_rate, configs[k]);
      records[job * n_targets + k] = {outcome.map_decision() == truth, outcome.decision == Decision::undecided,
                                      outcome.stopping_time, outcome.final_posterior};
    }
  });

  const double n = static_cast<double>(trials);
  for (std::size_t k = 0; k < n_targets; ++k) {
    double correct[2] = {0, 0}, time[2] = {0, 0}, posterior = 0.0, undecided = 0.0;
    for (std::size_t hyp = 0; hyp < 2; ++hyp) {
      for (std::size_t trial = 0; trial < trials; ++trial) {
        const auto& r = records[(hyp * trials + trial) * n_targets + k];
        correct[hyp] += r.correct ? 1.0 : 0.0;
        time[hyp] += r.time;
        posterior += r.posterior;
        undecided += r.undecided ? 1.0 : 0.0;
      }
    }
    FidelityPoint p;
    p.target = configs[k].target_posterior;
    p.trials = trials;
    p.accuracy_ion = correct[0] / n;
    p.accuracy_empty = correct[1] / n;
    p.achieved_fidelity = 0.5 * (p.accuracy_ion + p.accuracy_empty);
    p.mean_time_ion = time[0] / n;
    p.mean_time_empty = time[1] / n;
    p.mean_time = 0.5 * (p.mean_time_ion + p.mean_time_empty);
    p.mean_final_posterior = posterior / (2.0 * n);
    p.undecided_fraction = undecided / (2.0 * n);
    if (curve.empty_rate > 0.0 && curve.ion_rate > curve.empty_rate) {
      p.wald_mean_time = wald_bound(curve.ion_rate, curve.empty_rate, 1.0 - p.target).average();
    }
    curve.bayesian.push_back(p);
  }

  if (curve.ion_rate >= curve.empty_rate && !options.threshold_windows.empty()) {
    curve.threshold = threshold_curve(curve.ion_rate, curve.empty_rate, options.threshold_windows);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Forward projection
// ---------------------------------------------------------------------------

/// Improved-device projection: better collection, low dark counts, no laser
/// scatter, same quantum efficiency.
struct ProjectionParams {
  double collection_efficiency = 0.05;
  double dark_rate = 100.0;  // counts/s
  double quantum_efficiency = 0.24;
  EmitterParams emitter{19.6 * units::mhz, 0.83};
  double target_posterior = 0.9977;
  double reference_time = 75.0 * units::us;
  double sub_bin = 1.0 * units::us;
  double max_time = 1.0 * units::ms;
  std::size_t trials = 20000;
  std::uint64_t seed = 1;
};

struct ProjectionResult {
  RateBudget budget;
  FidelityCurve curve;
  FidelityPoint at_target;
  /// Exact-Poisson optimal threshold fidelity for a fixed window of
  /// reference_time.
  AnalyticThreshold fixed_window;
  /// Detected ion rate at which the fixed-window fidelity at reference_time
  /// equals target_posterior, for comparison with budget.fluorescence.
  double fluorescence_for_target = 0.0;
};

inline RateBudget projected_budget(const ProjectionParams& p) {
  RateBudget b;
  b.fluorescence = scattering_rate(p.emitter) * p.collection_efficiency * p.quantum_efficiency;
  b.dark_counts = p.dark_rate;
  return b;
}

inline ProjectionResult projected_scenario_fidelity(const ProjectionParams& p = {}) {
  if (!(p.collection_efficiency >= 0.0 && p.collection_efficiency <= 1.0)) {
    throw std::invalid_argument("projection: collection efficiency must lie in [0,1]");
  }
  if (!(p.quantum_efficiency >= 0.0 && p.quantum_efficiency <= 1.0)) {
    throw std::invalid_argument("projection: quantum efficiency must lie in [0,1]");
  }
  ProjectionResult out;
  out.budget = projected_budget(p);

  Scenario s;
  s.budget = out.budget;
  s.emitter = p.emitter;
  s.trial_duration = p.max_time;
  s.rng_seed = p.seed;

  FidelityOptions opt;
  opt.sub_bin = p.sub_bin;
  opt.max_time = p.max_time;
  opt.dead_time = no_dead_time();
  opt.threshold_windows = {p.reference_time};
  const double targets[] = {0.9, 0.99, p.target_posterior, 0.9999};
  out.curve = fidelity_curve(s, targets, p.trials, opt);
  out.at_target = out.curve.bayesian[2];

  const double ion = out.budget.ion_total();
  const double empty = out.budget.background_total();
  out.fixed_window = analytic_threshold_fidelity(ion, empty, p.reference_time);

  // bisection on the fluorescence rate; fixed-window fidelity is monotone in it
  double lo = 0.0, hi = 1e9;
  for (int i = 0; i < 200 && hi - lo > 1e-6 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (analytic_threshold_fidelity(mid + empty, empty, p.reference_time).fidelity < p.target_posterior) lo = mid;
    else hi = mid;
  }
  out.fluorescence_for_target = hi;
  return out;
}

}  // namespace spadion

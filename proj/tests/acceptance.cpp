// Acceptance runner. Prints one PASS/FAIL line per criterion; exit status is
// 0 only if every selected criterion passes.
//
//   acceptance                 run all criteria
//   acceptance --criterion N   run criterion N only

#include <spadion/spadion.hpp>

#include "stats_oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace spadion;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool within(double x, double target, double tol) { return std::abs(x - target) <= tol; }
bool within_rel(double x, double target, double rel) { return std::abs(x - target) <= rel * std::abs(target); }

// 1. Adaptive Bayesian detection at the reference rates.
Verdict bayesian_detection() {
  const auto start = std::chrono::steady_clock::now();
  Scenario sc;
  sc.rng_seed = 20240101;
  const std::vector<double> targets{0.99};
  const std::size_t trials = 10000;
  const auto curve = fidelity_curve(sc, targets, trials);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto& p = curve.bayesian[0];
  const double wald = wald_bound(curve.ion_rate, curve.empty_rate, 0.01).average();
  const bool ok = within(p.achieved_fidelity, 0.99, 0.005) && p.mean_time >= wald && p.mean_time <= 7.7e-3 &&
                  seconds < 60.0;
  return {ok, fmt("fidelity=%.4f (0.99+-0.005), mean window=%.3f ms in [Wald %.3f, 7.7] ms, "
                  "trials=%zu/hypothesis, runtime=%.1f s (<60 s)",
                  p.achieved_fidelity, p.mean_time * 1e3, wald * 1e3, trials, seconds)};
}

// 2. Fixed 25 ms window thresholding over 50 s per hypothesis.
Verdict threshold_detection() {
  Scenario sc;
  sc.rng_seed = 7;
  const auto ion = gate_and_count(simulate_stream(sc, true), 0.025);
  sc.rng_seed = 8;
  const auto empty = gate_and_count(simulate_stream(sc, false), 0.025);
  const auto mc = threshold_fidelity(ion, empty, 0.025);
  const auto exact = analytic_threshold_fidelity(sc.budget.ion_total(), sc.budget.background_total(), 0.025);
  const bool ok = mc.fidelity >= 0.996 && within(mc.fidelity, exact.fidelity, 0.003);
  return {ok, fmt("simulated fidelity=%.4f (>=0.996) at threshold %lld, exact Poisson=%.4f (|diff|<=0.003)",
                  mc.fidelity, static_cast<long long>(mc.threshold), exact.fidelity)};
}

// 3. ARC optics.
Verdict arc_optics() {
  const auto arc = default_arc_stack();
  const double r_arc = stack_reflectance(arc, 0.0);
  const double r_si = stack_reflectance(bare_silicon_stack(), 0.0);
  const auto geometry = default_geometry();
  const auto positions = default_shuttle_positions();
  const double d = geometry.vertical_distance();
  const double r_far = stack_reflectance(arc, std::atan(positions.back() / d));
  const double r_near = stack_reflectance(arc, std::atan(positions.front() / d));

  double worst = 0.0;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    OpticalStack s;
    s.substrate_index = {1.0 + 5.0 * u(rng), 0.0};
    for (int k = 0; k < 1 + i % 4; ++k) s.layers.push_back({1e-9 + 3e-7 * u(rng), {1.0 + 3.0 * u(rng), 0.0}});
    const double angle = u(rng) * 1.5;
    for (auto pol : {Polarization::s, Polarization::p}) {
      worst = std::max(worst, std::abs(stack_reflectance(s, angle, pol) + stack_transmittance(s, angle, pol) - 1.0));
    }
  }
  const bool ok = within(r_arc, 0.10, 0.03) && within(r_si, 0.57, 0.04) && within(r_far, 0.225, 0.03) &&
                  within(r_near, 0.173, 0.03) && worst <= 1e-9;
  return {ok, fmt("R_arc(0)=%.4f (0.10+-0.03), R_Si(0)=%.4f (0.57+-0.04), R over %.0f..%.0f um offsets "
                  "=%.4f..%.4f (0.225..0.173 +-0.03), max|R+T-1|=%.1e (<=1e-9)",
                  r_arc, r_si, positions.back() * 1e6, positions.front() * 1e6, r_far, r_near, worst)};
}

// 4. Collection efficiency.
Verdict collection() {
  auto g = default_geometry();
  const double area = g.active_area.effective_area() * 1e12;
  const double centered = collection_efficiency(g).efficiency;
  g.ion_lateral_offset = 80e-6;
  const double far = collection_efficiency(g).efficiency;
  DetectorGeometry filled = default_geometry();
  filled.active_area = disc_map(filled.aperture_radius);
  const auto full = collection_efficiency(filled);
  const bool ok = within_rel(centered, 0.0014, 0.3) && within_rel(far, 0.0003, 0.3) &&
                  within_rel(full.efficiency, 0.026, 0.2);
  return {ok, fmt("area=%.2f um^2 at d=%.0f um: centered CE=%.4f%% (0.14%%+-30%%), 80 um CE=%.4f%% (0.03%%+-30%%), "
                  "aperture-filling CE=%.3f%% (2.6%%+-20%%; %.3f%% without ARC)",
                  area, g.vertical_distance() * 1e6, centered * 100, far * 100, full.efficiency * 100,
                  full.efficiency_without_arc * 100)};
}

// 5. Spot test.
Verdict spot_test() {
  auto scan = synthesize_spot_scan(SpotScanSynthesis{}, 11);
  const auto base = effective_area(scan);
  auto doubled = scan;
  for (auto& c : doubled.counts) c *= 2.0;
  doubled.dwell *= 2.0;
  const auto again = effective_area(doubled);
  const bool invariant = again.area == base.area && again.map.weights == base.map.weights;
  const double area = base.area * 1e12;
  const bool ok = within(area, 60.0, 6.0) && invariant;
  return {ok, fmt("effective area=%.2f um^2 (60+-6) from %zux%zu scan at 800 nm steps, normalization invariance %s",
                  area, scan.rows, scan.cols, invariant ? "exact" : "BROKEN")};
}

// 6. QE closure.
Verdict qe_closure() {
  const auto geometry = default_geometry();
  const EmitterParams emitter;
  CollectionScanSynthesis synth;
  synth.positions = default_shuttle_positions();
  QEFitInput in;
  in.positions = synth.positions;
  in.geometry = geometry;
  in.emitter = emitter;
  in.measured_fluorescence = synthesize_collection_scan(geometry, emitter, synth, 2024);
  const auto fit = fit_quantum_efficiency(in);
  const bool ok = within(fit.qe, 0.24, 0.03);
  return {ok, fmt("recovered qe=%.4f +- %.4f (0.24+-0.03) from %zu positions, 30 ms gates over 50 s",
                  fit.qe, fit.std_error, in.positions.size())};
}

// 7. Projection scenario.
Verdict projection() {
  const ProjectionParams params;
  const auto r = projected_scenario_fidelity(params);
  const auto& p = r.at_target;
  const bool ok = within(p.achieved_fidelity, 0.9977, 0.001) && within_rel(p.mean_time, 75e-6, 0.25);
  return {ok, fmt("detected ion rate=%.0f cps, dark=%.0f cps: Bayesian target %.4f gives fidelity=%.5f "
                  "(0.9977+-0.001) at mean time=%.2f us (75 us+-25%%); fixed %.0f us window fidelity=%.8f; "
                  "fixed-window fidelity 0.9977 at 75 us needs ~%.0f cps",
                  r.budget.fluorescence, r.budget.dark_counts, p.target, p.achieved_fidelity, p.mean_time * 1e6,
                  params.reference_time * 1e6, r.fixed_window.fidelity, r.fluorescence_for_target)};
}

// 8. Property suite.
Verdict properties() {
  std::vector<std::string> failures;
  std::string detail;

  // Poisson counting statistics
  {
    RateBudget b;
    b.dark_counts = 11700.0;
    int passes = 0;
    for (int rep = 0; rep < 40; ++rep) {
      const auto counts = gate_and_count(simulate_rates(b, 10.0, derive_seed(1, rep), no_dead_time()), 1e-3);
      passes += oracle::poisson_chi2_pvalue(counts, 11.7) > 0.01 ? 1 : 0;
    }
    detail += fmt("chi2 %d/40 pass", passes);
    if (passes < 38) failures.push_back("chi2");
  }
  // dead-time formula
  {
    double worst = 0.0;
    for (double lt : {0.01, 0.05, 0.1}) {
      RateBudget b;
      b.dark_counts = lt / 1e-6;
      const double duration = 2e6 / b.dark_counts;
      const auto s = simulate_rates(b, duration, 5, DeadTimeModel{1e-6});
      const double observed = static_cast<double>(s.size()) / duration;
      worst = std::max(worst, std::abs(observed / nonparalyzable_rate(b.dark_counts, 1e-6) - 1.0));
    }
    detail += fmt(", dead-time max dev %.2f%%", worst * 100);
    if (worst > 0.02) failures.push_back("dead-time");
  }
  // determinism: byte-identical serialized reruns
  {
    Scenario sc;
    sc.trial_duration = 1.0;
    sc.rng_seed = 99;
    std::ostringstream a, b;
    write_event_stream(a, simulate_stream(sc, true));
    write_event_stream(b, simulate_stream(sc, true));
    std::ostringstream fa, fb;
    const std::vector<double> targets{0.9, 0.99};
    write_fidelity_curve(fa, fidelity_curve(sc, targets, 300));
    write_fidelity_curve(fb, fidelity_curve(sc, targets, 300));
    const bool same = a.str() == b.str() && fa.str() == fb.str();
    detail += same ? ", reruns byte-identical" : ", reruns DIFFER";
    if (!same) failures.push_back("determinism");
  }
  // posterior permutation invariance
  {
    std::mt19937_64 rng(4);
    std::poisson_distribution<int> pois(1.0);
    BayesianConfig cfg;
    cfg.target_posterior = 1.0 - 1e-12;
    int broken = 0;
    for (int t = 0; t < 1000; ++t) {
      std::vector<std::int64_t> counts(10);
      for (auto& c : counts) c = pois(rng);
      const double a = bayesian_detect_counts(counts, 11700.0, 6900.0, cfg).posterior_ion;
      std::shuffle(counts.begin(), counts.end(), rng);
      broken += a == bayesian_detect_counts(counts, 11700.0, 6900.0, cfg).posterior_ion ? 0 : 1;
    }
    detail += fmt(", permutation mismatches %d/1000", broken);
    if (broken) failures.push_back("permutation");
  }
  // Wald-bound dominance
  {
    BayesianConfig cfg;
    cfg.record_trace = false;
    const auto w = wald_bound(11700.0, 6900.0, 0.01);
    bool ok = true;
    for (int hyp = 0; hyp < 2; ++hyp) {
      RateBudget rates = reference_budget();
      if (hyp) rates.fluorescence = 0.0;
      std::vector<double> times;
      for (std::uint64_t i = 0; i < 5000; ++i) {
        times.push_back(bayesian_detect(simulate_rates(rates, cfg.max_time, derive_seed(70 + hyp, i), no_dead_time()),
                                        11700.0, 6900.0, cfg)
                            .stopping_time);
      }
      const double n = static_cast<double>(times.size());
      const double mean = std::accumulate(times.begin(), times.end(), 0.0) / n;
      double var = 0.0;
      for (double t : times) var += (t - mean) * (t - mean);
      const double se = std::sqrt(var / (n - 1) / n);
      const double bound = hyp ? w.mean_time_empty : w.mean_time_ion;
      ok = ok && mean + 3 * se >= bound;
      detail += fmt(", %s mean %.2f ms vs Wald %.2f ms", hyp ? "empty" : "ion", mean * 1e3, bound * 1e3);
    }
    if (!ok) failures.push_back("wald");
  }
  std::string failed;
  for (const auto& f : failures) failed += " " + f;
  return {failures.empty(), detail + (failures.empty() ? "" : "; failed:" + failed)};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {1, "adaptive Bayesian detection", bayesian_detection},
      {2, "threshold detection", threshold_detection},
      {3, "ARC optics", arc_optics},
      {4, "collection efficiency", collection},
      {5, "spot test", spot_test},
      {6, "QE closure", qe_closure},
      {7, "projection scenario", projection},
      {8, "property suite", properties},
  };

  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--criterion" && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: %s [--criterion N]\n", argv[0]);
      return 2;
    }
  }
  if (only < 0 || only > static_cast<int>(criteria.size())) {
    std::fprintf(stderr, "no criterion %d\n", only);
    return 2;
  }

  bool all = true;
  for (const auto& c : criteria) {
    if (only && c.id != only) continue;
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    all = all && v.pass;
    std::printf("[%s] criterion %d %s: %s\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}

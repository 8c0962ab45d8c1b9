#pragma once

// Estimation procedures: spot-scan effective area, count-budget
// decomposition from source toggling, saturation-curve fitting and the
// single-parameter quantum-efficiency fit.

#include <spadion/model.hpp>
#include <spadion/optics.hpp>
#include <spadion/rng.hpp>
#include <spadion/simulator.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spadion {

// ---------------------------------------------------------------------------
// Spot test
// ---------------------------------------------------------------------------

/// Raster scan of a focused spot. `origin` is the position of scan point
/// (row 0, col 0); rows advance along +y.
struct SpotScan {
  double step = 0.8 * units::um;
  Point2 origin;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> counts;  // row-major raw counts per point
  double dark_rate = 0.0;      // counts/s
  double dwell = 0.0;          // s per point

  void validate() const {
    if (!(step > 0.0)) throw std::invalid_argument("SpotScan: step must be > 0");
    if (!(dwell > 0.0)) throw std::invalid_argument("SpotScan: dwell must be > 0");
    if (!(dark_rate >= 0.0)) throw std::invalid_argument("SpotScan: dark_rate must be >= 0");
    if (counts.size() != rows * cols) throw std::invalid_argument("SpotScan: counts size != rows*cols");
    for (double c : counts) {
      if (!(c >= 0.0)) throw std::invalid_argument("SpotScan: counts must be >= 0");
    }
  }
};

struct EffectiveArea {
  double area = 0.0;  // m^2
  ActiveAreaMap map;
};

/// Dark-subtracted rates (clamped at zero) normalized to the brightest
/// point; area = step^2 * sum of weights.
inline EffectiveArea effective_area(const SpotScan& scan) {
  scan.validate();
  std::vector<double> rate(scan.counts.size());
  std::transform(scan.counts.begin(), scan.counts.end(), rate.begin(),
                 [&](double c) { return std::max(0.0, c / scan.dwell - scan.dark_rate); });
  const double peak = rate.empty() ? 0.0 : *std::max_element(rate.begin(), rate.end());
  if (!(peak > 0.0)) throw std::domain_error("effective_area: no point above the dark level");

  EffectiveArea out;
  out.map.cell_size = scan.step;
  out.map.origin = {scan.origin.x - 0.5 * scan.step, scan.origin.y - 0.5 * scan.step};
  out.map.rows = scan.rows;
  out.map.cols = scan.cols;
  out.map.weights.resize(rate.size());
  std::transform(rate.begin(), rate.end(), out.map.weights.begin(), [&](double r) { return r / peak; });
  out.area = out.map.effective_area();
  return out;
}

struct SpotScanSynthesis {
  QuarterDiscSpad spad;
  double step = 0.8 * units::um;
  double spot_fwhm = 1.6 * units::um;
  double peak_rate = 500.0 * units::kcps;  // signal rate with the spot fully on active area
  double dark_rate = 1.2 * units::kcps;
  double dwell = 0.1;                      // s
  double margin = 3.0 * units::um;
};

/// Scan of the reconstructed quarter-disc SPAD with a Gaussian spot and
/// Poisson counting noise.
inline SpotScan synthesize_spot_scan(const SpotScanSynthesis& p, std::uint64_t seed) {
  const Point2 lo{p.spad.bounding_lo().x - p.margin, p.spad.bounding_lo().y - p.margin};
  const Point2 hi{p.spad.bounding_hi().x + p.margin, p.spad.bounding_hi().y + p.margin};
  SpotScan scan;
  scan.step = p.step;
  scan.origin = lo;
  scan.cols = static_cast<std::size_t>(std::floor((hi.x - lo.x) / p.step)) + 1;
  scan.rows = static_cast<std::size_t>(std::floor((hi.y - lo.y) / p.step)) + 1;
  scan.dark_rate = p.dark_rate;
  scan.dwell = p.dwell;
  scan.counts.resize(scan.rows * scan.cols);

  // spot-averaged response by quadrature over +-3 sigma
  const double sigma = p.spot_fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  const int half = 20;
  const double h = 3.0 * sigma / half;
  std::vector<double> kernel;
  double kernel_sum = 0.0;
  for (int i = -half; i <= half; ++i) {
    for (int j = -half; j <= half; ++j) {
      const double w = std::exp(-0.5 * (i * i + j * j) * h * h / (sigma * sigma));
      kernel.push_back(w);
      kernel_sum += w;
    }
  }

  Engine rng = make_engine(seed);
  for (std::size_t r = 0; r < scan.rows; ++r) {
    for (std::size_t c = 0; c < scan.cols; ++c) {
      const double x = lo.x + static_cast<double>(c) * p.step;
      const double y = lo.y + static_cast<double>(r) * p.step;
      double acc = 0.0;
      std::size_t k = 0;
      for (int i = -half; i <= half; ++i) {
        for (int j = -half; j <= half; ++j) acc += kernel[k++] * p.spad.response({x + j * h, y + i * h});
      }
      const double mean = (p.peak_rate * acc / kernel_sum + p.dark_rate) * p.dwell;
      std::poisson_distribution<long long> draw(mean);
      scan.counts[r * scan.cols + c] = static_cast<double>(draw(rng));
    }
  }
  return scan;
}

// ---------------------------------------------------------------------------
// Count budget decomposition
// ---------------------------------------------------------------------------

/// One measurement with a given set of sources switched on.
struct ToggleMeasurement {
  std::array<bool, 5> active{};  // indexed by Source
  double measured_rate = 0.0;    // counts/s
  double dwell = 1.0;            // s

  bool on(Source s) const { return active[static_cast<std::size_t>(s)]; }
};

struct BudgetEstimate {
  RateBudget rates;
  RateBudget uncertainty;  // 1 sigma, Poisson counting error propagated
};

using ToggleDesign = std::vector<std::array<bool, 5>>;

/// Dark-only baseline plus each other source on its own (with dark).
inline ToggleDesign one_at_a_time_design() {
  return {{false, false, false, true, false},
          {true, false, false, true, false},
          {false, true, false, true, false},
          {false, false, true, true, false},
          {false, false, false, true, true}};
}

/// Sources added one at a time: dark, +rf, +doppler, +repump, +ion.
inline ToggleDesign cumulative_design() {
  return {{false, false, false, true, false},
          {false, false, false, true, true},
          {false, false, true, true, true},
          {false, true, true, true, true},
          {true, true, true, true, true}};
}

/// Least-squares solve of measured = design * rates.
inline BudgetEstimate decompose_budget(std::span<const ToggleMeasurement> measurements) {
  const auto m = static_cast<Eigen::Index>(measurements.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, 5);
  Eigen::VectorXd b(m);
  Eigen::VectorXd variance(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& meas = measurements[static_cast<std::size_t>(i)];
    if (!(meas.measured_rate >= 0.0)) throw std::invalid_argument("decompose_budget: negative measured rate");
    if (!(meas.dwell > 0.0)) throw std::invalid_argument("decompose_budget: dwell must be > 0");
    for (std::size_t s = 0; s < 5; ++s) a(i, static_cast<Eigen::Index>(s)) = meas.active[s] ? 1.0 : 0.0;
    b(i) = meas.measured_rate;
    variance(i) = meas.measured_rate / meas.dwell;
  }

  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (m == 0 || lu.rank() < 5) {
    std::string msg = "decompose_budget: toggle design cannot separate";
    const Eigen::MatrixXd kernel = m == 0 ? Eigen::MatrixXd::Identity(5, 5) : Eigen::MatrixXd(lu.kernel());
    for (Eigen::Index k = 0; k < kernel.cols(); ++k) {
      msg += k == 0 ? " {" : "; {";
      bool first = true;
      for (std::size_t s = 0; s < 5; ++s) {
        const double coeff = kernel(static_cast<Eigen::Index>(s), k);
        if (std::abs(coeff) < 1e-9) continue;
        msg += first ? "" : (coeff > 0 ? " + " : " - ");
        if (first && coeff < 0) msg += "-";
        msg += std::string(to_string(all_sources[s]));
        first = false;
      }
      msg += "}";
    }
    throw std::invalid_argument(msg);
  }

  const Eigen::MatrixXd pinv = a.completeOrthogonalDecomposition().pseudoInverse();
  const Eigen::VectorXd x = pinv * b;
  const Eigen::MatrixXd cov = pinv * variance.asDiagonal() * pinv.transpose();

  BudgetEstimate out;
  for (std::size_t s = 0; s < 5; ++s) {
    const auto i = static_cast<Eigen::Index>(s);
    out.rates[all_sources[s]] = x(i);
    out.uncertainty[all_sources[s]] = std::sqrt(std::max(0.0, cov(i, i)));
  }
  return out;
}

/// Poisson-counted toggle measurements of a known budget.
inline std::vector<ToggleMeasurement> simulate_toggle_measurements(const RateBudget& truth, const ToggleDesign& design,
                                                                   double dwell, std::uint64_t seed) {
  truth.validate();
  if (!(dwell > 0.0)) throw std::invalid_argument("simulate_toggle_measurements: dwell must be > 0");
  Engine rng = make_engine(seed);
  std::vector<ToggleMeasurement> out;
  for (const auto& row : design) {
    double rate = 0.0;
    for (std::size_t s = 0; s < 5; ++s) {
      if (row[s]) rate += truth[all_sources[s]];
    }
    std::poisson_distribution<long long> draw(rate * dwell);
    out.push_back({row, rate > 0.0 ? static_cast<double>(draw(rng)) / dwell : 0.0, dwell});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Saturation curve
// ---------------------------------------------------------------------------

struct SaturationFit {
  double saturation_power = 0.0;  // W
  double max_rate = 0.0;          // counts/s
  std::vector<double> fraction_of_saturation;
  double rms_residual = 0.0;
};

/// Least-squares fit of rate = max_rate * x / (1 + x), x = P / P_sat.
/// max_rate is eliminated in closed form; P_sat is found by a bracketed
/// search in log space.
inline SaturationFit fit_saturation(std::span<const double> powers, std::span<const double> rates) {
  if (powers.size() != rates.size()) throw std::invalid_argument("fit_saturation: size mismatch");
  std::vector<double> distinct(powers.begin(), powers.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 3) throw std::invalid_argument("fit_saturation: need >= 3 distinct powers");
  if (!(distinct.front() > 0.0)) throw std::invalid_argument("fit_saturation: powers must be > 0");
  for (double r : rates) {
    if (!(r >= 0.0)) throw std::invalid_argument("fit_saturation: rates must be >= 0");
  }

  auto profile = [&](double log_psat, double* max_rate) {
    const double psat = std::exp(log_psat);
    double fr = 0.0, ff = 0.0;
    for (std::size_t i = 0; i < powers.size(); ++i) {
      const double f = powers[i] / (powers[i] + psat);
      fr += f * rates[i];
      ff += f * f;
    }
    const double m = fr / ff;
    double sse = 0.0;
    for (std::size_t i = 0; i < powers.size(); ++i) {
      const double res = rates[i] - m * powers[i] / (powers[i] + psat);
      sse += res * res;
    }
    if (max_rate) *max_rate = m;
    return sse;
  };

  const double lo = std::log(distinct.front()) - 8.0;
  const double hi = std::log(distinct.back()) + 8.0;
  constexpr int grid = 400;
  int best = 0;
  double best_sse = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= grid; ++i) {
    const double sse = profile(lo + (hi - lo) * i / grid, nullptr);
    if (sse < best_sse) best_sse = sse, best = i;
  }
  if (best == 0 || best == grid) {
    throw std::runtime_error("fit_saturation: no saturation curvature in the data; fit did not converge");
  }

  // golden-section refinement inside the bracketing grid cells
  double a = lo + (hi - lo) * (best - 1) / grid;
  double b = lo + (hi - lo) * (best + 1) / grid;
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = profile(c, nullptr), fd = profile(d, nullptr);
  for (int it = 0; it < 200 && b - a > 1e-13; ++it) {
    if (fc < fd) {
      b = d, d = c, fd = fc;
      c = b - g * (b - a), fc = profile(c, nullptr);
    } else {
      a = c, c = d, fc = fd;
      d = a + g * (b - a), fd = profile(d, nullptr);
    }
  }

  SaturationFit out;
  const double log_psat = 0.5 * (a + b);
  const double sse = profile(log_psat, &out.max_rate);
  out.saturation_power = std::exp(log_psat);
  out.rms_residual = std::sqrt(sse / static_cast<double>(powers.size()));
  for (double p : powers) out.fraction_of_saturation.push_back(p / (p + out.saturation_power));
  return out;
}

// ---------------------------------------------------------------------------
// Quantum efficiency
// ---------------------------------------------------------------------------

/// Background-subtracted fluorescence at several lateral ion positions.
struct QEFitInput {
  std::vector<double> positions;              // lateral offsets, m
  std::vector<double> measured_fluorescence;  // counts/s
  DetectorGeometry geometry;
  EmitterParams emitter;

  void validate() const {
    if (positions.empty() || positions.size() != measured_fluorescence.size()) {
      throw std::invalid_argument("QEFitInput: positions and rates must have the same nonzero length");
    }
    for (double r : measured_fluorescence) {
      if (!(r >= 0.0)) throw std::invalid_argument("QEFitInput: measured rates must be >= 0");
    }
  }
};

struct QEFit {
  double qe = 0.0;
  double std_error = 0.0;     // statistical only; NaN with a single point
  std::vector<double> expected_incident;  // photons/s on the active area, after the ARC
};

/// Photons/s reaching the active area (after ARC) at each offset.
inline std::vector<double> expected_incident_rates(const DetectorGeometry& geometry, const EmitterParams& emitter,
                                                   std::span<const double> positions) {
  const double emitted = scattering_rate(emitter);
  std::vector<double> out;
  out.reserve(positions.size());
  for (const auto& pe : efficiency_vs_offset(geometry, positions)) out.push_back(emitted * pe.result.efficiency);
  return out;
}

/// Scalar least squares: measured ~ qe * expected. QE is relative to
/// photons that already passed the ARC.
inline QEFit fit_quantum_efficiency(const QEFitInput& input) {
  input.validate();
  QEFit out;
  out.expected_incident = expected_incident_rates(input.geometry, input.emitter, input.positions);
  double me = 0.0, ee = 0.0;
  for (std::size_t i = 0; i < out.expected_incident.size(); ++i) {
    const double e = out.expected_incident[i];
    if (!(e > 0.0)) throw std::domain_error("fit_quantum_efficiency: zero expected rate at a position");
    me += input.measured_fluorescence[i] * e;
    ee += e * e;
  }
  out.qe = me / ee;
  const std::size_t n = out.expected_incident.size();
  if (n < 2) {
    out.std_error = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double res = input.measured_fluorescence[i] - out.qe * out.expected_incident[i];
    rss += res * res;
  }
  out.std_error = std::sqrt(rss / static_cast<double>(n - 1) / ee);
  return out;
}

struct CollectionScanSynthesis {
  std::vector<double> positions;
  double quantum_efficiency = 0.24;
  RateBudget background = [] {
    RateBudget b = reference_budget();
    b.fluorescence = 0.0;
    return b;
  }();
  double gate = 30.0 * units::ms;
  double duration = 50.0;  // s per dataset
  DeadTimeModel dead_time = no_dead_time();
};

inline std::vector<double> default_shuttle_positions() {
  std::vector<double> p;
  for (double um = 68.0; um <= 98.0 + 1e-9; um += 5.0) p.push_back(um * units::um);
  return p;
}

/// Ion and no-ion streams at each position, gated and background
/// subtracted the way the shuttling measurement is analysed.
inline std::vector<double> synthesize_collection_scan(const DetectorGeometry& geometry, const EmitterParams& emitter,
                                                      const CollectionScanSynthesis& p, std::uint64_t seed) {
  const auto expected = expected_incident_rates(geometry, emitter, p.positions);
  std::vector<double> measured;
  measured.reserve(expected.size());
  auto mean_rate = [&](const EventStream& s) {
    const auto counts = gate_and_count(s, p.gate);
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    return total / (static_cast<double>(counts.size()) * p.gate);
  };
  for (std::size_t i = 0; i < expected.size(); ++i) {
    RateBudget ion = p.background;
    ion.fluorescence = p.quantum_efficiency * expected[i];
    const auto with_ion = simulate_rates(ion, p.duration, derive_seed(seed, 2 * i), p.dead_time);
    const auto without = simulate_rates(p.background, p.duration, derive_seed(seed, 2 * i + 1), p.dead_time);
    measured.push_back(std::max(0.0, mean_rate(with_ion) - mean_rate(without)));
  }
  return measured;
}

}  // namespace spadion

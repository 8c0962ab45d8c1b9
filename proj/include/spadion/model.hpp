#pragma once

// Source model: saturable two-level scattering, the per-source count-rate
// budget, and the scenario bundle shared by every other module.

#include <spadion/optics.hpp>
#include <spadion/units.hpp>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace spadion {

enum class Source : std::uint8_t { fluorescence, repump, doppler, dark, rf };

inline constexpr std::array<Source, 5> all_sources{Source::fluorescence, Source::repump, Source::doppler, Source::dark,
                                                   Source::rf};

constexpr std::string_view to_string(Source s) noexcept {
  switch (s) {
    case Source::fluorescence: return "fluorescence";
    case Source::repump: return "repump";
    case Source::doppler: return "doppler";
    case Source::dark: return "dark";
    case Source::rf: return "rf";
  }
  return "?";
}

/// Detector count rates per source, in counts/s.
struct RateBudget {
  double fluorescence = 0.0;
  double repump_scatter = 0.0;
  double doppler_scatter = 0.0;
  double dark_counts = 0.0;
  double rf_pickup = 0.0;

  double& operator[](Source s) {
    switch (s) {
      case Source::fluorescence: return fluorescence;
      case Source::repump: return repump_scatter;
      case Source::doppler: return doppler_scatter;
      case Source::dark: return dark_counts;
      case Source::rf: return rf_pickup;
    }
    throw std::out_of_range("RateBudget: bad source");
  }
  double operator[](Source s) const { return const_cast<RateBudget&>(*this)[s]; }

  double background_total() const { return repump_scatter + doppler_scatter + dark_counts + rf_pickup; }
  double ion_total() const { return fluorescence + background_total(); }

  void validate() const {
    for (Source s : all_sources) {
      if (!((*this)[s] >= 0.0)) throw std::invalid_argument("RateBudget: negative rate for " + std::string(to_string(s)));
    }
  }

  friend bool operator==(const RateBudget&, const RateBudget&) = default;
};

/// Reference count budget (kcps): 4.8 / 4.0 / 1.4 / 1.2 / 0.3.
inline RateBudget reference_budget() {
  return {4.8 * units::kcps, 4.0 * units::kcps, 1.4 * units::kcps, 1.2 * units::kcps, 0.3 * units::kcps};
}

struct BudgetTotals {
  double ion_rate = 0.0;
  double background_rate = 0.0;
};

inline BudgetTotals budget_totals(const RateBudget& b) { return {b.ion_total(), b.background_total()}; }

/// Two-level emitter. `saturation_fraction` is s/(1+s), the fraction of the
/// fully saturated scattering rate gamma/2.
struct EmitterParams {
  double linewidth_over_2pi = 19.6 * units::mhz;  // Hz, i.e. gamma/2pi
  double saturation_fraction = 0.83;

  double gamma() const { return 2.0 * pi * linewidth_over_2pi; }

  void validate() const {
    if (!(linewidth_over_2pi > 0.0)) throw std::invalid_argument("EmitterParams: linewidth must be > 0");
    if (!(saturation_fraction >= 0.0 && saturation_fraction < 1.0)) {
      throw std::invalid_argument("EmitterParams: saturation_fraction must lie in [0,1)");
    }
  }

  friend bool operator==(const EmitterParams&, const EmitterParams&) = default;
};

/// s/(1+s) for a saturation parameter s = I/I_sat.
inline double saturation_fraction_from_parameter(double s) {
  if (!(s >= 0.0)) throw std::invalid_argument("saturation parameter must be >= 0");
  return s / (1.0 + s);
}

/// Photons/s scattered: (gamma/2) * s/(1+s).
inline double scattering_rate(const EmitterParams& e) {
  e.validate();
  return 0.5 * e.gamma() * e.saturation_fraction;
}

struct Scenario {
  RateBudget budget = reference_budget();
  EmitterParams emitter;
  DetectorGeometry geometry = default_geometry();
  double trial_duration = 50.0;  // s
  std::uint64_t rng_seed = 1;

  void validate() const {
    budget.validate();
    emitter.validate();
    geometry.validate();
    if (!(trial_duration > 0.0)) throw std::invalid_argument("Scenario: trial_duration must be > 0");
  }

  friend bool operator==(const Scenario&, const Scenario&) = default;
};

}  // namespace spadion

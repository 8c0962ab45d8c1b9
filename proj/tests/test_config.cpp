#include <spadion/config.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

using namespace spadion;

namespace {

template <class F>
ConfigError capture(F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e;
  }
  ADD_FAILURE() << "expected ConfigError";
  return ConfigError(0, "", "none");
}

RunConfig random_config(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RunConfig c;
  c.scenario.budget = {u(rng) * 1e5, u(rng) * 1e4, u(rng) * 3e3, u(rng) * 2e3, u(rng) * 1e3};
  c.scenario.emitter = {1e6 + u(rng) * 5e7, u(rng) * 0.999};
  c.scenario.trial_duration = 1e-3 + u(rng) * 100.0;
  c.scenario.rng_seed = rng();
  c.scenario.geometry.ion_lateral_offset = (u(rng) - 0.5) * 2e-4;
  c.scenario.geometry.ion_height_above_surface = 1e-5 + u(rng) * 1e-4;
  c.scenario.geometry.detector_recess_below_surface = u(rng) * 2e-5;
  c.scenario.geometry.aperture_radius = 1e-5 + u(rng) * 3e-5;
  c.scenario.geometry.emission = u(rng) < 0.5 ? EmissionPattern::isotropic : EmissionPattern::dipole_perpendicular;
  c.scenario.geometry.stack.wavelength = 2e-7 + u(rng) * 8e-7;
  c.scenario.geometry.stack.substrate_index = {1.0 + 6.0 * u(rng), 2.0 * u(rng)};
  c.scenario.geometry.stack.layers.clear();
  const int n = static_cast<int>(u(rng) * 4);
  for (int i = 0; i < n; ++i) c.scenario.geometry.stack.layers.push_back({1e-9 + u(rng) * 2e-7, {1.0 + u(rng), u(rng) * 0.1}});
  c.active_area.kind = u(rng) < 0.5 ? ActiveAreaSource::Kind::quarter_spad : ActiveAreaSource::Kind::disc;
  c.active_area.cell_size = 0.5e-6 + u(rng) * 1e-6;
  c.active_area.disc_radius = 5e-6 + u(rng) * 1e-5;
  c.dead_time.dead_time = u(rng) * 2e-6;
  c.sub_bin = 1e-6 + u(rng) * 1e-4;
  c.max_time = 1e-3 + u(rng) * 0.1;
  c.prior_ion = 0.05 + 0.9 * u(rng);
  c.quantum_efficiency = u(rng);
  c.bias_voltage = 20.0 + 20.0 * u(rng);
  c.frontend.pulse_amplitude_min = 0.05 + 0.1 * u(rng);
  c.frontend.pulse_amplitude_max = 0.2 + 0.4 * u(rng);
  c.frontend.pulse_time_constant = 1e-7 + 1e-6 * u(rng);
  c.frontend.lowpass_cutoff = 1e5 + 5e6 * u(rng);
  c.frontend.rf_frequency = 1e7 + 3e7 * u(rng);
  c.frontend.rf_pickup_amplitude = u(rng);
  c.frontend.schmitt_low = 0.01 + 0.02 * u(rng);
  c.frontend.schmitt_high = 0.04 + 0.05 * u(rng);
  c.frontend.quench_resistance = 1e5 + 5e5 * u(rng);
  materialize_active_area(c);
  return c;
}

}  // namespace

TEST(Config, DefaultsAreReferenceScenario) {
  const auto c = parse_config("");
  EXPECT_EQ(c.scenario.budget, reference_budget());
  EXPECT_EQ(c.scenario.geometry, default_geometry());
  EXPECT_EQ(c, RunConfig{[] {
              RunConfig r;
              materialize_active_area(r);
              return r;
            }()});
}

TEST(Config, DocumentedKeysParse) {
  const auto c = parse_config(
      "# reference budget\n"
      "budget.fluorescence_kcps = 4.8\n"
      "budget.repump_kcps = 4.0\n"
      "budget.doppler_kcps = 1.4\n"
      "budget.dark_kcps = 1.2   # measured\n"
      "budget.rf_kcps = 0.3\n"
      "emitter.gamma_over_2pi_mhz = 19.6\n"
      "emitter.saturation_fraction = 0.83\n"
      "trial.duration_s = 50\n"
      "trial.seed = 18446744073709551615\n"
      "stack.layers = 29:2.1, 10:1.47\n"
      "stack.substrate_index = 6.9+1.4i\n");
  EXPECT_NEAR(c.scenario.budget.fluorescence, 4800.0, 1e-9);
  EXPECT_NEAR(c.scenario.budget.ion_total(), 11700.0, 1e-9);
  EXPECT_EQ(c.scenario.rng_seed, 18446744073709551615ull);
  ASSERT_EQ(c.scenario.geometry.stack.layers.size(), 2u);
  EXPECT_NEAR(c.scenario.geometry.stack.layers[0].thickness, 29e-9, 1e-21);
  EXPECT_EQ(c.scenario.geometry.stack.substrate_index, Complex(6.9, 1.4));
}

TEST(Config, RoundTripDefault) {
  const auto c = parse_config("");
  EXPECT_EQ(parse_config(serialize_config(c)), c);
}

TEST(Config, RoundTripRandomized) {
  std::mt19937_64 rng(2718);
  for (int i = 0; i < 300; ++i) {
    const auto c = random_config(rng);
    const auto text = serialize_config(c);
    const auto back = parse_config(text);
    ASSERT_EQ(back, c) << text;
    EXPECT_EQ(serialize_config(back), text);
  }
}

TEST(Config, UnknownKeyReportsLine) {
  const auto e = capture([] { parse_config("budget.dark_kcps = 1\n\nbudget.laser_kcps = 2\n"); });
  EXPECT_EQ(e.line(), 3u);
  EXPECT_EQ(e.key(), "budget.laser_kcps");
}

TEST(Config, DuplicateKeyRejected) {
  const auto e = capture([] { parse_config("trial.seed = 1\ntrial.seed = 2\n"); });
  EXPECT_EQ(e.line(), 2u);
  EXPECT_EQ(e.key(), "trial.seed");
}

TEST(Config, BadValueReportsKey) {
  auto e = capture([] { parse_config("budget.dark_kcps = fast\n"); });
  EXPECT_EQ(e.line(), 1u);
  EXPECT_EQ(e.key(), "budget.dark_kcps");
  e = capture([] { parse_config("trial.seed = -4\n"); });
  EXPECT_EQ(e.key(), "trial.seed");
  e = capture([] { parse_config("stack.layers = 29\n"); });
  EXPECT_EQ(e.key(), "stack.layers");
  e = capture([] { parse_config("geometry.emission = sideways\n"); });
  EXPECT_EQ(e.key(), "geometry.emission");
}

TEST(Config, MissingEqualsReportsLine) {
  const auto e = capture([] { parse_config("trial.seed = 1\nbudget.dark_kcps 1.2\n"); });
  EXPECT_EQ(e.line(), 2u);
}

TEST(Config, InvariantViolationsRejected) {
  EXPECT_THROW(parse_config("budget.dark_kcps = -1\n"), ConfigError);
  EXPECT_THROW(parse_config("emitter.saturation_fraction = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("trial.duration_s = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("detection.sub_bin_us = 60000\n"), ConfigError);
  EXPECT_THROW(parse_config("frontend.schmitt_low_mv = 60\n"), ConfigError);
}

TEST(Config, ActiveAreaFromCsv) {
  const auto dir = std::filesystem::temp_directory_path() / "spadion_config_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "area.csv");
    write_active_area(out, disc_map(5e-6, 0.5e-6));
  }
  {
    std::ofstream out(dir / "run.cfg");
    out << "geometry.active_area = csv:area.csv\n";
  }
  const auto c = load_config(dir / "run.cfg");
  EXPECT_EQ(c.active_area.kind, ActiveAreaSource::Kind::csv);
  EXPECT_NEAR(c.scenario.geometry.active_area.effective_area(), disc_map(5e-6, 0.5e-6).effective_area(), 1e-20);
  EXPECT_THROW(parse_config("geometry.active_area = csv:missing.csv\n", dir), ConfigError);
}

TEST(Config, ComplexIndexForms) {
  const auto c = parse_config("stack.ambient_index = 1.0003\nstack.substrate_index = 5e-1+2.5e-3i\n");
  EXPECT_EQ(c.scenario.geometry.stack.ambient_index, Complex(1.0003, 0.0));
  EXPECT_EQ(c.scenario.geometry.stack.substrate_index, Complex(0.5, 2.5e-3));
}

TEST(Config, DecimalShiftExamples) {
  using config_detail::shift_decimal;
  EXPECT_EQ(shift_decimal("4.8", 3), "4800");
  EXPECT_EQ(shift_decimal("4800", -3), "4.8");
  EXPECT_EQ(shift_decimal("5e-05", 6), "50");
  EXPECT_EQ(shift_decimal("-0.0012", 2), "-0.12");
  EXPECT_EQ(shift_decimal("0", -9), "0");
  EXPECT_EQ(shift_decimal("1.5e-07", -9), "1.5e-16");
  EXPECT_THROW(shift_decimal("1.2.3", 0), std::invalid_argument);
  EXPECT_THROW(shift_decimal("e5", 0), std::invalid_argument);
}

TEST(Config, ScaledValuesRoundTripExactly) {
  // oracle for parsing: strtod on the text with an explicit decimal exponent
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> mant(-10.0, 10.0);
  std::uniform_int_distribution<int> ex(-12, 12), unit(-9, 6);
  for (int i = 0; i < 20000; ++i) {
    const double si = mant(rng) * std::pow(10.0, ex(rng));
    const int e = unit(rng);
    const auto text = config_detail::format_scaled(si, e);
    EXPECT_EQ(config_detail::parse_scaled(text, e), si) << text << " e" << e;
    const auto epos = text.find('e');
    const int shift = e + (epos == std::string::npos ? 0 : std::stoi(text.substr(epos + 1)));
    const std::string oracle = text.substr(0, epos) + "e" + std::to_string(shift);
    EXPECT_EQ(std::strtod(oracle.c_str(), nullptr), si) << oracle;
  }
}

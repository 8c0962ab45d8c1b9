#pragma once

// Flat "key = value" scenario configuration. Values are in the units named
// by each key suffix (kcps, mhz, um, nm, ...). serialize_config() writes
// every key, and parse_config(serialize_config(c)) == c.

#include <spadion/csv.hpp>
#include <spadion/detection.hpp>
#include <spadion/model.hpp>
#include <spadion/optics.hpp>
#include <spadion/simulator.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace spadion {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::size_t line, std::string key, const std::string& what)
      : std::runtime_error(describe(line, key, what)), line_(line), key_(std::move(key)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& key() const noexcept { return key_; }

 private:
  static std::string describe(std::size_t line, const std::string& key, const std::string& what) {
    std::string s = "config";
    if (line > 0) s += " line " + std::to_string(line);
    if (!key.empty()) s += " key '" + key + "'";
    return s + ": " + what;
  }

  std::size_t line_;
  std::string key_;
};

struct ActiveAreaSource {
  enum class Kind { quarter_spad, disc, csv };

  Kind kind = Kind::quarter_spad;
  double cell_size = 0.25 * units::um;
  double disc_radius = 19e-6;  // m
  std::string path;  // for Kind::csv, relative to the config file

  friend bool operator==(const ActiveAreaSource&, const ActiveAreaSource&) = default;
};

/// Scenario plus the analysis settings that travel with it in one file.
struct RunConfig {
  Scenario scenario;
  ActiveAreaSource active_area;
  DeadTimeModel dead_time;
  double sub_bin = 100e-6;  // s
  double max_time = 50.0 * units::ms;
  double prior_ion = 0.5;
  double quantum_efficiency = 0.24;
  double bias_voltage = 32.0;  // metadata only
  FrontEndParams frontend;

  FidelityOptions fidelity_options() const {
    FidelityOptions o;
    o.sub_bin = sub_bin;
    o.max_time = max_time;
    o.prior_ion = prior_ion;
    o.dead_time = dead_time;
    return o;
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace config_detail {

inline double parse_number(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw std::invalid_argument("not a number: '" + std::string(s) + "'");
  return v;
}

/// Decimal text of value(text) * 10^shift, rewritten digit by digit so
/// nothing is rounded. Plain notation for moderate magnitudes.
inline std::string shift_decimal(std::string_view text, int shift) {
  std::string sign, digits;
  std::size_t i = 0;
  if (i < text.size() && (text[i] == '-' || text[i] == '+')) {
    if (text[i] == '-') sign = "-";
    ++i;
  }
  int point = -1;  // digits before the decimal point
  for (; i < text.size() && text[i] != 'e' && text[i] != 'E'; ++i) {
    if (text[i] == '.') {
      if (point >= 0) throw std::invalid_argument("not a number: '" + std::string(text) + "'");
      point = static_cast<int>(digits.size());
    } else if (text[i] >= '0' && text[i] <= '9') {
      digits += text[i];
    } else {
      throw std::invalid_argument("not a number: '" + std::string(text) + "'");
    }
  }
  if (digits.empty()) throw std::invalid_argument("not a number: '" + std::string(text) + "'");
  if (point < 0) point = static_cast<int>(digits.size());
  if (i < text.size()) {
    int exponent = 0;
    std::string_view e = text.substr(i + 1);
    if (!e.empty() && e.front() == '+') e.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(e.data(), e.data() + e.size(), exponent);
    if (e.empty() || ec != std::errc{} || ptr != e.data() + e.size()) {
      throw std::invalid_argument("not a number: '" + std::string(text) + "'");
    }
    point += exponent;
  }
  point += shift;
  // strip leading zeros (keeping the point fixed) and trailing zeros
  const auto lead = digits.find_first_not_of('0');
  if (lead == std::string::npos) return sign + "0";
  digits.erase(0, lead);
  point -= static_cast<int>(lead);
  digits.erase(digits.find_last_not_of('0') + 1);
  const int n = static_cast<int>(digits.size());
  if (point > 21 || point < -6) {
    std::string m = digits.substr(0, 1);
    if (n > 1) m += "." + digits.substr(1);
    return sign + m + "e" + std::to_string(point - 1);
  }
  if (point <= 0) return sign + "0." + std::string(static_cast<std::size_t>(-point), '0') + digits;
  if (point >= n) return sign + digits + std::string(static_cast<std::size_t>(point - n), '0');
  return sign + digits.substr(0, static_cast<std::size_t>(point)) + "." + digits.substr(static_cast<std::size_t>(point));
}

/// Value of `text` given in units of 10^exp10 SI units.
inline double parse_scaled(std::string_view text, int exp10) { return parse_number(shift_decimal(text, exp10)); }

/// Inverse of parse_scaled: parse_scaled(format_scaled(si, e), e) == si.
inline std::string format_scaled(double si, int exp10) { return shift_decimal(format_double(si), -exp10); }

inline Complex parse_complex(std::string_view s) {
  s = csv::trim(s);
  if (s.empty()) throw std::invalid_argument("empty complex value");
  if (s.back() != 'i') return {parse_number(s), 0.0};
  std::size_t split = std::string_view::npos;
  for (std::size_t i = s.size() - 1; i > 0; --i) {
    if ((s[i] == '+' || s[i] == '-') && s[i - 1] != 'e' && s[i - 1] != 'E') {
      split = i;
      break;
    }
  }
  if (split == std::string_view::npos) return {0.0, parse_number(s.substr(0, s.size() - 1))};
  std::string_view im = s.substr(split, s.size() - split - 1);
  if (im.front() == '+') im.remove_prefix(1);
  return {parse_number(s.substr(0, split)), parse_number(im)};
}

inline std::string format_complex(Complex c) {
  if (c.imag() == 0.0 && !std::signbit(c.imag())) return format_double(c.real());
  std::string im = format_double(c.imag());
  if (im.front() != '-') im = "+" + im;
  return format_double(c.real()) + im + "i";
}

inline std::vector<Layer> parse_layers(std::string_view s) {
  std::vector<Layer> out;
  s = csv::trim(s);
  if (s.empty() || s == "none") return out;
  while (!s.empty()) {
    const auto comma = s.find(',');
    const std::string_view item = csv::trim(s.substr(0, comma));
    const auto colon = item.find(':');
    if (colon == std::string_view::npos) throw std::invalid_argument("layer must be thickness_nm:index");
    out.push_back({parse_scaled(csv::trim(item.substr(0, colon)), -9), parse_complex(item.substr(colon + 1))});
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

inline std::string format_layers(const std::vector<Layer>& layers) {
  if (layers.empty()) return "none";
  std::string out;
  for (const auto& l : layers) {
    if (!out.empty()) out += ", ";
    out += format_scaled(l.thickness, -9) + ":" + format_complex(l.index);
  }
  return out;
}

struct Entry {
  std::string_view key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

template <class Access>
Entry number_entry(std::string_view key, Access access, int exp10) {
  return {key,
          [=](const RunConfig& c) { return format_scaled(access(const_cast<RunConfig&>(c)), exp10); },
          [=](RunConfig& c, std::string_view v) { access(c) = parse_scaled(v, exp10); }};
}

inline const std::vector<Entry>& entries() {
  // unit exponents
  constexpr int kcps = 3, mhz = 6, kohm = 3, um = -6, nm = -9, us = -6, ms = -3, mv = -3, si = 0;
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    auto num = [&t](std::string_view key, auto access, int exp10) { t.push_back(number_entry(key, access, exp10)); };
    num("budget.fluorescence_kcps", [](RunConfig& c) -> double& { return c.scenario.budget.fluorescence; }, kcps);
    num("budget.repump_kcps", [](RunConfig& c) -> double& { return c.scenario.budget.repump_scatter; }, kcps);
    num("budget.doppler_kcps", [](RunConfig& c) -> double& { return c.scenario.budget.doppler_scatter; }, kcps);
    num("budget.dark_kcps", [](RunConfig& c) -> double& { return c.scenario.budget.dark_counts; }, kcps);
    num("budget.rf_kcps", [](RunConfig& c) -> double& { return c.scenario.budget.rf_pickup; }, kcps);
    num("emitter.gamma_over_2pi_mhz", [](RunConfig& c) -> double& { return c.scenario.emitter.linewidth_over_2pi; }, mhz);
    num("emitter.saturation_fraction", [](RunConfig& c) -> double& { return c.scenario.emitter.saturation_fraction; }, si);
    num("trial.duration_s", [](RunConfig& c) -> double& { return c.scenario.trial_duration; }, si);
    t.push_back({"trial.seed", [](const RunConfig& c) { return std::to_string(c.scenario.rng_seed); },
                 [](RunConfig& c, std::string_view v) {
                   std::uint64_t seed = 0;
                   auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), seed);
                   if (ec != std::errc{} || ptr != v.data() + v.size()) throw std::invalid_argument("seed must be an unsigned integer");
                   c.scenario.rng_seed = seed;
                 }});
    num("geometry.ion_offset_um", [](RunConfig& c) -> double& { return c.scenario.geometry.ion_lateral_offset; }, um);
    num("geometry.ion_height_um", [](RunConfig& c) -> double& { return c.scenario.geometry.ion_height_above_surface; }, um);
    num("geometry.recess_um", [](RunConfig& c) -> double& { return c.scenario.geometry.detector_recess_below_surface; }, um);
    num("geometry.aperture_radius_um", [](RunConfig& c) -> double& { return c.scenario.geometry.aperture_radius; }, um);
    t.push_back({"geometry.emission",
                 [](const RunConfig& c) -> std::string {
                   return c.scenario.geometry.emission == EmissionPattern::isotropic ? "isotropic" : "dipole_perpendicular";
                 },
                 [](RunConfig& c, std::string_view v) {
                   if (v == "isotropic") c.scenario.geometry.emission = EmissionPattern::isotropic;
                   else if (v == "dipole_perpendicular") c.scenario.geometry.emission = EmissionPattern::dipole_perpendicular;
                   else throw std::invalid_argument("expected isotropic or dipole_perpendicular");
                 }});
    t.push_back({"geometry.active_area",
                 [](const RunConfig& c) -> std::string {
                   switch (c.active_area.kind) {
                     case ActiveAreaSource::Kind::quarter_spad: return "quarter_spad";
                     case ActiveAreaSource::Kind::disc: return "disc";
                     case ActiveAreaSource::Kind::csv: return "csv:" + c.active_area.path;
                   }
                   return "";
                 },
                 [](RunConfig& c, std::string_view v) {
                   if (v == "quarter_spad") c.active_area.kind = ActiveAreaSource::Kind::quarter_spad;
                   else if (v == "disc") c.active_area.kind = ActiveAreaSource::Kind::disc;
                   else if (v.substr(0, 4) == "csv:" && v.size() > 4) {
                     c.active_area.kind = ActiveAreaSource::Kind::csv;
                     c.active_area.path = std::string(v.substr(4));
                   } else throw std::invalid_argument("expected quarter_spad, disc or csv:<path>");
                 }});
    num("geometry.area_cell_um", [](RunConfig& c) -> double& { return c.active_area.cell_size; }, um);
    num("geometry.disc_radius_um", [](RunConfig& c) -> double& { return c.active_area.disc_radius; }, um);
    num("stack.wavelength_nm", [](RunConfig& c) -> double& { return c.scenario.geometry.stack.wavelength; }, nm);
    t.push_back({"stack.ambient_index", [](const RunConfig& c) { return format_complex(c.scenario.geometry.stack.ambient_index); },
                 [](RunConfig& c, std::string_view v) { c.scenario.geometry.stack.ambient_index = parse_complex(v); }});
    t.push_back({"stack.layers", [](const RunConfig& c) { return format_layers(c.scenario.geometry.stack.layers); },
                 [](RunConfig& c, std::string_view v) { c.scenario.geometry.stack.layers = parse_layers(v); }});
    t.push_back({"stack.substrate_index", [](const RunConfig& c) { return format_complex(c.scenario.geometry.stack.substrate_index); },
                 [](RunConfig& c, std::string_view v) { c.scenario.geometry.stack.substrate_index = parse_complex(v); }});
    num("detector.dead_time_us", [](RunConfig& c) -> double& { return c.dead_time.dead_time; }, us);
    num("detector.quantum_efficiency", [](RunConfig& c) -> double& { return c.quantum_efficiency; }, si);
    num("detector.bias_v", [](RunConfig& c) -> double& { return c.bias_voltage; }, si);
    num("detection.sub_bin_us", [](RunConfig& c) -> double& { return c.sub_bin; }, us);
    num("detection.max_time_ms", [](RunConfig& c) -> double& { return c.max_time; }, ms);
    num("detection.prior_ion", [](RunConfig& c) -> double& { return c.prior_ion; }, si);
    num("frontend.quench_kohm", [](RunConfig& c) -> double& { return c.frontend.quench_resistance; }, kohm);
    num("frontend.pulse_min_mv", [](RunConfig& c) -> double& { return c.frontend.pulse_amplitude_min; }, mv);
    num("frontend.pulse_max_mv", [](RunConfig& c) -> double& { return c.frontend.pulse_amplitude_max; }, mv);
    num("frontend.pulse_tau_us", [](RunConfig& c) -> double& { return c.frontend.pulse_time_constant; }, us);
    num("frontend.lowpass_mhz", [](RunConfig& c) -> double& { return c.frontend.lowpass_cutoff; }, mhz);
    num("frontend.rf_mhz", [](RunConfig& c) -> double& { return c.frontend.rf_frequency; }, mhz);
    num("frontend.rf_amplitude_mv", [](RunConfig& c) -> double& { return c.frontend.rf_pickup_amplitude; }, mv);
    num("frontend.schmitt_high_mv", [](RunConfig& c) -> double& { return c.frontend.schmitt_high; }, mv);
    num("frontend.schmitt_low_mv", [](RunConfig& c) -> double& { return c.frontend.schmitt_low; }, mv);
    return t;
  }();
  return table;
}

}  // namespace config_detail

/// Builds geometry.active_area from the configured source.
inline void materialize_active_area(RunConfig& config, const std::filesystem::path& base_dir = {}) {
  auto& geometry = config.scenario.geometry;
  switch (config.active_area.kind) {
    case ActiveAreaSource::Kind::quarter_spad:
      geometry.active_area = quarter_spad_map(QuarterDiscSpad{}, config.active_area.cell_size);
      break;
    case ActiveAreaSource::Kind::disc:
      geometry.active_area = disc_map(config.active_area.disc_radius, config.active_area.cell_size);
      break;
    case ActiveAreaSource::Kind::csv: {
      std::filesystem::path p(config.active_area.path);
      if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
      std::ifstream in(p);
      if (!in) throw ConfigError(0, "geometry.active_area", "cannot open " + p.string());
      try {
        geometry.active_area = read_active_area(in);
      } catch (const CsvError& e) {
        throw ConfigError(0, "geometry.active_area", p.string() + ": " + e.what());
      }
      break;
    }
  }
}

/// Missing keys keep their value in `base` (by default the reference
/// scenario).
inline RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {},
                              const RunConfig& base = {}) {
  RunConfig config = base;
  std::map<std::string, std::size_t, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto eol = text.find('\n', pos);
    std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;

    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = csv::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(line_no, "", "expected 'key = value'");
    const std::string key(csv::trim(line.substr(0, eq)));
    const std::string_view value = csv::trim(line.substr(eq + 1));

    const auto& table = config_detail::entries();
    const auto it = std::find_if(table.begin(), table.end(), [&](const auto& e) { return e.key == key; });
    if (it == table.end()) throw ConfigError(line_no, key, "unknown key");
    if (const auto prev = seen.find(key); prev != seen.end()) {
      throw ConfigError(line_no, key, "duplicate key (first set on line " + std::to_string(prev->second) + ")");
    }
    seen.emplace(key, line_no);
    try {
      it->set(config, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(line_no, key, e.what());
    }
  }

  materialize_active_area(config, base_dir);
  try {
    config.scenario.validate();
    config.dead_time.validate();
    config.frontend.validate();
    BayesianConfig{0.99, config.sub_bin, config.max_time, config.prior_ion}.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(0, "", e.what());
  }
  if (!(config.quantum_efficiency >= 0.0 && config.quantum_efficiency <= 1.0)) {
    throw ConfigError(0, "detector.quantum_efficiency", "must lie in [0,1]");
  }
  return config;
}

inline std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const auto& e : config_detail::entries()) {
    out += std::string(e.key) + " = " + e.get(config) + "\n";
  }
  return out;
}

inline RunConfig load_config(const std::filesystem::path& path, const RunConfig& base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "", "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path(), base);
}

}  // namespace spadion

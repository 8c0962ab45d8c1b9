// spadion: command-line front end for the detector simulation and analysis
// library. Each subcommand writes CSV tables into the output directory; every
// file starts with a "# manifest=<sha1>" line identifying the inputs.

#include <spadion/spadion.hpp>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace spadion;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_check_failed = 1;
constexpr int exit_input_error = 2;

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Arguments and presets
// ---------------------------------------------------------------------------

struct Args {
  bool ion = true;
  double duration_s = 0.0;  // 0 keeps trial.duration_s
  std::string targets = "0.9,0.95,0.97,0.98,0.99,0.995,0.998,0.999";
  std::size_t trials = 2000;
  double check_target = 0.0;  // 0 checks every target
  double check_tol = 0.005;
  double check_min_ms = 0.0;
  double check_max_ms = 0.0;  // 0 disables
  double window_ms = 25.0;
  std::string windows_ms = "1:40:1";
  double check_min_fidelity = 0.0;
  double check_agreement = 0.003;
  std::string offsets_um = "0:80:5";
  std::string angles_deg = "0:85:5";
  std::string positions_um = "68:98:5";
  bool synthesize = false;
  std::string input;
  std::string design = "one-at-a-time";
  double dwell_s = 50.0;
  double frontend_duration_s = 2e-3;
  double sample_rate_mhz = 50.0;
  bool check = false;
};

struct Preset {
  std::string_view name;
  std::string_view command;
  std::string_view summary;
  std::function<void(RunConfig&, Args&)> apply;
};

const std::vector<Preset>& presets() {
  static const std::vector<Preset> table{
      {"table1", "budget",
       "count budget by source toggling; synthesizes a one-at-a-time toggle set from the reference rates "
       "(50 s per setting) and decomposes it. Dead time is off because the rates are already measured counts.",
       [](RunConfig& c, Args& a) {
         c.dead_time = no_dead_time();
         a.synthesize = true;
       }},
      {"fig3", "spot", "spot-test effective area of the quarter-disc SPAD from a synthesized 800 nm raster scan",
       [](RunConfig& c, Args& a) {
         c.scenario.rng_seed = 11;
         a.synthesize = true;
       }},
      {"fig5a", "threshold",
       "count histograms at a fixed 25 ms window from 50 s with and without the ion, plus the exact "
       "threshold-fidelity curve over 1..40 ms windows",
       [](RunConfig& c, Args& a) {
         c.scenario.trial_duration = 50.0;
         a.window_ms = 25.0;
         a.check_min_fidelity = 0.996;
       }},
      {"fig5b", "fidelity",
       "adaptive Bayesian detection: fidelity and mean detection time for a range of target posteriors; "
       "--check requires 0.99 +- 0.005 within 7.7 ms",
       [](RunConfig& c, Args& a) {
         c.scenario.rng_seed = 20240101;
         a.trials = 10000;
         a.check_target = 0.99;
         a.check_tol = 0.005;
         a.check_max_ms = 7.7;
       }},
      {"fig6", "qefit",
       "collection scan over 68..98 um lateral offsets and the single-parameter quantum-efficiency fit; "
       "dead time is off since the fit model has no dead-time correction",
       [](RunConfig& c, Args& a) {
         c.scenario.rng_seed = 2024;
         c.dead_time = no_dead_time();
         a.synthesize = true;
       }},
      {"projection", "fidelity",
       "improved device: 5% collection, 100 cps dark counts, no laser scatter, 24% QE, 1 us sub-bins; "
       "--check requires fidelity 0.9977 +- 0.001 at 75 us +- 25%",
       [](RunConfig& c, Args& a) {
         const ProjectionParams p;
         c.scenario.budget = projected_budget(p);
         c.scenario.emitter = p.emitter;
         c.quantum_efficiency = p.quantum_efficiency;
         c.dead_time = no_dead_time();
         c.sub_bin = p.sub_bin;
         c.max_time = p.max_time;
         c.scenario.trial_duration = p.max_time;
         c.scenario.rng_seed = p.seed;
         a.targets = "0.9,0.99,0.9977,0.9999";
         a.trials = p.trials;
         a.check_target = p.target_posterior;
         a.check_tol = 0.001;
         a.check_min_ms = 0.75 * p.reference_time / units::ms;
         a.check_max_ms = 1.25 * p.reference_time / units::ms;
       }},
  };
  return table;
}

const Preset* find_preset(std::string_view name) {
  for (const auto& p : presets()) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Value lists
// ---------------------------------------------------------------------------

/// Comma-separated values; an item "a:b:step" expands to a, a+step, .. <= b.
std::vector<double> parse_grid(std::string_view text, std::string_view what) {
  std::vector<double> out;
  auto number = [&](std::string_view s) {
    s = csv::trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
      throw InputError(std::string(what) + ": not a number: '" + std::string(s) + "'");
    }
    return v;
  };
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto item = text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    start = comma == std::string_view::npos ? text.size() + 1 : comma + 1;
    if (csv::trim(item).empty()) continue;
    const auto c1 = item.find(':');
    if (c1 == std::string_view::npos) {
      out.push_back(number(item));
      continue;
    }
    const auto c2 = item.find(':', c1 + 1);
    if (c2 == std::string_view::npos) throw InputError(std::string(what) + ": range must be start:stop:step");
    const double a = number(item.substr(0, c1));
    const double b = number(item.substr(c1 + 1, c2 - c1 - 1));
    const double step = number(item.substr(c2 + 1));
    if (!(step > 0.0) || b < a) throw InputError(std::string(what) + ": range needs step > 0 and stop >= start");
    const auto n = static_cast<long>(std::floor((b - a) / step + 1e-9));
    for (long i = 0; i <= n; ++i) out.push_back(a + static_cast<double>(i) * step);
  }
  if (out.empty()) throw InputError(std::string(what) + ": no values");
  return out;
}

// ---------------------------------------------------------------------------
// Manifest and output files
// ---------------------------------------------------------------------------

std::string sha1_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("SHA-1 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

/// Same digest as `git hash-object` on a file with this content.
std::string git_blob_hash(std::string_view content) {
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  blob.append(content);
  return sha1_hex(blob);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

class Run {
 public:
  Run(std::string command, std::string preset, std::string config_path, RunConfig config, fs::path output_dir)
      : command_(std::move(command)), preset_(std::move(preset)), config_path_(std::move(config_path)),
        config_(std::move(config)), output_dir_(std::move(output_dir)) {}

  const RunConfig& config() const { return config_; }
  std::uint64_t seed() const { return config_.scenario.rng_seed; }

  void note(const std::string& key, const std::string& value) {
    if (!hash_.empty()) throw std::logic_error("manifest already sealed");
    notes_ += "arg." + key + " = " + value + "\n";
  }
  void note(const std::string& key, double value) { note(key, format_double(value)); }

  /// Reads an input file and records its content hash in the manifest.
  std::string input(const fs::path& path) {
    auto text = read_file(path);
    note("input", path.string() + " " + git_blob_hash(text));
    return text;
  }

  template <class F>
  void write(const std::string& name, F&& body) {
    seal();
    std::ostringstream out;
    out << "# manifest=" << hash_ << '\n' << "# command=" << command_ << '\n' << "# seed=" << seed() << '\n';
    body(out);
    std::ofstream f(output_dir_ / name, std::ios::binary);
    f << out.str();
    if (!f) throw std::runtime_error("cannot write " + (output_dir_ / name).string());
    std::printf("wrote %s\n", (output_dir_ / name).string().c_str());
  }

  const std::string& hash() {
    seal();
    return hash_;
  }

 private:
  void seal() {
    if (!hash_.empty()) return;
    std::string text = "command = " + command_ + "\npreset = " + preset_ + "\nconfig = " + config_path_ +
                       "\nseed = " + std::to_string(seed()) + "\n" + notes_ + serialize_config(config_);
    hash_ = git_blob_hash(text);
    fs::create_directories(output_dir_);
    std::ofstream(output_dir_ / "manifest.txt", std::ios::binary) << text;
  }

  std::string command_, preset_, config_path_;
  RunConfig config_;
  fs::path output_dir_;
  std::string notes_;
  std::string hash_;
};

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_simulate(Run& run, const Args& a) {
  Scenario sc = run.config().scenario;
  if (a.duration_s > 0.0) sc.trial_duration = a.duration_s;
  run.note("ion", a.ion ? "true" : "false");
  run.note("duration_s", sc.trial_duration);
  const auto stream = simulate_stream(sc, a.ion, run.config().dead_time);
  run.write("events.csv", [&](std::ostream& out) { write_event_stream(out, stream); });

  std::map<Source, std::size_t> by_source;
  for (const auto& e : stream.events) ++by_source[e.label];
  std::printf("events: %zu over %s s (%.1f cps)\n", stream.events.size(), format_double(sc.trial_duration).c_str(),
              static_cast<double>(stream.events.size()) / sc.trial_duration);
  for (Source s : all_sources) std::printf("  %-12s %zu\n", to_string(s).data(), by_source[s]);
  return exit_ok;
}

int cmd_threshold(Run& run, const Args& a) {
  const auto& cfg = run.config();
  const double window = a.window_ms * units::ms;
  const auto windows = parse_grid(a.windows_ms, "--windows");
  run.note("window_ms", a.window_ms);
  run.note("windows_ms", a.windows_ms);

  Scenario sc = cfg.scenario;
  sc.rng_seed = derive_seed(cfg.scenario.rng_seed, 1);
  const auto ion = gate_and_count(simulate_stream(sc, true, cfg.dead_time), window);
  sc.rng_seed = derive_seed(cfg.scenario.rng_seed, 2);
  const auto empty = gate_and_count(simulate_stream(sc, false, cfg.dead_time), window);
  const auto mc = threshold_fidelity(ion, empty, window);
  const double ion_rate = cfg.scenario.budget.ion_total(), empty_rate = cfg.scenario.budget.background_total();
  const auto exact = analytic_threshold_fidelity(ion_rate, empty_rate, window);
  std::vector<double> w;
  for (double ms : windows) w.push_back(ms * units::ms);
  const auto curve = threshold_curve(ion_rate, empty_rate, w);

  run.write("histograms.csv", [&](std::ostream& out) { write_histograms(out, mc); });
  run.write("threshold_curve.csv", [&](std::ostream& out) { write_threshold_curve(out, curve); });
  std::printf("%zu windows per hypothesis of %s ms: threshold %lld, fidelity %.4f (miss %.4f, false alarm %.4f)\n",
              ion.size(), format_double(a.window_ms).c_str(), static_cast<long long>(mc.threshold), mc.fidelity,
              mc.miss_rate, mc.false_alarm_rate);
  std::printf("exact Poisson: threshold %lld, fidelity %.4f\n", static_cast<long long>(exact.threshold),
              exact.fidelity);

  if (!a.check) return exit_ok;
  const bool agree = std::abs(mc.fidelity - exact.fidelity) <= a.check_agreement;
  const bool high = mc.fidelity >= a.check_min_fidelity;
  std::printf("[%s] simulated vs exact within %s\n", agree ? "PASS" : "FAIL", format_double(a.check_agreement).c_str());
  std::printf("[%s] fidelity >= %s\n", high ? "PASS" : "FAIL", format_double(a.check_min_fidelity).c_str());
  return agree && high ? exit_ok : exit_check_failed;
}

int cmd_fidelity(Run& run, const Args& a) {
  const auto& cfg = run.config();
  const auto targets = parse_grid(a.targets, "--targets");
  run.note("targets", a.targets);
  run.note("trials", std::to_string(a.trials));
  const auto curve = fidelity_curve(cfg.scenario, targets, a.trials, cfg.fidelity_options());
  run.write("fidelity_curve.csv", [&](std::ostream& out) { write_fidelity_curve(out, curve); });

  std::printf("ion %.1f cps, empty %.1f cps, %zu trials per hypothesis\n", curve.ion_rate, curve.empty_rate, a.trials);
  std::printf("%10s %10s %14s %14s\n", "target", "fidelity", "mean_time_ms", "wald_bound_ms");
  for (const auto& p : curve.bayesian) {
    std::printf("%10.5f %10.5f %14.5f %14.5f\n", p.target, p.achieved_fidelity, p.mean_time / units::ms,
                p.wald_mean_time / units::ms);
  }

  if (!a.check) return exit_ok;
  bool ok = true, any = false;
  for (const auto& p : curve.bayesian) {
    if (a.check_target > 0.0 && std::abs(p.target - a.check_target) > 1e-12) continue;
    any = true;
    const double ms = p.mean_time / units::ms;
    const bool fid = std::abs(p.achieved_fidelity - p.target) <= a.check_tol;
    const bool time = ms >= a.check_min_ms && (a.check_max_ms <= 0.0 || ms <= a.check_max_ms);
    std::printf("[%s] target %s: fidelity %.5f within %s\n", fid ? "PASS" : "FAIL", format_double(p.target).c_str(),
                p.achieved_fidelity, format_double(a.check_tol).c_str());
    std::printf("[%s] target %s: mean time %.5f ms in [%.6g, %.6g] ms\n", time ? "PASS" : "FAIL",
                format_double(p.target).c_str(), ms, a.check_min_ms,
                a.check_max_ms > 0.0 ? a.check_max_ms : std::numeric_limits<double>::infinity());
    ok = ok && fid && time;
  }
  if (!any) throw InputError("--check-target " + format_double(a.check_target) + " is not among --targets");
  return ok ? exit_ok : exit_check_failed;
}

int cmd_collection(Run& run, const Args& a) {
  std::vector<double> offsets;
  for (double um : parse_grid(a.offsets_um, "--offsets")) offsets.push_back(um * units::um);
  run.note("offsets_um", a.offsets_um);
  const auto& g = run.config().scenario.geometry;
  const auto rows = efficiency_vs_offset(g, offsets);
  run.write("collection.csv", [&](std::ostream& out) {
    out << "offset_um,efficiency,efficiency_without_arc,shadowed\n";
    for (const auto& r : rows) {
      out << format_double(r.offset / units::um) << ',' << format_double(r.result.efficiency) << ','
          << format_double(r.result.efficiency_without_arc) << ',' << (r.result.shadowed ? 1 : 0) << '\n';
    }
  });
  std::printf("active area %.2f um^2, ion-detector distance %.1f um\n", g.active_area.effective_area() * 1e12,
              g.vertical_distance() / units::um);
  for (const auto& r : rows) {
    std::printf("  %7.2f um  CE %.5f%%%s\n", r.offset / units::um, r.result.efficiency * 100.0,
                r.result.shadowed ? "  (aperture wall in line of sight)" : "");
  }
  return exit_ok;
}

int cmd_arc(Run& run, const Args& a) {
  const auto angles = parse_grid(a.angles_deg, "--angles");
  run.note("angles_deg", a.angles_deg);
  const auto& stack = run.config().scenario.geometry.stack;
  constexpr double deg = pi / 180.0;
  run.write("arc.csv", [&](std::ostream& out) {
    out << "angle_deg,r_s,r_p,r,t\n";
    for (double d : angles) {
      const double th = d * deg;
      out << format_double(d) << ',' << format_double(stack_reflectance(stack, th, Polarization::s)) << ','
          << format_double(stack_reflectance(stack, th, Polarization::p)) << ','
          << format_double(stack_reflectance(stack, th)) << ',' << format_double(stack_transmittance(stack, th))
          << '\n';
    }
  });
  for (double d : angles) std::printf("  %6.2f deg  R %.4f\n", d, stack_reflectance(stack, d * deg));
  return exit_ok;
}

SpotScan load_spot_scan(Run& run, const Args& a) {
  if (a.synthesize) {
    run.note("synthesize", "true");
    auto scan = synthesize_spot_scan(SpotScanSynthesis{}, run.seed());
    run.write("spot_scan.csv", [&](std::ostream& out) { write_spot_scan(out, scan); });
    return scan;
  }
  if (a.input.empty()) throw InputError("spot: give a scan CSV or --synthesize");
  std::istringstream in(run.input(a.input));
  try {
    return read_spot_scan(in);
  } catch (const CsvError& e) {
    throw InputError(a.input + ": " + e.what());
  }
}

int cmd_spot(Run& run, const Args& a) {
  const auto scan = load_spot_scan(run, a);
  const auto r = effective_area(scan);
  run.write("effective_area.csv", [&](std::ostream& out) { write_active_area(out, r.map); });
  std::printf("%zux%zu scan at %.1f nm steps: effective area %.2f um^2\n", scan.rows, scan.cols,
              scan.step / units::nm, r.area * 1e12);
  return exit_ok;
}

int cmd_budget(Run& run, const Args& a) {
  std::vector<ToggleMeasurement> rows;
  if (a.synthesize) {
    ToggleDesign design;
    if (a.design == "one-at-a-time") design = one_at_a_time_design();
    else if (a.design == "cumulative") design = cumulative_design();
    else throw InputError("--design must be one-at-a-time or cumulative");
    run.note("synthesize", a.design);
    run.note("dwell_s", a.dwell_s);
    rows = simulate_toggle_measurements(run.config().scenario.budget, design, a.dwell_s, run.seed());
    run.write("toggles.csv", [&](std::ostream& out) { write_toggles(out, rows); });
  } else {
    if (a.input.empty()) throw InputError("budget: give a toggles CSV or --synthesize");
    std::istringstream in(run.input(a.input));
    try {
      rows = read_toggles(in);
    } catch (const CsvError& e) {
      throw InputError(a.input + ": " + e.what());
    }
  }
  const auto est = decompose_budget(rows);
  run.write("budget.csv", [&](std::ostream& out) {
    out << "source,rate_kcps,sigma_kcps\n";
    for (Source s : all_sources) {
      out << to_string(s) << ',' << format_double(est.rates[s] / units::kcps) << ','
          << format_double(est.uncertainty[s] / units::kcps) << '\n';
    }
  });
  for (Source s : all_sources) {
    std::printf("  %-12s %8.3f +- %.3f kcps\n", to_string(s).data(), est.rates[s] / units::kcps,
                est.uncertainty[s] / units::kcps);
  }
  std::printf("  ion total %.3f kcps, background total %.3f kcps\n", est.rates.ion_total() / units::kcps,
              est.rates.background_total() / units::kcps);
  return exit_ok;
}

int cmd_qefit(Run& run, const Args& a) {
  const auto& cfg = run.config();
  QEFitInput in;
  in.geometry = cfg.scenario.geometry;
  in.emitter = cfg.scenario.emitter;
  if (a.synthesize) {
    CollectionScanSynthesis synth;
    for (double um : parse_grid(a.positions_um, "--positions")) synth.positions.push_back(um * units::um);
    synth.quantum_efficiency = cfg.quantum_efficiency;
    synth.background = cfg.scenario.budget;
    synth.background.fluorescence = 0.0;
    synth.dead_time = cfg.dead_time;
    run.note("synthesize", "true");
    run.note("positions_um", a.positions_um);
    in.positions = synth.positions;
    in.measured_fluorescence = synthesize_collection_scan(in.geometry, in.emitter, synth, run.seed());
    run.write("collection_scan.csv", [&](std::ostream& out) {
      write_collection_scan(out, CollectionScanData{in.positions, in.measured_fluorescence});
    });
  } else {
    if (a.input.empty()) throw InputError("qefit: give a collection-scan CSV or --synthesize");
    std::istringstream is(run.input(a.input));
    CollectionScanData d;
    try {
      d = read_collection_scan(is);
    } catch (const CsvError& e) {
      throw InputError(a.input + ": " + e.what());
    }
    in.positions = d.positions;
    in.measured_fluorescence = d.fluorescence;
  }
  const auto fit = fit_quantum_efficiency(in);
  run.write("qefit.csv", [&](std::ostream& out) {
    out << "offset_um,measured_cps,expected_incident_cps,fitted_cps\n";
    for (std::size_t i = 0; i < in.positions.size(); ++i) {
      out << format_double(in.positions[i] / units::um) << ',' << format_double(in.measured_fluorescence[i]) << ','
          << format_double(fit.expected_incident[i]) << ',' << format_double(fit.qe * fit.expected_incident[i])
          << '\n';
    }
  });
  std::printf("quantum efficiency %.4f +- %.4f (statistical) from %zu positions\n", fit.qe, fit.std_error,
              in.positions.size());
  return exit_ok;
}

int cmd_frontend(Run& run, const Args& a) {
  const auto& cfg = run.config();
  Scenario sc = cfg.scenario;
  sc.trial_duration = a.frontend_duration_s;
  run.note("duration_s", a.frontend_duration_s);
  run.note("sample_rate_mhz", a.sample_rate_mhz);
  const auto stream = simulate_stream(sc, a.ion, cfg.dead_time);
  const auto r = simulate_frontend(stream, cfg.frontend, a.sample_rate_mhz * units::mhz, derive_seed(run.seed(), 9));
  run.write("waveform.csv", [&](std::ostream& out) { write_waveform(out, r.waveform, r.sample_rate); });
  run.write("digital_events.csv", [&](std::ostream& out) { write_event_stream(out, r.digital); });
  std::map<Source, std::size_t> by_source;
  for (const auto& e : r.digital.events) ++by_source[e.label];
  std::printf("%zu input events, %zu digital counts\n", stream.events.size(), r.digital.events.size());
  for (Source s : all_sources) std::printf("  %-12s %zu\n", to_string(s).data(), by_source[s]);
  return exit_ok;
}

// ---------------------------------------------------------------------------
// Command-line wiring
// ---------------------------------------------------------------------------

/// Options that a preset may prefill. A value given on the command line
/// always wins.
class Binder {
 public:
  Binder(Args& user) : user_(user) {}

  template <class T>
  CLI::Option* option(CLI::App* cmd, const std::string& name, T Args::*field, const std::string& help) {
    auto* opt = cmd->add_option(name, user_.*field, help)->capture_default_str();
    fills_[cmd].push_back([this, opt, field](const Args& preset) {
      if (opt->count() == 0) user_.*field = preset.*field;
    });
    return opt;
  }

  CLI::Option* flag(CLI::App* cmd, const std::string& name, bool Args::*field, const std::string& help) {
    auto* opt = cmd->add_flag(name, user_.*field, help);
    fills_[cmd].push_back([this, opt, field](const Args& preset) {
      if (opt->count() == 0) user_.*field = preset.*field;
    });
    return opt;
  }

  void apply(CLI::App* cmd, const Args& preset) {
    for (auto& f : fills_[cmd]) f(preset);
  }

 private:
  Args& user_;
  std::map<CLI::App*, std::vector<std::function<void(const Args&)>>> fills_;
};

std::string preset_help() {
  std::string s =
      "Presets (--preset NAME; with no subcommand the preset's own subcommand runs with the\n"
      "preset's defaults; name the subcommand to pass its options, e.g. --preset projection fidelity --check):\n";
  for (const auto& p : presets()) {
    s += "  " + std::string(p.name) + " [" + std::string(p.command) + "]\n      " + std::string(p.summary) + "\n";
  }
  s += "\nExit status: 0 success or all checks met, 1 a --check threshold missed, 2 input error.\n";
  return s;
}

int run_main(int argc, char** argv) {
  CLI::App app{"SPAD ion-detection simulator and analysis tools"};
  app.footer(preset_help());
  app.require_subcommand(0, 1);
  app.fallthrough();

  std::string preset_name, config_path, output_dir = "spadion-out";
  std::optional<std::uint64_t> seed;
  app.add_option("--preset", preset_name, "Start from a bundled preset (see below)");
  app.add_option("-c,--config", config_path, "key = value config file applied on top of the preset");
  app.add_option("--seed", seed, "Override trial.seed");
  app.add_option("-o,--output-dir", output_dir, "Directory for output files")
      ->envname("SPADION_OUTPUT_DIR")
      ->capture_default_str();

  Args user;
  Binder bind(user);
  std::map<CLI::App*, std::function<int(Run&, const Args&)>> handlers;

  auto* sim = app.add_subcommand("simulate", "Timestamped event stream (events.csv)");
  bind.flag(sim, "--ion,!--no-ion", &Args::ion, "Ion present (default) or absent");
  bind.option(sim, "--duration", &Args::duration_s, "Stream length in s (0 keeps trial.duration_s)");
  handlers[sim] = cmd_simulate;

  auto* thr = app.add_subcommand("threshold", "Fixed-window count histograms and threshold fidelity");
  bind.option(thr, "--window", &Args::window_ms, "Counting window in ms");
  bind.option(thr, "--windows", &Args::windows_ms, "Windows in ms for the exact fidelity curve");
  bind.flag(thr, "--check", &Args::check, "Exit 1 unless the checks below hold");
  bind.option(thr, "--check-min-fidelity", &Args::check_min_fidelity, "Minimum simulated fidelity");
  bind.option(thr, "--check-agreement", &Args::check_agreement, "Maximum |simulated - exact| fidelity");
  handlers[thr] = cmd_threshold;

  auto* fid = app.add_subcommand("fidelity", "Adaptive Bayesian detection: fidelity vs mean detection time");
  bind.option(fid, "--targets", &Args::targets, "Target posteriors (list or start:stop:step)");
  bind.option(fid, "--trials", &Args::trials, "Trials per hypothesis")->check(CLI::PositiveNumber);
  bind.flag(fid, "--check", &Args::check, "Exit 1 unless the checks below hold");
  bind.option(fid, "--check-target", &Args::check_target, "Only check this target (0 checks all)");
  bind.option(fid, "--check-tol", &Args::check_tol, "Maximum |fidelity - target|");
  bind.option(fid, "--check-min-ms", &Args::check_min_ms, "Minimum mean detection time in ms");
  bind.option(fid, "--check-max-ms", &Args::check_max_ms, "Maximum mean detection time in ms (0 = none)");
  handlers[fid] = cmd_fidelity;

  auto* col = app.add_subcommand("collection", "Collection efficiency vs lateral ion offset");
  bind.option(col, "--offsets", &Args::offsets_um, "Lateral offsets in um (list or start:stop:step)");
  handlers[col] = cmd_collection;

  auto* arc = app.add_subcommand("arc", "Anti-reflection stack reflectance vs incidence angle");
  bind.option(arc, "--angles", &Args::angles_deg, "Angles in degrees (list or start:stop:step)");
  handlers[arc] = cmd_arc;

  auto* spot = app.add_subcommand("spot", "Effective active area from a spot-scan CSV");
  bind.option(spot, "scan", &Args::input, "Spot-scan CSV");
  bind.flag(spot, "--synthesize", &Args::synthesize, "Synthesize a scan of the quarter-disc SPAD instead");
  handlers[spot] = cmd_spot;

  auto* bud = app.add_subcommand("budget", "Count budget by source from toggle measurements");
  bind.option(bud, "toggles", &Args::input, "Toggle CSV");
  bind.flag(bud, "--synthesize", &Args::synthesize, "Simulate toggle measurements of the configured budget");
  bind.option(bud, "--design", &Args::design, "one-at-a-time or cumulative (with --synthesize)");
  bind.option(bud, "--dwell", &Args::dwell_s, "Seconds per toggle setting (with --synthesize)");
  handlers[bud] = cmd_budget;

  auto* qe = app.add_subcommand("qefit", "Quantum efficiency from a collection scan");
  bind.option(qe, "scan", &Args::input, "Collection-scan CSV (offset_um,fluorescence_cps)");
  bind.flag(qe, "--synthesize", &Args::synthesize, "Simulate the scan with detector.quantum_efficiency");
  bind.option(qe, "--positions", &Args::positions_um, "Offsets in um for --synthesize");
  handlers[qe] = cmd_qefit;

  auto* fe = app.add_subcommand("frontend", "Analog front end: waveform and Schmitt-trigger counts");
  bind.flag(fe, "--ion,!--no-ion", &Args::ion, "Ion present (default) or absent");
  bind.option(fe, "--duration", &Args::frontend_duration_s, "Stream length in s");
  bind.option(fe, "--sample-rate", &Args::sample_rate_mhz, "Waveform sample rate in MHz");
  handlers[fe] = cmd_frontend;

  auto* cfg_cmd = app.add_subcommand("config", "Print the effective configuration");
  auto* list_cmd = app.add_subcommand("presets", "List presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_input_error;
  }

  if (list_cmd->parsed()) {
    std::fputs(preset_help().c_str(), stdout);
    return exit_ok;
  }

  const Preset* preset = nullptr;
  if (!preset_name.empty()) {
    preset = find_preset(preset_name);
    if (!preset) throw InputError("unknown preset '" + preset_name + "'");
  }

  RunConfig base;
  materialize_active_area(base);
  Args preset_args;
  if (preset) {
    preset->apply(base, preset_args);
    materialize_active_area(base);
  }
  RunConfig config = config_path.empty() ? base : load_config(config_path, base);
  if (seed) config.scenario.rng_seed = *seed;

  if (cfg_cmd->parsed()) {
    std::fputs(serialize_config(config).c_str(), stdout);
    return exit_ok;
  }

  CLI::App* cmd = nullptr;
  for (auto* sub : app.get_subcommands()) cmd = sub;
  if (!cmd) {
    if (!preset) {
      std::fputs(app.help().c_str(), stderr);
      return exit_input_error;
    }
    cmd = app.get_subcommand(std::string(preset->command));
  }
  bind.apply(cmd, preset_args);

  Run run(cmd->get_name(), preset ? std::string(preset->name) : "none", config_path.empty() ? "none" : config_path,
          config, output_dir);
  const int status = handlers.at(cmd)(run, user);
  std::printf("manifest %s\n", run.hash().c_str());
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_main(argc, argv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
  } catch (const CsvError& e) {
    std::fprintf(stderr, "error: csv %s\n", e.what());
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
  } catch (const std::domain_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_check_failed;
  }
  return exit_input_error;
}

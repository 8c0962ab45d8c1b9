#pragma once

// CSV surfaces: event streams, waveforms, active-area grids, spot scans,
// toggle measurements, shuttling scans, histograms and fidelity curves.
// Lines starting with '#' are comments (the CLI writes its run manifest
// there) and are skipped by every reader.

#include <spadion/detection.hpp>
#include <spadion/estimation.hpp>
#include <spadion/optics.hpp>
#include <spadion/simulator.hpp>

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace spadion {

class CsvError : public std::runtime_error {
 public:
  CsvError(std::size_t line, std::size_t column, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
        line_(line), column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// Shortest text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf, end);
}

namespace csv {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

struct Row {
  std::size_t line = 0;  // 1-based line number in the source
  std::vector<std::string> cells;

  double number(std::size_t col) const {
    if (col >= cells.size()) throw CsvError(line, col + 1, "missing value");
    const std::string_view s = trim(cells[col]);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
      throw CsvError(line, col + 1, "not a number: '" + std::string(s) + "'");
    }
    return v;
  }

  std::int64_t integer(std::size_t col) const {
    if (col >= cells.size()) throw CsvError(line, col + 1, "missing value");
    const std::string_view s = trim(cells[col]);
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
      throw CsvError(line, col + 1, "not an integer: '" + std::string(s) + "'");
    }
    return v;
  }

  std::string_view text(std::size_t col) const {
    if (col >= cells.size()) throw CsvError(line, col + 1, "missing value");
    return trim(cells[col]);
  }

  void expect_columns(std::size_t n) const {
    if (cells.size() != n) {
      throw CsvError(line, std::min(cells.size(), n) + 1,
                     "expected " + std::to_string(n) + " columns, found " + std::to_string(cells.size()));
    }
  }
};

struct Document {
  std::vector<std::string> comments;  // without the leading '#'
  std::vector<Row> rows;

  /// Value of a "# key=value" comment, if present.
  std::optional<std::string> comment_value(std::string_view key) const {
    for (const auto& c : comments) {
      const std::string_view s = trim(c);
      if (s.size() > key.size() && s.substr(0, key.size()) == key && s[key.size()] == '=') {
        return std::string(trim(s.substr(key.size() + 1)));
      }
    }
    return std::nullopt;
  }
};

inline Document read(std::istream& in) {
  Document doc;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string_view t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      doc.comments.emplace_back(t.substr(1));
      continue;
    }
    Row row;
    row.line = number;
    std::size_t start = 0;
    while (true) {
      const auto comma = t.find(',', start);
      row.cells.emplace_back(trim(t.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    doc.rows.push_back(std::move(row));
  }
  return doc;
}

inline void expect_header(const Document& doc, std::size_t index, std::span<const std::string_view> names) {
  if (doc.rows.size() <= index) throw CsvError(0, 1, "missing header row");
  const auto& row = doc.rows[index];
  row.expect_columns(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (row.text(i) != names[i]) {
      throw CsvError(row.line, i + 1, "expected header '" + std::string(names[i]) + "', found '" + std::string(row.text(i)) + "'");
    }
  }
}

}  // namespace csv

// ---------------------------------------------------------------------------
// Event streams and waveforms
// ---------------------------------------------------------------------------

inline std::optional<Source> source_from_string(std::string_view s) {
  for (Source src : all_sources) {
    if (to_string(src) == s) return src;
  }
  return std::nullopt;
}

inline void write_event_stream(std::ostream& out, const EventStream& stream) {
  out << "# duration_s=" << format_double(stream.duration) << '\n';
  out << "timestamp_ns,label\n";
  for (const auto& e : stream.events) out << e.time << ',' << to_string(e.label) << '\n';
}

inline EventStream read_event_stream(std::istream& in) {
  const auto doc = csv::read(in);
  static constexpr std::string_view header[] = {"timestamp_ns", "label"};
  csv::expect_header(doc, 0, header);
  EventStream s;
  for (std::size_t i = 1; i < doc.rows.size(); ++i) {
    const auto& row = doc.rows[i];
    row.expect_columns(2);
    const auto label = source_from_string(row.text(1));
    if (!label) throw CsvError(row.line, 2, "unknown label '" + std::string(row.text(1)) + "'");
    s.events.push_back({row.integer(0), *label});
    if (s.events.size() > 1 && s.events.back().time <= s.events[s.events.size() - 2].time) {
      throw CsvError(row.line, 1, "timestamps must be strictly increasing");
    }
  }
  if (const auto d = doc.comment_value("duration_s")) {
    csv::Row tmp{0, {*d}};
    s.duration = tmp.number(0);
  } else {
    s.duration = s.events.empty() ? 0.0 : tick_to_seconds(s.events.back().time + 1);
  }
  return s;
}

inline void write_waveform(std::ostream& out, std::span<const double> waveform, double sample_rate) {
  out << "time_s,volts\n";
  for (std::size_t i = 0; i < waveform.size(); ++i) {
    out << format_double(static_cast<double>(i) / sample_rate) << ',' << format_double(waveform[i]) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Active-area grid
// ---------------------------------------------------------------------------

inline void write_active_area(std::ostream& out, const ActiveAreaMap& map) {
  out << "cell_um,origin_x_um,origin_y_um\n";
  out << format_double(map.cell_size / units::um) << ',' << format_double(map.origin.x / units::um) << ','
      << format_double(map.origin.y / units::um) << '\n';
  for (std::size_t r = 0; r < map.rows; ++r) {
    for (std::size_t c = 0; c < map.cols; ++c) out << (c ? "," : "") << format_double(map.at(r, c));
    out << '\n';
  }
}

inline ActiveAreaMap read_active_area(std::istream& in) {
  const auto doc = csv::read(in);
  static constexpr std::string_view header[] = {"cell_um", "origin_x_um", "origin_y_um"};
  csv::expect_header(doc, 0, header);
  if (doc.rows.size() < 3) throw CsvError(doc.rows.back().line, 1, "active-area grid has no rows");
  const auto& meta = doc.rows[1];
  meta.expect_columns(3);
  ActiveAreaMap map;
  map.cell_size = meta.number(0) * units::um;
  map.origin = {meta.number(1) * units::um, meta.number(2) * units::um};
  if (!(map.cell_size > 0.0)) throw CsvError(meta.line, 1, "cell size must be > 0");
  map.cols = doc.rows[2].cells.size();
  for (std::size_t i = 2; i < doc.rows.size(); ++i) {
    const auto& row = doc.rows[i];
    row.expect_columns(map.cols);
    for (std::size_t c = 0; c < map.cols; ++c) {
      const double w = row.number(c);
      if (!(w >= 0.0 && w <= 1.0)) throw CsvError(row.line, c + 1, "weight outside [0,1]");
      map.weights.push_back(w);
    }
  }
  map.rows = doc.rows.size() - 2;
  return map;
}

// ---------------------------------------------------------------------------
// Spot scan
// ---------------------------------------------------------------------------

inline void write_spot_scan(std::ostream& out, const SpotScan& scan) {
  out << "step_nm,dwell_ms,dark_kcps,origin_x_um,origin_y_um\n";
  out << format_double(scan.step / units::nm) << ',' << format_double(scan.dwell / units::ms) << ','
      << format_double(scan.dark_rate / units::kcps) << ',' << format_double(scan.origin.x / units::um) << ','
      << format_double(scan.origin.y / units::um) << '\n';
  for (std::size_t r = 0; r < scan.rows; ++r) {
    for (std::size_t c = 0; c < scan.cols; ++c) out << (c ? "," : "") << format_double(scan.counts[r * scan.cols + c]);
    out << '\n';
  }
}

/// Header is step_nm,dwell_ms,dark_kcps with optional origin_x_um,origin_y_um.
inline SpotScan read_spot_scan(std::istream& in) {
  const auto doc = csv::read(in);
  if (doc.rows.size() < 3) throw CsvError(doc.rows.empty() ? 0 : doc.rows.back().line, 1, "spot scan needs header, values and at least one grid row");
  const auto& head = doc.rows[0];
  const bool with_origin = head.cells.size() == 5;
  if (with_origin) {
    static constexpr std::string_view names[] = {"step_nm", "dwell_ms", "dark_kcps", "origin_x_um", "origin_y_um"};
    csv::expect_header(doc, 0, names);
  } else {
    static constexpr std::string_view names[] = {"step_nm", "dwell_ms", "dark_kcps"};
    csv::expect_header(doc, 0, names);
  }
  const auto& meta = doc.rows[1];
  meta.expect_columns(head.cells.size());
  SpotScan scan;
  scan.step = meta.number(0) * units::nm;
  scan.dwell = meta.number(1) * units::ms;
  scan.dark_rate = meta.number(2) * units::kcps;
  if (with_origin) scan.origin = {meta.number(3) * units::um, meta.number(4) * units::um};
  scan.cols = doc.rows[2].cells.size();
  for (std::size_t i = 2; i < doc.rows.size(); ++i) {
    const auto& row = doc.rows[i];
    row.expect_columns(scan.cols);
    for (std::size_t c = 0; c < scan.cols; ++c) {
      const double v = row.number(c);
      if (!(v >= 0.0)) throw CsvError(row.line, c + 1, "negative count");
      scan.counts.push_back(v);
    }
  }
  scan.rows = doc.rows.size() - 2;
  return scan;
}

// ---------------------------------------------------------------------------
// Toggle measurements
// ---------------------------------------------------------------------------

inline constexpr std::string_view toggle_header[] = {"fluorescence", "repump", "doppler", "dark", "rf", "rate_kcps", "dwell_s"};

inline void write_toggles(std::ostream& out, std::span<const ToggleMeasurement> rows) {
  for (std::size_t i = 0; i < std::size(toggle_header); ++i) out << (i ? "," : "") << toggle_header[i];
  out << '\n';
  for (const auto& m : rows) {
    for (bool a : m.active) out << (a ? 1 : 0) << ',';
    out << format_double(m.measured_rate / units::kcps) << ',' << format_double(m.dwell) << '\n';
  }
}

inline std::vector<ToggleMeasurement> read_toggles(std::istream& in) {
  const auto doc = csv::read(in);
  csv::expect_header(doc, 0, toggle_header);
  std::vector<ToggleMeasurement> out;
  for (std::size_t i = 1; i < doc.rows.size(); ++i) {
    const auto& row = doc.rows[i];
    row.expect_columns(std::size(toggle_header));
    ToggleMeasurement m;
    for (std::size_t s = 0; s < 5; ++s) {
      const auto flag = row.integer(s);
      if (flag != 0 && flag != 1) throw CsvError(row.line, s + 1, "flag must be 0 or 1");
      m.active[s] = flag == 1;
    }
    m.measured_rate = row.number(5) * units::kcps;
    m.dwell = row.number(6);
    if (!(m.measured_rate >= 0.0)) throw CsvError(row.line, 6, "rate must be >= 0");
    if (!(m.dwell > 0.0)) throw CsvError(row.line, 7, "dwell must be > 0");
    out.push_back(m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shuttling scan (offset, background-subtracted fluorescence)
// ---------------------------------------------------------------------------

struct CollectionScanData {
  std::vector<double> positions;  // m
  std::vector<double> fluorescence;  // counts/s
};

inline void write_collection_scan(std::ostream& out, const CollectionScanData& d) {
  out << "offset_um,fluorescence_cps\n";
  for (std::size_t i = 0; i < d.positions.size(); ++i) {
    out << format_double(d.positions[i] / units::um) << ',' << format_double(d.fluorescence[i]) << '\n';
  }
}

inline CollectionScanData read_collection_scan(std::istream& in) {
  const auto doc = csv::read(in);
  static constexpr std::string_view header[] = {"offset_um", "fluorescence_cps"};
  csv::expect_header(doc, 0, header);
  CollectionScanData d;
  for (std::size_t i = 1; i < doc.rows.size(); ++i) {
    const auto& row = doc.rows[i];
    row.expect_columns(2);
    d.positions.push_back(row.number(0) * units::um);
    const double f = row.number(1);
    if (!(f >= 0.0)) throw CsvError(row.line, 2, "fluorescence must be >= 0");
    d.fluorescence.push_back(f);
  }
  if (d.positions.empty()) throw CsvError(doc.rows.front().line, 1, "no data rows");
  return d;
}

// ---------------------------------------------------------------------------
// Analysis outputs
// ---------------------------------------------------------------------------

/// (count, freq_ion, freq_empty); frequencies are normalized to each class.
inline void write_histograms(std::ostream& out, const ThresholdResult& r) {
  out << "count,freq_ion,freq_empty\n";
  double n_ion = 0.0, n_empty = 0.0;
  for (auto v : r.histogram_ion) n_ion += static_cast<double>(v);
  for (auto v : r.histogram_empty) n_empty += static_cast<double>(v);
  const std::size_t bins = std::max(r.histogram_ion.size(), r.histogram_empty.size());
  for (std::size_t k = 0; k < bins; ++k) {
    const double fi = k < r.histogram_ion.size() ? static_cast<double>(r.histogram_ion[k]) / n_ion : 0.0;
    const double fe = k < r.histogram_empty.size() ? static_cast<double>(r.histogram_empty[k]) / n_empty : 0.0;
    out << k << ',' << format_double(fi) << ',' << format_double(fe) << '\n';
  }
}

inline void write_fidelity_curve(std::ostream& out, const FidelityCurve& curve) {
  out << "target,fidelity,mean_time_ms,wald_bound_ms\n";
  for (const auto& p : curve.bayesian) {
    out << format_double(p.target) << ',' << format_double(p.achieved_fidelity) << ','
        << format_double(p.mean_time / units::ms) << ',' << format_double(p.wald_mean_time / units::ms) << '\n';
  }
}

inline void write_threshold_curve(std::ostream& out, std::span<const ThresholdCurvePoint> curve) {
  out << "window_ms,threshold,fidelity\n";
  for (const auto& p : curve) {
    out << format_double(p.window / units::ms) << ',' << p.result.threshold << ',' << format_double(p.result.fidelity) << '\n';
  }
}

}  // namespace spadion

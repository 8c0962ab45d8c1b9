#pragma once

// Thin-film reflectance of the anti-reflective coating and geometric
// collection efficiency of a response-weighted planar active area.

#include <spadion/units.hpp>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace spadion {

using Complex = std::complex<double>;

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

// ---------------------------------------------------------------------------
// Thin-film stack
// ---------------------------------------------------------------------------

struct Layer {
  double thickness = 0.0;  // m
  Complex index{1.0, 0.0};

  friend bool operator==(const Layer&, const Layer&) = default;
};

/// Planar multilayer over a semi-infinite substrate. Layers are ordered from
/// the ambient side, i.e. in the order light traverses them.
struct OpticalStack {
  Complex ambient_index{1.0, 0.0};
  std::vector<Layer> layers;
  Complex substrate_index{6.9, 1.4};
  double wavelength = 370.0 * units::nm;

  void validate() const {
    if (!(wavelength > 0.0)) throw std::invalid_argument("OpticalStack: wavelength must be > 0");
    auto check_index = [](Complex n, const char* what) {
      if (n.imag() < 0.0) throw std::invalid_argument(std::string("OpticalStack: negative extinction for ") + what);
      if (!(n.real() > 0.0)) throw std::invalid_argument(std::string("OpticalStack: non-positive index for ") + what);
    };
    check_index(ambient_index, "ambient");
    check_index(substrate_index, "substrate");
    for (const auto& l : layers) {
      if (!(l.thickness > 0.0)) throw std::invalid_argument("OpticalStack: layer thickness must be > 0");
      check_index(l.index, "layer");
    }
  }

  bool lossless() const noexcept {
    if (ambient_index.imag() != 0.0 || substrate_index.imag() != 0.0) return false;
    return std::all_of(layers.begin(), layers.end(), [](const Layer& l) { return l.index.imag() == 0.0; });
  }

  friend bool operator==(const OpticalStack&, const OpticalStack&) = default;
};

namespace materials {

// Default 370 nm indices; overridable through the scenario config.
inline constexpr Complex silicon_dioxide{1.47, 0.0};
inline constexpr Complex silicon_nitride{2.10, 0.0};
inline constexpr Complex silicon{6.9, 1.4};

}  // namespace materials

inline OpticalStack bare_silicon_stack() { return OpticalStack{}; }

/// 29 nm SiN over 10 nm SiO2 on Si (SiO2 is the passivation layer on the Si).
inline OpticalStack default_arc_stack() {
  OpticalStack s;
  s.layers = {{29.0 * units::nm, materials::silicon_nitride}, {10.0 * units::nm, materials::silicon_dioxide}};
  return s;
}

enum class Polarization { s, p, unpolarized };

namespace detail {

// n cos(theta) in a medium, on the branch of a forward-decaying wave.
inline Complex normal_wavenumber(Complex n, Complex transverse) {
  Complex kz = std::sqrt(n * n - transverse * transverse);
  if (kz.imag() < 0.0 || (kz.imag() == 0.0 && kz.real() < 0.0)) kz = -kz;
  return kz;
}

inline Complex admittance(Complex n, Complex kz, Polarization pol) {
  return pol == Polarization::s ? kz : n * n / kz;
}

struct StackResponse {
  double reflectance = 0.0;
  double transmittance = 0.0;
};

// Characteristic-matrix evaluation for a single linear polarization.
inline StackResponse solve_polarized(const OpticalStack& stack, double angle, Polarization pol) {
  const Complex transverse = stack.ambient_index * std::sin(angle);
  const double k0 = 2.0 * pi / stack.wavelength;
  const Complex i{0.0, 1.0};

  // M = [[m11, m12], [m21, m22]]
  Complex m11{1.0}, m12{0.0}, m21{0.0}, m22{1.0};
  for (const auto& layer : stack.layers) {
    const Complex kz = normal_wavenumber(layer.index, transverse);
    const Complex eta = admittance(layer.index, kz, pol);
    const Complex delta = k0 * layer.thickness * kz;
    const Complex c = std::cos(delta);
    const Complex s = std::sin(delta);
    const Complex a11 = c, a12 = -i * s / eta, a21 = -i * eta * s, a22 = c;
    const Complex n11 = m11 * a11 + m12 * a21;
    const Complex n12 = m11 * a12 + m12 * a22;
    const Complex n21 = m21 * a11 + m22 * a21;
    const Complex n22 = m21 * a12 + m22 * a22;
    m11 = n11, m12 = n12, m21 = n21, m22 = n22;
  }

  const Complex kz0 = normal_wavenumber(stack.ambient_index, transverse);
  const Complex eta0 = admittance(stack.ambient_index, kz0, pol);
  const Complex kzs = normal_wavenumber(stack.substrate_index, transverse);
  const Complex etas = admittance(stack.substrate_index, kzs, pol);

  const Complex b = m11 + m12 * etas;
  const Complex c = m21 + m22 * etas;
  const Complex denom = eta0 * b + c;
  const Complex r = (eta0 * b - c) / denom;

  StackResponse out;
  out.reflectance = std::norm(r);
  out.transmittance = 4.0 * eta0.real() * etas.real() / std::norm(denom);
  return out;
}

inline StackResponse solve(const OpticalStack& stack, double angle, Polarization pol) {
  if (!(angle >= 0.0 && angle < pi / 2.0)) throw std::domain_error("stack_reflectance: angle must lie in [0, pi/2)");
  if (pol != Polarization::unpolarized) return solve_polarized(stack, angle, pol);
  const auto s = solve_polarized(stack, angle, Polarization::s);
  const auto p = solve_polarized(stack, angle, Polarization::p);
  return {0.5 * (s.reflectance + p.reflectance), 0.5 * (s.transmittance + p.transmittance)};
}

}  // namespace detail

/// |r|^2 of the stack at the given angle of incidence (radians, in the
/// ambient medium). Unpolarized is the mean of s and p.
inline double stack_reflectance(const OpticalStack& stack, double angle,
                                Polarization pol = Polarization::unpolarized) {
  return detail::solve(stack, angle, pol).reflectance;
}

/// Power transmitted into the substrate. Only meaningful for a
/// non-absorbing ambient; for lossless stacks R + T = 1.
inline double stack_transmittance(const OpticalStack& stack, double angle,
                                  Polarization pol = Polarization::unpolarized) {
  return detail::solve(stack, angle, pol).transmittance;
}

// ---------------------------------------------------------------------------
// Active area
// ---------------------------------------------------------------------------

/// Response-weighted grid in aperture-plane coordinates. `origin` is the
/// lower-left corner of cell (row 0, col 0); rows advance along +y.
struct ActiveAreaMap {
  double cell_size = 0.0;  // m
  Point2 origin;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> weights;  // row-major, rows * cols

  double at(std::size_t row, std::size_t col) const { return weights[row * cols + col]; }

  Point2 cell_center(std::size_t row, std::size_t col) const {
    return {origin.x + (static_cast<double>(col) + 0.5) * cell_size,
            origin.y + (static_cast<double>(row) + 0.5) * cell_size};
  }

  double weight_sum() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }

  double effective_area() const { return cell_size * cell_size * weight_sum(); }

  /// Response-weighted centroid; the reference point for lateral offsets.
  Point2 centroid() const {
    double sx = 0.0, sy = 0.0, sw = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double w = at(r, c);
        if (w == 0.0) continue;
        const auto p = cell_center(r, c);
        sx += w * p.x;
        sy += w * p.y;
        sw += w;
      }
    }
    if (sw == 0.0) return origin;
    return {sx / sw, sy / sw};
  }

  void validate() const {
    if (!(cell_size > 0.0)) throw std::invalid_argument("ActiveAreaMap: cell_size must be > 0");
    if (weights.size() != rows * cols) throw std::invalid_argument("ActiveAreaMap: weights size != rows*cols");
    for (double w : weights) {
      if (!(w >= 0.0 && w <= 1.0)) throw std::invalid_argument("ActiveAreaMap: weights must lie in [0,1]");
    }
  }

  friend bool operator==(const ActiveAreaMap&, const ActiveAreaMap&) = default;
};

/// Samples `response(Point2)` on a grid covering [lo, hi], averaging
/// `supersample`^2 points per cell.
template <class Response>
ActiveAreaMap sample_active_area(Response&& response, Point2 lo, Point2 hi, double cell_size,
                                 int supersample = 4) {
  if (!(cell_size > 0.0)) throw std::invalid_argument("sample_active_area: cell_size must be > 0");
  ActiveAreaMap map;
  map.cell_size = cell_size;
  map.origin = lo;
  map.cols = static_cast<std::size_t>(std::ceil((hi.x - lo.x) / cell_size - 1e-9));
  map.rows = static_cast<std::size_t>(std::ceil((hi.y - lo.y) / cell_size - 1e-9));
  map.weights.assign(map.rows * map.cols, 0.0);
  const double sub = cell_size / supersample;
  const double norm = 1.0 / (supersample * supersample);
  for (std::size_t r = 0; r < map.rows; ++r) {
    for (std::size_t c = 0; c < map.cols; ++c) {
      const double x0 = lo.x + static_cast<double>(c) * cell_size;
      const double y0 = lo.y + static_cast<double>(r) * cell_size;
      double acc = 0.0;
      for (int i = 0; i < supersample; ++i) {
        for (int j = 0; j < supersample; ++j) {
          acc += response(Point2{x0 + (j + 0.5) * sub, y0 + (i + 0.5) * sub});
        }
      }
      map.weights[r * map.cols + c] = std::clamp(acc * norm, 0.0, 1.0);
    }
  }
  return map;
}

/// Reconstructed response of one quartered SPAD occupying the +x/+y
/// quadrant of a circular aperture centred at the origin. The implant is
/// {x > gap, y > gap, r < implant_radius}; the guard ring kills response
/// within ~guard_inset of every implant edge, with a linear ramp of width
/// `ramp` centred on the inset.
///
/// implant_radius is not a measured value: it is solved so that the
/// response-weighted area is 60 µm² given the 1 µm half-gap and 2 µm inset.
struct QuarterDiscSpad {
  double gap = 1.0 * units::um;
  double implant_radius = 14.6615 * units::um;
  double guard_inset = 2.0 * units::um;
  double ramp = 1.0 * units::um;

  double response(Point2 p) const {
    const double edge = std::min({p.x - gap, p.y - gap, implant_radius - std::hypot(p.x, p.y)});
    return std::clamp((edge - (guard_inset - 0.5 * ramp)) / ramp, 0.0, 1.0);
  }

  Point2 bounding_lo() const { return {0.0, 0.0}; }
  Point2 bounding_hi() const { return {implant_radius, implant_radius}; }
};

inline ActiveAreaMap quarter_spad_map(const QuarterDiscSpad& spad = {}, double cell_size = 0.25 * units::um) {
  return sample_active_area([&](Point2 p) { return spad.response(p); }, spad.bounding_lo(), spad.bounding_hi(),
                            cell_size);
}

/// Uniform-response disc, e.g. a detector filling the whole optical aperture.
inline ActiveAreaMap disc_map(double radius, double cell_size = 0.25 * units::um) {
  return sample_active_area([&](Point2 p) { return std::hypot(p.x, p.y) <= radius ? 1.0 : 0.0; },
                            Point2{-radius, -radius}, Point2{radius, radius}, cell_size);
}

// ---------------------------------------------------------------------------
// Collection geometry
// ---------------------------------------------------------------------------

enum class EmissionPattern {
  isotropic,
  /// Linear dipole with its axis along the trap-surface normal:
  /// (3/2) sin^2(theta), theta measured from the normal.
  dipole_perpendicular,
};

struct DetectorGeometry {
  /// Along the trap axis (+x), from the active area's weighted centroid.
  double ion_lateral_offset = 0.0;
  double ion_height_above_surface = 50e-6;  // m
  double detector_recess_below_surface = 7.0 * units::um;
  /// Radius of the optical aperture well, centred on the aperture-plane origin.
  double aperture_radius = 19e-6;  // m
  ActiveAreaMap active_area;
  OpticalStack stack = default_arc_stack();
  EmissionPattern emission = EmissionPattern::isotropic;

  double vertical_distance() const { return ion_height_above_surface + detector_recess_below_surface; }

  Point2 ion_position() const {
    const auto c = active_area.centroid();
    return {c.x + ion_lateral_offset, c.y};
  }

  void validate() const {
    if (!(vertical_distance() > 0.0)) throw std::invalid_argument("DetectorGeometry: ion-to-detector distance must be > 0");
    if (!(detector_recess_below_surface >= 0.0)) throw std::invalid_argument("DetectorGeometry: recess must be >= 0");
    if (!(aperture_radius > 0.0)) throw std::invalid_argument("DetectorGeometry: aperture radius must be > 0");
    active_area.validate();
    stack.validate();
  }

  friend bool operator==(const DetectorGeometry&, const DetectorGeometry&) = default;
};

/// Geometry used throughout: reconstructed 60 µm² quarter SPAD, 50 µm ion
/// height, 7 µm recess, default ARC.
inline DetectorGeometry default_geometry() {
  DetectorGeometry g;
  g.active_area = quarter_spad_map();
  return g;
}

struct CollectionResult {
  double efficiency = 0.0;              // includes ARC transmission
  double efficiency_without_arc = 0.0;  // bare solid-angle fraction
  /// Some active cell's line of sight to the ion crosses the aperture wall.
  /// Occlusion is not applied to the efficiency.
  bool shadowed = false;
};

/// Fraction of emitted photons that reach the active area and pass the ARC.
/// Quantum efficiency is not included.
inline CollectionResult collection_efficiency(const DetectorGeometry& geometry) {
  geometry.validate();
  const auto& map = geometry.active_area;
  if (!(map.weight_sum() > 0.0)) throw std::domain_error("collection_efficiency: zero effective area");

  const double d = geometry.vertical_distance();
  const Point2 ion = geometry.ion_position();
  const double cell_area = map.cell_size * map.cell_size;
  const double wall_fraction = geometry.detector_recess_below_surface / d;

  CollectionResult out;
  for (std::size_t r = 0; r < map.rows; ++r) {
    for (std::size_t c = 0; c < map.cols; ++c) {
      const double w = map.at(r, c);
      if (w == 0.0) continue;
      const Point2 p = map.cell_center(r, c);
      const double dx = ion.x - p.x;
      const double dy = ion.y - p.y;
      const double r2 = dx * dx + dy * dy + d * d;
      const double cos_theta = d / std::sqrt(r2);
      double solid = w * cos_theta * cell_area / (4.0 * pi * r2);
      if (geometry.emission == EmissionPattern::dipole_perpendicular) {
        solid *= 1.5 * (1.0 - cos_theta * cos_theta);
      }
      const double theta = std::acos(std::min(1.0, cos_theta));
      out.efficiency_without_arc += solid;
      out.efficiency += solid * (1.0 - stack_reflectance(geometry.stack, theta));

      if (!out.shadowed) {
        const double qx = p.x + wall_fraction * dx;
        const double qy = p.y + wall_fraction * dy;
        if (std::hypot(qx, qy) > geometry.aperture_radius) out.shadowed = true;
      }
    }
  }
  return out;
}

struct OffsetEfficiency {
  double offset = 0.0;
  CollectionResult result;
};

inline std::vector<OffsetEfficiency> efficiency_vs_offset(DetectorGeometry geometry, std::span<const double> offsets) {
  if (offsets.empty()) throw std::invalid_argument("efficiency_vs_offset: offsets must be non-empty");
  std::vector<OffsetEfficiency> out;
  out.reserve(offsets.size());
  for (double off : offsets) {
    geometry.ion_lateral_offset = off;
    out.push_back({off, collection_efficiency(geometry)});
  }
  return out;
}

}  // namespace spadion

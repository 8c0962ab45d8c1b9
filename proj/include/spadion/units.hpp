#pragma once

// Unit helpers. Everything inside the library is SI (seconds, meters,
// counts/s); kcps, µm, nm and ns only appear at I/O boundaries.

#include <cstdint>
#include <numbers>

namespace spadion {

inline constexpr double pi = std::numbers::pi;

namespace units {

inline constexpr double kcps = 1e3;   // counts/s
inline constexpr double mhz = 1e6;    // Hz
inline constexpr double um = 1e-6;    // m
inline constexpr double nm = 1e-9;    // m
inline constexpr double ms = 1e-3;    // s
inline constexpr double us = 1e-6;    // s
inline constexpr double ns = 1e-9;    // s
inline constexpr double mv = 1e-3;    // V

}  // namespace units

/// Event timestamps are integer nanoseconds.
using Tick = std::int64_t;

inline constexpr double seconds_per_tick = units::ns;

constexpr double tick_to_seconds(Tick t) noexcept { return static_cast<double>(t) * seconds_per_tick; }

}  // namespace spadion

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>

namespace labmon {

// Virtual time: integer microseconds since scenario start. Every latency in
// the model is an exact multiple of 1 us, so schedules never drift.
using SimTime = std::chrono::microseconds;

inline constexpr SimTime kDay = std::chrono::hours(24);

inline SimTime from_seconds(double s) {
    return SimTime(static_cast<std::int64_t>(std::llround(s * 1e6)));
}

inline double to_seconds(SimTime t) {
    return static_cast<double>(t.count()) / 1e6;
}

// Fixed six-decimal rendering used by every text artifact.
std::string format_seconds(SimTime t);

}  // namespace labmon

#include "labmon/time.hpp"

#include <fmt/format.h>

namespace labmon {

std::string format_seconds(SimTime t) {
    const auto us = t.count();
    const auto mag = us < 0 ? -us : us;
    return fmt::format("{}{}.{:06d}", us < 0 ? "-" : "", mag / 1000000, mag % 1000000);
}

}  // namespace labmon

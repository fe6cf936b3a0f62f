#include "labmon/sensors.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <limits>
#include <numbers>
#include <random>

#include <fmt/format.h>

namespace labmon::sensors {

std::string_view to_string(SensorModel m) {
    switch (m) {
    case SensorModel::ds18b20: return "DS18B20";
    case SensorModel::max31855: return "MAX31855";
    case SensorModel::ads1115_channel: return "ADS1115_channel";
    case SensorModel::generic: return "GENERIC";
    }
    return "GENERIC";
}

std::string_view to_string(Bus b) {
    switch (b) {
    case Bus::one_wire: return "ONE_WIRE";
    case Bus::i2c: return "I2C";
    case Bus::analog: return "ANALOG";
    }
    return "ONE_WIRE";
}

std::string_view to_string(Quality q) {
    switch (q) {
    case Quality::ok: return "OK";
    case Quality::stale: return "STALE";
    case Quality::fault: return "FAULT";
    }
    return "OK";
}

SensorModel parse_model(std::string_view s) {
    for (auto m : {SensorModel::ds18b20, SensorModel::max31855, SensorModel::ads1115_channel,
                   SensorModel::generic})
        if (to_string(m) == s)
            return m;
    throw RegistryError(fmt::format("unknown sensor model '{}'", s));
}

Bus parse_bus(std::string_view s) {
    for (auto b : {Bus::one_wire, Bus::i2c, Bus::analog})
        if (to_string(b) == s)
            return b;
    throw RegistryError(fmt::format("unknown bus '{}'", s));
}

double default_conversion_factor(SensorModel m) {
    switch (m) {
    case SensorModel::ds18b20: return 0.0625;
    case SensorModel::max31855: return 0.25;
    default: return 1.0;
    }
}

int native_bits(SensorModel m) {
    return m == SensorModel::ds18b20 ? 12 : 0;
}

void SensorDescriptor::validate() const {
    if (id.empty())
        throw RegistryError("sensor id must not be empty");
    const int lo_bits = 9;
    const int hi_bits = model == SensorModel::ds18b20 ? 12 : 16;
    if (resolution_bits < lo_bits || resolution_bits > hi_bits)
        throw RegistryError(fmt::format("sensor '{}': resolution {} bits outside {}..{}", id,
                                        resolution_bits, lo_bits, hi_bits));
    if (!operating_range.valid())
        throw RegistryError(fmt::format("sensor '{}': operating range needs lo < hi", id));
    if (!(alarm_range.hi >= alarm_range.lo))
        throw RegistryError(fmt::format("sensor '{}': alarm range needs lo <= hi", id));
    if (!(conversion_factor > 0.0) || !std::isfinite(conversion_factor))
        throw RegistryError(fmt::format("sensor '{}': conversion factor must be positive", id));
    if (slot_index && (*slot_index < 0 || *slot_index >= static_cast<int>(codec::kSlotCount)))
        throw RegistryError(fmt::format("sensor '{}': slot index must be 0..10", id));
}

SimTime conversion_time(const SensorDescriptor& d) {
    using std::chrono::microseconds;
    using std::chrono::milliseconds;
    if (d.bus == Bus::analog)
        return microseconds(21);
    switch (d.model) {
    case SensorModel::ds18b20:
        switch (d.resolution_bits) {
        case 9: return milliseconds(94);
        case 10: return milliseconds(188);
        case 11: return milliseconds(375);
        default: return milliseconds(750);
        }
    case SensorModel::max31855: return milliseconds(100);
    case SensorModel::ads1115_channel: return milliseconds(8);
    case SensorModel::generic: return milliseconds(10);
    }
    return milliseconds(10);
}

namespace {
int dropped_bits(const SensorDescriptor& d) {
    const int native = native_bits(d.model);
    return native > d.resolution_bits ? native - d.resolution_bits : 0;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}
}  // namespace

double quantization_step(const SensorDescriptor& d) {
    return d.conversion_factor * static_cast<double>(1 << dropped_bits(d));
}

std::int64_t to_raw(const SensorDescriptor& d, double truth) {
    // floor: reduced resolutions truncate the low register bits
    const auto coarse = static_cast<std::int64_t>(std::floor(truth / quantization_step(d)));
    const std::int64_t raw = coarse * (std::int64_t{1} << dropped_bits(d));
    return std::clamp<std::int64_t>(raw, -32768, 32767);
}

double SignalGenerator::truth(SimTime t) const {
    const double ts = to_seconds(t);
    switch (kind) {
    case GeneratorKind::constant: return value;
    case GeneratorKind::ramp: return value + slope * ts;
    case GeneratorKind::sine:
        return value + amplitude * std::sin(2.0 * std::numbers::pi * ts / period_s + phase_rad);
    case GeneratorKind::trace: {
        if (trace.empty())
            return value;
        if (ts <= trace.front().first)
            return trace.front().second;
        if (ts >= trace.back().first)
            return trace.back().second;
        auto hi = std::upper_bound(trace.begin(), trace.end(), ts,
                                   [](double v, const auto& p) { return v < p.first; });
        auto lo = hi - 1;
        const double f = (ts - lo->first) / (hi->first - lo->first);
        return lo->second + f * (hi->second - lo->second);
    }
    }
    return value;
}

double SignalGenerator::sample(SimTime t) const {
    const double base = truth(t);
    if (noise_rms <= 0.0)
        return base;
    // Noise is a pure function of (seed, t) so reading order never matters.
    std::mt19937_64 rng(splitmix64(seed ^ static_cast<std::uint64_t>(t.count())));
    std::normal_distribution<double> n(0.0, noise_rms);
    return base + n(rng);
}

bool SignalGenerator::faulted(SimTime t) const {
    return std::any_of(faults.begin(), faults.end(),
                       [t](const FaultWindow& f) { return t >= f.start && t < f.end; });
}

Reading read_sensor(const SensorDescriptor& d, const SignalGenerator& g, SimTime t_request) {
    Reading r;
    r.sensor_id = d.id;
    r.t = t_request + conversion_time(d);
    if (g.faulted(t_request)) {
        r.quality = Quality::fault;
        r.value = std::numeric_limits<double>::quiet_NaN();
        return r;
    }
    r.raw = to_raw(d, g.sample(t_request));
    r.value = static_cast<double>(r.raw) * d.conversion_factor;
    return r;
}

SensorRegistry::SensorRegistry(std::map<Bus, int> max_per_bus)
    : max_per_bus_(std::move(max_per_bus)) {}

void SensorRegistry::add(SensorDescriptor d) {
    d.validate();
    int on_bus = 0;
    for (const auto& s : sensors_) {
        if (s.id == d.id)
            throw RegistryError(fmt::format("duplicate sensor id '{}'", d.id));
        if (d.slot_index && s.slot_index == d.slot_index)
            throw RegistryError(fmt::format("slot {} already used by '{}'", *d.slot_index, s.id));
        if (s.bus == d.bus) {
            ++on_bus;
            if (!d.address.empty() && s.address == d.address)
                throw RegistryError(fmt::format("address '{}' already used on bus {}", d.address,
                                                to_string(d.bus)));
        }
    }
    if (auto it = max_per_bus_.find(d.bus); it != max_per_bus_.end() && on_bus >= it->second)
        throw RegistryError(fmt::format("bus {} is full ({} sensors)", to_string(d.bus), it->second));
    sensors_.push_back(std::move(d));
}

const SensorDescriptor& SensorRegistry::find(std::string_view id) const {
    for (const auto& s : sensors_)
        if (s.id == id)
            return s;
    throw LookupError(fmt::format("unknown sensor '{}'", id));
}

bool SensorRegistry::contains(std::string_view id) const {
    return std::any_of(sensors_.begin(), sensors_.end(),
                       [id](const SensorDescriptor& s) { return s.id == id; });
}

codec::SlotRanges SensorRegistry::slot_ranges() const {
    codec::SlotRanges out;
    for (const auto& s : sensors_)
        if (s.slot_index)
            out[static_cast<std::size_t>(*s.slot_index)] = s.operating_range;
    return out;
}

std::array<std::string, codec::kSlotCount> SensorRegistry::slot_ids() const {
    std::array<std::string, codec::kSlotCount> out;
    for (const auto& s : sensors_)
        if (s.slot_index)
            out[static_cast<std::size_t>(*s.slot_index)] = s.id;
    return out;
}

PollSchedule poll_cycle(const SensorRegistry& registry, SimTime t_start, SimTime wait) {
    PollSchedule out;
    SimTime t = t_start;
    for (const auto& d : registry.sensors()) {
        const SimTime ready = t + conversion_time(d);
        out.reads.push_back({d.id, t, ready});
        t = ready + wait;
    }
    out.period = t - t_start;
    return out;
}

std::optional<AlarmEvent> alarm_check(const Reading& r, const SensorDescriptor& d) {
    if (r.quality != Quality::ok)
        return std::nullopt;
    if (r.value > d.alarm_range.hi)
        return AlarmEvent{r.sensor_id, AlarmDirection::high, r.value, r.t};
    if (r.value < d.alarm_range.lo)
        return AlarmEvent{r.sensor_id, AlarmDirection::low, r.value, r.t};
    return std::nullopt;
}

std::optional<AlarmEvent> AlarmTracker::check(const Reading& r, const SensorDescriptor& d) {
    if (r.quality != Quality::ok)
        return std::nullopt;
    auto level = alarm_check(r, d);
    auto it = active_.find(r.sensor_id);
    if (!level) {
        if (it != active_.end())
            active_.erase(it);
        return std::nullopt;
    }
    if (it != active_.end() && it->second == level->direction)
        return std::nullopt;
    active_[r.sensor_id] = level->direction;
    return level;
}

void write_readings_csv(std::ostream& out, std::span<const Reading> readings) {
    out << "t,sensor_id,value\n";
    for (const auto& r : readings)
        out << format_seconds(r.t) << ',' << r.sensor_id << ',' << fmt::format("{}", r.value) << '\n';
}

}  // namespace labmon::sensors

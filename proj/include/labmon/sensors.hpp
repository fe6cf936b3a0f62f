#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "labmon/codec.hpp"
#include "labmon/time.hpp"

namespace labmon::sensors {

class LookupError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

class RegistryError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class SensorModel { ds18b20, max31855, ads1115_channel, generic };
// analog = one of the board's own 12-bit ADC channels
enum class Bus { one_wire, i2c, analog };

std::string_view to_string(SensorModel m);
std::string_view to_string(Bus b);
SensorModel parse_model(std::string_view s);
Bus parse_bus(std::string_view s);

struct AlarmRange {
    double lo = 0.0;
    double hi = 0.0;
    friend bool operator==(const AlarmRange&, const AlarmRange&) = default;
};

struct SensorDescriptor {
    std::string id;
    SensorModel model = SensorModel::generic;
    Bus bus = Bus::one_wire;
    std::string address;
    int resolution_bits = 12;
    codec::QuantRange operating_range;  // also the slot quantization range
    AlarmRange alarm_range;
    double conversion_factor = 1.0;  // engineering units per raw LSB
    std::optional<int> slot_index;

    void validate() const;
    friend bool operator==(const SensorDescriptor&, const SensorDescriptor&) = default;
};

double default_conversion_factor(SensorModel m);

// Native register width; reduced resolutions drop low bits of this word.
int native_bits(SensorModel m);

SimTime conversion_time(const SensorDescriptor& d);

// Smallest representable increment at the configured resolution.
double quantization_step(const SensorDescriptor& d);

enum class Quality { ok, stale, fault };
std::string_view to_string(Quality q);

struct Reading {
    std::string sensor_id;
    SimTime t{0};
    double value = 0.0;
    std::int64_t raw = 0;
    Quality quality = Quality::ok;
};

enum class GeneratorKind { constant, ramp, sine, trace };

struct FaultWindow {
    SimTime start{0};
    SimTime end{0};
};

// Ground truth for one virtual sensor.
struct SignalGenerator {
    GeneratorKind kind = GeneratorKind::constant;
    double value = 0.0;       // constant level, ramp start, sine offset
    double slope = 0.0;       // ramp, units per second
    double amplitude = 0.0;   // sine
    double period_s = 1.0;    // sine
    double phase_rad = 0.0;   // sine
    std::vector<std::pair<double, double>> trace;  // (t_s, value), sorted
    double noise_rms = 0.0;
    std::uint64_t seed = 0;
    std::vector<FaultWindow> faults;

    double truth(SimTime t) const;             // noise-free
    double sample(SimTime t) const;            // truth + seeded noise
    bool faulted(SimTime t) const;
};

// Quantize a ground-truth value the way the sensor's ADC/register would.
std::int64_t to_raw(const SensorDescriptor& d, double truth);

/// Start a conversion at t_request; the reading is timestamped when the
/// conversion completes.
Reading read_sensor(const SensorDescriptor& d, const SignalGenerator& g, SimTime t_request);

class SensorRegistry {
public:
    explicit SensorRegistry(std::map<Bus, int> max_per_bus = {{Bus::one_wire, 32},
                                                              {Bus::i2c, 16},
                                                              {Bus::analog, 4}});

    void add(SensorDescriptor d);
    void clear() { sensors_.clear(); }
    const SensorDescriptor& find(std::string_view id) const;
    bool contains(std::string_view id) const;
    const std::vector<SensorDescriptor>& sensors() const { return sensors_; }
    bool empty() const { return sensors_.empty(); }

    codec::SlotRanges slot_ranges() const;
    // sensor id per slot, empty string for unused slots
    std::array<std::string, codec::kSlotCount> slot_ids() const;

private:
    std::map<Bus, int> max_per_bus_;
    std::vector<SensorDescriptor> sensors_;
};

struct ScheduledRead {
    std::string sensor_id;
    SimTime request{0};
    SimTime ready{0};
};

inline constexpr SimTime kDefaultAcquisitionWait = std::chrono::milliseconds(1500);

struct PollSchedule {
    std::vector<ScheduledRead> reads;
    SimTime period{0};
};

// One sequential pass over the registry starting at t_start.
PollSchedule poll_cycle(const SensorRegistry& registry, SimTime t_start,
                        SimTime wait = kDefaultAcquisitionWait);

enum class AlarmDirection { low, high };

struct AlarmEvent {
    std::string sensor_id;
    AlarmDirection direction = AlarmDirection::high;
    double value = 0.0;
    SimTime t{0};
};

// Level check with strict inequalities; no state.
std::optional<AlarmEvent> alarm_check(const Reading& r, const SensorDescriptor& d);

/// Edge-triggered alarms: a sensor re-arms after a reading back inside the
/// alarm band or on a crossing to the opposite side.
class AlarmTracker {
public:
    std::optional<AlarmEvent> check(const Reading& r, const SensorDescriptor& d);
    void reset() { active_.clear(); }

private:
    std::map<std::string, AlarmDirection, std::less<>> active_;
};

void write_readings_csv(std::ostream& out, std::span<const Reading> readings);

}  // namespace labmon::sensors

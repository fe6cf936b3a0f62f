#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

// Wire formats shared by the node, the UNB network and the backend.
// Byte layouts are documented in docs/protocol.md.
namespace labmon::codec {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class FrameError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kSlotCount = 11;
inline constexpr std::size_t kUplinkSize = 12;
inline constexpr std::size_t kDownlinkSize = 8;

using UplinkPayload = std::array<std::uint8_t, kUplinkSize>;
using DownlinkPayload = std::array<std::uint8_t, kDownlinkSize>;

/// Engineering-unit interval mapped onto the 256 codes of one payload byte.
struct QuantRange {
    double lo = 0.0;
    double hi = 1.0;

    bool valid() const;
    double step() const { return (hi - lo) / 255.0; }
    friend bool operator==(const QuantRange&, const QuantRange&) = default;
};

void validate(const QuantRange& range);

/// Event byte of an uplink report. Codes 0-15 are reserved, 16-255 are free
/// for user-defined events.
enum class EventCode : std::uint8_t {
    periodic_report = 0,
    power_loss = 1,
    power_restore = 2,
    sensor_alarm = 3,
    ethernet_lost = 4,
    ethernet_restored = 5,
    low_battery = 6,
    // periodic report that also acknowledges one executed downlink command
    command_ack = 7,
};

inline constexpr std::uint8_t kFirstUserEventCode = 16;

bool is_alert(EventCode code);
bool is_user_defined(EventCode code);
std::string_view event_name(EventCode code);

std::uint8_t quantize(double value, const QuantRange& range);
double dequantize(std::uint8_t code, const QuantRange& range);

using SlotValues = std::array<std::optional<double>, kSlotCount>;
// A slot is active iff it has a range.
using SlotRanges = std::array<std::optional<QuantRange>, kSlotCount>;

struct UplinkFrame {
    EventCode event = EventCode::periodic_report;
    std::array<std::uint8_t, kSlotCount> slots{};
};

UplinkPayload serialize(const UplinkFrame& frame);

// Inactive slots and missing (or NaN) values are sent as 0x00.
UplinkPayload encode_uplink(EventCode event, const SlotValues& values, const SlotRanges& ranges);

struct DecodedUplink {
    EventCode event = EventCode::periodic_report;
    SlotValues values;
};

DecodedUplink decode_uplink(std::span<const std::uint8_t> payload, const SlotRanges& ranges);

enum class Opcode : std::uint8_t {
    nop = 0x00,
    set_outputs = 0x01,
    reload_config = 0x02,
    set_flags = 0x03,
};

namespace flags {
inline constexpr std::uint8_t display_on = 0x01;
inline constexpr std::uint8_t alert_http_duplicate = 0x02;
}  // namespace flags

struct DownlinkFrame {
    std::uint8_t opcode = 0;
    std::uint8_t io_mask = 0;     // lower nibble: ports 0..3
    std::uint8_t io_values = 0;   // lower nibble: levels for masked ports
    std::uint8_t config_flags = 0;
    std::array<std::uint8_t, 3> reserved{};

    friend bool operator==(const DownlinkFrame&, const DownlinkFrame&) = default;
};

std::uint8_t checksum(std::span<const std::uint8_t> first_seven);

// Throws FrameError when io_mask / io_values use the upper nibble.
DownlinkPayload encode_downlink(const DownlinkFrame& frame);

// Throws FrameError on wrong length, checksum mismatch or upper-nibble bits.
DownlinkFrame decode_downlink(std::span<const std::uint8_t> payload);

std::string to_hex(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> from_hex(std::string_view hex);

}  // namespace labmon::codec

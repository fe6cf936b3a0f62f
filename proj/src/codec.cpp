#include "labmon/codec.hpp"

#include <algorithm>
#include <cmath>

namespace labmon::codec {

bool QuantRange::valid() const {
    return std::isfinite(lo) && std::isfinite(hi) && hi > lo;
}

void validate(const QuantRange& range) {
    if (!range.valid())
        throw ConfigError("quantization range requires finite lo < hi");
}

bool is_alert(EventCode code) {
    const auto c = static_cast<std::uint8_t>(code);
    return c >= 1 && c <= 6;
}

bool is_user_defined(EventCode code) {
    return static_cast<std::uint8_t>(code) >= kFirstUserEventCode;
}

std::string_view event_name(EventCode code) {
    switch (code) {
    case EventCode::periodic_report: return "periodic_report";
    case EventCode::power_loss: return "power_loss";
    case EventCode::power_restore: return "power_restore";
    case EventCode::sensor_alarm: return "sensor_alarm";
    case EventCode::ethernet_lost: return "ethernet_lost";
    case EventCode::ethernet_restored: return "ethernet_restored";
    case EventCode::low_battery: return "low_battery";
    case EventCode::command_ack: return "command_ack";
    }
    return is_user_defined(code) ? "user_event" : "reserved";
}

std::uint8_t quantize(double value, const QuantRange& range) {
    validate(range);
    if (std::isnan(value))
        return 0;
    // std::round rounds half away from zero
    const double scaled = std::round((value - range.lo) / (range.hi - range.lo) * 255.0);
    return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

double dequantize(std::uint8_t code, const QuantRange& range) {
    validate(range);
    return range.lo + code * (range.hi - range.lo) / 255.0;
}

UplinkPayload serialize(const UplinkFrame& frame) {
    UplinkPayload out{};
    out[0] = static_cast<std::uint8_t>(frame.event);
    std::copy(frame.slots.begin(), frame.slots.end(), out.begin() + 1);
    return out;
}

UplinkPayload encode_uplink(EventCode event, const SlotValues& values, const SlotRanges& ranges) {
    UplinkFrame frame;
    frame.event = event;
    for (std::size_t i = 0; i < kSlotCount; ++i) {
        if (ranges[i] && values[i])
            frame.slots[i] = quantize(*values[i], *ranges[i]);
    }
    return serialize(frame);
}

DecodedUplink decode_uplink(std::span<const std::uint8_t> payload, const SlotRanges& ranges) {
    if (payload.size() != kUplinkSize)
        throw FrameError("uplink payload must be exactly 12 bytes, got " +
                         std::to_string(payload.size()));
    DecodedUplink out;
    out.event = static_cast<EventCode>(payload[0]);
    for (std::size_t i = 0; i < kSlotCount; ++i) {
        if (ranges[i])
            out.values[i] = dequantize(payload[i + 1], *ranges[i]);
    }
    return out;
}

std::uint8_t checksum(std::span<const std::uint8_t> first_seven) {
    std::uint8_t x = 0;
    for (auto b : first_seven)
        x ^= b;
    return x;
}

DownlinkPayload encode_downlink(const DownlinkFrame& frame) {
    if ((frame.io_mask & 0xF0) || (frame.io_values & 0xF0))
        throw FrameError("io_mask and io_values only address ports 0..3");
    DownlinkPayload out{frame.opcode, frame.io_mask, frame.io_values, frame.config_flags,
                        frame.reserved[0], frame.reserved[1], frame.reserved[2], 0};
    out[7] = checksum(std::span(out).first(7));
    return out;
}

DownlinkFrame decode_downlink(std::span<const std::uint8_t> payload) {
    if (payload.size() != kDownlinkSize)
        throw FrameError("downlink payload must be exactly 8 bytes, got " +
                         std::to_string(payload.size()));
    if (checksum(payload.first(7)) != payload[7])
        throw FrameError("downlink checksum mismatch");
    if ((payload[1] & 0xF0) || (payload[2] & 0xF0))
        throw FrameError("downlink io fields use the upper nibble");
    DownlinkFrame f;
    f.opcode = payload[0];
    f.io_mask = payload[1];
    f.io_values = payload[2];
    f.config_flags = payload[3];
    f.reserved = {payload[4], payload[5], payload[6]};
    return f;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0x0F]);
    }
    return out;
}

namespace {
int nibble(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}
}  // namespace

std::vector<std::uint8_t> from_hex(std::string_view hex) {
    if (hex.size() % 2 != 0)
        throw FrameError("hex string has odd length");
    std::vector<std::uint8_t> out;
    out.reserve(hex.size() / 2);
    for (std::size_t i = 0; i < hex.size(); i += 2) {
        const int hi = nibble(hex[i]);
        const int lo = nibble(hex[i + 1]);
        if (hi < 0 || lo < 0)
            throw FrameError("invalid hex digit");
        out.push_back(static_cast<std::uint8_t>(hi << 4 | lo));
    }
    return out;
}

}  // namespace labmon::codec

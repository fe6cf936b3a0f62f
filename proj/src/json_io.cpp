#include "labmon/json_io.hpp"

#include <cmath>

#include <fmt/format.h>

namespace labmon::json_io {

namespace {

backend::ValidationError field_error(const char* key, std::string_view what) {
    return backend::ValidationError(fmt::format("field '{}': {}", key, what));
}

int get_int(const json& obj, const char* key) {
    const json& v = require(obj, key);
    if (!v.is_number_integer()) throw field_error(key, "expected integer");
    return v.get<int>();
}

std::uint8_t get_byte(const json& obj, const char* key, std::uint8_t fallback = 0) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number_integer()) throw field_error(key, "expected integer");
    auto x = v.get<std::int64_t>();
    if (x < 0 || x > 255) throw field_error(key, "out of byte range");
    return static_cast<std::uint8_t>(x);
}

}  // namespace

const json& require(const json& obj, const char* key) {
    if (!obj.is_object()) throw backend::ValidationError("expected JSON object");
    auto it = obj.find(key);
    if (it == obj.end()) throw field_error(key, "missing");
    return *it;
}

double get_number(const json& obj, const char* key) {
    const json& v = require(obj, key);
    if (!v.is_number()) throw field_error(key, "expected number");
    double x = v.get<double>();
    if (!std::isfinite(x)) throw field_error(key, "not finite");
    return x;
}

std::string get_string(const json& obj, const char* key) {
    const json& v = require(obj, key);
    if (!v.is_string()) throw field_error(key, "expected string");
    return v.get<std::string>();
}

json to_json(const codec::QuantRange& r) {
    return {{"lo", r.lo}, {"hi", r.hi}};
}

codec::QuantRange range_from_json(const json& j) {
    return {get_number(j, "lo"), get_number(j, "hi")};
}

json to_json(const sensors::SensorDescriptor& d) {
    json j = {
        {"id", d.id},
        {"model", sensors::to_string(d.model)},
        {"bus", sensors::to_string(d.bus)},
        {"address", d.address},
        {"resolution_bits", d.resolution_bits},
        {"operating_range", to_json(d.operating_range)},
        {"alarm_range", {{"lo", d.alarm_range.lo}, {"hi", d.alarm_range.hi}}},
        {"conversion_factor", d.conversion_factor},
    };
    j["slot_index"] = d.slot_index ? json(*d.slot_index) : json(nullptr);
    return j;
}

sensors::SensorDescriptor descriptor_from_json(const json& j) {
    sensors::SensorDescriptor d;
    d.id = get_string(j, "id");
    try {
        d.model = sensors::parse_model(get_string(j, "model"));
        d.bus = sensors::parse_bus(get_string(j, "bus"));
    } catch (const std::invalid_argument& e) {
        throw backend::ValidationError(e.what());
    }
    if (j.contains("address")) d.address = get_string(j, "address");
    d.resolution_bits = j.contains("resolution_bits") ? get_int(j, "resolution_bits") : 12;
    d.operating_range = range_from_json(require(j, "operating_range"));
    const json& a = require(j, "alarm_range");
    d.alarm_range = {get_number(a, "lo"), get_number(a, "hi")};
    d.conversion_factor = j.contains("conversion_factor")
                              ? get_number(j, "conversion_factor")
                              : sensors::default_conversion_factor(d.model);
    if (j.contains("slot_index") && !j.at("slot_index").is_null())
        d.slot_index = get_int(j, "slot_index");
    try {
        d.validate();
    } catch (const std::invalid_argument& e) {
        throw backend::ValidationError(e.what());
    }
    return d;
}

json to_json(const codec::DownlinkFrame& f) {
    return {
        {"opcode", f.opcode},
        {"io_mask", f.io_mask},
        {"io_values", f.io_values},
        {"config_flags", f.config_flags},
        {"frame", codec::to_hex(codec::encode_downlink(f))},
    };
}

codec::DownlinkFrame frame_from_json(const json& j) {
    if (!j.is_object()) throw backend::ValidationError("expected JSON object");
    try {
        if (j.contains("frame")) {
            auto bytes = codec::from_hex(get_string(j, "frame"));
            return codec::decode_downlink(bytes);
        }
        codec::DownlinkFrame f;
        f.opcode = get_byte(j, "opcode");
        if (!j.contains("opcode")) throw field_error("opcode", "missing");
        f.io_mask = get_byte(j, "io_mask");
        f.io_values = get_byte(j, "io_values");
        f.config_flags = get_byte(j, "config_flags");
        codec::encode_downlink(f);  // nibble check
        return f;
    } catch (const codec::FrameError& e) {
        throw backend::ValidationError(e.what());
    } catch (const std::invalid_argument& e) {
        throw backend::ValidationError(e.what());
    }
}

json to_json(const backend::SensorConfigRow& row) {
    json j = to_json(row.sensor);
    j["device_id"] = row.device_id;
    j["display_name"] = row.display_name;
    j["units"] = row.units;
    return j;
}

backend::SensorConfigRow row_from_json(const json& j) {
    backend::SensorConfigRow row;
    row.sensor = descriptor_from_json(j);
    row.device_id = get_string(j, "device_id");
    row.display_name = j.contains("display_name") ? get_string(j, "display_name") : row.sensor.id;
    if (j.contains("units")) row.units = get_string(j, "units");
    return row;
}

json to_json(const backend::CommandQueueEntry& e) {
    return {
        {"id", e.id},
        {"device_id", e.device_id},
        {"created", to_seconds(e.created)},
        {"updated", to_seconds(e.updated)},
        {"status", backend::to_string(e.status)},
        {"in_flight", e.in_flight},
        {"command", to_json(e.frame)},
    };
}

json to_json(const backend::MessageRecord& r) {
    json readings = json::array();
    for (const auto& s : r.readings) {
        json x = {{"sensor_id", s.sensor_id}, {"value", s.value}};
        if (s.unknown_sensor) x["unknown_sensor"] = true;
        readings.push_back(std::move(x));
    }
    json j = {
        {"id", r.id},
        {"t", to_seconds(r.t)},
        {"device_id", r.device_id},
        {"path", backend::to_string(r.path)},
        {"event", static_cast<int>(r.event)},
        {"event_name", codec::event_name(r.event)},
        {"readings", std::move(readings)},
    };
    if (r.rssi) j["rssi"] = *r.rssi;
    if (r.snr) j["snr"] = *r.snr;
    return j;
}

json to_json(const backend::PushEvent& e) {
    return {
        {"id", e.id},
        {"t", to_seconds(e.t)},
        {"device_id", e.device_id},
        {"kind", e.kind},
        {"data", json::parse(e.data_json)},
    };
}

node::HttpReport report_from_json(const json& j) {
    node::HttpReport r;
    r.device_id = get_string(j, "device_id");
    if (j.contains("t")) r.t = from_seconds(get_number(j, "t"));
    if (j.contains("event")) {
        int code = get_int(j, "event");
        if (code < 0 || code > 255) throw field_error("event", "out of byte range");
        r.event = static_cast<codec::EventCode>(code);
    }
    if (j.contains("readings")) {
        const json& arr = j.at("readings");
        if (!arr.is_array()) throw field_error("readings", "expected array");
        for (const auto& x : arr)
            r.readings.push_back({get_string(x, "sensor_id"), get_number(x, "value")});
    }
    if (j.contains("acks")) {
        r.acks = get_int(j, "acks");
        if (r.acks < 0) throw field_error("acks", "negative");
    }
    return r;
}

json to_json(const node::HttpReport& r) {
    json readings = json::array();
    for (const auto& x : r.readings) readings.push_back({{"sensor_id", x.sensor_id}, {"value", x.value}});
    return {
        {"device_id", r.device_id},
        {"t", to_seconds(r.t)},
        {"event", static_cast<int>(r.event)},
        {"readings", std::move(readings)},
        {"acks", r.acks},
    };
}

}  // namespace labmon::json_io

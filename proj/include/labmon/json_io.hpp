#pragma once

#include <json.hpp>

#include "labmon/backend.hpp"
#include "labmon/codec.hpp"
#include "labmon/sensors.hpp"

// JSON forms shared by the HTTP API, the backend log and scenario files.
// Times are serialized as seconds (double) except in the backend log, which
// keeps integer microseconds.
namespace labmon::json_io {

using nlohmann::json;

// Throws backend::ValidationError with the offending field name.
const json& require(const json& obj, const char* key);
double get_number(const json& obj, const char* key);
std::string get_string(const json& obj, const char* key);

json to_json(const codec::QuantRange& r);
codec::QuantRange range_from_json(const json& j);

json to_json(const sensors::SensorDescriptor& d);
// Missing conversion_factor falls back to the model default.
sensors::SensorDescriptor descriptor_from_json(const json& j);

json to_json(const codec::DownlinkFrame& f);
// Accepts {"frame": "<16 hex chars>"} or the field form
// {"opcode", "io_mask", "io_values", "config_flags"}.
codec::DownlinkFrame frame_from_json(const json& j);

json to_json(const backend::SensorConfigRow& row);
backend::SensorConfigRow row_from_json(const json& j);

json to_json(const backend::CommandQueueEntry& e);
json to_json(const backend::MessageRecord& r);
json to_json(const backend::PushEvent& e);

node::HttpReport report_from_json(const json& j);
json to_json(const node::HttpReport& r);

}  // namespace labmon::json_io

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "labmon/device_node.hpp"

// Canonical cache file: one "key value" line per node field, one "sensor"
// line per descriptor with a fixed key order, closed by an "end" marker so a
// truncated write is detected.
namespace labmon::node {

namespace {

constexpr std::string_view kMagic = "labmon-node-cache";
constexpr int kFormatVersion = 1;

void check_token(std::string_view what, std::string_view v) {
    for (char c : v)
        if (c == ' ' || c == '\t' || c == '\n' || c == '=')
            throw std::invalid_argument(fmt::format("{} '{}' contains a reserved character", what, v));
}

double parse_double(std::string_view s) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw InitError(fmt::format("cache: bad number '{}'", s));
    return v;
}

std::int64_t parse_int(std::string_view s) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw InitError(fmt::format("cache: bad integer '{}'", s));
    return v;
}

}  // namespace

std::string serialize_cache(const NodeConfig& c) {
    check_token("device id", c.device_id);
    std::string out = fmt::format("{} {}\n", kMagic, kFormatVersion);
    out += fmt::format("device_id {}\n", c.device_id);
    out += fmt::format("config_version {}\n", c.version);
    out += fmt::format("report_interval_us {}\n", c.report_interval.count());
    out += fmt::format("emergency_interval_us {}\n", c.emergency_interval.count());
    for (const auto& s : c.sensors) {
        check_token("sensor id", s.id);
        check_token("address", s.address);
        out += fmt::format(
            "sensor id={} model={} bus={} address={} resolution_bits={} op_lo={} op_hi={} "
            "alarm_lo={} alarm_hi={} factor={} slot={}\n",
            s.id, sensors::to_string(s.model), sensors::to_string(s.bus),
            s.address.empty() ? "-" : s.address, s.resolution_bits, s.operating_range.lo,
            s.operating_range.hi, s.alarm_range.lo, s.alarm_range.hi, s.conversion_factor,
            s.slot_index ? std::to_string(*s.slot_index) : "-");
    }
    out += "end\n";
    return out;
}

NodeConfig parse_cache(std::string_view text) {
    NodeConfig c;
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line != fmt::format("{} {}", kMagic, kFormatVersion))
        throw InitError("cache: missing or unsupported header");
    bool ended = false;
    while (std::getline(in, line)) {
        if (line == "end") {
            ended = true;
            break;
        }
        const auto sp = line.find(' ');
        const std::string key = line.substr(0, sp);
        const std::string rest = sp == std::string::npos ? "" : line.substr(sp + 1);
        if (key == "device_id") {
            c.device_id = rest;
        } else if (key == "config_version") {
            c.version = static_cast<std::uint64_t>(parse_int(rest));
        } else if (key == "report_interval_us") {
            c.report_interval = SimTime(parse_int(rest));
        } else if (key == "emergency_interval_us") {
            c.emergency_interval = SimTime(parse_int(rest));
        } else if (key == "sensor") {
            std::map<std::string, std::string> kv;
            std::istringstream fields(rest);
            std::string f;
            while (fields >> f) {
                const auto eq = f.find('=');
                if (eq == std::string::npos)
                    throw InitError(fmt::format("cache: malformed field '{}'", f));
                kv[f.substr(0, eq)] = f.substr(eq + 1);
            }
            auto get = [&](const char* k) -> const std::string& {
                auto it = kv.find(k);
                if (it == kv.end())
                    throw InitError(fmt::format("cache: sensor line lacks '{}'", k));
                return it->second;
            };
            sensors::SensorDescriptor d;
            try {
                d.id = get("id");
                d.model = sensors::parse_model(get("model"));
                d.bus = sensors::parse_bus(get("bus"));
            } catch (const sensors::RegistryError& e) {
                throw InitError(fmt::format("cache: {}", e.what()));
            }
            d.address = get("address") == "-" ? "" : get("address");
            d.resolution_bits = static_cast<int>(parse_int(get("resolution_bits")));
            d.operating_range = {parse_double(get("op_lo")), parse_double(get("op_hi"))};
            d.alarm_range = {parse_double(get("alarm_lo")), parse_double(get("alarm_hi"))};
            d.conversion_factor = parse_double(get("factor"));
            if (get("slot") != "-")
                d.slot_index = static_cast<int>(parse_int(get("slot")));
            c.sensors.push_back(std::move(d));
        } else {
            throw InitError(fmt::format("cache: unknown key '{}'", key));
        }
    }
    if (!ended)
        throw InitError("cache: truncated (no end marker)");
    if (c.device_id.empty())
        throw InitError("cache: missing device_id");
    return c;
}

void save_cache(const std::filesystem::path& path, const NodeConfig& config) {
    const auto text = serialize_cache(config);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw std::runtime_error(fmt::format("cannot write cache '{}'", tmp.string()));
        out << text;
    }
    std::filesystem::rename(tmp, path);
}

NodeConfig load_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw InitError(fmt::format("no cached configuration at '{}'", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_cache(ss.str());
}

}  // namespace labmon::node

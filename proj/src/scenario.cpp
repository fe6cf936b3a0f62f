#include <algorithm>
#include <fstream>

#include <fmt/format.h>

#include "labmon/json_io.hpp"
#include "labmon/sim.hpp"

namespace labmon::sim {

using json = nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& v) {
    std::string out = "invalid scenario";
    for (const auto& s : v) out += "\n  " + s;
    return out;
}

// Collects problems instead of stopping at the first one.
class Reader {
public:
    std::vector<std::string> issues;

    template <typename F>
    void guard(const std::string& where, F&& f) {
        try {
            f();
        } catch (const std::exception& e) {
            issues.push_back(fmt::format("{}: {}", where, e.what()));
        }
    }

    static double number(const json& obj, const char* key, double fallback) {
        if (!obj.contains(key)) return fallback;
        return json_io::get_number(obj, key);
    }

    static SimTime seconds(const json& obj, const char* key, SimTime fallback) {
        if (!obj.contains(key)) return fallback;
        double s = json_io::get_number(obj, key);
        return from_seconds(s);
    }

    static int integer(const json& obj, const char* key, int fallback) {
        if (!obj.contains(key)) return fallback;
        const auto& v = obj.at(key);
        if (!v.is_number_integer()) throw std::invalid_argument(fmt::format("'{}' must be an integer", key));
        return v.get<int>();
    }

    static bool flag(const json& obj, const char* key, bool fallback) {
        if (!obj.contains(key)) return fallback;
        const auto& v = obj.at(key);
        if (!v.is_boolean()) throw std::invalid_argument(fmt::format("'{}' must be true or false", key));
        return v.get<bool>();
    }
};

ac::WindowRule parse_rule(const std::string& s) {
    if (s == "consecutive") return ac::WindowRule::consecutive;
    if (s == "anywhere") return ac::WindowRule::anywhere;
    throw std::invalid_argument(fmt::format("unknown detector rule '{}'", s));
}

ac::DetectorConfig parse_detector(const json& j, ac::DetectorConfig d) {
    d.threshold_fraction = Reader::number(j, "threshold_fraction", d.threshold_fraction);
    d.k = Reader::integer(j, "k", d.k);
    d.n = Reader::integer(j, "n", d.n);
    if (j.contains("rule")) d.rule = parse_rule(json_io::get_string(j, "rule"));
    d.validate();
    return d;
}

GeneratorSpec parse_generator(const json& g, std::uint64_t seed) {
    GeneratorSpec out;
    auto& s = out.signal;
    s.seed = seed;
    const auto kind = json_io::get_string(g, "kind");
    if (kind == "constant") {
        s.kind = sensors::GeneratorKind::constant;
        s.value = json_io::get_number(g, "value");
    } else if (kind == "ramp") {
        s.kind = sensors::GeneratorKind::ramp;
        s.value = json_io::get_number(g, "value");
        s.slope = json_io::get_number(g, "slope");
    } else if (kind == "sine") {
        s.kind = sensors::GeneratorKind::sine;
        s.value = json_io::get_number(g, "value");
        s.amplitude = json_io::get_number(g, "amplitude");
        s.period_s = json_io::get_number(g, "period_s");
        s.phase_rad = Reader::number(g, "phase_rad", 0.0);
        if (s.period_s <= 0.0) throw std::invalid_argument("sine period must be positive");
    } else if (kind == "trace") {
        s.kind = sensors::GeneratorKind::trace;
        const auto& pts = json_io::require(g, "points");
        if (!pts.is_array() || pts.empty()) throw std::invalid_argument("trace needs points");
        for (const auto& p : pts) {
            if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
                throw std::invalid_argument("trace points are [t_s, value] pairs");
            s.trace.emplace_back(p[0].get<double>(), p[1].get<double>());
        }
        if (!std::is_sorted(s.trace.begin(), s.trace.end()))
            throw std::invalid_argument("trace points must be sorted by time");
    } else if (kind == "ac_rms") {
        out.ac_rms = true;
    } else {
        throw std::invalid_argument(fmt::format("unknown generator kind '{}'", kind));
    }
    s.noise_rms = Reader::number(g, "noise_rms", 0.0);
    if (s.noise_rms < 0.0) throw std::invalid_argument("noise_rms must not be negative");
    if (g.contains("faults")) {
        for (const auto& f : g.at("faults")) {
            if (!f.is_array() || f.size() != 2) throw std::invalid_argument("faults are [from_s, to_s] pairs");
            s.faults.push_back({from_seconds(f[0].get<double>()), from_seconds(f[1].get<double>())});
        }
    }
    return out;
}

SensorSpec parse_sensor(const json& j, const std::string& device_id, std::uint64_t seed) {
    json row = j;
    if (!row.contains("device_id")) row["device_id"] = device_id;
    SensorSpec out;
    out.row = json_io::row_from_json(row);
    if (j.contains("generator"))
        out.generator = parse_generator(j.at("generator"), seed);
    return out;
}

Action parse_action(const std::string& s) {
    static const std::pair<const char*, Action> table[] = {
        {"power_loss", Action::power_loss},       {"power_restore", Action::power_restore},
        {"ethernet_down", Action::ethernet_down}, {"ethernet_up", Action::ethernet_up},
        {"queue_command", Action::queue_command}, {"update_sensor", Action::update_sensor},
        {"reload", Action::reload},
    };
    for (const auto& [name, a] : table)
        if (s == name) return a;
    throw std::invalid_argument(fmt::format("unknown action '{}'", s));
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t i) {
    return seed * 0x9E3779B97F4A7C15ull + i + 1;
}

}  // namespace

ScenarioError::ScenarioError(std::vector<std::string> issues)
    : std::invalid_argument(join(issues)), issues_(std::move(issues)) {}

std::string_view to_string(Action a) {
    switch (a) {
    case Action::power_loss: return "power_loss";
    case Action::power_restore: return "power_restore";
    case Action::ethernet_down: return "ethernet_down";
    case Action::ethernet_up: return "ethernet_up";
    case Action::queue_command: return "queue_command";
    case Action::update_sensor: return "update_sensor";
    case Action::reload: return "reload";
    }
    return "?";
}

Scenario parse_scenario(const json& j) {
    Reader r;
    Scenario s;
    if (!j.is_object()) throw ScenarioError({"scenario must be a JSON object"});

    r.guard("name", [&] { s.name = json_io::get_string(j, "name"); });
    r.guard("kind", [&] {
        const auto k = j.contains("kind") ? json_io::get_string(j, "kind") : std::string("timeline");
        if (k == "timeline") s.kind = ScenarioKind::timeline;
        else if (k == "table2") s.kind = ScenarioKind::table2;
        else if (k == "detector_sweep") s.kind = ScenarioKind::detector_sweep;
        else throw std::invalid_argument(fmt::format("unknown kind '{}'", k));
    });
    r.guard("seed", [&] {
        if (!j.contains("seed")) return;
        const auto& v = j.at("seed");
        if (!v.is_number_unsigned()) throw std::invalid_argument("must be a non-negative integer");
        s.seed = v.get<std::uint64_t>();
    });
    r.guard("duration_s", [&] {
        s.duration = Reader::seconds(j, "duration_s", SimTime{0});
        if (s.duration < SimTime{0}) throw std::invalid_argument("must not be negative");
        if (s.duration > 400 * kDay) throw std::invalid_argument("longer than 400 days");
    });

    const json empty = json::object();
    const json& dev = j.contains("device") ? j.at("device") : empty;
    r.guard("device", [&] {
        auto& n = s.node;
        if (dev.contains("id")) n.device_id = json_io::get_string(dev, "id");
        s.report_interval = Reader::seconds(dev, "report_interval_s", s.report_interval);
        s.emergency_interval = Reader::seconds(dev, "emergency_interval_s", s.emergency_interval);
        if (s.report_interval <= SimTime{0} || s.emergency_interval <= SimTime{0})
            throw std::invalid_argument("report intervals must be positive");
        n.throttled_interval = Reader::seconds(dev, "throttled_interval_s", n.throttled_interval);
        n.acquisition_wait = Reader::seconds(dev, "acquisition_wait_s", n.acquisition_wait);
        n.alert_compile = Reader::seconds(dev, "alert_compile_s", n.alert_compile);
        n.command_processing = Reader::seconds(dev, "command_processing_s", n.command_processing);
        if (dev.contains("ethernet_debounce_s"))
            n.ethernet_debounce = Reader::seconds(dev, "ethernet_debounce_s", SimTime{0});
        n.downlink_poll_interval =
            Reader::seconds(dev, "downlink_poll_interval_s", n.downlink_poll_interval);
        n.low_battery_fraction = Reader::number(dev, "low_battery_fraction", n.low_battery_fraction);
        n.alert_http_duplicate = Reader::flag(dev, "alert_http_duplicate", n.alert_http_duplicate);
        if (dev.contains("power")) {
            const auto& p = dev.at("power");
            n.power.base_battery_mA = Reader::number(p, "base_battery_mA", n.power.base_battery_mA);
            n.power.ethernet_chip_mA = Reader::number(p, "ethernet_chip_mA", n.power.ethernet_chip_mA);
            n.power.uplink_extra_mA = Reader::number(p, "uplink_extra_mA", n.power.uplink_extra_mA);
            n.power.downlink_extra_mA = Reader::number(p, "downlink_extra_mA", n.power.downlink_extra_mA);
            n.power.battery_capacity_mAh =
                Reader::number(p, "battery_capacity_mAh", n.power.battery_capacity_mAh);
            n.power.validate();
        }
        if (dev.contains("init")) {
            const auto& in = dev.at("init");
            if (in.contains("ethernet")) {
                auto e = json_io::get_string(in, "ethernet");
                if (e != "up" && e != "down") throw std::invalid_argument("init.ethernet is up or down");
                s.init_ethernet_up = e == "up";
            }
            s.seed_cache = Reader::flag(in, "seed_cache", s.seed_cache);
        }
    });

    const json& net = j.contains("network") ? j.at("network") : empty;
    r.guard("network", [&] {
        auto& rp = s.radio;
        rp.uplink_bitrate = Reader::integer(net, "uplink_bitrate", rp.uplink_bitrate);
        rp.downlink_bitrate = Reader::integer(net, "downlink_bitrate", rp.downlink_bitrate);
        rp.frame_overhead = Reader::integer(net, "frame_overhead", rp.frame_overhead);
        rp.replica_count = Reader::integer(net, "replica_count", rp.replica_count);
        rp.replica_loss_prob = Reader::number(net, "replica_loss_prob", rp.replica_loss_prob);
        rp.validate();
        auto& t = s.timing;
        t.callback_latency = Reader::seconds(net, "callback_latency_s", t.callback_latency);
        t.window_delay = Reader::seconds(net, "window_delay_s", t.window_delay);
        t.window_length = Reader::seconds(net, "window_length_s", t.window_length);
        t.downlink_service = Reader::seconds(net, "downlink_service_s", t.downlink_service);
        s.limits.uplinks_per_window = Reader::integer(net, "uplinks_per_day", s.limits.uplinks_per_window);
        s.limits.downlinks_per_window =
            Reader::integer(net, "downlinks_per_day", s.limits.downlinks_per_window);
        s.node.uplinks_per_day = s.limits.uplinks_per_window;
        s.node.downlinks_per_day = s.limits.downlinks_per_window;
        s.ethernet_latency = Reader::seconds(net, "ethernet_latency_s", s.ethernet_latency);
        s.push_latency = Reader::seconds(net, "push_latency_s", s.push_latency);
        if (s.ethernet_latency < SimTime{0} || s.push_latency < SimTime{0} ||
            t.callback_latency < SimTime{0} || t.downlink_service < SimTime{0})
            throw std::invalid_argument("latencies must not be negative");
    });

    if (j.contains("jitter")) {
        r.guard("jitter", [&] {
            const auto& jt = j.at("jitter");
            s.jitter_enabled = Reader::flag(jt, "enabled", false);
            s.jitter.alert_compile = Reader::seconds(jt, "alert_compile_s", s.jitter.alert_compile);
            s.jitter.push = Reader::seconds(jt, "push_s", s.jitter.push);
            s.jitter.downlink_service = Reader::seconds(jt, "downlink_service_s", s.jitter.downlink_service);
        });
    }

    if (j.contains("ac")) {
        r.guard("ac", [&] {
            const auto& a = j.at("ac");
            s.waveform.rms_nominal = Reader::number(a, "rms_nominal", s.waveform.rms_nominal);
            s.waveform.frequency_hz = Reader::number(a, "frequency_hz", s.waveform.frequency_hz);
            s.waveform.phase_rad = Reader::number(a, "phase_rad", s.waveform.phase_rad);
            s.detector = parse_detector(a, s.detector);
            if (a.contains("trace")) {
                const auto& tr = a.at("trace");
                double from = json_io::get_number(tr, "from_s");
                double to = json_io::get_number(tr, "to_s");
                if (!(from < to) || to - from > 60.0)
                    throw std::invalid_argument("trace needs from_s < to_s and at most 60 s");
                s.ac_trace = {from, to};
            }
        });
    }

    if (j.contains("sensors")) {
        const auto& arr = j.at("sensors");
        if (!arr.is_array()) {
            r.issues.push_back("sensors: expected array");
        } else {
            for (std::size_t i = 0; i < arr.size(); ++i)
                r.guard(fmt::format("sensors[{}]", i), [&] {
                    s.sensors.push_back(parse_sensor(arr[i], s.node.device_id, mix(s.seed, i)));
                });
        }
    }

    if (j.contains("timeline")) {
        const auto& arr = j.at("timeline");
        if (!arr.is_array()) {
            r.issues.push_back("timeline: expected array");
        } else {
            for (std::size_t i = 0; i < arr.size(); ++i) {
                r.guard(fmt::format("timeline[{}]", i), [&] {
                    const auto& d = arr[i];
                    Directive dir;
                    dir.t = from_seconds(json_io::get_number(d, "t"));
                    dir.action = parse_action(json_io::get_string(d, "action"));
                    if (dir.t < SimTime{0}) throw std::invalid_argument("t must not be negative");
                    if (dir.action == Action::queue_command)
                        dir.command = json_io::frame_from_json(json_io::require(d, "command"));
                    if (dir.action == Action::update_sensor)
                        dir.sensor = parse_sensor(json_io::require(d, "sensor"), s.node.device_id,
                                                  mix(s.seed, 1000 + i));
                    s.timeline.push_back(std::move(dir));
                });
            }
        }
    }
    std::stable_sort(s.timeline.begin(), s.timeline.end(),
                     [](const auto& a, const auto& b) { return a.t < b.t; });

    // outages are the intervals between scripted loss/restore pairs
    bool down = false;
    double loss_at = 0.0;
    for (std::size_t i = 0; i < s.timeline.size(); ++i) {
        const auto& d = s.timeline[i];
        if (d.action == Action::power_loss) {
            if (down) r.issues.push_back(fmt::format("timeline: power_loss at {} s while already down", to_seconds(d.t)));
            down = true;
            loss_at = to_seconds(d.t);
        } else if (d.action == Action::power_restore) {
            if (!down) r.issues.push_back(fmt::format("timeline: power_restore at {} s without a loss", to_seconds(d.t)));
            else s.waveform.outages.push_back({loss_at, to_seconds(d.t)});
            down = false;
        }
    }
    if (down) s.waveform.outages.push_back({loss_at, std::max(loss_at, to_seconds(s.duration)) + 1.0});
    r.guard("ac", [&] { s.waveform.validate(); });

    r.guard("battery_sample_s", [&] {
        s.battery_sample_interval = Reader::seconds(j, "battery_sample_s", s.battery_sample_interval);
        if (s.battery_sample_interval <= SimTime{0}) throw std::invalid_argument("must be positive");
    });

    if (j.contains("table2")) {
        r.guard("table2", [&] {
            Table2Spec t;
            t.runs = Reader::integer(j.at("table2"), "runs", t.runs);
            if (t.runs < 0 || t.runs > 10000) throw std::invalid_argument("runs must be 0..10000");
            s.table2 = t;
        });
    }
    if (s.kind == ScenarioKind::table2 && !s.table2) s.table2 = Table2Spec{};

    if (j.contains("sweep") || s.kind == ScenarioKind::detector_sweep) {
        r.guard("sweep", [&] {
            SweepSpec sw;
            const json& js = j.contains("sweep") ? j.at("sweep") : empty;
            sw.phases = Reader::integer(js, "phases", sw.phases);
            if (js.contains("false_alarm_ticks")) {
                const auto& v = js.at("false_alarm_ticks");
                if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
                    throw std::invalid_argument("false_alarm_ticks must be a non-negative integer");
                sw.false_alarm_ticks = v.get<std::int64_t>();
            }
            if (sw.phases < 1) throw std::invalid_argument("phases must be positive");
            if (js.contains("configs")) {
                for (const auto& c : js.at("configs")) sw.configs.push_back({parse_detector(c, s.detector)});
            } else {
                sw.configs.push_back({s.detector});
            }
            s.sweep = std::move(sw);
        });
    }

    if (j.contains("checks")) {
        const auto& arr = j.at("checks");
        if (!arr.is_array()) {
            r.issues.push_back("checks: expected array");
        } else {
            for (std::size_t i = 0; i < arr.size(); ++i)
                r.guard(fmt::format("checks[{}]", i), [&] {
                    auto name = json_io::get_string(arr[i], "name");
                    if (!is_known_check(name))
                        throw std::invalid_argument(fmt::format("unknown check '{}'", name));
                    s.checks.push_back({std::move(name), arr[i]});
                });
        }
    }

    s.node.seed = s.seed;
    if (!r.issues.empty()) throw ScenarioError(std::move(r.issues));
    return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ScenarioError({fmt::format("cannot open '{}'", path.string())});
    json j = json::parse(in, nullptr, false, true);
    if (j.is_discarded()) throw ScenarioError({fmt::format("'{}' is not valid JSON", path.string())});
    return parse_scenario(j);
}

}  // namespace labmon::sim

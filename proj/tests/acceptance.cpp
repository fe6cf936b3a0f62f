// Acceptance suite: one PASS/FAIL line per primary criterion, tolerances
// pinned here. Exit status is non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "fake_ports.hpp"
#include "labmon/ac_monitor.hpp"
#include "labmon/backend.hpp"
#include "labmon/codec.hpp"
#include "labmon/sim.hpp"

using namespace labmon;
using namespace std::chrono_literals;
using json = nlohmann::json;

namespace {

const std::filesystem::path kScenarios = LABMON_SCENARIO_DIR;

struct Verdict {
    bool ok = true;
    std::string measured;
};

int failures = 0;

template <typename F>
void criterion(const std::string& name, const std::string& expected, F body) {
    Verdict v;
    try {
        v = body();
    } catch (const std::exception& e) {
        v = {false, fmt::format("exception: {}", e.what())};
    }
    if (!v.ok) ++failures;
    std::cout << fmt::format("{} {}: {} (expected {})\n", v.ok ? "PASS" : "FAIL", name, v.measured, expected)
              << std::flush;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Verdict detector_latency() {
    const auto t0 = std::chrono::steady_clock::now();
    auto st = ac::latency_oracle(ac::WaveformParams{}, ac::AdcModel{}, ac::DetectorConfig{}, 1000);
    const double runtime = seconds_since(t0);
    const bool ok = st.latencies_s.size() >= 1000 && st.max_s <= 4.0e-3 &&
                    std::abs(st.mean_s - 2.6e-3) <= 0.2e-3 && st.min_s <= 2.2e-3 && runtime < 1.0;
    return {ok, fmt::format("phases={} min={:.3f} ms mean={:.3f} ms max={:.3f} ms runtime={:.3f} s",
                            st.latencies_s.size(), st.min_s * 1e3, st.mean_s * 1e3, st.max_s * 1e3,
                            runtime)};
}

Verdict false_alarms() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::int64_t ticks = 1'000'000;
    const auto n = sim::count_false_alarms(ac::WaveformParams{}, ac::AdcModel{}, ac::DetectorConfig{}, ticks);
    const double runtime = seconds_since(t0);
    return {n == 0 && runtime < 10.0,
            fmt::format("false_alarms={} ticks={} runtime={:.3f} s", n, ticks, runtime)};
}

Verdict rms_accuracy() {
    double worst = 0.0, dead_max = 0.0;
    for (int i = 0; i < 360; ++i) {
        ac::WaveformParams wf;
        wf.phase_rad = i * std::numbers::pi / 180.0;
        wf.outages = {{20.0, 30.0}};
        ac::AcMonitor mon(wf, ac::AdcModel{}, ac::DetectorConfig{});
        for (double t : {1.0, 7.3331, 19.9}) worst = std::max(worst, std::abs(*mon.rms_at(t) - 240.0));
        for (double t : {20.05, 25.0, 29.99}) dead_max = std::max(dead_max, std::abs(*mon.rms_at(t)));
    }
    return {worst <= 0.5 && dead_max == 0.0,
            fmt::format("max |rms-240|={:.4f} V over 360 phases, outage rms={:.1f} V", worst, dead_max)};
}

Verdict codec_roundtrip() {
    // per-slot exhaustive identity
    int mismatches = 0;
    const codec::QuantRange r{-40.0, 125.0};
    for (std::size_t slot = 0; slot < codec::kSlotCount; ++slot) {
        codec::SlotRanges ranges;
        ranges[slot] = r;
        for (int c = 0; c < 256; ++c) {
            codec::UplinkFrame f;
            f.slots[slot] = static_cast<std::uint8_t>(c);
            const auto bytes = codec::serialize(f);
            const auto d = codec::decode_uplink(bytes, ranges);
            if (codec::encode_uplink(d.event, d.values, ranges) != bytes) ++mismatches;
            if (codec::quantize(codec::dequantize(static_cast<std::uint8_t>(c), r), r) != c) ++mismatches;
        }
    }

    // full path: node -> UNB network -> callback -> backend store -> query.
    // Constant signals, so HTTP reports before the link loss carry the exact values.
    auto j = json::parse(R"({
      "name": "codec_e2e", "duration_s": 7200, "seed": 9,
      "device": {"id": "lab-node-1"},
      "timeline": [{"t": 600, "action": "ethernet_down"}]
    })");
    const double values[] = {23.3, -7.77, 151.3, 99.99};
    const double ranges[][2] = {{15, 30}, {-10, 40}, {0, 300}, {-55, 125}};
    j["sensors"] = json::array();
    for (int i = 0; i < 4; ++i)
        j["sensors"].push_back({{"id", fmt::format("s{}", i)},
                                {"model", i == 2 ? "GENERIC" : "DS18B20"},
                                {"bus", i == 2 ? "ANALOG" : "ONE_WIRE"},
                                {"address", fmt::format("a{}", i)},
                                {"resolution_bits", 12},
                                {"conversion_factor", i == 2 ? 0.1 : 0.0625},
                                {"operating_range", {{"lo", ranges[i][0]}, {"hi", ranges[i][1]}}},
                                {"alarm_range", {{"lo", -1000}, {"hi", 1000}}},
                                {"slot_index", i * 2 + 1},
                                {"generator", {{"kind", "constant"}, {"value", values[i]}}}});
    auto s = sim::parse_scenario(j);
    backend::Backend store;
    sim::RunOptions ro;
    ro.backend = &store;
    sim::run_timeline(s, ro);

    std::set<SimTime> unb_times, http_times;
    for (const auto& rec : store.records())
        (rec.path == backend::Path::unb ? unb_times : http_times).insert(rec.t);
    backend::ReadingQuery q;
    for (int i = 0; i < 4; ++i) q.sensor_ids.push_back(fmt::format("s{}", i));
    auto res = store.query_readings(q);

    double worst_ratio = 0.0;
    std::size_t compared = 0;
    bool have_exact = true;
    for (std::size_t i = 0; i < res.series.size(); ++i) {
        const auto& series = res.series[i];
        const int k = series.sensor_id[1] - '0';
        std::optional<double> exact;
        for (const auto& p : series.points)
            if (http_times.contains(p.t)) exact = p.value;
        if (!exact) {
            have_exact = false;
            continue;
        }
        const double bound = (ranges[k][1] - ranges[k][0]) / 510.0;
        for (const auto& p : series.points) {
            if (!unb_times.contains(p.t)) continue;
            worst_ratio = std::max(worst_ratio, std::abs(p.value - *exact) / bound);
            ++compared;
        }
    }
    const bool ok = mismatches == 0 && have_exact && compared >= 40 && worst_ratio <= 1.0 + 1e-9;
    return {ok, fmt::format("exhaustive mismatches={} over {} slots; end-to-end {} values, worst error = {:.3f} x (hi-lo)/510",
                            mismatches, codec::kSlotCount, compared, worst_ratio)};
}

Verdict table2() {
    auto s = sim::load_scenario(kScenarios / "table2_latency.json");
    auto t2 = sim::measure_table2(s, 100);
    if (!t2.nominal) return {false, "no nominal alarm"};
    const auto& n = *t2.nominal;
    const double tol = 1e-6;
    bool ok = std::abs(n.uplink_start_s - 1.3) <= tol && std::abs(n.notification_s - 4.5) <= tol &&
              std::abs(n.command_exec_s - 39.6) <= tol;
    double du = 0, dn = 0, dc = 0;
    int complete = 0;
    for (const auto& r : t2.runs) {
        if (!r) continue;
        ++complete;
        du = std::max(du, std::abs(r->uplink_start_s - 1.3));
        dn = std::max(dn, std::abs(r->notification_s - 4.5));
        dc = std::max(dc, std::abs(r->command_exec_s - 39.6));
    }
    ok = ok && complete == 100 && du <= 0.5 + tol && dn <= 0.6 + tol && dc <= 0.7 + tol;
    return {ok, fmt::format("nominal {:.6f}/{:.6f}/{:.6f} s; {} jittered runs, worst spread {:.3f}/{:.3f}/{:.3f} s",
                            n.uplink_start_s, n.notification_s, n.command_exec_s, complete, du, dn, dc)};
}

Verdict duty_cycle() {
    auto s = sim::load_scenario(kScenarios / "duty_cycle_24h.json");
    auto r = sim::run_timeline(s);
    int up = 0, down = 0;
    int up_before_reject = -1, down_before_reject = -1;
    for (const auto& rec : r.network) {
        if (rec.direction == unb::Direction::uplink) {
            if (rec.replica_index == 0) ++up;
            if (rec.outcome == unb::Outcome::rejected_budget && up_before_reject < 0) up_before_reject = up;
        } else {
            if (rec.outcome == unb::Outcome::delivered) ++down;
            if (rec.outcome == unb::Outcome::rejected_budget && down_before_reject < 0)
                down_before_reject = down;
        }
    }
    const bool ok = up <= 140 && down <= 4 && up_before_reject == 140 && down_before_reject == 4 &&
                    s.duration == kDay;
    return {ok, fmt::format("uplinks={} downlinks={}; first uplink rejection after {}, first downlink rejection after {}",
                            up, down, up_before_reject, down_before_reject)};
}

Verdict downlink_windowing() {
    int delivered = 0, outside = 0;
    for (const char* name : {"duty_cycle_24h.json", "fig2_blackout.json", "table2_latency.json"}) {
        auto s = sim::load_scenario(kScenarios / name);
        auto r = sim::run_timeline(s);
        std::vector<SimTime> uplink_ends;
        for (const auto& rec : r.network)
            if (rec.direction == unb::Direction::uplink && rec.replica_index == s.radio.replica_count - 1)
                uplink_ends.push_back(rec.t);
        for (const auto& rec : r.network) {
            if (rec.direction != unb::Direction::downlink || rec.outcome != unb::Outcome::delivered) continue;
            ++delivered;
            bool inside = std::any_of(uplink_ends.begin(), uplink_ends.end(), [&](SimTime e) {
                return rec.t >= e + 20s && rec.t <= e + 45s;
            });
            if (!inside) ++outside;
        }
    }

    // a command queued once the only open window has closed
    auto late = sim::parse_scenario(json::parse(R"({
      "name": "late_command", "duration_s": 4000, "seed": 4,
      "device": {"id": "lab-node-1", "downlink_poll_interval_s": 1800},
      "sensors": [{"id": "probe-1", "model": "DS18B20", "bus": "ONE_WIRE", "address": "28-1",
                   "operating_range": {"lo": 15, "hi": 30}, "alarm_range": {"lo": 10, "hi": 35},
                   "slot_index": 0, "generator": {"kind": "constant", "value": 22}}],
      "timeline": [{"t": 5, "action": "ethernet_down"},
                   {"t": 120, "action": "queue_command", "command": {"opcode": 1, "io_mask": 1, "io_values": 1}}]
    })"));
    auto lr = sim::run_timeline(late);
    // ethernet_lost alert at 6.3 s: window [32.54, 57.54] closes before 120 s
    std::optional<SimTime> rx;
    for (const auto& e : lr.log)
        if (e.event == "DOWNLINK_RX" && !rx) rx = e.t;
    const bool late_ok = rx && *rx > 120s + 26240ms;
    return {outside == 0 && delivered >= 5 && late_ok,
            fmt::format("{} delivered downlinks, {} outside [end+20 s, end+45 s]; late command received at {}",
                        delivered, outside, rx ? format_seconds(*rx) + " s" : std::string("never"))};
}

Verdict energy() {
    auto lifetime = [](node::LinkState link) {
        testing::FakePorts ports;
        node::NodeSettings ns;
        ns.cache_path = testing::temp_path("acc-energy-cache.txt");
        node::save_cache(ns.cache_path, testing::basic_config());
        node::DeviceNode dev(ns, ports);
        ports.node = &dev;
        ports.accept_uplinks = false;  // constant draw: no radio activity
        ports.backend_config = testing::basic_config();
        dev.init(node::InitSource::backend, 0s, link);
        ports.at(0s, [&] { dev.on_power_edge(ac::PowerEdge::loss, 0s); });
        ports.run_until(60h);
        auto halt = ports.events("NODE_HALT");
        return halt.empty() ? -1.0 : to_seconds(halt[0].t) / 3600.0;
    };
    const double on = lifetime(node::LinkState::up);
    const double off = lifetime(node::LinkState::down);
    return {std::abs(on - 20.8) <= 0.1 && std::abs(off - 37.7) <= 0.1,
            fmt::format("chip on {:.3f} h, chip off {:.3f} h", on, off)};
}

Verdict sensor_timing() {
    testing::FakePorts ports;
    node::NodeSettings ns;
    ns.cache_path = testing::temp_path("acc-sensor-cache.txt");
    node::DeviceNode dev(ns, ports);
    ports.node = &dev;
    auto cfg = testing::basic_config();
    cfg.sensors.clear();
    std::mt19937_64 rng(77);
    for (int bits = 9; bits <= 12; ++bits) {
        auto d = testing::basic_config().sensors[0];
        d.id = fmt::format("t{}", bits);
        d.address = fmt::format("28-{}", bits);
        d.resolution_bits = bits;
        d.slot_index = bits - 9;
        d.alarm_range = {-100, 200};
        cfg.sensors.push_back(d);
        sensors::SignalGenerator g;
        g.kind = sensors::GeneratorKind::ramp;
        g.value = 18.0 + bits;
        g.slope = 0.0013;
        g.noise_rms = 0.2;
        g.seed = rng();
        ports.signals[d.id] = g;
    }
    ports.backend_config = cfg;
    dev.init(node::InitSource::backend, 0s);
    ports.run_until(1h);

    const auto& acq = ports.acquisitions;
    int bad_gap = 0, off_grid = 0, grid_checked = 0;
    for (std::size_t i = 1; i < acq.size(); ++i) {
        const auto& prev = dev.registry().find(acq[i - 1].sensor_id);
        const auto& cur = dev.registry().find(acq[i].sensor_id);
        const SimTime prev_req = acq[i - 1].t - sensors::conversion_time(prev);
        const SimTime cur_req = acq[i].t - sensors::conversion_time(cur);
        if (cur_req - prev_req != sensors::conversion_time(prev) + 1500ms) ++bad_gap;
    }
    for (const auto& a : acq) {
        if (a.sensor_id != "t12") continue;
        ++grid_checked;
        const double steps = a.value / 0.0625;
        if (steps != std::floor(steps)) ++off_grid;
    }
    const auto cycle = sensors::poll_cycle(dev.registry(), 0s).period;
    const bool ok = acq.size() > 400 && bad_gap == 0 && off_grid == 0 && cycle == 7407ms &&
                    sensors::conversion_time(cfg.sensors[0]) == 94ms &&
                    sensors::conversion_time(cfg.sensors[1]) == 188ms &&
                    sensors::conversion_time(cfg.sensors[2]) == 375ms &&
                    sensors::conversion_time(cfg.sensors[3]) == 750ms;
    return {ok, fmt::format("{} reads, {} spacing mismatches, full cycle {:.3f} s; {} 12-bit readings, {} off the 0.0625 grid",
                            acq.size(), bad_gap, to_seconds(cycle), grid_checked, off_grid)};
}

Verdict determinism() {
    int files = 0, differing = 0;
    std::vector<std::string> names;
    for (const auto& e : std::filesystem::directory_iterator(kScenarios))
        if (e.path().extension() == ".json") names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    for (const auto& name : names) {
        auto s = sim::load_scenario(kScenarios / name);
        const auto a = testing::temp_path("acc-det-a-" + s.name);
        const auto b = testing::temp_path("acc-det-b-" + s.name);
        sim::run_scenario(s, a);
        sim::run_scenario(s, b);
        for (const auto& e : std::filesystem::recursive_directory_iterator(a)) {
            if (!e.is_regular_file()) continue;
            ++files;
            const auto other = b / std::filesystem::relative(e.path(), a);
            if (!std::filesystem::exists(other) || slurp(e.path()) != slurp(other)) ++differing;
        }
        std::filesystem::remove_all(a);
        std::filesystem::remove_all(b);
    }
    return {files > 0 && differing == 0 && names.size() >= 4,
            fmt::format("{} scenarios, {} bundle files compared, {} differ", names.size(), files, differing)};
}

Verdict fig2_shape() {
    auto s = sim::load_scenario(kScenarios / "fig2_blackout.json");
    auto r = sim::run_timeline(s);

    std::optional<SimTime> loss, switched, eth_down, restore;
    for (const auto& d : s.timeline) {
        if (d.action == sim::Action::power_loss && !loss) loss = d.t;
        if (d.action == sim::Action::ethernet_down && !eth_down) eth_down = d.t;
        if (d.action == sim::Action::power_restore && !restore) restore = d.t;
    }
    std::vector<SimTime> http, periodic;
    std::set<int> codes;
    for (const auto& e : r.log) {
        if (e.event == "POWER_SOURCE" && !switched && e.detail.find("source=BATTERY") != std::string::npos)
            switched = e.t;
        if (e.event == "HTTP_REPORT") http.push_back(e.t);
        if (e.event == "UPLINK_START") {
            const int code = std::stoi(*sim::detail_field(e.detail, "code"));
            codes.insert(code);
            if ((code == 0 || code == 7) && e.t < *restore) periodic.push_back(e.t);
        }
    }
    if (!loss || !switched || !eth_down) return {false, "missing scripted events"};
    const double switch_ms = to_seconds(*switched - *loss) * 1e3;

    bool http_ok = true;
    int http_gaps = 0;
    for (std::size_t i = 1; i < http.size(); ++i) {
        if (http[i] > *eth_down) break;
        ++http_gaps;
        http_ok &= http[i] - http[i - 1] == 60s;
    }
    bool unb_ok = true;
    int unb_gaps = 0;
    for (std::size_t i = 1; i < periodic.size(); ++i) {
        if (periodic[i - 1] < *eth_down) continue;
        ++unb_gaps;
        unb_ok &= periodic[i] - periodic[i - 1] == 300s;
    }
    const bool ok = switch_ms >= 0 && switch_ms <= 4.0 && http_ok && http_gaps >= 30 && unb_ok &&
                    unb_gaps >= 5 && codes.contains(1) && codes.contains(4);
    std::string code_list;
    for (int c : codes) code_list += (code_list.empty() ? "" : ",") + std::to_string(c);
    return {ok, fmt::format("battery switch {:.3f} ms; {} HTTP gaps of 60 s: {}; {} UNB gaps of 300 s: {}; codes {{{}}}",
                            switch_ms, http_gaps, http_ok ? "yes" : "no", unb_gaps, unb_ok ? "yes" : "no",
                            code_list)};
}

}  // namespace

int main() {
    criterion("detector_latency", "max <= 4.0 ms, mean 2.6 +/- 0.2 ms, min <= 2.2 ms, runtime < 1 s",
              detector_latency);
    criterion("false_alarm_immunity", "0 losses over 1e6 ticks at 0.30 peak, runtime < 10 s", false_alarms);
    criterion("rms_accuracy", "240 +/- 0.5 V at any phase, 0 V in outage", rms_accuracy);
    criterion("codec", "exhaustive identity; end-to-end error <= (hi-lo)/510", codec_roundtrip);
    criterion("table2", "1.3/4.5/39.6 s within 1e-6 s; 100 jittered runs within 0.5/0.6/0.7 s", table2);
    criterion("duty_cycle", "<= 140 uplinks, <= 4 downlinks; 141st uplink and 5th downlink rejected", duty_cycle);
    criterion("downlink_windowing", "every downlink in [end+20 s, end+45 s]; late command not in the closed window",
              downlink_windowing);
    criterion("energy", "20.8 +/- 0.1 h chip on, 37.7 +/- 0.1 h chip off", energy);
    criterion("sensor_timing", "conversion + 1.5 s spacing exact to 1 us; 12-bit on 0.0625 grid", sensor_timing);
    criterion("determinism", "byte-identical bundles for every bundled scenario", determinism);
    criterion("fig2_shape", "switch <= 4 ms, 60 s then 300 s cadence, codes 1 and 4 present", fig2_shape);
    std::cout << fmt::format("{} criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}

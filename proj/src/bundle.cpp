#include <algorithm>
#include <fstream>

#include <fmt/format.h>

#include "labmon/sim.hpp"

namespace labmon::sim {

using json = nlohmann::json;

namespace {

std::string file_safe(std::string_view id) {
    std::string out(id);
    for (char& c : out)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.'))
            c = '_';
    return out;
}

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error(fmt::format("cannot write {}", p.string()));
    return out;
}

json stats(const std::vector<double>& v) {
    if (v.empty())
        return nullptr;
    double sum = 0.0;
    for (double x : v)
        sum += x;
    return {{"min", *std::min_element(v.begin(), v.end())},
            {"mean", sum / static_cast<double>(v.size())},
            {"max", *std::max_element(v.begin(), v.end())}};
}

std::string_view kind_name(ScenarioKind k) {
    switch (k) {
    case ScenarioKind::timeline: return "timeline";
    case ScenarioKind::table2: return "table2";
    case ScenarioKind::detector_sweep: return "detector_sweep";
    }
    return "?";
}

json run_metrics(const RunResult& r) {
    int up_ok = 0, up_rej = 0, down_ok = 0, down_rej = 0;
    for (const auto& t : r.network) {
        const bool up = t.direction == unb::Direction::uplink;
        if (up && t.replica_index == 0)
            ++up_ok;
        else if (up && t.replica_index < 0)
            ++up_rej;
        else if (!up && t.outcome == unb::Outcome::delivered)
            ++down_ok;
        else if (!up)
            ++down_rej;
    }
    auto count = [&](std::string_view ev) {
        return std::count_if(r.log.begin(), r.log.end(), [&](const auto& e) { return e.event == ev; });
    };
    json cmds = json::array();
    for (const auto& c : r.commands)
        cmds.push_back({{"id", c.id},
                        {"status", backend::to_string(c.status)},
                        {"created_s", to_seconds(c.created)},
                        {"updated_s", to_seconds(c.updated)},
                        {"frame", codec::to_hex(codec::encode_downlink(c.frame))}});
    json m = {{"counts",
               {{"uplinks_accepted", up_ok},
                {"uplinks_rejected", up_rej},
                {"downlinks_delivered", down_ok},
                {"downlinks_rejected", down_rej},
                {"http_reports", count("HTTP_REPORT")},
                {"alerts_raised", count("ALERT_RAISED")},
                {"notifications", count("NOTIFY_DISPLAYED")},
                {"commands_executed", count("COMMAND_EXECUTED")},
                {"records", r.records.size()}}},
              {"commands", std::move(cmds)}};
    if (!r.battery.empty()) {
        double lo = r.battery.front().battery_mAh;
        for (const auto& b : r.battery)
            lo = std::min(lo, b.battery_mAh);
        m["battery"] = {{"final_mAh", r.battery.back().battery_mAh}, {"min_mAh", lo}};
    }
    return m;
}

}  // namespace

std::vector<std::filesystem::path> write_bundle(const std::filesystem::path& dir, const Scenario& s,
                                                const Outputs& out,
                                                const std::vector<CheckResult>& checks) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<fs::path> written;

    json metrics = {{"scenario", s.name},
                    {"kind", kind_name(s.kind)},
                    {"seed", s.seed},
                    {"duration_s", to_seconds(s.duration)}};

    if (out.timeline) {
        const auto& r = *out.timeline;
        {
            auto p = dir / "transcript.log";
            auto f = open_out(p);
            f << "t\tevent\tpayload_hex\tdetail\n";
            for (const auto& e : r.log)
                f << format_seconds(e.t) << '\t' << e.event << '\t' << e.payload_hex << '\t' << e.detail
                  << '\n';
            written.push_back(p);
        }
        {
            auto p = dir / "network.csv";
            auto f = open_out(p);
            unb::NetworkTranscript t;
            for (const auto& rec : r.network)
                t.append(rec);
            t.write_csv(f);
            written.push_back(p);
        }
        {
            auto p = dir / "battery.csv";
            auto f = open_out(p);
            f << "t,battery_mAh,draw_mA,power,mode\n";
            for (const auto& b : r.battery)
                f << format_seconds(b.t) << ',' << fmt::format("{:.6f},{}", b.battery_mAh, b.draw_mA) << ','
                  << node::to_string(b.power) << ',' << node::to_string(b.mode) << '\n';
            written.push_back(p);
        }
        fs::remove_all(dir / "readings");
        fs::create_directories(dir / "readings");
        for (const auto& [id, series] : r.readings) {
            auto p = dir / "readings" / (file_safe(id) + ".csv");
            auto f = open_out(p);
            std::vector<sensors::Reading> rows;
            for (const auto& pt : series.points)
                rows.push_back({id, pt.t, pt.value, 0, sensors::Quality::ok});
            sensors::write_readings_csv(f, rows);
            written.push_back(p);
        }
        metrics["run"] = run_metrics(r);
    }

    if (s.ac_trace) {
        auto p = dir / "ac_trace.csv";
        auto f = open_out(p);
        ac::write_trace_csv(f, s.waveform, s.adc, s.ac_trace->first, s.ac_trace->second);
        written.push_back(p);
    }

    if (out.table2) {
        const auto& t = *out.table2;
        json nominal = nullptr;
        if (t.nominal)
            nominal = {{"uplink_start_s", t.nominal->uplink_start_s},
                       {"notification_s", t.nominal->notification_s},
                       {"command_exec_s", t.nominal->command_exec_s}};
        std::vector<double> up, no, ex;
        int incomplete = 0;
        for (const auto& row : t.runs) {
            if (!row) {
                ++incomplete;
                continue;
            }
            up.push_back(row->uplink_start_s);
            no.push_back(row->notification_s);
            ex.push_back(row->command_exec_s);
        }
        metrics["table2"] = {{"nominal", std::move(nominal)},
                             {"runs", t.runs.size()},
                             {"incomplete_runs", incomplete},
                             {"uplink_start_s", stats(up)},
                             {"notification_s", stats(no)},
                             {"command_exec_s", stats(ex)}};
    }

    if (!out.sweep.empty()) {
        json rows = json::array();
        for (const auto& row : out.sweep) {
            const auto& d = row.config.detector;
            rows.push_back({{"threshold_fraction", d.threshold_fraction},
                            {"k", d.k},
                            {"n", d.n},
                            {"rule", d.rule == ac::WindowRule::consecutive ? "consecutive" : "anywhere"},
                            {"phases", row.latency.latencies_s.size()},
                            {"min_ms", row.latency.min_s * 1e3},
                            {"mean_ms", row.latency.mean_s * 1e3},
                            {"max_ms", row.latency.max_s * 1e3},
                            {"false_alarms", row.false_alarms},
                            {"ticks", row.ticks}});
        }
        metrics["detector"] = std::move(rows);
        auto p = dir / "detector_latency.csv";
        auto f = open_out(p);
        f << "threshold_fraction,k,n,rule,phase_index,latency_ms\n";
        for (const auto& row : out.sweep) {
            const auto& d = row.config.detector;
            for (std::size_t i = 0; i < row.latency.latencies_s.size(); ++i)
                f << fmt::format("{},{},{},{},{},{:.3f}\n", d.threshold_fraction, d.k, d.n,
                                 d.rule == ac::WindowRule::consecutive ? "consecutive" : "anywhere", i,
                                 row.latency.latencies_s[i] * 1e3);
        }
        written.push_back(p);
    }

    json cs = json::array();
    for (const auto& c : checks)
        cs.push_back({{"name", c.name}, {"passed", c.passed}, {"measured", c.measured}, {"expected", c.expected}});
    metrics["checks"] = std::move(cs);
    {
        auto p = dir / "metrics.json";
        auto f = open_out(p);
        f << metrics.dump(2) << '\n';
        written.push_back(p);
    }
    return written;
}

}  // namespace labmon::sim

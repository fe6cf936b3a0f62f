#include <algorithm>
#include <cmath>
#include <deque>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "labmon/sim.hpp"

namespace labmon::sim {

using json = nlohmann::json;

namespace {

double param(const json& p, const char* key, double fallback) {
    return p.contains(key) && p.at(key).is_number() ? p.at(key).get<double>() : fallback;
}

std::vector<SimTime> scripted(const RunResult& r, std::string_view action) {
    std::vector<SimTime> out;
    for (const auto& e : r.log)
        if (e.event == "SCRIPT" && detail_field(e.detail, "action") == action)
            out.push_back(e.t);
    return out;
}

CheckResult missing_run(const std::string& name) {
    return {name, false, "no run output", "scenario produces the required run"};
}

CheckResult battery_switch(const CheckSpec& c, const RunResult& r) {
    const double max_ms = param(c.params, "max_ms", 4.0);
    double worst = 0.0;
    int edges = 0;
    bool all_found = true;
    for (auto [action, source] : {std::pair{"power_loss", "BATTERY"}, std::pair{"power_restore", "MAINS"}}) {
        for (SimTime t : scripted(r, action)) {
            auto it = std::find_if(r.log.begin(), r.log.end(), [&](const LogEntry& e) {
                return e.t >= t && e.event == "POWER_SOURCE" && detail_field(e.detail, "source") == source;
            });
            if (it == r.log.end()) {
                all_found = false;
                continue;
            }
            ++edges;
            worst = std::max(worst, to_seconds(it->t - t) * 1e3);
        }
    }
    return {c.name, all_found && edges > 0 && worst <= max_ms,
            fmt::format("{} switches, worst {:.3f} ms{}", edges, worst, all_found ? "" : ", some missing"),
            fmt::format("every scripted edge switched within {} ms", max_ms)};
}

std::set<std::int64_t> gaps_ms(const std::vector<SimTime>& ts) {
    std::set<std::int64_t> out;
    for (std::size_t i = 1; i < ts.size(); ++i) out.insert((ts[i] - ts[i - 1]).count() / 1000);
    return out;
}

CheckResult report_cadence(const CheckSpec& c, const RunResult& r) {
    const auto normal = from_seconds(param(c.params, "normal_s", 60.0));
    const auto emergency = from_seconds(param(c.params, "emergency_s", 300.0));
    auto downs = scripted(r, "ethernet_down");
    if (downs.empty()) return {c.name, false, "no ethernet_down directive", "an Ethernet loss"};
    const SimTime down = downs.front();
    auto ups = scripted(r, "ethernet_up");
    auto up_it = std::find_if(ups.begin(), ups.end(), [&](SimTime t) { return t > down; });
    const SimTime up = up_it == ups.end() ? SimTime::max() : *up_it;

    std::vector<SimTime> http, unb;
    for (const auto& e : r.log) {
        if (e.event == "HTTP_REPORT" && e.t < down) http.push_back(e.t);
        if (e.event == "UPLINK_START" && e.t > down && e.t < up) {
            auto code = detail_field(e.detail, "code");
            if (code == "0" || code == "7") unb.push_back(e.t);
        }
    }
    auto hg = gaps_ms(http);
    auto ug = gaps_ms(unb);
    const bool first_ok = !unb.empty() && unb.front() - down == emergency;
    const bool ok = http.size() >= 2 && unb.size() >= 2 && first_ok &&
                    hg == std::set<std::int64_t>{normal.count() / 1000} &&
                    ug == std::set<std::int64_t>{emergency.count() / 1000};
    return {c.name, ok,
            fmt::format("{} HTTP reports, gaps {} ms; {} UNB reports, gaps {} ms, first after {} s", http.size(),
                        hg, unb.size(), ug, unb.empty() ? -1.0 : to_seconds(unb.front() - down)),
            fmt::format("HTTP every {} s before loss, UNB every {} s after", to_seconds(normal),
                        to_seconds(emergency))};
}

CheckResult alert_codes(const CheckSpec& c, const RunResult& r) {
    std::set<int> want;
    if (c.params.contains("codes"))
        for (const auto& x : c.params.at("codes")) want.insert(x.get<int>());
    std::set<int> seen;
    for (const auto& e : r.log)
        if (e.event == "UPLINK_START")
            if (auto code = detail_field(e.detail, "code")) seen.insert(std::stoi(*code));
    const bool ok = std::includes(seen.begin(), seen.end(), want.begin(), want.end());
    return {c.name, ok, fmt::format("uplinked codes {}", seen), fmt::format("includes {}", want)};
}

bool accepted_uplink(const unb::TranscriptRecord& t) {
    return t.direction == unb::Direction::uplink && t.replica_index == 0;
}

bool delivered_downlink(const unb::TranscriptRecord& t) {
    return t.direction == unb::Direction::downlink && t.outcome == unb::Outcome::delivered;
}

// Largest count of matching records inside any rolling window (t - window, t].
template <typename Pred>
int rolling_max(const std::vector<unb::TranscriptRecord>& recs, Pred pred, SimTime window) {
    std::deque<SimTime> in;
    int best = 0;
    for (const auto& t : recs) {
        if (!pred(t)) continue;
        while (!in.empty() && in.front() <= t.t - window) in.pop_front();
        in.push_back(t.t);
        best = std::max(best, static_cast<int>(in.size()));
    }
    return best;
}

CheckResult budget(const CheckSpec& c, const RunResult& r, bool uplink, SimTime window) {
    const int max = static_cast<int>(param(c.params, "max", uplink ? 140 : 4));
    const int seen = uplink ? rolling_max(r.network, accepted_uplink, window)
                            : rolling_max(r.network, delivered_downlink, window);
    return {c.name, seen <= max, fmt::format("peak {} per rolling window", seen), fmt::format("<= {}", max)};
}

// The first budget rejection must come when the window is exactly full.
CheckResult rejections(const CheckSpec& c, const RunResult& r, SimTime window, int up_limit, int down_limit) {
    std::string measured;
    bool ok = true;
    for (bool uplink : {true, false}) {
        const char* key = uplink ? "uplink" : "downlink";
        if (c.params.contains(key) && !c.params.at(key).get<bool>()) continue;
        const auto dir = uplink ? unb::Direction::uplink : unb::Direction::downlink;
        std::deque<SimTime> in;
        std::optional<int> at_reject;
        int rejected = 0;
        for (const auto& t : r.network) {
            if (t.direction != dir) continue;
            while (!in.empty() && in.front() <= t.t - window) in.pop_front();
            if (t.outcome == unb::Outcome::rejected_budget) {
                ++rejected;
                if (!at_reject) at_reject = static_cast<int>(in.size());
            } else if (uplink ? accepted_uplink(t) : delivered_downlink(t)) {
                in.push_back(t.t);
            }
        }
        const int limit = uplink ? up_limit : down_limit;
        ok = ok && at_reject == limit;
        measured += fmt::format("{}{}: {} rejected, first after {} in window", measured.empty() ? "" : "; ", key,
                                rejected, at_reject ? fmt::format("{}", *at_reject) : "none");
    }
    return {c.name, ok, measured,
            fmt::format("message {} uplink / {} downlink rejected by budget", up_limit + 1, down_limit + 1)};
}

CheckResult downlink_windows(const CheckSpec& c, const RunResult& r, const Scenario& s) {
    const int min_delivered = static_cast<int>(param(c.params, "min_delivered", 1));
    const SimTime lo = s.timing.window_delay;
    const SimTime hi = s.timing.window_delay + s.timing.window_length;
    std::optional<SimTime> last_end;
    int delivered = 0, outside = 0;
    for (const auto& t : r.network) {
        if (t.direction == unb::Direction::uplink && t.replica_index == s.radio.replica_count - 1)
            last_end = t.t;
        if (!delivered_downlink(t)) continue;
        ++delivered;
        if (!last_end || t.t < *last_end + lo || t.t > *last_end + hi) ++outside;
    }
    return {c.name, outside == 0 && delivered >= min_delivered,
            fmt::format("{} delivered, {} outside the window", delivered, outside),
            fmt::format(">= {} delivered, all in [end+{} s, end+{} s]", min_delivered, to_seconds(lo),
                        to_seconds(hi))};
}

CheckResult count_events(const CheckSpec& c, const RunResult& r, std::string_view event, bool at_least) {
    const auto n = std::count_if(r.log.begin(), r.log.end(), [&](const auto& e) { return e.event == event; });
    const double bound = param(c.params, at_least ? "min" : "max", at_least ? 1.0 : 0.0);
    const bool ok = at_least ? n >= bound : n <= bound;
    return {c.name, ok, fmt::format("{} {}", n, event), fmt::format("{} {}", at_least ? ">=" : "<=", bound)};
}

CheckResult readings_present(const CheckSpec& c, const RunResult& r) {
    const auto min = static_cast<std::size_t>(param(c.params, "min", 1));
    std::string measured;
    bool ok = !r.readings.empty();
    for (const auto& [id, series] : r.readings) {
        ok = ok && series.points.size() >= min;
        measured += fmt::format("{}{}={}", measured.empty() ? "" : " ", id, series.points.size());
    }
    return {c.name, ok, measured.empty() ? "no sensors" : measured, fmt::format(">= {} stored readings per sensor", min)};
}

CheckResult table2_nominal(const CheckSpec& c, const Outputs& out) {
    if (!out.table2) return missing_run(c.name);
    const double tol = param(c.params, "tolerance_s", 1e-6);
    const Table2Row want{param(c.params, "uplink_s", 1.3), param(c.params, "notify_s", 4.5),
                         param(c.params, "command_s", 39.6)};
    const auto& got = out.table2->nominal;
    const bool ok = got && std::abs(got->uplink_start_s - want.uplink_start_s) <= tol &&
                    std::abs(got->notification_s - want.notification_s) <= tol &&
                    std::abs(got->command_exec_s - want.command_exec_s) <= tol;
    return {c.name, ok,
            got ? fmt::format("{:.6f} / {:.6f} / {:.6f} s", got->uplink_start_s, got->notification_s,
                              got->command_exec_s)
                : std::string("incomplete run"),
            fmt::format("{} / {} / {} s (+-{} s)", want.uplink_start_s, want.notification_s, want.command_exec_s, tol)};
}

CheckResult table2_spread(const CheckSpec& c, const Outputs& out) {
    if (!out.table2) return missing_run(c.name);
    const Table2Row centre{param(c.params, "uplink_center_s", 1.3), param(c.params, "notify_center_s", 4.5),
                           param(c.params, "command_center_s", 39.6)};
    const Table2Row bound{param(c.params, "uplink_s", 0.5), param(c.params, "notify_s", 0.6),
                          param(c.params, "command_s", 0.7)};
    Table2Row worst;
    int incomplete = 0;
    for (const auto& row : out.table2->runs) {
        if (!row) {
            ++incomplete;
            continue;
        }
        worst.uplink_start_s = std::max(worst.uplink_start_s, std::abs(row->uplink_start_s - centre.uplink_start_s));
        worst.notification_s = std::max(worst.notification_s, std::abs(row->notification_s - centre.notification_s));
        worst.command_exec_s = std::max(worst.command_exec_s, std::abs(row->command_exec_s - centre.command_exec_s));
    }
    const bool ok = incomplete == 0 && !out.table2->runs.empty() && worst.uplink_start_s <= bound.uplink_start_s &&
                    worst.notification_s <= bound.notification_s && worst.command_exec_s <= bound.command_exec_s;
    return {c.name, ok,
            fmt::format("{} runs, max deviation {:.3f} / {:.3f} / {:.3f} s, {} incomplete", out.table2->runs.size(),
                        worst.uplink_start_s, worst.notification_s, worst.command_exec_s, incomplete),
            fmt::format("within +-{} / +-{} / +-{} s", bound.uplink_start_s, bound.notification_s,
                        bound.command_exec_s)};
}

CheckResult detector_latency(const CheckSpec& c, const Outputs& out) {
    if (out.sweep.empty()) return missing_run(c.name);
    const auto& l = out.sweep.front().latency;
    const double max_ms = param(c.params, "max_ms", 4.0);
    const double mean_ms = param(c.params, "mean_ms", 2.6);
    const double mean_tol = param(c.params, "mean_tol_ms", 0.2);
    const double min_ms = param(c.params, "min_ms", 2.2);
    const bool ok = l.max_s * 1e3 <= max_ms && std::abs(l.mean_s * 1e3 - mean_ms) <= mean_tol &&
                    l.min_s * 1e3 <= min_ms;
    return {c.name, ok,
            fmt::format("min {:.3f} / mean {:.3f} / max {:.3f} ms over {} phases", l.min_s * 1e3, l.mean_s * 1e3,
                        l.max_s * 1e3, l.latencies_s.size()),
            fmt::format("min <= {} ms, mean {} +- {} ms, max <= {} ms", min_ms, mean_ms, mean_tol, max_ms)};
}

CheckResult false_alarms(const CheckSpec& c, const Outputs& out) {
    if (out.sweep.empty()) return missing_run(c.name);
    const auto& row = out.sweep.front();
    const auto max = static_cast<std::int64_t>(param(c.params, "max", 0));
    return {c.name, row.false_alarms <= max,
            fmt::format("{} false alarms in {} ticks", row.false_alarms, row.ticks), fmt::format("<= {}", max)};
}

}  // namespace

bool is_known_check(std::string_view name) {
    static constexpr std::string_view names[] = {
        "battery_switch",   "report_cadence",    "alert_codes",      "uplink_budget",
        "downlink_budget",  "budget_rejections", "downlink_windows", "commands_executed",
        "no_protocol_violations", "readings_present", "table2_nominal", "table2_spread",
        "detector_latency", "false_alarms",
    };
    return std::find(std::begin(names), std::end(names), name) != std::end(names);
}

std::vector<CheckResult> evaluate_checks(const Scenario& s, const Outputs& out) {
    std::vector<CheckResult> results;
    for (const auto& c : s.checks) {
        const RunResult* r = out.timeline ? &*out.timeline : nullptr;
        auto need = [&](auto&& f) { return r ? f(*r) : missing_run(c.name); };
        if (c.name == "battery_switch")
            results.push_back(need([&](const RunResult& x) { return battery_switch(c, x); }));
        else if (c.name == "report_cadence")
            results.push_back(need([&](const RunResult& x) { return report_cadence(c, x); }));
        else if (c.name == "alert_codes")
            results.push_back(need([&](const RunResult& x) { return alert_codes(c, x); }));
        else if (c.name == "uplink_budget")
            results.push_back(need([&](const RunResult& x) { return budget(c, x, true, s.limits.window); }));
        else if (c.name == "downlink_budget")
            results.push_back(need([&](const RunResult& x) { return budget(c, x, false, s.limits.window); }));
        else if (c.name == "budget_rejections")
            results.push_back(need([&](const RunResult& x) {
                return rejections(c, x, s.limits.window, s.limits.uplinks_per_window, s.limits.downlinks_per_window);
            }));
        else if (c.name == "downlink_windows")
            results.push_back(need([&](const RunResult& x) { return downlink_windows(c, x, s); }));
        else if (c.name == "commands_executed")
            results.push_back(need([&](const RunResult& x) { return count_events(c, x, "COMMAND_EXECUTED", true); }));
        else if (c.name == "no_protocol_violations")
            results.push_back(need([&](const RunResult& x) { return count_events(c, x, "PROTOCOL_VIOLATION", false); }));
        else if (c.name == "readings_present")
            results.push_back(need([&](const RunResult& x) { return readings_present(c, x); }));
        else if (c.name == "table2_nominal")
            results.push_back(table2_nominal(c, out));
        else if (c.name == "table2_spread")
            results.push_back(table2_spread(c, out));
        else if (c.name == "detector_latency")
            results.push_back(detector_latency(c, out));
        else if (c.name == "false_alarms")
            results.push_back(false_alarms(c, out));
        else
            results.push_back({c.name, false, "unknown check", "a known check name"});
    }
    return results;
}

}  // namespace labmon::sim

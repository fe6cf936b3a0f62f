#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "labmon/ac_monitor.hpp"
#include "labmon/backend.hpp"
#include "labmon/codec.hpp"
#include "labmon/device_node.hpp"
#include "labmon/sensors.hpp"
#include "labmon/time.hpp"
#include "labmon/unb_network.hpp"

// Deterministic discrete-event engine binding node, AC front end, sensors,
// UNB network and backend into reproducible scenario runs.
namespace labmon::sim {

using namespace std::chrono_literals;

class ScenarioError : public std::invalid_argument {
public:
    explicit ScenarioError(std::vector<std::string> issues);
    const std::vector<std::string>& issues() const { return issues_; }

private:
    std::vector<std::string> issues_;
};

/// Min-queue on (t, insertion sequence).
class EventQueue {
public:
    // Throws std::logic_error when t precedes the current time.
    void schedule(SimTime t, std::function<void()> fn);
    // Pops and runs the next event if its time is below `end`.
    bool step(SimTime end);
    SimTime now() const { return now_; }
    bool empty() const { return heap_.empty(); }
    std::size_t size() const { return heap_.size(); }
    std::optional<SimTime> next_time() const;

private:
    struct Item {
        SimTime t;
        std::uint64_t seq;
        std::function<void()> fn;
    };
    struct Later {
        bool operator()(const Item& a, const Item& b) const {
            return a.t != b.t ? a.t > b.t : a.seq > b.seq;
        }
    };

    std::priority_queue<Item, std::vector<Item>, Later> heap_;
    std::uint64_t next_seq_ = 0;
    SimTime now_{0};
};

enum class ScenarioKind { timeline, table2, detector_sweep };

enum class Action {
    power_loss,
    power_restore,
    ethernet_down,
    ethernet_up,
    queue_command,
    update_sensor,
    reload,
};

std::string_view to_string(Action a);

struct GeneratorSpec {
    sensors::SignalGenerator signal;
    bool ac_rms = false;  // line RMS from the AC front end instead of `signal`
};

struct SensorSpec {
    backend::SensorConfigRow row;
    GeneratorSpec generator;
};

struct Directive {
    SimTime t{0};
    Action action = Action::power_loss;
    std::optional<codec::DownlinkFrame> command;
    std::optional<SensorSpec> sensor;
};

struct Jitter {
    SimTime alert_compile = 500ms;
    SimTime push = 100ms;
    SimTime downlink_service = 200ms;
};

struct Table2Spec {
    int runs = 100;
};

struct SweepConfig {
    ac::DetectorConfig detector;
};

struct SweepSpec {
    int phases = 1000;
    std::int64_t false_alarm_ticks = 1'000'000;
    std::vector<SweepConfig> configs;
};

struct CheckSpec {
    std::string name;
    nlohmann::json params;
};

struct Scenario {
    std::string name;
    ScenarioKind kind = ScenarioKind::timeline;
    std::uint64_t seed = 1;
    SimTime duration{0};

    node::NodeSettings node;
    SimTime report_interval = 60s;
    SimTime emergency_interval = 300s;
    bool init_ethernet_up = true;
    bool seed_cache = false;  // write the backend config to the node cache before boot

    unb::RadioParams radio;
    unb::NetworkTiming timing;
    unb::BudgetLimits limits;
    SimTime ethernet_latency = 20ms;
    SimTime push_latency = 620ms;
    bool jitter_enabled = false;
    Jitter jitter;

    ac::WaveformParams waveform;
    ac::AdcModel adc;
    ac::DetectorConfig detector;
    std::optional<std::pair<double, double>> ac_trace;  // seconds [from, to)

    std::vector<SensorSpec> sensors;
    std::vector<Directive> timeline;  // sorted by t, stable
    SimTime battery_sample_interval = 60s;

    std::optional<Table2Spec> table2;
    std::optional<SweepSpec> sweep;
    std::vector<CheckSpec> checks;
};

// Throws ScenarioError listing every offending field or directive.
Scenario parse_scenario(const nlohmann::json& j);
Scenario load_scenario(const std::filesystem::path& path);

struct LogEntry {
    SimTime t{0};
    std::string event;
    std::string payload_hex;
    std::string detail;
};

// Value of `key=` in a space-separated detail string.
std::optional<std::string> detail_field(const std::string& detail, std::string_view key);

struct BatterySample {
    SimTime t{0};
    double battery_mAh = 0.0;
    double draw_mA = 0.0;
    node::PowerSource power = node::PowerSource::mains;
    node::Mode mode = node::Mode::normal;
};

struct RunResult {
    std::vector<LogEntry> log;
    std::vector<unb::TranscriptRecord> network;  // ordered
    std::vector<BatterySample> battery;
    std::vector<backend::MessageRecord> records;
    std::vector<backend::CommandQueueEntry> commands;
    std::vector<std::string> sensor_ids;
    std::map<std::string, backend::Series> readings;
};

struct RunOptions {
    // Serve mode: share the API's backend instead of an embedded one.
    backend::Backend* backend = nullptr;
    // Called before each event with its virtual time (live pacing).
    std::function<void(SimTime)> before_event;
    const std::atomic<bool>* stop = nullptr;
    // Overrides the scenario seed (table2 runs derive one per run).
    std::optional<std::uint64_t> seed;
    std::optional<bool> jitter;
};

RunResult run_timeline(const Scenario& s, const RunOptions& options = {});

struct Table2Row {
    double uplink_start_s = 0.0;
    double notification_s = 0.0;
    double command_exec_s = 0.0;
};

struct Table2Result {
    std::optional<Table2Row> nominal;
    std::vector<std::optional<Table2Row>> runs;
};

// Latencies from the first power-loss alarm of a run.
std::optional<Table2Row> table2_row(const RunResult& r);
Table2Result measure_table2(const Scenario& s, int n_runs);

struct SweepRow {
    SweepConfig config;
    ac::LatencyStats latency;
    std::int64_t false_alarms = 0;
    std::int64_t ticks = 0;
};

std::int64_t count_false_alarms(const ac::WaveformParams& w, const ac::AdcModel& adc,
                                const ac::DetectorConfig& d, std::int64_t ticks);
std::vector<SweepRow> run_sweep(const Scenario& s);

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string measured;
    std::string expected;
};

struct RunReport {
    std::string scenario;
    std::vector<CheckResult> checks;
    std::vector<std::filesystem::path> artifacts;
    bool passed() const;
};

struct Outputs {
    std::optional<RunResult> timeline;
    std::optional<Table2Result> table2;
    std::vector<SweepRow> sweep;
};

Outputs execute(const Scenario& s);
bool is_known_check(std::string_view name);
std::vector<CheckResult> evaluate_checks(const Scenario& s, const Outputs& out);

// Writes transcript.log, network.csv, battery.csv, readings/*.csv,
// metrics.json and (optionally) ac_trace.csv.
std::vector<std::filesystem::path> write_bundle(const std::filesystem::path& dir, const Scenario& s,
                                                const Outputs& out,
                                                const std::vector<CheckResult>& checks);

RunReport run_scenario(const Scenario& s, const std::filesystem::path& out_dir);

}  // namespace labmon::sim

#pragma once

#include <bitset>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "labmon/ac_monitor.hpp"
#include "labmon/codec.hpp"
#include "labmon/sensors.hpp"
#include "labmon/time.hpp"
#include "labmon/unb_network.hpp"

namespace labmon::node {

using namespace std::chrono_literals;

class InitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Mode { normal, emergency };
enum class PowerSource { mains, battery };
enum class LinkState { up, down };
enum class InitSource { backend, cache };

std::string_view to_string(Mode m);
std::string_view to_string(PowerSource p);
std::string_view to_string(LinkState l);

// Board currents from the hardware characterization, in mA; capacity in mAh.
struct PowerProfile {
    double base_battery_mA = 125.0;  // MCU + Ethernet shield + peripherals
    double ethernet_chip_mA = 56.0;
    double uplink_extra_mA = 30.0;
    double downlink_extra_mA = 20.0;
    double mcu_mA = 32.0;
    double battery_capacity_mAh = 2600.0;

    void validate() const;
};

/// Sensor registry plus reporting cadence, as served by the backend and
/// mirrored in the local cache file.
struct NodeConfig {
    std::string device_id;
    std::uint64_t version = 0;
    SimTime report_interval = 60s;
    SimTime emergency_interval = 300s;
    std::vector<sensors::SensorDescriptor> sensors;

    friend bool operator==(const NodeConfig&, const NodeConfig&) = default;
};

void save_cache(const std::filesystem::path& path, const NodeConfig& config);
// Throws InitError when the file is missing, truncated or malformed.
NodeConfig load_cache(const std::filesystem::path& path);
std::string serialize_cache(const NodeConfig& config);
NodeConfig parse_cache(std::string_view text);

struct NodeSettings {
    std::string device_id = "lab-node-1";
    PowerProfile power;
    SimTime throttled_interval = 660s;  // even coverage of a 140-message day
    SimTime acquisition_wait = sensors::kDefaultAcquisitionWait;
    SimTime alert_compile = 1300ms;
    SimTime alert_compile_jitter = 0ms;
    SimTime command_processing = 30ms;
    std::optional<SimTime> ethernet_debounce;  // defaults to one report interval
    SimTime downlink_poll_interval = 6h;      // periodic uplinks asking for commands; 0 = never
    double low_battery_fraction = 0.05;
    bool alert_http_duplicate = false;
    int uplinks_per_day = 140;
    int downlinks_per_day = 4;
    std::filesystem::path cache_path = "node_cache.txt";
    std::uint64_t seed = 0;
};

struct UplinkBudget {
    unb::RollingBudget uplinks{140, kDay};
    unb::RollingBudget downlinks{4, kDay};
};

struct DeviceState {
    Mode mode = Mode::normal;
    PowerSource power = PowerSource::mains;
    LinkState ethernet = LinkState::up;  // debounced link status
    double battery_mAh = 2600.0;
    bool display_on = true;
    bool ethernet_chip_on = true;
    std::bitset<4> digital_out;
    UplinkBudget ledgers;
};

enum class TimerKind {
    report,
    ethernet_confirm,
    alert_compiled,
    airtime_end,
    listen_start,
    listen_end,
    command_exec,
    poll_next,
    read_done,
    battery_low,
    battery_empty,
};

struct HttpReading {
    std::string sensor_id;
    double value = 0.0;
};

struct HttpReport {
    std::string device_id;
    SimTime t{0};
    codec::EventCode event = codec::EventCode::periodic_report;
    std::vector<HttpReading> readings;
    int acks = 0;  // commands executed since the previous report
};

struct HttpCommand {
    std::uint64_t id = 0;
    std::vector<std::uint8_t> frame;
};

struct UplinkResult {
    bool accepted = false;
    std::string reason;
    SimTime airtime_end{0};
    std::optional<unb::DownlinkWindow> window;
};

/// Everything the node does to the outside world goes through this port.
class NodePorts {
public:
    virtual ~NodePorts() = default;
    virtual void schedule(SimTime at, TimerKind kind, std::uint64_t tag) = 0;
    virtual UplinkResult send_uplink(const codec::UplinkPayload& payload, bool request_downlink,
                                     SimTime t) = 0;
    // false when the Ethernet path cannot carry the request
    virtual bool send_http_report(const HttpReport& report, SimTime t) = 0;
    virtual std::optional<NodeConfig> fetch_config(SimTime t) = 0;
    virtual sensors::Reading acquire(const sensors::SensorDescriptor& d, SimTime t) = 0;
    virtual void log(SimTime t, std::string_view event, std::string_view payload_hex,
                     std::string_view detail) = 0;
};

enum class CommandPath { unb, http };

class DeviceNode {
public:
    DeviceNode(NodeSettings settings, NodePorts& ports);

    // Throws InitError when neither the backend nor the cache can provide a
    // configuration.
    void init(InitSource source, SimTime t, LinkState link = LinkState::up);
    void reload_config(SimTime t);

    // Returns false when the edge violates loss/restore alternation.
    bool on_power_edge(ac::PowerEdge edge, SimTime t);
    void on_ethernet_status(LinkState link, SimTime t);
    void on_timer(TimerKind kind, std::uint64_t tag, SimTime t);
    void on_downlink(std::span<const std::uint8_t> payload, SimTime t);
    void on_http_response(const std::optional<HttpCommand>& command, SimTime t);

    // Executes a checksum-verified frame; false for unknown opcodes.
    bool apply_command(const codec::DownlinkFrame& frame, SimTime t);

    void energy_step(SimTime dt);
    double current_draw_mA() const;
    // charge at t >= the last processed event, without advancing the node
    double battery_at(SimTime t) const;

    const DeviceState& state() const { return state_; }
    const sensors::SensorRegistry& registry() const { return registry_; }
    const NodeConfig& config() const { return config_; }
    const NodeSettings& settings() const { return settings_; }
    bool halted() const { return halted_; }
    bool radio_busy() const { return radio_busy_; }
    std::optional<sensors::Reading> latest(std::string_view sensor_id) const;
    SimTime next_emergency_interval(SimTime t) const;

private:
    struct PendingAlert {
        codec::EventCode code;
        SimTime raised;
        bool ready = false;
    };
    struct PendingExec {
        codec::DownlinkFrame frame;
        SimTime received;
        CommandPath path;
    };

    void load_config(InitSource source, SimTime t);
    void apply_config(NodeConfig cfg, SimTime t);
    void set_mode(Mode m, SimTime t);
    void update_chip(SimTime t);
    void schedule_report(SimTime t);
    void enqueue_alert(codec::EventCode code, SimTime t);
    void try_transmit(SimTime t);
    bool transmit(codec::EventCode code, bool request_downlink, SimTime t);
    void send_periodic(SimTime t);
    void handle_report(SimTime t);
    void handle_read_done(SimTime t);
    void receive_frame(std::span<const std::uint8_t> payload, SimTime t, CommandPath path);
    void advance_energy(SimTime t);
    void refresh_battery_timers(SimTime t);
    codec::SlotValues slot_values() const;
    std::vector<HttpReading> http_readings() const;
    SimTime debounce() const;

    NodeSettings settings_;
    NodePorts& ports_;
    NodeConfig config_;
    sensors::SensorRegistry registry_;
    sensors::AlarmTracker alarms_;
    DeviceState state_;
    LinkState link_ = LinkState::up;  // raw link, before debounce
    std::mt19937_64 rng_;

    bool initialized_ = false;
    bool halted_ = false;
    bool radio_busy_ = false;
    bool transmitting_ = false;
    bool listening_ = false;
    bool awaiting_window_ = false;
    bool periodic_pending_ = false;
    bool low_battery_sent_ = false;

    std::uint64_t report_gen_ = 0;
    std::uint64_t confirm_gen_ = 0;
    std::uint64_t window_gen_ = 0;
    std::uint64_t poll_gen_ = 0;
    std::uint64_t energy_epoch_ = 0;
    std::uint64_t alert_seq_ = 0;
    std::uint64_t exec_seq_ = 0;

    std::map<std::uint64_t, PendingAlert> alerts_;
    std::map<std::uint64_t, PendingExec> execs_;
    std::map<std::string, sensors::Reading, std::less<>> latest_;
    std::optional<sensors::Reading> in_flight_read_;
    std::size_t poll_index_ = 0;
    std::optional<SimTime> last_downlink_request_;
    int unacked_executions_ = 0;

    SimTime last_energy_t_{0};
    double scheduled_draw_ = -1.0;
    PowerSource scheduled_power_ = PowerSource::mains;
};

}  // namespace labmon::node

#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "labmon/codec.hpp"
#include "labmon/device_node.hpp"
#include "labmon/sensors.hpp"
#include "labmon/time.hpp"

// Stand-in for the web server, database and push service: ingest paths,
// sensor configuration table, command queue and operator event stream.
namespace labmon::backend {

using namespace std::chrono_literals;

// Malformed input (HTTP 400 class).
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Well-formed but conflicting with stored state (HTTP 409 class).
class ConflictError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotFound : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

enum class Path { http, unb };
std::string_view to_string(Path p);

struct StoredReading {
    std::string sensor_id;
    double value = 0.0;
    bool unknown_sensor = false;
};

struct MessageRecord {
    std::uint64_t id = 0;
    SimTime t{0};
    std::string device_id;
    Path path = Path::http;
    codec::EventCode event = codec::EventCode::periodic_report;
    std::vector<StoredReading> readings;
    std::optional<double> rssi;
    std::optional<double> snr;
};

struct DeviceProfile {
    std::string device_id;
    SimTime report_interval = 60s;
    SimTime emergency_interval = 300s;
};

struct SensorConfigRow {
    std::string device_id;
    sensors::SensorDescriptor sensor;  // operating_range doubles as slot range
    std::string display_name;
    std::string units;
};

enum class CommandStatus { pending, delivered, executed, expired };
std::string_view to_string(CommandStatus s);

struct CommandQueueEntry {
    std::uint64_t id = 0;
    std::string device_id;
    SimTime created{0};
    SimTime updated{0};
    codec::DownlinkFrame frame;
    CommandStatus status = CommandStatus::pending;
    bool in_flight = false;  // released to a downlink window, outcome unknown
};

struct PushEvent {
    std::uint64_t id = 0;  // assigned on publish
    SimTime t{0};
    std::string device_id;
    std::string kind;       // alert | reading | command | config
    std::string data_json;  // object
};

struct CommandDelivery {
    std::uint64_t command_id = 0;
    codec::DownlinkPayload payload{};
};

struct IngestResult {
    std::uint64_t record_id = 0;
    std::optional<CommandDelivery> command;
};

struct UnbCallback {
    std::string device_id;
    std::vector<std::uint8_t> payload;
    SimTime t{0};
    std::optional<double> rssi;
    std::optional<double> snr;
    bool downlink_requested = false;
};

struct CallbackResult {
    std::uint64_t record_id = 0;
    codec::EventCode event = codec::EventCode::periodic_report;
    std::optional<CommandDelivery> downlink;
};

struct ReadingQuery {
    std::vector<std::string> sensor_ids;
    SimTime from{0};
    SimTime to{std::numeric_limits<std::int64_t>::max()};
    bool derivative = false;
    int smooth_window = 0;  // <= 1 disables
};

struct SeriesPoint {
    SimTime t{0};
    double value = 0.0;
};

struct Series {
    std::string sensor_id;
    std::vector<SeriesPoint> points;
};

struct QueryResult {
    std::vector<Series> series;
    std::vector<std::string> warnings;
};

// Centered moving average, window shrinking symmetrically at the edges.
std::vector<double> moving_average(const std::vector<double>& v, int window);
// Central differences inside, one-sided at the ends.
std::vector<double> finite_difference(const std::vector<SimTime>& t, const std::vector<double>& v);

struct BackendOptions {
    std::size_t queue_cap = 16;
    std::size_t event_retention = 1024;
    SimTime command_expiry = kDay;
    std::optional<std::filesystem::path> data_dir;
    std::size_t snapshot_every = 1000;  // log lines between automatic snapshots
};

class Backend {
public:
    // With a data_dir, existing snapshot + log are replayed first.
    explicit Backend(BackendOptions options = {});
    ~Backend();

    Backend(const Backend&) = delete;
    Backend& operator=(const Backend&) = delete;

    void register_device(const DeviceProfile& profile, SimTime t);
    bool has_device(const std::string& device_id) const;
    std::vector<DeviceProfile> devices() const;

    std::uint64_t update_sensor_config(const SensorConfigRow& row, SimTime t);
    std::vector<SensorConfigRow> sensor_rows(const std::string& device_id = {}) const;
    std::optional<SensorConfigRow> sensor_row(const std::string& sensor_id) const;
    node::NodeConfig device_config(const std::string& device_id) const;

    IngestResult ingest_http(const node::HttpReport& report, SimTime t);
    CallbackResult unb_callback(const UnbCallback& cb);
    void downlink_outcome(std::uint64_t command_id, bool delivered, SimTime t);

    CommandQueueEntry queue_command(const std::string& device_id, const codec::DownlinkFrame& frame,
                                    SimTime t);
    std::vector<CommandQueueEntry> commands(const std::string& device_id = {}) const;
    void expire_commands(SimTime t);

    QueryResult query_readings(const ReadingQuery& q) const;
    std::vector<MessageRecord> records() const;

    // Notifications pass through the sink (default: publish immediately).
    void notify(PushEvent ev);
    void set_push_sink(std::function<void(PushEvent)> sink);
    void publish(PushEvent ev);
    std::vector<PushEvent> events_since(std::uint64_t after) const;
    std::vector<PushEvent> wait_events(std::uint64_t after, std::chrono::milliseconds timeout);
    void shutdown_streams();

    void snapshot();
    std::size_t log_lines() const;

private:
    struct State;

    void commit(const std::string& entry_json);
    void apply_entry(const std::string& entry_json);
    void open_store();
    void write_snapshot();
    std::optional<CommandDelivery> release_pending(const std::string& device_id, SimTime t,
                                                   bool mark_delivered);
    void ack_executed(const std::string& device_id, int count, SimTime t);
    void expire_locked(SimTime t);
    void set_status(std::uint64_t id, CommandStatus s, bool in_flight, SimTime t);

    BackendOptions options_;
    std::unique_ptr<State> state_;
    mutable std::mutex mutex_;
    std::ofstream log_;
    std::size_t log_lines_ = 0;
    std::size_t lines_since_snapshot_ = 0;

    std::function<void(PushEvent)> sink_;
    mutable std::mutex events_mutex_;
    std::condition_variable events_cv_;
    std::deque<PushEvent> events_;
    std::uint64_t next_event_id_ = 1;
    bool streams_closed_ = false;
};

}  // namespace labmon::backend

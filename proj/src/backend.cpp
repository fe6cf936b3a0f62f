#include "labmon/backend.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "labmon/json_io.hpp"

namespace labmon::backend {

using json = nlohmann::json;

namespace {

constexpr const char* kLogName = "log.jsonl";
constexpr const char* kSnapshotName = "snapshot.json";
constexpr int kSnapshotFormat = 1;

CommandStatus parse_status(std::string_view s) {
    if (s == "PENDING") return CommandStatus::pending;
    if (s == "DELIVERED") return CommandStatus::delivered;
    if (s == "EXECUTED") return CommandStatus::executed;
    if (s == "EXPIRED") return CommandStatus::expired;
    throw std::runtime_error(fmt::format("unknown command status '{}'", s));
}

Path parse_path(std::string_view s) {
    if (s == "HTTP") return Path::http;
    if (s == "UNB") return Path::unb;
    throw std::runtime_error(fmt::format("unknown path '{}'", s));
}

bool transition_allowed(CommandStatus from, CommandStatus to) {
    switch (from) {
    case CommandStatus::pending:
        return to == CommandStatus::delivered || to == CommandStatus::expired;
    case CommandStatus::delivered:
        return to == CommandStatus::executed;
    default:
        return false;
    }
}

json record_entry(const MessageRecord& r) {
    json readings = json::array();
    for (const auto& s : r.readings) readings.push_back({s.sensor_id, s.value, s.unknown_sensor});
    json j = {{"op", "record"},
              {"id", r.id},
              {"t", r.t.count()},
              {"device_id", r.device_id},
              {"path", to_string(r.path)},
              {"event", static_cast<int>(r.event)},
              {"readings", std::move(readings)}};
    if (r.rssi) j["rssi"] = *r.rssi;
    if (r.snr) j["snr"] = *r.snr;
    return j;
}

MessageRecord record_from_entry(const json& j) {
    MessageRecord r;
    r.id = j.at("id").get<std::uint64_t>();
    r.t = SimTime(j.at("t").get<std::int64_t>());
    r.device_id = j.at("device_id").get<std::string>();
    r.path = parse_path(j.at("path").get<std::string>());
    r.event = static_cast<codec::EventCode>(j.at("event").get<int>());
    for (const auto& x : j.at("readings"))
        r.readings.push_back({x.at(0).get<std::string>(), x.at(1).get<double>(), x.at(2).get<bool>()});
    if (j.contains("rssi")) r.rssi = j.at("rssi").get<double>();
    if (j.contains("snr")) r.snr = j.at("snr").get<double>();
    return r;
}

json command_entry(const CommandQueueEntry& e) {
    return {{"id", e.id},
            {"device_id", e.device_id},
            {"created", e.created.count()},
            {"updated", e.updated.count()},
            {"frame", codec::to_hex(codec::encode_downlink(e.frame))},
            {"status", to_string(e.status)},
            {"in_flight", e.in_flight}};
}

CommandQueueEntry command_from_entry(const json& j) {
    CommandQueueEntry e;
    e.id = j.at("id").get<std::uint64_t>();
    e.device_id = j.at("device_id").get<std::string>();
    e.created = SimTime(j.at("created").get<std::int64_t>());
    e.updated = SimTime(j.value("updated", e.created.count()));
    e.frame = codec::decode_downlink(codec::from_hex(j.at("frame").get<std::string>()));
    e.status = parse_status(j.value("status", "PENDING"));
    e.in_flight = j.value("in_flight", false);
    return e;
}

}  // namespace

std::string_view to_string(Path p) {
    return p == Path::http ? "HTTP" : "UNB";
}

std::string_view to_string(CommandStatus s) {
    switch (s) {
    case CommandStatus::pending: return "PENDING";
    case CommandStatus::delivered: return "DELIVERED";
    case CommandStatus::executed: return "EXECUTED";
    case CommandStatus::expired: return "EXPIRED";
    }
    return "?";
}

std::vector<double> moving_average(const std::vector<double>& v, int window) {
    if (window <= 1 || v.empty()) return v;
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(v.size());
    const std::ptrdiff_t half = (window - 1) / 2;
    std::vector<double> out(v.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        std::ptrdiff_t h = std::min({half, i, n - 1 - i});
        double sum = 0.0;
        for (std::ptrdiff_t k = i - h; k <= i + h; ++k) sum += v[static_cast<std::size_t>(k)];
        out[static_cast<std::size_t>(i)] = sum / static_cast<double>(2 * h + 1);
    }
    return out;
}

std::vector<double> finite_difference(const std::vector<SimTime>& t, const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<double> d(n, 0.0);
    if (n < 2) return d;
    auto slope = [&](std::size_t a, std::size_t b) {
        double dt = to_seconds(t[b] - t[a]);
        return dt > 0.0 ? (v[b] - v[a]) / dt : 0.0;
    };
    d[0] = slope(0, 1);
    d[n - 1] = slope(n - 2, n - 1);
    for (std::size_t i = 1; i + 1 < n; ++i) d[i] = slope(i - 1, i + 1);
    return d;
}

struct Backend::State {
    std::map<std::string, DeviceProfile> devices;
    std::map<std::string, std::uint64_t> versions;
    std::vector<SensorConfigRow> rows;
    std::vector<MessageRecord> records;
    std::vector<CommandQueueEntry> commands;
    std::uint64_t next_record_id = 1;
    std::uint64_t next_command_id = 1;

    CommandQueueEntry& command(std::uint64_t id) {
        auto it = std::find_if(commands.begin(), commands.end(), [&](const auto& c) { return c.id == id; });
        if (it == commands.end()) throw NotFound(fmt::format("unknown command {}", id));
        return *it;
    }

    void apply(const json& j) {
        const auto op = j.at("op").get<std::string>();
        if (op == "device") {
            DeviceProfile p{j.at("device_id").get<std::string>(),
                            SimTime(j.at("report_interval").get<std::int64_t>()),
                            SimTime(j.at("emergency_interval").get<std::int64_t>())};
            ++versions[p.device_id];
            devices[p.device_id] = std::move(p);
        } else if (op == "sensor") {
            SensorConfigRow row = json_io::row_from_json(j.at("row"));
            auto it = std::find_if(rows.begin(), rows.end(),
                                   [&](const auto& r) { return r.sensor.id == row.sensor.id; });
            ++versions[row.device_id];
            if (it != rows.end())
                *it = std::move(row);
            else
                rows.push_back(std::move(row));
        } else if (op == "record") {
            MessageRecord r = record_from_entry(j);
            next_record_id = std::max(next_record_id, r.id + 1);
            records.push_back(std::move(r));
        } else if (op == "command") {
            CommandQueueEntry e = command_from_entry(j);
            next_command_id = std::max(next_command_id, e.id + 1);
            commands.push_back(std::move(e));
        } else if (op == "status") {
            auto& e = command(j.at("id").get<std::uint64_t>());
            auto to = parse_status(j.at("status").get<std::string>());
            if (to != e.status && !transition_allowed(e.status, to))
                throw std::logic_error(fmt::format("command {}: {} -> {} not allowed", e.id,
                                                   to_string(e.status), to_string(to)));
            e.status = to;
            e.in_flight = j.at("in_flight").get<bool>();
            e.updated = SimTime(j.at("t").get<std::int64_t>());
        } else {
            throw std::runtime_error(fmt::format("unknown log op '{}'", op));
        }
    }

    json dump(std::size_t log_lines) const {
        json j = {{"format", kSnapshotFormat},
                  {"log_lines", log_lines},
                  {"next_record_id", next_record_id},
                  {"next_command_id", next_command_id}};
        json devs = json::array();
        for (const auto& [id, p] : devices)
            devs.push_back({{"device_id", id},
                            {"report_interval", p.report_interval.count()},
                            {"emergency_interval", p.emergency_interval.count()},
                            {"version", versions.at(id)}});
        j["devices"] = std::move(devs);
        json rs = json::array();
        for (const auto& r : rows) rs.push_back(json_io::to_json(r));
        j["sensors"] = std::move(rs);
        json recs = json::array();
        for (const auto& r : records) recs.push_back(record_entry(r));
        j["records"] = std::move(recs);
        json cmds = json::array();
        for (const auto& c : commands) cmds.push_back(command_entry(c));
        j["commands"] = std::move(cmds);
        return j;
    }

    std::size_t load(const json& j) {
        if (j.at("format").get<int>() != kSnapshotFormat)
            throw std::runtime_error("unsupported snapshot format");
        for (const auto& d : j.at("devices")) {
            auto id = d.at("device_id").get<std::string>();
            devices[id] = {id, SimTime(d.at("report_interval").get<std::int64_t>()),
                           SimTime(d.at("emergency_interval").get<std::int64_t>())};
            versions[id] = d.at("version").get<std::uint64_t>();
        }
        for (const auto& r : j.at("sensors")) rows.push_back(json_io::row_from_json(r));
        for (const auto& r : j.at("records")) records.push_back(record_from_entry(r));
        for (const auto& c : j.at("commands")) commands.push_back(command_from_entry(c));
        next_record_id = j.at("next_record_id").get<std::uint64_t>();
        next_command_id = j.at("next_command_id").get<std::uint64_t>();
        return j.at("log_lines").get<std::size_t>();
    }
};

Backend::Backend(BackendOptions options)
    : options_(std::move(options)), state_(std::make_unique<State>()) {
    sink_ = [this](PushEvent ev) { publish(std::move(ev)); };
    if (options_.data_dir) open_store();
}

Backend::~Backend() {
    shutdown_streams();
}

void Backend::open_store() {
    namespace fs = std::filesystem;
    const fs::path dir = *options_.data_dir;
    fs::create_directories(dir);

    std::size_t covered = 0;
    if (fs::exists(dir / kSnapshotName)) {
        std::ifstream in(dir / kSnapshotName);
        covered = state_->load(json::parse(in));
    }

    const fs::path log_path = dir / kLogName;
    std::uintmax_t good_bytes = 0;
    if (fs::exists(log_path)) {
        std::ifstream in(log_path, std::ios::binary);
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::size_t pos = 0;
        std::size_t line_no = 0;
        while (pos < content.size()) {
            auto nl = content.find('\n', pos);
            if (nl == std::string::npos) break;  // torn final write
            std::string_view line(content.data() + pos, nl - pos);
            json j = json::parse(line, nullptr, false);
            if (j.is_discarded()) {
                if (nl + 1 == content.size()) break;
                throw std::runtime_error(fmt::format("corrupt log line {}", line_no + 1));
            }
            if (line_no >= covered) state_->apply(j);
            ++line_no;
            pos = nl + 1;
        }
        good_bytes = pos;
        log_lines_ = line_no;
        if (good_bytes < content.size()) fs::resize_file(log_path, good_bytes);
    }
    if (log_lines_ < covered) throw std::runtime_error("snapshot is ahead of the log");
    log_.open(log_path, std::ios::app | std::ios::binary);
    if (!log_) throw std::runtime_error(fmt::format("cannot open {}", log_path.string()));
}

void Backend::commit(const std::string& entry_json) {
    apply_entry(entry_json);
    if (!log_.is_open()) return;
    log_ << entry_json << '\n';
    log_.flush();
    ++log_lines_;
    if (++lines_since_snapshot_ >= options_.snapshot_every) write_snapshot();
}

void Backend::write_snapshot() {
    lines_since_snapshot_ = 0;
    json dump = state_->dump(log_lines_);
    auto path = *options_.data_dir / kSnapshotName;
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << dump.dump() << '\n';
    }
    std::filesystem::rename(tmp, path);
}

void Backend::apply_entry(const std::string& entry_json) {
    state_->apply(json::parse(entry_json));
}

void Backend::snapshot() {
    std::lock_guard lock(mutex_);
    if (options_.data_dir) write_snapshot();
}

std::size_t Backend::log_lines() const {
    std::lock_guard lock(mutex_);
    return log_lines_;
}

void Backend::register_device(const DeviceProfile& profile, SimTime t) {
    if (profile.device_id.empty()) throw ValidationError("device id must not be empty");
    if (profile.report_interval <= SimTime{0} || profile.emergency_interval <= SimTime{0})
        throw ValidationError("report intervals must be positive");
    std::lock_guard lock(mutex_);
    commit(json{{"op", "device"},
                {"t", t.count()},
                {"device_id", profile.device_id},
                {"report_interval", profile.report_interval.count()},
                {"emergency_interval", profile.emergency_interval.count()}}
               .dump());
}

bool Backend::has_device(const std::string& device_id) const {
    std::lock_guard lock(mutex_);
    return state_->devices.contains(device_id);
}

std::vector<DeviceProfile> Backend::devices() const {
    std::lock_guard lock(mutex_);
    std::vector<DeviceProfile> out;
    for (const auto& [id, p] : state_->devices) out.push_back(p);
    return out;
}

std::uint64_t Backend::update_sensor_config(const SensorConfigRow& row, SimTime t) {
    try {
        row.sensor.validate();
    } catch (const std::invalid_argument& e) {
        throw ValidationError(e.what());
    }
    std::lock_guard lock(mutex_);
    if (!state_->devices.contains(row.device_id))
        throw NotFound(fmt::format("unknown device '{}'", row.device_id));
    for (const auto& r : state_->rows) {
        if (r.sensor.id == row.sensor.id) {
            if (r.device_id != row.device_id)
                throw ConflictError(fmt::format("sensor '{}' belongs to device '{}'", r.sensor.id,
                                                r.device_id));
            continue;
        }
        if (r.device_id != row.device_id) continue;
        if (row.sensor.slot_index && r.sensor.slot_index == row.sensor.slot_index)
            throw ConflictError(fmt::format("slot {} already used by '{}'", *row.sensor.slot_index,
                                            r.sensor.id));
        if (!row.sensor.address.empty() && r.sensor.bus == row.sensor.bus &&
            r.sensor.address == row.sensor.address)
            throw ConflictError(fmt::format("address '{}' already used by '{}'", row.sensor.address,
                                            r.sensor.id));
    }
    commit(json{{"op", "sensor"}, {"t", t.count()}, {"row", json_io::to_json(row)}}.dump());
    std::uint64_t version = state_->versions.at(row.device_id);
    notify({0, t, row.device_id, "config",
            json{{"sensor_id", row.sensor.id}, {"version", version}}.dump()});
    return version;
}

std::vector<SensorConfigRow> Backend::sensor_rows(const std::string& device_id) const {
    std::lock_guard lock(mutex_);
    std::vector<SensorConfigRow> out;
    for (const auto& r : state_->rows)
        if (device_id.empty() || r.device_id == device_id) out.push_back(r);
    return out;
}

std::optional<SensorConfigRow> Backend::sensor_row(const std::string& sensor_id) const {
    std::lock_guard lock(mutex_);
    for (const auto& r : state_->rows)
        if (r.sensor.id == sensor_id) return r;
    return std::nullopt;
}

node::NodeConfig Backend::device_config(const std::string& device_id) const {
    std::lock_guard lock(mutex_);
    auto it = state_->devices.find(device_id);
    if (it == state_->devices.end()) throw NotFound(fmt::format("unknown device '{}'", device_id));
    node::NodeConfig cfg;
    cfg.device_id = device_id;
    cfg.version = state_->versions.at(device_id);
    cfg.report_interval = it->second.report_interval;
    cfg.emergency_interval = it->second.emergency_interval;
    for (const auto& r : state_->rows)
        if (r.device_id == device_id) cfg.sensors.push_back(r.sensor);
    return cfg;
}

void Backend::set_status(std::uint64_t id, CommandStatus s, bool in_flight, SimTime t) {
    commit(json{{"op", "status"},
                {"id", id},
                {"t", t.count()},
                {"status", to_string(s)},
                {"in_flight", in_flight}}
               .dump());
    const auto& e = state_->command(id);
    notify({0, t, e.device_id, "command",
            json{{"command_id", id}, {"status", to_string(s)}, {"in_flight", in_flight}}.dump()});
}

void Backend::expire_locked(SimTime t) {
    std::vector<std::uint64_t> stale;
    for (const auto& c : state_->commands)
        if (c.status == CommandStatus::pending && !c.in_flight &&
            t - c.created >= options_.command_expiry)
            stale.push_back(c.id);
    for (auto id : stale) set_status(id, CommandStatus::expired, false, t);
}

void Backend::expire_commands(SimTime t) {
    std::lock_guard lock(mutex_);
    expire_locked(t);
}

std::optional<CommandDelivery> Backend::release_pending(const std::string& device_id, SimTime t,
                                                        bool mark_delivered) {
    for (const auto& c : state_->commands) {
        if (c.device_id != device_id || c.status != CommandStatus::pending) continue;
        if (c.in_flight) return std::nullopt;  // one release per window
        CommandDelivery d{c.id, codec::encode_downlink(c.frame)};
        set_status(c.id, mark_delivered ? CommandStatus::delivered : CommandStatus::pending,
                   !mark_delivered, t);
        return d;
    }
    return std::nullopt;
}

void Backend::ack_executed(const std::string& device_id, int count, SimTime t) {
    for (int i = 0; i < count; ++i) {
        auto it = std::find_if(state_->commands.begin(), state_->commands.end(), [&](const auto& c) {
            return c.device_id == device_id && c.status == CommandStatus::delivered;
        });
        if (it == state_->commands.end()) return;
        set_status(it->id, CommandStatus::executed, false, t);
    }
}

IngestResult Backend::ingest_http(const node::HttpReport& report, SimTime t) {
    std::lock_guard lock(mutex_);
    if (!state_->devices.contains(report.device_id))
        throw NotFound(fmt::format("unknown device '{}'", report.device_id));
    for (const auto& r : report.readings)
        if (!std::isfinite(r.value))
            throw ValidationError(fmt::format("reading for '{}' is not finite", r.sensor_id));
    expire_locked(t);

    MessageRecord rec;
    rec.id = state_->next_record_id;
    rec.t = t;
    rec.device_id = report.device_id;
    rec.path = Path::http;
    rec.event = report.event;
    for (const auto& r : report.readings) {
        bool known = std::any_of(state_->rows.begin(), state_->rows.end(), [&](const auto& row) {
            return row.device_id == report.device_id && row.sensor.id == r.sensor_id;
        });
        rec.readings.push_back({r.sensor_id, r.value, !known});
    }
    commit(record_entry(rec).dump());

    json readings = json::array();
    for (const auto& r : rec.readings) readings.push_back({{"sensor_id", r.sensor_id}, {"value", r.value}});
    notify({0, t, rec.device_id, "reading",
            json{{"record_id", rec.id}, {"path", "HTTP"}, {"event", static_cast<int>(rec.event)},
                 {"readings", std::move(readings)}}
                .dump()});
    if (codec::is_alert(rec.event))
        notify({0, t, rec.device_id, "alert",
                json{{"record_id", rec.id}, {"path", "HTTP"}, {"event", static_cast<int>(rec.event)},
                     {"event_name", codec::event_name(rec.event)}}
                    .dump()});

    if (report.acks > 0) ack_executed(report.device_id, report.acks, t);
    IngestResult out{rec.id, release_pending(report.device_id, t, true)};
    return out;
}

CallbackResult Backend::unb_callback(const UnbCallback& cb) {
    std::lock_guard lock(mutex_);
    if (!state_->devices.contains(cb.device_id))
        throw NotFound(fmt::format("unknown device '{}'", cb.device_id));
    if (cb.payload.size() != codec::kUplinkSize)
        throw ValidationError(
            fmt::format("uplink payload must be exactly 12 bytes, got {}", cb.payload.size()));
    expire_locked(cb.t);

    codec::SlotRanges ranges;
    std::array<std::string, codec::kSlotCount> ids;
    for (const auto& row : state_->rows) {
        if (row.device_id != cb.device_id || !row.sensor.slot_index) continue;
        auto slot = static_cast<std::size_t>(*row.sensor.slot_index);
        ranges[slot] = row.sensor.operating_range;
        ids[slot] = row.sensor.id;
    }
    auto decoded = codec::decode_uplink(cb.payload, ranges);

    MessageRecord rec;
    rec.id = state_->next_record_id;
    rec.t = cb.t;
    rec.device_id = cb.device_id;
    rec.path = Path::unb;
    rec.event = decoded.event;
    rec.rssi = cb.rssi;
    rec.snr = cb.snr;
    for (std::size_t s = 0; s < codec::kSlotCount; ++s)
        if (decoded.values[s]) rec.readings.push_back({ids[s], *decoded.values[s], false});
    commit(record_entry(rec).dump());

    json readings = json::array();
    for (const auto& r : rec.readings) readings.push_back({{"sensor_id", r.sensor_id}, {"value", r.value}});
    notify({0, cb.t, rec.device_id, "reading",
            json{{"record_id", rec.id}, {"path", "UNB"}, {"event", static_cast<int>(rec.event)},
                 {"readings", std::move(readings)}}
                .dump()});
    if (codec::is_alert(rec.event))
        notify({0, cb.t, rec.device_id, "alert",
                json{{"record_id", rec.id}, {"path", "UNB"}, {"event", static_cast<int>(rec.event)},
                     {"event_name", codec::event_name(rec.event)}}
                    .dump()});
    if (rec.event == codec::EventCode::command_ack) ack_executed(cb.device_id, 1, cb.t);

    CallbackResult out{rec.id, rec.event, std::nullopt};
    if (cb.downlink_requested) out.downlink = release_pending(cb.device_id, cb.t, false);
    return out;
}

void Backend::downlink_outcome(std::uint64_t command_id, bool delivered, SimTime t) {
    std::lock_guard lock(mutex_);
    const auto& e = state_->command(command_id);
    if (e.status != CommandStatus::pending || !e.in_flight)
        throw ConflictError(fmt::format("command {} is not awaiting a downlink outcome", command_id));
    set_status(command_id, delivered ? CommandStatus::delivered : CommandStatus::pending, false, t);
}

CommandQueueEntry Backend::queue_command(const std::string& device_id, const codec::DownlinkFrame& frame,
                                         SimTime t) {
    try {
        codec::encode_downlink(frame);
    } catch (const codec::FrameError& e) {
        throw ValidationError(e.what());
    }
    std::lock_guard lock(mutex_);
    if (!state_->devices.contains(device_id))
        throw NotFound(fmt::format("unknown device '{}'", device_id));
    expire_locked(t);
    auto pending = std::count_if(state_->commands.begin(), state_->commands.end(), [&](const auto& c) {
        return c.device_id == device_id && c.status == CommandStatus::pending;
    });
    if (static_cast<std::size_t>(pending) >= options_.queue_cap)
        throw ConflictError(fmt::format("command queue for '{}' is full ({} pending)", device_id, pending));
    CommandQueueEntry e;
    e.id = state_->next_command_id;
    e.device_id = device_id;
    e.created = t;
    e.updated = t;
    e.frame = frame;
    json entry = command_entry(e);
    entry["op"] = "command";
    commit(entry.dump());
    notify({0, t, device_id, "command",
            json{{"command_id", e.id}, {"status", "PENDING"}, {"in_flight", false}}.dump()});
    return e;
}

std::vector<CommandQueueEntry> Backend::commands(const std::string& device_id) const {
    std::lock_guard lock(mutex_);
    std::vector<CommandQueueEntry> out;
    for (const auto& c : state_->commands)
        if (device_id.empty() || c.device_id == device_id) out.push_back(c);
    return out;
}

QueryResult Backend::query_readings(const ReadingQuery& q) const {
    if (q.from > q.to) throw ValidationError("query needs from <= to");
    if (q.smooth_window < 0) throw ValidationError("smooth window must not be negative");
    std::lock_guard lock(mutex_);
    QueryResult out;
    for (const auto& id : q.sensor_ids) {
        Series s{id, {}};
        bool known = std::any_of(state_->rows.begin(), state_->rows.end(),
                                 [&](const auto& r) { return r.sensor.id == id; });
        for (const auto& rec : state_->records) {
            for (const auto& r : rec.readings) {
                if (r.sensor_id != id) continue;
                known = true;
                if (rec.t >= q.from && rec.t <= q.to) s.points.push_back({rec.t, r.value});
            }
        }
        if (!known) {
            out.warnings.push_back(fmt::format("unknown sensor '{}'", id));
            out.series.push_back(std::move(s));
            continue;
        }
        std::stable_sort(s.points.begin(), s.points.end(),
                         [](const auto& a, const auto& b) { return a.t < b.t; });
        if (q.smooth_window > 1 || q.derivative) {
            std::vector<double> v;
            std::vector<SimTime> t;
            for (const auto& p : s.points) {
                v.push_back(p.value);
                t.push_back(p.t);
            }
            v = moving_average(v, q.smooth_window);
            if (q.derivative) v = finite_difference(t, v);
            for (std::size_t i = 0; i < v.size(); ++i) s.points[i].value = v[i];
        }
        out.series.push_back(std::move(s));
    }
    return out;
}

std::vector<MessageRecord> Backend::records() const {
    std::lock_guard lock(mutex_);
    return state_->records;
}

void Backend::notify(PushEvent ev) {
    if (sink_)
        sink_(std::move(ev));
    else
        publish(std::move(ev));
}

void Backend::set_push_sink(std::function<void(PushEvent)> sink) {
    std::lock_guard lock(mutex_);
    sink_ = std::move(sink);
}

void Backend::publish(PushEvent ev) {
    {
        std::lock_guard lock(events_mutex_);
        ev.id = next_event_id_++;
        events_.push_back(std::move(ev));
        while (events_.size() > options_.event_retention) events_.pop_front();
    }
    events_cv_.notify_all();
}

std::vector<PushEvent> Backend::events_since(std::uint64_t after) const {
    std::lock_guard lock(events_mutex_);
    std::vector<PushEvent> out;
    for (const auto& e : events_)
        if (e.id > after) out.push_back(e);
    return out;
}

std::vector<PushEvent> Backend::wait_events(std::uint64_t after, std::chrono::milliseconds timeout) {
    {
        std::unique_lock lock(events_mutex_);
        events_cv_.wait_for(lock, timeout, [&] {
            return streams_closed_ || (!events_.empty() && events_.back().id > after);
        });
    }
    return events_since(after);
}

void Backend::shutdown_streams() {
    {
        std::lock_guard lock(events_mutex_);
        streams_closed_ = true;
    }
    events_cv_.notify_all();
}

}  // namespace labmon::backend

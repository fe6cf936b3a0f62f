#include <random>
#include <thread>

#include <fmt/format.h>

#include "labmon/sim.hpp"

namespace labmon::sim {

void EventQueue::schedule(SimTime t, std::function<void()> fn) {
    if (t < now_)
        throw std::logic_error(fmt::format("event at {} scheduled in the past (now {})",
                                           format_seconds(t), format_seconds(now_)));
    heap_.push(Item{t, next_seq_++, std::move(fn)});
}

bool EventQueue::step(SimTime end) {
    if (heap_.empty() || heap_.top().t >= end)
        return false;
    // priority_queue::top is const; the callable is copied out before pop
    Item item = heap_.top();
    heap_.pop();
    now_ = item.t;
    item.fn();
    return true;
}

std::optional<SimTime> EventQueue::next_time() const {
    if (heap_.empty())
        return std::nullopt;
    return heap_.top().t;
}

std::optional<std::string> detail_field(const std::string& detail, std::string_view key) {
    std::size_t pos = 0;
    while (pos < detail.size()) {
        auto end = detail.find(' ', pos);
        if (end == std::string::npos)
            end = detail.size();
        std::string_view tok(detail.data() + pos, end - pos);
        if (tok.size() > key.size() && tok.substr(0, key.size()) == key && tok[key.size()] == '=')
            return std::string(tok.substr(key.size() + 1));
        pos = end + 1;
    }
    return std::nullopt;
}

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t x = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::filesystem::path make_work_dir() {
    std::random_device rd;
    auto dir = std::filesystem::temp_directory_path() /
               fmt::format("labmon-{:016x}", (std::uint64_t{rd()} << 32) | rd());
    std::filesystem::create_directories(dir);
    return dir;
}

class Engine final : public node::NodePorts {
public:
    Engine(const Scenario& s, const RunOptions& o)
        : s_(s),
          opt_(o),
          seed_(o.seed.value_or(s.seed)),
          jitter_(o.jitter.value_or(s.jitter_enabled)),
          backend_(o.backend),
          network_(s.radio, timing(s, jitter_), s.limits, derive_seed(seed_, 1)),
          ac_(s.waveform, s.adc, s.detector),
          push_rng_(derive_seed(seed_, 2)),
          link_up_(s.init_ethernet_up),
          work_dir_(make_work_dir()),
          thread_(std::this_thread::get_id()) {
        if (!backend_) {
            own_backend_ = std::make_unique<backend::Backend>();
            backend_ = own_backend_.get();
        }
        node::NodeSettings ns = s.node;
        ns.seed = derive_seed(seed_, 3);
        ns.cache_path = work_dir_ / "node_cache.txt";
        if (jitter_)
            ns.alert_compile_jitter = s.jitter.alert_compile;
        node_ = std::make_unique<node::DeviceNode>(std::move(ns), *this);
    }

    ~Engine() override {
        backend_->set_push_sink(nullptr);
        std::error_code ec;
        std::filesystem::remove_all(work_dir_, ec);
    }

    RunResult run();

    void schedule(SimTime at, node::TimerKind kind, std::uint64_t tag) override {
        q_.schedule(at, [this, at, kind, tag] { node_->on_timer(kind, tag, at); });
    }

    node::UplinkResult send_uplink(const codec::UplinkPayload& payload, bool request_downlink,
                                   SimTime t) override;
    bool send_http_report(const node::HttpReport& report, SimTime t) override;

    std::optional<node::NodeConfig> fetch_config(SimTime) override {
        if (!link_up_)
            return std::nullopt;
        return backend_->device_config(s_.node.device_id);
    }

    sensors::Reading acquire(const sensors::SensorDescriptor& d, SimTime t) override;

    void log(SimTime t, std::string_view event, std::string_view payload_hex,
             std::string_view detail) override {
        log_.push_back({t, std::string(event), std::string(payload_hex), std::string(detail)});
    }

private:
    static unb::NetworkTiming timing(const Scenario& s, bool jitter) {
        auto t = s.timing;
        if (jitter)
            t.downlink_service_jitter = s.jitter.downlink_service;
        return t;
    }

    const std::string& device() const { return s_.node.device_id; }
    void setup();
    void on_directive(const Directive& d);
    void ac_chunk(SimTime start);
    void push(backend::PushEvent ev);
    void sample_battery(SimTime t);

    const Scenario& s_;
    RunOptions opt_;
    std::uint64_t seed_;
    bool jitter_;
    EventQueue q_;
    std::unique_ptr<backend::Backend> own_backend_;
    backend::Backend* backend_;
    unb::UnbNetwork network_;
    ac::AcMonitor ac_;
    std::mt19937_64 push_rng_;
    bool link_up_;
    std::filesystem::path work_dir_;
    std::thread::id thread_;
    std::unique_ptr<node::DeviceNode> node_;
    std::map<std::string, GeneratorSpec> generators_;
    std::vector<LogEntry> log_;
    std::vector<BatterySample> battery_;
};

void Engine::push(backend::PushEvent ev) {
    // Requests from API threads in serve mode bypass the simulated channel.
    if (std::this_thread::get_id() != thread_) {
        backend_->publish(std::move(ev));
        return;
    }
    SimTime delay = s_.push_latency;
    if (jitter_ && s_.jitter.push.count() > 0) {
        const auto j = s_.jitter.push.count();
        delay += SimTime(std::uniform_int_distribution<std::int64_t>(-j, j)(push_rng_));
    }
    const SimTime at = std::max(ev.t, q_.now()) + std::max(delay, SimTime{0});
    q_.schedule(at, [this, at, ev = std::move(ev)]() mutable {
        if (ev.kind == "alert") {
            auto data = nlohmann::json::parse(ev.data_json);
            log(at, "NOTIFY_DISPLAYED", "",
                fmt::format("event={} path={} record={}", data.at("event").get<int>(),
                            data.at("path").get<std::string>(), data.at("record_id").get<std::uint64_t>()));
        }
        ev.t = at;  // stamped when the operator sees it
        backend_->publish(std::move(ev));
    });
}

void Engine::setup() {
    backend_->register_device({device(), s_.report_interval, s_.emergency_interval}, SimTime{0});
    backend_->set_push_sink([this](backend::PushEvent ev) { push(std::move(ev)); });
    for (const auto& spec : s_.sensors) {
        backend_->update_sensor_config(spec.row, SimTime{0});
        generators_[spec.row.sensor.id] = spec.generator;
    }

    q_.schedule(SimTime{0}, [this] {
        try {
            if (s_.seed_cache)
                node::save_cache(node_->settings().cache_path, backend_->device_config(device()));
            node_->init(node::InitSource::backend, SimTime{0},
                        link_up_ ? node::LinkState::up : node::LinkState::down);
        } catch (const node::InitError& e) {
            log(SimTime{0}, "INIT_FAILED", "", fmt::format("reason={}", e.what()));
        }
    });
    for (const auto& d : s_.timeline)
        q_.schedule(d.t, [this, &d] { on_directive(d); });
    if (!s_.waveform.outages.empty())
        q_.schedule(SimTime{0}, [this] { ac_chunk(SimTime{0}); });
    q_.schedule(SimTime{0}, [this] { sample_battery(SimTime{0}); });
}

void Engine::sample_battery(SimTime t) {
    const auto& st = node_->state();
    battery_.push_back({t, node_->battery_at(t), node_->current_draw_mA(), st.power, st.mode});
    if (t + s_.battery_sample_interval < s_.duration) {
        const SimTime next = t + s_.battery_sample_interval;
        q_.schedule(next, [this, next] { sample_battery(next); });
    }
}

void Engine::ac_chunk(SimTime start) {
    const SimTime end = start + 1s;
    for (const auto& e : ac_.advance_until(to_seconds(end))) {
        const SimTime at = from_seconds(e.t);
        q_.schedule(at, [this, e, at] {
            log(at, "POWER_EDGE", "",
                fmt::format("edge={} tick={}", e.edge == ac::PowerEdge::loss ? "LOSS" : "RESTORE", e.tick));
            node_->on_power_edge(e.edge, at);
        });
    }
    if (end < s_.duration)
        q_.schedule(end, [this, end] { ac_chunk(end); });
}

void Engine::on_directive(const Directive& d) {
    const SimTime t = d.t;
    log(t, "SCRIPT", "", fmt::format("action={}", to_string(d.action)));
    try {
        switch (d.action) {
        case Action::power_loss:
        case Action::power_restore:
            break;  // the AC front end detects the edge
        case Action::ethernet_down:
            link_up_ = false;
            node_->on_ethernet_status(node::LinkState::down, t);
            break;
        case Action::ethernet_up:
            link_up_ = true;
            node_->on_ethernet_status(node::LinkState::up, t);
            break;
        case Action::queue_command: {
            auto e = backend_->queue_command(device(), *d.command, t);
            log(t, "COMMAND_QUEUED", codec::to_hex(codec::encode_downlink(e.frame)),
                fmt::format("command_id={}", e.id));
            break;
        }
        case Action::update_sensor: {
            auto version = backend_->update_sensor_config(d.sensor->row, t);
            generators_[d.sensor->row.sensor.id] = d.sensor->generator;
            log(t, "CONFIG_UPDATED", "",
                fmt::format("sensor={} version={}", d.sensor->row.sensor.id, version));
            break;
        }
        case Action::reload:
            node_->reload_config(t);
            break;
        }
    } catch (const std::exception& e) {
        log(t, "SCRIPT_REJECTED", "", fmt::format("action={} reason={}", to_string(d.action), e.what()));
    }
}

node::UplinkResult Engine::send_uplink(const codec::UplinkPayload& payload, bool request_downlink,
                                       SimTime t) {
    auto sched = network_.submit_uplink(device(), payload, t, request_downlink);
    if (!sched.accepted)
        return {false, std::string(unb::to_string(sched.outcome)), t, std::nullopt};

    if (sched.callback_at) {
        const SimTime at = *sched.callback_at;
        const auto metrics = *sched.metrics;
        std::vector<std::uint8_t> bytes(payload.begin(), payload.end());
        q_.schedule(at, [this, at, metrics, bytes, request_downlink] {
            backend::CallbackResult res;
            try {
                res = backend_->unb_callback(
                    {device(), bytes, at, metrics.rssi, metrics.snr, request_downlink});
            } catch (const std::exception& e) {
                log(at, "CALLBACK_REJECTED", codec::to_hex(bytes), fmt::format("reason={}", e.what()));
                return;
            }
            log(at, "UNB_CALLBACK", codec::to_hex(bytes),
                fmt::format("record={} event={}", res.record_id, static_cast<int>(res.event)));
            if (!res.downlink) {
                if (request_downlink)
                    network_.release_window(device());
                return;
            }
            const auto cmd = *res.downlink;
            auto decision = network_.deliver_downlink(device(), cmd.payload, at);
            if (decision.outcome != unb::Outcome::delivered) {
                backend_->downlink_outcome(cmd.command_id, false, at);
                log(at, "DOWNLINK_DROPPED", codec::to_hex(cmd.payload),
                    fmt::format("command_id={} outcome={}", cmd.command_id,
                                unb::to_string(decision.outcome)));
                return;
            }
            const SimTime rx = *decision.deliver_at;
            q_.schedule(rx, [this, rx, cmd] {
                backend_->downlink_outcome(cmd.command_id, true, rx);
                node_->on_downlink(cmd.payload, rx);
            });
        });
    }
    return {true, "", sched.uplink_end, sched.window};
}

bool Engine::send_http_report(const node::HttpReport& report, SimTime t) {
    if (!link_up_)
        return false;
    const SimTime arrive = t + s_.ethernet_latency;
    q_.schedule(arrive, [this, report, arrive] {
        backend::IngestResult res;
        try {
            res = backend_->ingest_http(report, arrive);
        } catch (const std::exception& e) {
            log(arrive, "INGEST_REJECTED", "", fmt::format("reason={}", e.what()));
            return;
        }
        if (!res.command)
            return;
        const SimTime back = arrive + s_.ethernet_latency;
        node::HttpCommand cmd{res.command->command_id,
                              {res.command->payload.begin(), res.command->payload.end()}};
        q_.schedule(back, [this, cmd, back] { node_->on_http_response(cmd, back); });
    });
    return true;
}

sensors::Reading Engine::acquire(const sensors::SensorDescriptor& d, SimTime t) {
    auto it = generators_.find(d.id);
    if (it == generators_.end()) {
        sensors::Reading r;
        r.sensor_id = d.id;
        r.t = t + sensors::conversion_time(d);
        r.value = std::numeric_limits<double>::quiet_NaN();
        r.quality = sensors::Quality::fault;
        return r;
    }
    if (!it->second.ac_rms)
        return sensors::read_sensor(d, it->second.signal, t);
    sensors::SignalGenerator g = it->second.signal;
    g.kind = sensors::GeneratorKind::constant;
    g.value = ac_.rms_at(to_seconds(t)).value_or(0.0);
    return sensors::read_sensor(d, g, t);
}

RunResult Engine::run() {
    setup();
    while (true) {
        auto next = q_.next_time();
        if (!next || *next >= s_.duration)
            break;
        if (opt_.stop && opt_.stop->load())
            break;
        if (opt_.before_event)
            opt_.before_event(*next);
        q_.step(s_.duration);
    }
    if (!opt_.backend)
        backend_->expire_commands(s_.duration);

    RunResult r;
    r.log = std::move(log_);
    r.network = network_.transcript().ordered();
    r.battery = std::move(battery_);
    r.records = backend_->records();
    r.commands = backend_->commands(device());
    for (const auto& row : backend_->sensor_rows(device()))
        r.sensor_ids.push_back(row.sensor.id);
    if (!r.sensor_ids.empty()) {
        backend::ReadingQuery q;
        q.sensor_ids = r.sensor_ids;
        for (auto& series : backend_->query_readings(q).series)
            r.readings[series.sensor_id] = std::move(series);
    }
    return r;
}

}  // namespace

RunResult run_timeline(const Scenario& s, const RunOptions& options) {
    Engine engine(s, options);
    return engine.run();
}

std::optional<Table2Row> table2_row(const RunResult& r) {
    std::optional<SimTime> t0, uplink, notify, exec;
    for (const auto& e : r.log) {
        if (!t0) {
            if (e.event == "ALERT_RAISED" && detail_field(e.detail, "code") == "1")
                t0 = e.t;
            continue;
        }
        if (!uplink && e.event == "UPLINK_START" && detail_field(e.detail, "code") == "1")
            uplink = e.t;
        if (!notify && e.event == "NOTIFY_DISPLAYED" && detail_field(e.detail, "event") == "1")
            notify = e.t;
        if (!exec && e.event == "COMMAND_LATENCY" && detail_field(e.detail, "path") == "UNB")
            exec = e.t;
    }
    if (!t0 || !uplink || !notify || !exec)
        return std::nullopt;
    return Table2Row{to_seconds(*uplink - *t0), to_seconds(*notify - *t0), to_seconds(*exec - *t0)};
}

namespace {

RunResult nominal_run(const Scenario& s) {
    RunOptions o;
    o.jitter = false;
    return run_timeline(s, o);
}

Table2Result jittered_runs(const Scenario& s, const RunResult& nominal, int n_runs) {
    Table2Result out;
    out.nominal = table2_row(nominal);
    for (int i = 0; i < n_runs; ++i) {
        RunOptions o;
        o.jitter = true;
        o.seed = derive_seed(s.seed, 100 + static_cast<std::uint64_t>(i));
        out.runs.push_back(table2_row(run_timeline(s, o)));
    }
    return out;
}

}  // namespace

Table2Result measure_table2(const Scenario& s, int n_runs) {
    return jittered_runs(s, nominal_run(s), n_runs);
}

std::int64_t count_false_alarms(const ac::WaveformParams& w, const ac::AdcModel& adc,
                                const ac::DetectorConfig& d, std::int64_t ticks) {
    ac::WaveformParams clean = w;
    clean.outages.clear();
    ac::PowerDetector det(d, ac::threshold_code(d, clean, adc));
    std::int64_t alarms = 0;
    for (std::int64_t k = 0; k < ticks; ++k) {
        const double t = static_cast<double>(k) * adc.sample_period_s;
        if (det.step(ac::sample_rectified(clean, adc, t), t) == ac::PowerEdge::loss)
            ++alarms;
    }
    return alarms;
}

std::vector<SweepRow> run_sweep(const Scenario& s) {
    std::vector<SweepRow> rows;
    if (!s.sweep)
        return rows;
    ac::WaveformParams clean = s.waveform;
    clean.outages.clear();
    for (const auto& c : s.sweep->configs) {
        SweepRow row;
        row.config = c;
        row.latency = ac::latency_oracle(clean, s.adc, c.detector, s.sweep->phases);
        row.ticks = s.sweep->false_alarm_ticks;
        row.false_alarms = count_false_alarms(clean, s.adc, c.detector, row.ticks);
        rows.push_back(std::move(row));
    }
    return rows;
}

Outputs execute(const Scenario& s) {
    Outputs out;
    switch (s.kind) {
    case ScenarioKind::timeline:
        out.timeline = run_timeline(s);
        break;
    case ScenarioKind::table2:
        out.timeline = nominal_run(s);
        out.table2 = jittered_runs(s, *out.timeline, s.table2 ? s.table2->runs : 0);
        break;
    case ScenarioKind::detector_sweep:
        out.sweep = run_sweep(s);
        break;
    }
    return out;
}

bool RunReport::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

RunReport run_scenario(const Scenario& s, const std::filesystem::path& out_dir) {
    RunReport rep;
    rep.scenario = s.name;
    auto out = execute(s);
    rep.checks = evaluate_checks(s, out);
    rep.artifacts = write_bundle(out_dir, s, out, rep.checks);
    return rep;
}

}  // namespace labmon::sim

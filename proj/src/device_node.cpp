#include "labmon/device_node.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace labmon::node {

std::string_view to_string(Mode m) {
    return m == Mode::normal ? "NORMAL" : "EMERGENCY";
}

std::string_view to_string(PowerSource p) {
    return p == PowerSource::mains ? "MAINS" : "BATTERY";
}

std::string_view to_string(LinkState l) {
    return l == LinkState::up ? "UP" : "DOWN";
}

void PowerProfile::validate() const {
    for (double v : {base_battery_mA, ethernet_chip_mA, uplink_extra_mA, downlink_extra_mA,
                     mcu_mA, battery_capacity_mAh})
        if (!(v >= 0.0))
            throw std::invalid_argument("power profile values must be non-negative");
}

DeviceNode::DeviceNode(NodeSettings settings, NodePorts& ports)
    : settings_(std::move(settings)), ports_(ports), rng_(settings_.seed) {
    settings_.power.validate();
    state_.battery_mAh = settings_.power.battery_capacity_mAh;
    state_.ledgers.uplinks = unb::RollingBudget(settings_.uplinks_per_day, kDay);
    state_.ledgers.downlinks = unb::RollingBudget(settings_.downlinks_per_day, kDay);
}

void DeviceNode::init(InitSource source, SimTime t, LinkState link) {
    link_ = link;
    state_.ethernet = link;
    state_.mode = link == LinkState::up ? Mode::normal : Mode::emergency;
    last_energy_t_ = t;
    load_config(source, t);
    initialized_ = true;
    ports_.log(t, "NODE_INIT", "",
               fmt::format("mode={} power={} ethernet={} sensors={} config_version={}",
                           to_string(state_.mode), to_string(state_.power),
                           to_string(state_.ethernet), registry_.sensors().size(),
                           config_.version));
    update_chip(t);
    schedule_report(t);
    refresh_battery_timers(t);
}

void DeviceNode::reload_config(SimTime t) {
    if (halted_)
        return;
    load_config(InitSource::backend, t);
}

void DeviceNode::load_config(InitSource source, SimTime t) {
    if (source == InitSource::backend) {
        if (link_ == LinkState::up) {
            if (auto cfg = ports_.fetch_config(t)) {
                save_cache(settings_.cache_path, *cfg);
                ports_.log(t, "CONFIG_LOADED", "",
                           fmt::format("source=backend version={}", cfg->version));
                apply_config(std::move(*cfg), t);
                return;
            }
            ports_.log(t, "CONFIG_FALLBACK", "", "reason=backend_unreachable");
        } else {
            ports_.log(t, "CONFIG_FALLBACK", "", "reason=ethernet_down");
        }
    }
    auto cfg = load_cache(settings_.cache_path);
    ports_.log(t, "CONFIG_LOADED", "", fmt::format("source=cache version={}", cfg.version));
    apply_config(std::move(cfg), t);
}

void DeviceNode::apply_config(NodeConfig cfg, SimTime t) {
    sensors::SensorRegistry reg;
    for (const auto& d : cfg.sensors)
        reg.add(d);
    registry_ = std::move(reg);
    config_ = std::move(cfg);
    alarms_.reset();
    latest_.clear();
    in_flight_read_.reset();
    poll_index_ = 0;
    ++poll_gen_;
    if (!registry_.empty())
        ports_.schedule(t, TimerKind::poll_next, poll_gen_);
}

SimTime DeviceNode::debounce() const {
    return settings_.ethernet_debounce.value_or(config_.report_interval);
}

void DeviceNode::set_mode(Mode m, SimTime t) {
    if (state_.mode == m)
        return;
    state_.mode = m;
    ports_.log(t, "MODE", "", fmt::format("mode={}", to_string(m)));
    schedule_report(t);
}

void DeviceNode::schedule_report(SimTime t) {
    ++report_gen_;
    const SimTime interval =
        state_.mode == Mode::normal ? config_.report_interval : config_.emergency_interval;
    ports_.schedule(t + interval, TimerKind::report, report_gen_);
}

void DeviceNode::update_chip(SimTime t) {
    // The Wiznet chip is powered down only when it cannot help: on battery
    // with no usable link.
    const bool want_on =
        !(state_.power == PowerSource::battery && state_.ethernet == LinkState::down);
    if (want_on != state_.ethernet_chip_on) {
        state_.ethernet_chip_on = want_on;
        ports_.log(t, "ETHERNET_CHIP", "", want_on ? "state=ON" : "state=OFF");
    }
}

bool DeviceNode::on_power_edge(ac::PowerEdge edge, SimTime t) {
    if (halted_ || !initialized_)
        return false;
    advance_energy(t);
    const bool loss = edge == ac::PowerEdge::loss;
    if ((loss && state_.power == PowerSource::battery) ||
        (!loss && state_.power == PowerSource::mains)) {
        ports_.log(t, "PROTOCOL_VIOLATION", "",
                   loss ? "edge=POWER_LOSS while on battery" : "edge=POWER_RESTORE while on mains");
        return false;
    }
    state_.power = loss ? PowerSource::battery : PowerSource::mains;
    ports_.log(t, "POWER_SOURCE", "",
               fmt::format("source={} battery_mAh={:.3f}", to_string(state_.power),
                           state_.battery_mAh));
    update_chip(t);
    enqueue_alert(loss ? codec::EventCode::power_loss : codec::EventCode::power_restore, t);
    refresh_battery_timers(t);
    return true;
}

void DeviceNode::on_ethernet_status(LinkState link, SimTime t) {
    if (halted_ || !initialized_)
        return;
    advance_energy(t);
    if (link == link_)
        return;
    link_ = link;
    ports_.log(t, "ETHERNET_LINK", "", fmt::format("link={}", to_string(link)));
    ++confirm_gen_;
    if (link == LinkState::down) {
        if (state_.ethernet == LinkState::up) {
            state_.ethernet = LinkState::down;
            set_mode(Mode::emergency, t);
            enqueue_alert(codec::EventCode::ethernet_lost, t);
        }
    } else if (state_.ethernet == LinkState::down) {
        ports_.schedule(t + debounce(), TimerKind::ethernet_confirm, confirm_gen_);
    }
    update_chip(t);
    refresh_battery_timers(t);
}

void DeviceNode::enqueue_alert(codec::EventCode code, SimTime t) {
    SimTime compile = settings_.alert_compile;
    if (settings_.alert_compile_jitter.count() > 0) {
        const auto j = settings_.alert_compile_jitter.count();
        compile += SimTime(std::uniform_int_distribution<std::int64_t>(-j, j)(rng_));
    }
    const auto id = ++alert_seq_;
    alerts_[id] = PendingAlert{code, t, false};
    ports_.log(t, "ALERT_RAISED", "",
               fmt::format("code={} name={}", static_cast<int>(code), codec::event_name(code)));
    ports_.schedule(t + std::max(compile, SimTime(0)), TimerKind::alert_compiled, id);
}

void DeviceNode::on_timer(TimerKind kind, std::uint64_t tag, SimTime t) {
    if (halted_ || !initialized_)
        return;
    advance_energy(t);
    switch (kind) {
    case TimerKind::report:
        if (tag == report_gen_)
            handle_report(t);
        break;
    case TimerKind::ethernet_confirm:
        if (tag == confirm_gen_ && link_ == LinkState::up && state_.ethernet == LinkState::down) {
            state_.ethernet = LinkState::up;
            ports_.log(t, "ETHERNET_CONFIRMED", "", "");
            update_chip(t);
            set_mode(Mode::normal, t);
            enqueue_alert(codec::EventCode::ethernet_restored, t);
        }
        break;
    case TimerKind::alert_compiled:
        if (auto it = alerts_.find(tag); it != alerts_.end()) {
            it->second.ready = true;
            if (settings_.alert_http_duplicate && state_.ethernet == LinkState::up) {
                HttpReport r{settings_.device_id, t, it->second.code, http_readings(), 0};
                ports_.send_http_report(r, t);
            }
            try_transmit(t);
        }
        break;
    case TimerKind::airtime_end:
        transmitting_ = false;
        if (!awaiting_window_) {
            radio_busy_ = false;
            try_transmit(t);
        }
        break;
    case TimerKind::listen_start:
        if (tag == window_gen_ && awaiting_window_)
            listening_ = true;
        break;
    case TimerKind::listen_end:
        if (tag == window_gen_ && awaiting_window_) {
            listening_ = false;
            awaiting_window_ = false;
            radio_busy_ = transmitting_;
            ports_.log(t, "DOWNLINK_TIMEOUT", "", "");
            try_transmit(t);
        }
        break;
    case TimerKind::command_exec:
        if (auto it = execs_.find(tag); it != execs_.end()) {
            auto exec = it->second;
            execs_.erase(it);
            if (apply_command(exec.frame, t)) {
                ++unacked_executions_;
                ports_.log(t, "COMMAND_LATENCY", "",
                           fmt::format("path={} rx_to_exec_ms={}",
                                       exec.path == CommandPath::unb ? "UNB" : "HTTP",
                                       (t - exec.received).count() / 1000));
            }
        }
        break;
    case TimerKind::poll_next:
        if (tag == poll_gen_ && !registry_.empty()) {
            const auto& d = registry_.sensors()[poll_index_ % registry_.sensors().size()];
            in_flight_read_ = ports_.acquire(d, t);
            ports_.schedule(in_flight_read_->t, TimerKind::read_done, poll_gen_);
        }
        break;
    case TimerKind::read_done:
        if (tag == poll_gen_ && in_flight_read_)
            handle_read_done(t);
        break;
    case TimerKind::battery_low:
        if (tag == energy_epoch_ && !low_battery_sent_) {
            low_battery_sent_ = true;
            ports_.log(t, "LOW_BATTERY", "", fmt::format("battery_mAh={:.3f}", state_.battery_mAh));
            enqueue_alert(codec::EventCode::low_battery, t);
        }
        break;
    case TimerKind::battery_empty:
        if (tag == energy_epoch_) {
            state_.battery_mAh = 0.0;
            halted_ = true;
            ports_.log(t, "NODE_HALT", "", "reason=battery_depleted");
        }
        break;
    }
    refresh_battery_timers(t);
}

void DeviceNode::handle_read_done(SimTime t) {
    auto reading = std::move(*in_flight_read_);
    in_flight_read_.reset();
    const auto& d = registry_.find(reading.sensor_id);
    if (reading.quality == sensors::Quality::ok) {
        if (auto alarm = alarms_.check(reading, d)) {
            ports_.log(t, "SENSOR_ALARM", "",
                       fmt::format("sensor={} direction={} value={}", alarm->sensor_id,
                                   alarm->direction == sensors::AlarmDirection::high ? "HIGH"
                                                                                      : "LOW",
                                   alarm->value));
            enqueue_alert(codec::EventCode::sensor_alarm, t);
        }
        latest_[reading.sensor_id] = reading;
    } else {
        ports_.log(t, "SENSOR_FAULT", "", fmt::format("sensor={}", reading.sensor_id));
    }
    poll_index_ = (poll_index_ + 1) % registry_.sensors().size();
    ports_.schedule(t + settings_.acquisition_wait, TimerKind::poll_next, poll_gen_);
}

SimTime DeviceNode::next_emergency_interval(SimTime t) const {
    const auto& budget = state_.ledgers.uplinks;
    const int remaining = budget.remaining(t);
    const auto oldest = budget.oldest(t);
    const SimTime day_left = oldest ? *oldest + budget.window() - t : budget.window();
    // remaining / day_left below one message per throttled interval
    if (static_cast<std::int64_t>(remaining) * settings_.throttled_interval.count() <
        day_left.count())
        return std::max(settings_.throttled_interval, config_.emergency_interval);
    return config_.emergency_interval;
}

void DeviceNode::handle_report(SimTime t) {
    if (state_.mode == Mode::normal) {
        ports_.schedule(t + config_.report_interval, TimerKind::report, report_gen_);
        HttpReport r{settings_.device_id, t, codec::EventCode::periodic_report, http_readings(),
                     unacked_executions_};
        if (link_ == LinkState::up && ports_.send_http_report(r, t)) {
            unacked_executions_ = 0;
            ports_.log(t, "HTTP_REPORT", "",
                       fmt::format("readings={} acks={}", r.readings.size(), r.acks));
        } else {
            ports_.log(t, "HTTP_FAILED", "", "");
        }
        return;
    }
    if (state_.ledgers.uplinks.remaining(t) <= 0) {
        ports_.log(t, "REPORT_SKIPPED", "", "reason=uplink_budget");
    } else if (radio_busy_) {
        periodic_pending_ = true;
        ports_.log(t, "REPORT_DEFERRED", "", "reason=radio_busy");
    } else {
        send_periodic(t);
    }
    ports_.schedule(t + next_emergency_interval(t), TimerKind::report, report_gen_);
}

void DeviceNode::send_periodic(SimTime t) {
    const bool ack = unacked_executions_ > 0;
    const auto code = ack ? codec::EventCode::command_ack : codec::EventCode::periodic_report;
    const auto& poll = settings_.downlink_poll_interval;
    const bool request = poll.count() > 0 &&
                         (!last_downlink_request_ || t - *last_downlink_request_ >= poll) &&
                         state_.ledgers.downlinks.remaining(t) > 0;
    if (transmit(code, request, t) && ack)
        --unacked_executions_;
}

void DeviceNode::try_transmit(SimTime t) {
    while (!radio_busy_) {
        auto it = std::find_if(alerts_.begin(), alerts_.end(),
                               [](const auto& kv) { return kv.second.ready; });
        if (it != alerts_.end()) {
            const auto code = it->second.code;
            alerts_.erase(it);
            transmit(code, true, t);
            continue;
        }
        if (periodic_pending_) {
            periodic_pending_ = false;
            if (state_.mode == Mode::emergency && state_.ledgers.uplinks.remaining(t) > 0)
                send_periodic(t);
            continue;
        }
        break;
    }
}

bool DeviceNode::transmit(codec::EventCode code, bool request_downlink, SimTime t) {
    const auto payload = codec::encode_uplink(code, slot_values(), registry_.slot_ranges());
    const auto hex = codec::to_hex(payload);
    const auto res = ports_.send_uplink(payload, request_downlink, t);
    if (!res.accepted) {
        ports_.log(t, "UPLINK_REJECTED", hex,
                   fmt::format("code={} reason={}", static_cast<int>(code), res.reason));
        return false;
    }
    state_.ledgers.uplinks.try_consume(t);
    ports_.log(t, "UPLINK_START", hex,
               fmt::format("code={} downlink={}", static_cast<int>(code), request_downlink ? 1 : 0));
    radio_busy_ = true;
    transmitting_ = true;
    ports_.schedule(res.airtime_end, TimerKind::airtime_end, 0);
    if (request_downlink) {
        last_downlink_request_ = t;
        if (res.window) {
            awaiting_window_ = true;
            ++window_gen_;
            ports_.schedule(res.window->opens, TimerKind::listen_start, window_gen_);
            ports_.schedule(res.window->closes, TimerKind::listen_end, window_gen_);
        }
    }
    return true;
}

void DeviceNode::on_downlink(std::span<const std::uint8_t> payload, SimTime t) {
    if (halted_ || !initialized_)
        return;
    advance_energy(t);
    if (!awaiting_window_) {
        ports_.log(t, "DOWNLINK_UNEXPECTED", codec::to_hex(payload), "");
        return;
    }
    awaiting_window_ = false;
    listening_ = false;
    ++window_gen_;
    radio_busy_ = transmitting_;
    state_.ledgers.downlinks.try_consume(t);
    ports_.log(t, "DOWNLINK_RX", codec::to_hex(payload), "");
    receive_frame(payload, t, CommandPath::unb);
    try_transmit(t);
    refresh_battery_timers(t);
}

void DeviceNode::on_http_response(const std::optional<HttpCommand>& command, SimTime t) {
    if (halted_ || !initialized_ || !command)
        return;
    advance_energy(t);
    ports_.log(t, "HTTP_COMMAND_RX", codec::to_hex(command->frame),
               fmt::format("command_id={}", command->id));
    receive_frame(command->frame, t, CommandPath::http);
}

void DeviceNode::receive_frame(std::span<const std::uint8_t> payload, SimTime t, CommandPath path) {
    try {
        auto frame = codec::decode_downlink(payload);
        const auto id = ++exec_seq_;
        execs_[id] = PendingExec{frame, t, path};
        ports_.schedule(t + settings_.command_processing, TimerKind::command_exec, id);
    } catch (const codec::FrameError& e) {
        ports_.log(t, "COMMAND_REJECTED", codec::to_hex(payload), fmt::format("reason={}", e.what()));
    }
}

bool DeviceNode::apply_command(const codec::DownlinkFrame& frame, SimTime t) {
    const auto hex = codec::to_hex(codec::encode_downlink(frame));
    switch (static_cast<codec::Opcode>(frame.opcode)) {
    case codec::Opcode::nop:
        break;
    case codec::Opcode::set_outputs:
        for (std::size_t i = 0; i < 4; ++i)
            if (frame.io_mask & (1u << i))
                state_.digital_out[i] = (frame.io_values >> i) & 1u;
        break;
    case codec::Opcode::reload_config:
        ports_.log(t, "COMMAND_EXECUTED", hex, "opcode=RELOAD_CONFIG");
        reload_config(t);
        return true;
    case codec::Opcode::set_flags:
        state_.display_on = frame.config_flags & codec::flags::display_on;
        settings_.alert_http_duplicate = frame.config_flags & codec::flags::alert_http_duplicate;
        break;
    default:
        ports_.log(t, "COMMAND_REJECTED", hex,
                   fmt::format("reason=unknown opcode {:#04x}", frame.opcode));
        return false;
    }
    // port 0 printed first
    std::string outs;
    for (std::size_t i = 0; i < 4; ++i)
        outs.push_back(state_.digital_out[i] ? '1' : '0');
    ports_.log(t, "COMMAND_EXECUTED", hex,
               fmt::format("opcode={:#04x} outputs={}", frame.opcode, outs));
    return true;
}

double DeviceNode::current_draw_mA() const {
    if (state_.power == PowerSource::mains)
        return 0.0;
    const auto& p = settings_.power;
    double draw = p.base_battery_mA;
    if (!state_.ethernet_chip_on)
        draw -= p.ethernet_chip_mA;
    if (transmitting_)
        draw += p.uplink_extra_mA;
    if (listening_)
        draw += p.downlink_extra_mA;
    return draw;
}

void DeviceNode::energy_step(SimTime dt) {
    if (dt.count() <= 0)
        return;
    last_energy_t_ += dt;
    if (state_.power != PowerSource::battery)
        return;
    const double hours = to_seconds(dt) / 3600.0;
    state_.battery_mAh = std::max(0.0, state_.battery_mAh - current_draw_mA() * hours);
}

double DeviceNode::battery_at(SimTime t) const {
    if (state_.power != PowerSource::battery || halted_ || t <= last_energy_t_)
        return state_.battery_mAh;
    const double hours = to_seconds(t - last_energy_t_) / 3600.0;
    return std::max(0.0, state_.battery_mAh - current_draw_mA() * hours);
}

void DeviceNode::advance_energy(SimTime t) {
    energy_step(t - last_energy_t_);
}

void DeviceNode::refresh_battery_timers(SimTime t) {
    if (halted_)
        return;
    const double draw = current_draw_mA();
    if (draw == scheduled_draw_ && state_.power == scheduled_power_)
        return;
    scheduled_draw_ = draw;
    scheduled_power_ = state_.power;
    ++energy_epoch_;
    if (state_.power != PowerSource::battery || draw <= 0.0)
        return;
    auto after = [&](double mAh) {
        return t + SimTime(static_cast<std::int64_t>(std::ceil(mAh / draw * 3600e6)));
    };
    const double low = settings_.low_battery_fraction * settings_.power.battery_capacity_mAh;
    if (!low_battery_sent_ && state_.battery_mAh > low)
        ports_.schedule(after(state_.battery_mAh - low), TimerKind::battery_low, energy_epoch_);
    ports_.schedule(after(state_.battery_mAh), TimerKind::battery_empty, energy_epoch_);
}

codec::SlotValues DeviceNode::slot_values() const {
    codec::SlotValues out;
    for (const auto& d : registry_.sensors()) {
        if (!d.slot_index)
            continue;
        if (auto it = latest_.find(d.id); it != latest_.end())
            out[static_cast<std::size_t>(*d.slot_index)] = it->second.value;
    }
    return out;
}

std::vector<HttpReading> DeviceNode::http_readings() const {
    std::vector<HttpReading> out;
    for (const auto& d : registry_.sensors())
        if (auto it = latest_.find(d.id); it != latest_.end())
            out.push_back({d.id, it->second.value});
    return out;
}

std::optional<sensors::Reading> DeviceNode::latest(std::string_view sensor_id) const {
    if (auto it = latest_.find(sensor_id); it != latest_.end())
        return it->second;
    return std::nullopt;
}

}  // namespace labmon::node

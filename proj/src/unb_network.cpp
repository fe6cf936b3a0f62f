#include "labmon/unb_network.hpp"

#include <algorithm>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

#include "labmon/codec.hpp"

namespace labmon::unb {

void RadioParams::validate() const {
    if (uplink_bitrate < 100 || uplink_bitrate > 600 || downlink_bitrate < 100 ||
        downlink_bitrate > 600)
        throw std::invalid_argument("UNB bit rates must lie within 100..600 bps");
    if (replica_count < 1)
        throw std::invalid_argument("replica_count must be at least 1");
    if (!(replica_loss_prob >= 0.0 && replica_loss_prob < 1.0))
        throw std::invalid_argument("replica_loss_prob must lie in [0, 1)");
    if (frame_overhead < 0)
        throw std::invalid_argument("frame_overhead must be non-negative");
    if (!(rssi_max >= rssi_min) || !(snr_max >= snr_min))
        throw std::invalid_argument("radio metric ranges need min <= max");
}

SimTime RadioParams::replica_airtime(std::size_t payload_bytes) const {
    const auto bits = 8 * (static_cast<std::int64_t>(payload_bytes) + frame_overhead);
    return SimTime((bits * 1'000'000 + uplink_bitrate / 2) / uplink_bitrate);
}

void RollingBudget::expire(SimTime t) const {
    while (!stamps_.empty() && stamps_.front() <= t - window_)
        stamps_.pop_front();
}

int RollingBudget::used(SimTime t) const {
    expire(t);
    return static_cast<int>(std::count_if(stamps_.begin(), stamps_.end(),
                                          [t](SimTime s) { return s <= t; }));
}

bool RollingBudget::try_consume(SimTime t) {
    if (used(t) >= limit_)
        return false;
    stamps_.insert(std::upper_bound(stamps_.begin(), stamps_.end(), t), t);
    return true;
}

std::optional<SimTime> RollingBudget::oldest(SimTime t) const {
    expire(t);
    if (stamps_.empty() || stamps_.front() > t)
        return std::nullopt;
    return stamps_.front();
}

std::string_view to_string(Direction d) {
    return d == Direction::uplink ? "UPLINK" : "DOWNLINK";
}

std::string_view to_string(Outcome o) {
    switch (o) {
    case Outcome::delivered: return "DELIVERED";
    case Outcome::lost: return "LOST";
    case Outcome::rejected_size: return "REJECTED_SIZE";
    case Outcome::rejected_budget: return "REJECTED_BUDGET";
    case Outcome::dropped_window: return "DROPPED_WINDOW";
    case Outcome::dropped_no_window: return "DROPPED_NO_WINDOW";
    }
    return "?";
}

void NetworkTranscript::append(TranscriptRecord r) {
    r.seq = next_seq_++;
    records_.push_back(std::move(r));
}

std::vector<TranscriptRecord> NetworkTranscript::ordered() const {
    auto out = records_;
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return a.t != b.t ? a.t < b.t : a.seq < b.seq;
    });
    return out;
}

void NetworkTranscript::write_csv(std::ostream& out) const {
    out << "t,direction,device_id,payload_hex,rssi,snr,replica_index,outcome\n";
    for (const auto& r : ordered()) {
        out << format_seconds(r.t) << ',' << to_string(r.direction) << ',' << r.device_id << ','
            << r.payload_hex << ',' << (r.rssi ? fmt::format("{:.2f}", *r.rssi) : "") << ','
            << (r.snr ? fmt::format("{:.2f}", *r.snr) : "") << ',' << r.replica_index << ','
            << to_string(r.outcome) << '\n';
    }
}

UnbNetwork::UnbNetwork(RadioParams radio, NetworkTiming timing, BudgetLimits limits,
                       std::uint64_t seed)
    : radio_(radio),
      timing_(timing),
      limits_(limits),
      radio_rng_(seed),
      jitter_rng_(seed ^ 0x5DEECE66Dull) {
    radio_.validate();
}

UnbNetwork::DeviceLedger& UnbNetwork::ledger(const std::string& device_id) {
    auto it = ledgers_.find(device_id);
    if (it == ledgers_.end()) {
        it = ledgers_
                 .emplace(device_id,
                          DeviceLedger{RollingBudget(limits_.uplinks_per_window, limits_.window),
                                       RollingBudget(limits_.downlinks_per_window, limits_.window),
                                       std::nullopt})
                 .first;
    }
    return it->second;
}

RadioMetrics UnbNetwork::annotate_radio() {
    std::uniform_real_distribution<double> rssi(radio_.rssi_min, radio_.rssi_max);
    std::uniform_real_distribution<double> snr(radio_.snr_min, radio_.snr_max);
    RadioMetrics m;
    m.rssi = rssi(radio_rng_);
    m.snr = snr(radio_rng_);
    return m;
}

UplinkSchedule UnbNetwork::submit_uplink(const std::string& device_id,
                                         std::span<const std::uint8_t> payload, SimTime t,
                                         bool request_downlink) {
    UplinkSchedule s;
    const auto hex = codec::to_hex(payload);
    if (payload.size() > kMaxUplinkPayload) {
        s.outcome = Outcome::rejected_size;
        transcript_.append({t, Direction::uplink, device_id, hex, {}, {}, -1, s.outcome});
        return s;
    }
    auto& led = ledger(device_id);
    if (!led.uplinks.try_consume(t)) {
        s.outcome = Outcome::rejected_budget;
        transcript_.append({t, Direction::uplink, device_id, hex, {}, {}, -1, s.outcome});
        return s;
    }
    s.accepted = true;

    const SimTime airtime = radio_.replica_airtime(payload.size());
    std::bernoulli_distribution lose(radio_.replica_loss_prob);
    SimTime start = t;
    for (int i = 0; i < radio_.replica_count; ++i) {
        Replica r;
        r.start = start;
        r.end = start + airtime;
        r.survived = !lose(radio_rng_);
        const auto m = annotate_radio();
        r.rssi = m.rssi;
        r.snr = m.snr;
        if (r.survived && !s.callback_at) {
            s.callback_at = r.end + timing_.callback_latency;
            s.metrics = m;
        }
        transcript_.append({r.end, Direction::uplink, device_id, hex,
                            r.survived ? std::optional(r.rssi) : std::nullopt,
                            r.survived ? std::optional(r.snr) : std::nullopt, i,
                            r.survived ? Outcome::delivered : Outcome::lost});
        s.replicas.push_back(r);
        start = r.end;
    }
    s.uplink_end = start;
    s.outcome = s.callback_at ? Outcome::delivered : Outcome::lost;
    if (request_downlink) {
        DownlinkWindow w{s.uplink_end + timing_.window_delay,
                         s.uplink_end + timing_.window_delay + timing_.window_length};
        s.window = w;
        led.window = w;
    }
    return s;
}

DownlinkDecision UnbNetwork::deliver_downlink(const std::string& device_id,
                                              std::span<const std::uint8_t> payload, SimTime t) {
    DownlinkDecision d;
    const auto hex = codec::to_hex(payload);
    auto& led = ledger(device_id);
    auto record = [&](SimTime at, Outcome o, std::optional<RadioMetrics> m = std::nullopt) {
        transcript_.append({at, Direction::downlink, device_id, hex,
                            m ? std::optional(m->rssi) : std::nullopt,
                            m ? std::optional(m->snr) : std::nullopt, -1, o});
    };

    if (payload.size() > kMaxDownlinkPayload) {
        d.outcome = Outcome::rejected_size;
        record(t, d.outcome);
        return d;
    }
    if (!led.window || t > led.window->closes) {
        d.outcome = Outcome::dropped_no_window;
        record(t, d.outcome);
        return d;
    }
    d.window = led.window;
    led.window.reset();

    SimTime service = timing_.downlink_service;
    if (timing_.downlink_service_jitter.count() > 0) {
        const auto j = timing_.downlink_service_jitter.count();
        service += SimTime(std::uniform_int_distribution<std::int64_t>(-j, j)(jitter_rng_));
    }
    const SimTime at = std::max(d.window->opens + service, t);
    if (at > d.window->closes) {
        d.outcome = Outcome::dropped_window;
        record(t, d.outcome);
        return d;
    }
    if (!led.downlinks.try_consume(at)) {
        d.outcome = Outcome::rejected_budget;
        record(t, d.outcome);
        return d;
    }
    d.outcome = Outcome::delivered;
    d.deliver_at = at;
    record(at, d.outcome, annotate_radio());
    return d;
}

void UnbNetwork::release_window(const std::string& device_id) {
    ledger(device_id).window.reset();
}

int UnbNetwork::uplinks_used(const std::string& device_id, SimTime t) const {
    auto it = ledgers_.find(device_id);
    return it == ledgers_.end() ? 0 : it->second.uplinks.used(t);
}

int UnbNetwork::downlinks_used(const std::string& device_id, SimTime t) const {
    auto it = ledgers_.find(device_id);
    return it == ledgers_.end() ? 0 : it->second.downlinks.used(t);
}

}  // namespace labmon::unb

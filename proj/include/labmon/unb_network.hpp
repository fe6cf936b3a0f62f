#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "labmon/time.hpp"

// Discrete-event model of the UNB network: replicated uplinks, downlink
// windows, per-device duty-cycle budgets and radio metric annotation.
namespace labmon::unb {

using namespace std::chrono_literals;

struct RadioParams {
    int uplink_bitrate = 100;     // bps
    int downlink_bitrate = 600;   // bps
    int frame_overhead = 14;      // bytes added to the payload on air
    int replica_count = 3;
    double replica_loss_prob = 0.0;
    double rssi_min = -131.0, rssi_max = -101.0;  // dBm
    double snr_min = 10.0, snr_max = 24.0;        // dB

    void validate() const;
    SimTime replica_airtime(std::size_t payload_bytes) const;
};

struct NetworkTiming {
    SimTime callback_latency = 500ms;
    SimTime window_delay = 20s;
    SimTime window_length = 25s;
    SimTime downlink_service = 12030ms;
    SimTime downlink_service_jitter = 0ms;  // uniform +/- bound, 0 disables
};

struct BudgetLimits {
    int uplinks_per_window = 140;
    int downlinks_per_window = 4;
    SimTime window = kDay;
};

inline constexpr std::size_t kMaxUplinkPayload = 12;
inline constexpr std::size_t kMaxDownlinkPayload = 8;

/// Rolling-window message counter.
class RollingBudget {
public:
    RollingBudget(int limit, SimTime window) : limit_(limit), window_(window) {}

    bool try_consume(SimTime t);
    int used(SimTime t) const;
    int remaining(SimTime t) const { return limit_ - used(t); }
    // oldest stamp still inside the window ending at t
    std::optional<SimTime> oldest(SimTime t) const;
    int limit() const { return limit_; }
    SimTime window() const { return window_; }

private:
    void expire(SimTime t) const;

    int limit_;
    SimTime window_;
    mutable std::deque<SimTime> stamps_;
};

enum class Direction { uplink, downlink };

enum class Outcome {
    delivered,
    lost,
    rejected_size,
    rejected_budget,
    dropped_window,
    dropped_no_window,
};

std::string_view to_string(Direction d);
std::string_view to_string(Outcome o);

struct TranscriptRecord {
    SimTime t{0};
    Direction direction = Direction::uplink;
    std::string device_id;
    std::string payload_hex;
    std::optional<double> rssi;
    std::optional<double> snr;
    int replica_index = -1;
    Outcome outcome = Outcome::delivered;
    std::uint64_t seq = 0;
};

/// Append-only record store, exported ordered by (t, insertion sequence).
class NetworkTranscript {
public:
    void append(TranscriptRecord r);
    std::vector<TranscriptRecord> ordered() const;
    const std::vector<TranscriptRecord>& raw() const { return records_; }
    void write_csv(std::ostream& out) const;

private:
    std::vector<TranscriptRecord> records_;
    std::uint64_t next_seq_ = 0;
};

struct DownlinkWindow {
    SimTime opens{0};
    SimTime closes{0};
};

struct Replica {
    SimTime start{0};
    SimTime end{0};
    bool survived = true;
    double rssi = 0.0;
    double snr = 0.0;
};

struct RadioMetrics {
    double rssi = 0.0;
    double snr = 0.0;
};

struct UplinkSchedule {
    bool accepted = false;
    Outcome outcome = Outcome::delivered;
    std::vector<Replica> replicas;
    SimTime uplink_end{0};
    std::optional<SimTime> callback_at;       // absent when every replica was lost
    std::optional<RadioMetrics> metrics;      // of the first surviving replica
    std::optional<DownlinkWindow> window;
};

struct DownlinkDecision {
    Outcome outcome = Outcome::dropped_no_window;
    std::optional<SimTime> deliver_at;
    std::optional<DownlinkWindow> window;
};

class UnbNetwork {
public:
    UnbNetwork(RadioParams radio, NetworkTiming timing, BudgetLimits limits,
               std::uint64_t seed);

    UplinkSchedule submit_uplink(const std::string& device_id,
                                 std::span<const std::uint8_t> payload, SimTime t,
                                 bool request_downlink);

    // Offer a backend response for the device's open downlink window.
    DownlinkDecision deliver_downlink(const std::string& device_id,
                                      std::span<const std::uint8_t> payload, SimTime t);

    // Forget an unused window (the backend had nothing to send).
    void release_window(const std::string& device_id);

    RadioMetrics annotate_radio();

    int uplinks_used(const std::string& device_id, SimTime t) const;
    int downlinks_used(const std::string& device_id, SimTime t) const;

    const NetworkTranscript& transcript() const { return transcript_; }
    const RadioParams& radio() const { return radio_; }
    const NetworkTiming& timing() const { return timing_; }

private:
    struct DeviceLedger {
        RollingBudget uplinks;
        RollingBudget downlinks;
        std::optional<DownlinkWindow> window;
    };

    DeviceLedger& ledger(const std::string& device_id);

    RadioParams radio_;
    NetworkTiming timing_;
    BudgetLimits limits_;
    std::mt19937_64 radio_rng_;
    std::mt19937_64 jitter_rng_;
    std::map<std::string, DeviceLedger> ledgers_;
    NetworkTranscript transcript_;
};

}  // namespace labmon::unb

#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

// Model of the AC-AC converter, precision rectifier and 12-bit ADC chain,
// plus the power-loss/restore detector and line RMS estimator that run on
// the analysis tick.
namespace labmon::ac {

struct OutageInterval {
    double start_s = 0.0;
    double end_s = 0.0;  // exclusive
};

struct WaveformParams {
    double rms_nominal = 240.0;
    double frequency_hz = 50.0;
    // ADC-side volts per line volt; default maps the 240 VRMS peak to 3.0 V.
    double scale_k = 3.0 / (240.0 * std::numbers::sqrt2);
    double phase_rad = 0.0;
    std::vector<OutageInterval> outages;  // sorted, non-overlapping

    void validate() const;
    bool line_dead(double t) const;
    double line_volts(double t) const;
    double period() const { return 1.0 / frequency_hz; }
};

struct AdcModel {
    int bits = 12;
    double v_ref = 3.3;
    double sample_period_s = 0.002;
    double conversion_time_s = 21e-6;

    void validate() const;
    int max_code() const { return (1 << bits) - 1; }
};

// How the k beyond-threshold samples must be arranged among the last n.
enum class WindowRule {
    consecutive,  // the newest k samples are all beyond threshold
    anywhere,     // at least k of the newest n samples
};

struct DetectorConfig {
    double threshold_fraction = 0.30;  // of the nominal rectified peak code
    int k = 2;
    int n = 3;
    WindowRule rule = WindowRule::consecutive;

    void validate() const;
};

enum class LineState { live, down };
enum class PowerEdge { loss, restore };

struct LineStatus {
    LineState state = LineState::live;
    double last_edge_time = 0.0;
    std::optional<double> rms_estimate;
};

int sample_rectified(const WaveformParams& params, const AdcModel& adc, double t);

int nominal_peak_code(const WaveformParams& params, const AdcModel& adc);
int threshold_code(const DetectorConfig& config, const WaveformParams& params, const AdcModel& adc);

class PowerDetector {
public:
    PowerDetector(DetectorConfig config, int threshold_code,
                  LineState initial = LineState::live);

    // Feed one analysis-tick sample; t must be non-decreasing.
    std::optional<PowerEdge> step(int adc_code, double t);

    const LineStatus& status() const { return status_; }
    LineStatus& status() { return status_; }
    int threshold() const { return threshold_; }

private:
    DetectorConfig config_;
    int threshold_;
    LineStatus status_;
    std::uint32_t history_ = 0;  // bit 0 = newest, 1 = beyond threshold
    double last_t_ = -1.0;
};

// Samples per line period at the analysis tick (10 at 50 Hz / 2 ms).
int rms_window_size(const WaveformParams& params, const AdcModel& adc);

// Line-referred RMS of one full period of samples; nullopt until the window
// is complete.
std::optional<double> rms_estimate(std::span<const int> codes, int window, double scale_k,
                                   const AdcModel& adc);

class RmsEstimator {
public:
    RmsEstimator(int window, double scale_k, AdcModel adc);
    void push(int code);
    std::optional<double> estimate() const;

private:
    int window_;
    double scale_k_;
    AdcModel adc_;
    std::deque<int> codes_;
};

struct EdgeEvent {
    PowerEdge edge;
    std::int64_t tick;
    double t;
};

/// Sampled front end + detector + RMS estimator advanced on the fixed tick
/// grid t_k = k * sample_period.
class AcMonitor {
public:
    AcMonitor(WaveformParams params, AdcModel adc, DetectorConfig config);

    // Process every tick with t_k < t_end_s and return the detector edges.
    std::vector<EdgeEvent> advance_until(double t_end_s);

    // RMS over the period ending at the most recent tick <= t, computed
    // directly from the waveform model.
    std::optional<double> rms_at(double t) const;

    const LineStatus& status() const { return detector_.status(); }
    const WaveformParams& params() const { return params_; }
    const AdcModel& adc() const { return adc_; }
    std::int64_t next_tick() const { return next_tick_; }

private:
    WaveformParams params_;
    AdcModel adc_;
    PowerDetector detector_;
    RmsEstimator rms_;
    std::int64_t next_tick_ = 0;
};

struct LatencyStats {
    double min_s = 0.0;
    double mean_s = 0.0;
    double max_s = 0.0;
    std::vector<double> latencies_s;
};

// Brute-force detection latency over n_phases outage start times spread
// uniformly (mid-point offsets) across one line period of the tick grid.
LatencyStats latency_oracle(const WaveformParams& base, const AdcModel& adc,
                            const DetectorConfig& config, int n_phases);

// CSV trace (time_s,adc_code,line_volts) of every tick in [t_from, t_to).
void write_trace_csv(std::ostream& out, const WaveformParams& params, const AdcModel& adc,
                     double t_from, double t_to);

}  // namespace labmon::ac

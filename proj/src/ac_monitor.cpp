#include "labmon/ac_monitor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

namespace labmon::ac {

void WaveformParams::validate() const {
    if (!(frequency_hz > 0.0))
        throw std::invalid_argument("waveform frequency must be positive");
    if (!(scale_k > 0.0))
        throw std::invalid_argument("scale_k must be positive");
    if (!(rms_nominal >= 0.0))
        throw std::invalid_argument("rms_nominal must be non-negative");
    for (std::size_t i = 0; i < outages.size(); ++i) {
        if (!(outages[i].end_s > outages[i].start_s))
            throw std::invalid_argument("outage interval must have end > start");
        if (i > 0 && outages[i].start_s < outages[i - 1].end_s)
            throw std::invalid_argument("outage intervals must be sorted and disjoint");
    }
}

bool WaveformParams::line_dead(double t) const {
    auto it = std::upper_bound(outages.begin(), outages.end(), t,
                               [](double v, const OutageInterval& o) { return v < o.start_s; });
    if (it == outages.begin())
        return false;
    --it;
    return t >= it->start_s && t < it->end_s;
}

double WaveformParams::line_volts(double t) const {
    if (line_dead(t))
        return 0.0;
    return rms_nominal * std::numbers::sqrt2 *
           std::sin(2.0 * std::numbers::pi * frequency_hz * t + phase_rad);
}

void AdcModel::validate() const {
    if (bits < 1 || bits > 16)
        throw std::invalid_argument("ADC bits out of range");
    if (!(v_ref > 0.0))
        throw std::invalid_argument("ADC v_ref must be positive");
    if (!(conversion_time_s > 0.0 && conversion_time_s < sample_period_s))
        throw std::invalid_argument("ADC requires 0 < conversion_time < sample_period");
}

void DetectorConfig::validate() const {
    if (!(threshold_fraction > 0.0 && threshold_fraction < 0.58))
        throw std::invalid_argument("threshold_fraction must lie in (0, 0.58)");
    if (k < 1 || n < k || n > 32)
        throw std::invalid_argument("detector needs 1 <= k <= n <= 32");
}

int sample_rectified(const WaveformParams& params, const AdcModel& adc, double t) {
    const double v_adc = std::abs(params.line_volts(t)) * params.scale_k;
    const double code = std::round(v_adc / adc.v_ref * adc.max_code());
    return static_cast<int>(std::clamp(code, 0.0, static_cast<double>(adc.max_code())));
}

int nominal_peak_code(const WaveformParams& params, const AdcModel& adc) {
    const double v_peak = params.rms_nominal * std::numbers::sqrt2 * params.scale_k;
    return static_cast<int>(
        std::clamp(std::round(v_peak / adc.v_ref * adc.max_code()), 0.0,
                   static_cast<double>(adc.max_code())));
}

int threshold_code(const DetectorConfig& config, const WaveformParams& params,
                   const AdcModel& adc) {
    return static_cast<int>(std::round(config.threshold_fraction * nominal_peak_code(params, adc)));
}

PowerDetector::PowerDetector(DetectorConfig config, int threshold_code, LineState initial)
    : config_(config), threshold_(threshold_code) {
    config_.validate();
    status_.state = initial;
}

std::optional<PowerEdge> PowerDetector::step(int adc_code, double t) {
    if (t < last_t_)
        throw std::logic_error("detector ticks must be monotone");
    last_t_ = t;

    // "Beyond" means below threshold while live, above it while down.
    const bool below = adc_code < threshold_;
    const bool beyond = status_.state == LineState::live ? below : !below;
    history_ = (history_ << 1) | (beyond ? 1u : 0u);

    const std::uint32_t window_mask =
        config_.n >= 32 ? ~0u : ((1u << config_.n) - 1u);
    const std::uint32_t window = history_ & window_mask;
    bool fire = false;
    if (config_.rule == WindowRule::consecutive) {
        fire = std::countr_one(window) >= config_.k;
    } else {
        fire = std::popcount(window) >= config_.k;
    }
    if (!fire)
        return std::nullopt;

    history_ = 0;
    status_.last_edge_time = t;
    if (status_.state == LineState::live) {
        status_.state = LineState::down;
        return PowerEdge::loss;
    }
    status_.state = LineState::live;
    return PowerEdge::restore;
}

int rms_window_size(const WaveformParams& params, const AdcModel& adc) {
    return static_cast<int>(std::lround(params.period() / adc.sample_period_s));
}

std::optional<double> rms_estimate(std::span<const int> codes, int window, double scale_k,
                                   const AdcModel& adc) {
    if (window <= 0 || static_cast<int>(codes.size()) < window)
        return std::nullopt;
    double sum_sq = 0.0;
    for (auto c : codes.last(static_cast<std::size_t>(window))) {
        const double v = c * adc.v_ref / adc.max_code();
        sum_sq += v * v;
    }
    return std::sqrt(sum_sq / window) / scale_k;
}

RmsEstimator::RmsEstimator(int window, double scale_k, AdcModel adc)
    : window_(window), scale_k_(scale_k), adc_(adc) {}

void RmsEstimator::push(int code) {
    codes_.push_back(code);
    while (static_cast<int>(codes_.size()) > window_)
        codes_.pop_front();
}

std::optional<double> RmsEstimator::estimate() const {
    std::vector<int> buf(codes_.begin(), codes_.end());
    return rms_estimate(buf, window_, scale_k_, adc_);
}

AcMonitor::AcMonitor(WaveformParams params, AdcModel adc, DetectorConfig config)
    : params_(std::move(params)),
      adc_(adc),
      detector_(config, threshold_code(config, params_, adc_)),
      rms_(rms_window_size(params_, adc_), params_.scale_k, adc_) {
    params_.validate();
    adc_.validate();
}

std::vector<EdgeEvent> AcMonitor::advance_until(double t_end_s) {
    std::vector<EdgeEvent> edges;
    for (;;) {
        const double t = static_cast<double>(next_tick_) * adc_.sample_period_s;
        if (!(t < t_end_s))
            break;
        const int code = sample_rectified(params_, adc_, t);
        rms_.push(code);
        if (auto e = detector_.step(code, t))
            edges.push_back({*e, next_tick_, t});
        detector_.status().rms_estimate = rms_.estimate();
        ++next_tick_;
    }
    return edges;
}

std::optional<double> AcMonitor::rms_at(double t) const {
    const int window = rms_window_size(params_, adc_);
    const auto last = static_cast<std::int64_t>(std::floor(t / adc_.sample_period_s + 1e-9));
    if (last + 1 < window)
        return std::nullopt;
    std::vector<int> codes;
    codes.reserve(static_cast<std::size_t>(window));
    for (std::int64_t k = last - window + 1; k <= last; ++k)
        codes.push_back(sample_rectified(params_, adc_, static_cast<double>(k) * adc_.sample_period_s));
    return rms_estimate(codes, window, params_.scale_k, adc_);
}

LatencyStats latency_oracle(const WaveformParams& base, const AdcModel& adc,
                            const DetectorConfig& config, int n_phases) {
    if (n_phases < 1)
        throw std::invalid_argument("latency oracle needs at least one phase");
    const double warmup = 5.0 * base.period();
    const int thr = threshold_code(config, base, adc);

    LatencyStats stats;
    stats.latencies_s.reserve(static_cast<std::size_t>(n_phases));
    for (int i = 0; i < n_phases; ++i) {
        WaveformParams wf = base;
        const double t_out = warmup + (i + 0.5) * base.period() / n_phases;
        wf.outages = {{t_out, t_out + 1.0}};
        PowerDetector det(config, thr);
        for (std::int64_t k = 0;; ++k) {
            const double t = static_cast<double>(k) * adc.sample_period_s;
            if (t > t_out + 1.0)
                throw std::logic_error("outage never detected");
            auto edge = det.step(sample_rectified(wf, adc, t), t);
            if (edge == PowerEdge::loss && t >= t_out) {
                stats.latencies_s.push_back(t - t_out);
                break;
            }
            if (edge)
                throw std::logic_error("spurious edge before outage");
        }
    }
    const auto& l = stats.latencies_s;
    stats.min_s = *std::min_element(l.begin(), l.end());
    stats.max_s = *std::max_element(l.begin(), l.end());
    double sum = 0.0;
    for (double v : l)
        sum += v;
    stats.mean_s = sum / static_cast<double>(l.size());
    return stats;
}

void write_trace_csv(std::ostream& out, const WaveformParams& params, const AdcModel& adc,
                     double t_from, double t_to) {
    out << "time_s,adc_code,line_volts\n";
    auto k = static_cast<std::int64_t>(std::ceil(t_from / adc.sample_period_s - 1e-9));
    for (;; ++k) {
        const double t = static_cast<double>(k) * adc.sample_period_s;
        if (!(t < t_to))
            break;
        out << fmt::format("{:.6f},{},{:.3f}\n", t, sample_rectified(params, adc, t),
                           params.line_volts(t));
    }
}

}  // namespace labmon::ac

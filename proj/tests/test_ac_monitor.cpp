#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "labmon/ac_monitor.hpp"

using namespace labmon::ac;

namespace {

// Stand-alone model of the front end: |v| * k quantized on a 12-bit, 3.3 V ADC.
int ref_code(double t, double phase, double outage_start) {
    if (t >= outage_start)
        return 0;
    const double v = 240.0 * std::numbers::sqrt2 * std::sin(2 * std::numbers::pi * 50 * t + phase);
    const double k = 3.0 / (240.0 * std::numbers::sqrt2);
    return static_cast<int>(std::lround(std::abs(v) * k / 3.3 * 4095));
}

// Latency with the k-of-n rule evaluated independently of PowerDetector.
double ref_latency(double t_out, int thr, bool consecutive) {
    int h0 = 0, h1 = 0, h2 = 0;  // newest first
    for (int k = 0;; ++k) {
        const double t = k * 0.002;
        h2 = h1;
        h1 = h0;
        h0 = ref_code(t, 0.0, t_out) < thr ? 1 : 0;
        const bool fire = consecutive ? (h0 && h1) : (h0 + h1 + h2 >= 2);
        if (fire) {
            REQUIRE(t >= t_out);
            return t - t_out;
        }
    }
}

}  // namespace

TEST_CASE("peak and threshold codes") {
    WaveformParams wf;
    AdcModel adc;
    CHECK(nominal_peak_code(wf, adc) == 3723);
    CHECK(threshold_code(DetectorConfig{}, wf, adc) == 1117);
    CHECK(rms_window_size(wf, adc) == 10);
    // crest of the waveform at 5 ms
    CHECK(sample_rectified(wf, adc, 0.005) == 3723);
    wf.outages = {{0.004, 0.006}};
    CHECK(sample_rectified(wf, adc, 0.005) == 0);
}

TEST_CASE("sampled codes match the reference front end") {
    WaveformParams wf;
    AdcModel adc;
    for (int k = 0; k < 1000; ++k) {
        const double t = k * 0.002 + 0.000137 * (k % 7);
        REQUIRE(sample_rectified(wf, adc, t) == ref_code(t, 0.0, 1e9));
    }
}

TEST_CASE("detection latency distribution, consecutive rule") {
    WaveformParams wf;
    AdcModel adc;
    DetectorConfig cfg;
    auto stats = latency_oracle(wf, adc, cfg, 1000);
    REQUIRE(stats.latencies_s.size() == 1000);
    // independent re-derivation per phase
    for (int i = 0; i < 1000; i += 37) {
        const double t_out = 0.1 + (i + 0.5) * 0.02 / 1000;
        CHECK(stats.latencies_s[static_cast<std::size_t>(i)] ==
              doctest::Approx(ref_latency(t_out, 1117, true)).epsilon(1e-9));
    }
    // closed form: first dead tick is U(0, 2 ms] away; one live tick in five
    // sits below threshold, otherwise a second dead tick is needed.
    CHECK(stats.mean_s == doctest::Approx(0.001 + 0.002 * 4.0 / 5.0).epsilon(1e-6));
    CHECK(stats.min_s <= 0.0022);
    CHECK(stats.max_s <= 0.004);
    CHECK(stats.mean_s >= 0.0015);
    CHECK(stats.mean_s <= 0.0040);
}

TEST_CASE("anywhere rule is never slower than consecutive") {
    WaveformParams wf;
    AdcModel adc;
    DetectorConfig c1, c2;
    c2.rule = WindowRule::anywhere;
    auto a = latency_oracle(wf, adc, c1, 500);
    auto b = latency_oracle(wf, adc, c2, 500);
    for (std::size_t i = 0; i < a.latencies_s.size(); ++i)
        CHECK(b.latencies_s[i] <= a.latencies_s[i] + 1e-12);
    // two live ticks in five can complete the window
    CHECK(b.mean_s == doctest::Approx(0.001 + 0.002 * 3.0 / 5.0).epsilon(1e-6));
    for (int i = 0; i < 500; i += 41) {
        const double t_out = 0.1 + (i + 0.5) * 0.02 / 500;
        CHECK(b.latencies_s[static_cast<std::size_t>(i)] ==
              doctest::Approx(ref_latency(t_out, 1117, false)).epsilon(1e-9));
    }
}

TEST_CASE("no false alarms on a healthy line at the default threshold") {
    AdcModel adc;
    for (double phase : {0.0, 0.1, -std::numbers::pi / 10, 1.0, 2.5}) {
        WaveformParams wf;
        wf.phase_rad = phase;
        PowerDetector det(DetectorConfig{}, threshold_code(DetectorConfig{}, wf, adc));
        int edges = 0;
        for (int k = 0; k < 200000; ++k)
            if (det.step(sample_rectified(wf, adc, k * 0.002), k * 0.002))
                ++edges;
        CHECK(edges == 0);
    }
}

TEST_CASE("a slightly higher threshold admits a false alarm at an adversarial phase") {
    // zero crossing exactly between two ticks: both see |sin(pi/10)| = 0.309
    WaveformParams wf;
    wf.phase_rad = -std::numbers::pi / 10;
    AdcModel adc;
    DetectorConfig hi;
    hi.threshold_fraction = 0.31;
    PowerDetector det(hi, threshold_code(hi, wf, adc));
    bool fired = false;
    for (int k = 0; k < 100 && !fired; ++k)
        fired = det.step(sample_rectified(wf, adc, k * 0.002), k * 0.002).has_value();
    CHECK(fired);
}

TEST_CASE("restore detection and edge alternation") {
    WaveformParams wf;
    wf.outages = {{1.0003, 2.0001}};
    AcMonitor mon(wf, AdcModel{}, DetectorConfig{});
    auto edges = mon.advance_until(3.0);
    REQUIRE(edges.size() == 2);
    CHECK(edges[0].edge == PowerEdge::loss);
    CHECK(edges[0].t - 1.0003 >= 0.0);
    CHECK(edges[0].t - 1.0003 <= 0.004);
    CHECK(edges[1].edge == PowerEdge::restore);
    CHECK(edges[1].t > 2.0001);
    CHECK(edges[1].t - 2.0001 <= 0.01);
    CHECK(mon.status().state == LineState::live);
    CHECK(mon.next_tick() == 1500);
    // a second call continues where the first stopped
    CHECK(mon.advance_until(3.0).empty());
}

TEST_CASE("line RMS estimate") {
    AdcModel adc;
    for (int i = 0; i < 40; ++i) {
        WaveformParams wf;
        wf.phase_rad = i * 2 * std::numbers::pi / 40;
        wf.outages = {{10.0, 11.0}};
        AcMonitor mon(wf, adc, DetectorConfig{});
        auto rms = mon.rms_at(5.0 + i * 0.00037);
        REQUIRE(rms);
        CHECK(std::abs(*rms - 240.0) <= 0.5);
        auto dead = mon.rms_at(10.5);
        REQUIRE(dead);
        CHECK(*dead == 0.0);
    }
    AcMonitor early(WaveformParams{}, adc, DetectorConfig{});
    CHECK_FALSE(early.rms_at(0.01).has_value());
    CHECK(early.rms_at(0.018).has_value());
}

TEST_CASE("streaming RMS estimator tracks the same value") {
    WaveformParams wf;
    AcMonitor mon(wf, AdcModel{}, DetectorConfig{});
    mon.advance_until(1.0);
    REQUIRE(mon.status().rms_estimate);
    CHECK(*mon.status().rms_estimate == doctest::Approx(*mon.rms_at(0.998)));
}

TEST_CASE("configuration validation") {
    CHECK_THROWS(DetectorConfig{0.0, 2, 3, WindowRule::consecutive}.validate());
    CHECK_THROWS(DetectorConfig{0.3, 4, 3, WindowRule::consecutive}.validate());
    CHECK_THROWS(DetectorConfig{0.3, 0, 3, WindowRule::consecutive}.validate());
    WaveformParams wf;
    wf.outages = {{2.0, 1.0}};
    CHECK_THROWS(wf.validate());
    wf.outages = {{1.0, 3.0}, {2.0, 4.0}};
    CHECK_THROWS(wf.validate());
    AdcModel adc;
    adc.conversion_time_s = 0.003;
    CHECK_THROWS(adc.validate());
    PowerDetector det(DetectorConfig{}, 1117);
    det.step(0, 1.0);
    CHECK_THROWS(det.step(0, 0.5));
}

TEST_CASE("trace export") {
    std::ostringstream out;
    write_trace_csv(out, WaveformParams{}, AdcModel{}, 0.001, 0.0071);
    CHECK(out.str().rfind("time_s,adc_code,line_volts\n", 0) == 0);
    // ticks at 2, 4, 6 ms
    std::string s = out.str();
    CHECK(std::count(s.begin(), s.end(), '\n') == 4);
    CHECK(s.find("0.004000,") != std::string::npos);
}

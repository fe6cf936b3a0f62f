#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <thread>

#include "fake_ports.hpp"
#include "labmon/backend.hpp"

using namespace labmon;
using namespace labmon::backend;
using namespace std::chrono_literals;
using labmon::testing::temp_path;

namespace {

SensorConfigRow probe_row(std::string id = "probe-1", int slot = 0, std::string addr = "28-0001") {
    SensorConfigRow row;
    row.device_id = "node";
    row.sensor = labmon::testing::basic_config().sensors[0];
    row.sensor.id = std::move(id);
    row.sensor.slot_index = slot;
    row.sensor.address = std::move(addr);
    row.display_name = "Probe";
    row.units = "degC";
    return row;
}

void setup(Backend& b) {
    b.register_device({"node", 60s, 300s}, 0s);
    b.update_sensor_config(probe_row(), 0s);
}

node::HttpReport report(SimTime t, double v, int acks = 0) {
    return {"node", t, codec::EventCode::periodic_report, {{"probe-1", v}}, acks};
}

std::vector<std::uint8_t> uplink(codec::EventCode e, std::uint8_t slot0) {
    std::vector<std::uint8_t> p(12, 0);
    p[0] = static_cast<std::uint8_t>(e);
    p[1] = slot0;
    return p;
}

}  // namespace

TEST_CASE("HTTP ingest stores readings and flags unknown sensors") {
    Backend b;
    setup(b);
    node::HttpReport r = report(60s, 22.5);
    r.readings.push_back({"ghost", 1.0});
    auto res = b.ingest_http(r, 60s);
    CHECK(res.record_id == 1);
    CHECK_FALSE(res.command);
    auto recs = b.records();
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].path == Path::http);
    REQUIRE(recs[0].readings.size() == 2);
    CHECK_FALSE(recs[0].readings[0].unknown_sensor);
    CHECK(recs[0].readings[1].unknown_sensor);

    CHECK_THROWS_AS(b.ingest_http({"nobody", 0s, {}, {}, 0}, 61s), NotFound);
    node::HttpReport nan = report(62s, std::nan(""));
    CHECK_THROWS_AS(b.ingest_http(nan, 62s), ValidationError);
}

TEST_CASE("commands piggyback FIFO on HTTP responses and acks mark them executed") {
    Backend b;
    setup(b);
    auto c1 = b.queue_command("node", {1, 1, 1, 0, {}}, 10s);
    auto c2 = b.queue_command("node", {1, 2, 2, 0, {}}, 11s);
    CHECK(c1.id < c2.id);
    auto r1 = b.ingest_http(report(60s, 22), 60s);
    REQUIRE(r1.command);
    CHECK(r1.command->command_id == c1.id);
    CHECK(codec::to_hex(r1.command->payload) == "0101010000000001");
    auto r2 = b.ingest_http(report(120s, 22, 1), 120s);
    REQUIRE(r2.command);
    CHECK(r2.command->command_id == c2.id);
    auto cmds = b.commands("node");
    CHECK(cmds[0].status == CommandStatus::executed);
    CHECK(cmds[1].status == CommandStatus::delivered);
    CHECK_FALSE(b.ingest_http(report(180s, 22, 1), 180s).command);
    CHECK(b.commands("node")[1].status == CommandStatus::executed);
}

TEST_CASE("UNB callback decodes slots and releases one command per window") {
    Backend b;
    setup(b);
    auto cb = b.unb_callback({"node", uplink(codec::EventCode::periodic_report, 129), 10s, -120.0,
                              15.0, true});
    CHECK_FALSE(cb.downlink);
    auto recs = b.records();
    REQUIRE(recs[0].readings.size() == 1);
    CHECK(recs[0].readings[0].sensor_id == "probe-1");
    CHECK(recs[0].readings[0].value == doctest::Approx(15.0 + 129 * 15.0 / 255.0));
    CHECK(*recs[0].rssi == -120.0);

    auto c1 = b.queue_command("node", {1, 1, 1, 0, {}}, 20s);
    b.queue_command("node", {1, 2, 2, 0, {}}, 21s);
    auto no_req = b.unb_callback({"node", uplink(codec::EventCode::periodic_report, 0), 30s, {}, {}, false});
    CHECK_FALSE(no_req.downlink);
    auto alert = b.unb_callback({"node", uplink(codec::EventCode::power_loss, 0), 40s, {}, {}, true});
    REQUIRE(alert.downlink);
    CHECK(alert.downlink->command_id == c1.id);
    CHECK(b.commands()[0].in_flight);
    CHECK(b.commands()[0].status == CommandStatus::pending);
    // the window is taken: nothing else goes out until the outcome is known
    CHECK_FALSE(b.unb_callback({"node", uplink(codec::EventCode::periodic_report, 0), 50s, {}, {}, true})
                    .downlink);
    CHECK_FALSE(b.ingest_http(report(55s, 20), 55s).command);
    b.downlink_outcome(c1.id, false, 80s);
    CHECK_FALSE(b.commands()[0].in_flight);
    auto again = b.unb_callback({"node", uplink(codec::EventCode::periodic_report, 0), 90s, {}, {}, true});
    REQUIRE(again.downlink);
    b.downlink_outcome(c1.id, true, 120s);
    CHECK(b.commands()[0].status == CommandStatus::delivered);
    CHECK_THROWS_AS(b.downlink_outcome(c1.id, true, 121s), ConflictError);
    // code 7 acknowledges one execution
    b.unb_callback({"node", uplink(codec::EventCode::command_ack, 0), 400s, {}, {}, false});
    CHECK(b.commands()[0].status == CommandStatus::executed);

    CHECK_THROWS_AS(b.unb_callback({"node", std::vector<std::uint8_t>(11, 0), 500s, {}, {}, false}),
                    ValidationError);
}

TEST_CASE("alerts reach the event stream") {
    Backend b;
    setup(b);
    const auto before = b.events_since(0).size();
    b.unb_callback({"node", uplink(codec::EventCode::power_loss, 0), 10s, {}, {}, false});
    auto evs = b.events_since(0);
    REQUIRE(evs.size() == before + 2);
    CHECK(evs.back().kind == "alert");
    CHECK(evs.back().t == 10s);
    CHECK(evs.back().data_json.find("\"event_name\":\"power_loss\"") != std::string::npos);
    CHECK(b.events_since(evs.back().id).empty());
}

TEST_CASE("queue cap and expiry") {
    Backend b;
    setup(b);
    for (int i = 0; i < 16; ++i)
        b.queue_command("node", {0, 0, 0, 0, {}}, SimTime(i * 1s));
    CHECK_THROWS_AS(b.queue_command("node", {0, 0, 0, 0, {}}, 20s), ConflictError);
    CHECK_THROWS_AS(b.queue_command("ghost", {0, 0, 0, 0, {}}, 20s), NotFound);
    CHECK_THROWS_AS(b.queue_command("node", {1, 0x10, 0, 0, {}}, 20s), ValidationError);
    b.expire_commands(kDay - 1us);
    CHECK(b.commands()[0].status == CommandStatus::pending);
    b.expire_commands(kDay + 5s);
    int expired = 0;
    for (const auto& c : b.commands())
        expired += c.status == CommandStatus::expired;
    CHECK(expired == 6);  // created at 0..5 s
    CHECK_NOTHROW(b.queue_command("node", {0, 0, 0, 0, {}}, kDay + 5s));
}

TEST_CASE("sensor config conflicts and versioning") {
    Backend b;
    setup(b);
    auto cfg = b.device_config("node");
    CHECK(cfg.version == 2);
    CHECK(cfg.sensors.size() == 1);
    CHECK_THROWS_AS(b.update_sensor_config(probe_row("probe-2", 0, "28-0002"), 1s), ConflictError);
    CHECK_THROWS_AS(b.update_sensor_config(probe_row("probe-2", 1, "28-0001"), 1s), ConflictError);
    CHECK(b.update_sensor_config(probe_row("probe-2", 1, "28-0002"), 1s) == 3);
    // updating a row in place keeps its own slot
    auto moved = probe_row("probe-1", 0, "28-0001");
    moved.sensor.alarm_range = {10, 20};
    CHECK(b.update_sensor_config(moved, 2s) == 4);
    CHECK(b.sensor_row("probe-1")->sensor.alarm_range.hi == 20);
    auto bad = probe_row("probe-3", 2, "28-0003");
    bad.sensor.operating_range = {5, 5};
    CHECK_THROWS_AS(b.update_sensor_config(bad, 3s), ValidationError);
    bad = probe_row("probe-3", 2, "28-0003");
    bad.device_id = "ghost";
    CHECK_THROWS_AS(b.update_sensor_config(bad, 3s), NotFound);
}

TEST_CASE("smoothing and derivative helpers") {
    CHECK(moving_average({1, 2, 3, 4, 5}, 3) == std::vector<double>{1, 2, 3, 4, 5});
    CHECK(moving_average({0, 0, 9, 0, 0}, 3) == std::vector<double>{0, 3, 3, 3, 0});
    CHECK(moving_average({1, 5}, 1) == std::vector<double>{1, 5});
    std::vector<SimTime> t{0s, 1s, 3s, 4s};
    auto d = finite_difference(t, {0, 2, 6, 8});
    CHECK(d == std::vector<double>{2, 2, 2, 2});
    CHECK(finite_difference({0s}, {5}) == std::vector<double>{0});
}

TEST_CASE("derivative queries") {
    Backend b;
    setup(b);
    std::mt19937_64 rng(21);
    std::normal_distribution<double> noise(0.0, 0.05);
    b.update_sensor_config(probe_row("flat", 1, "a1"), 0s);
    b.update_sensor_config(probe_row("ramp", 2, "a2"), 0s);
    b.update_sensor_config(probe_row("noisy", 3, "a3"), 0s);
    for (int i = 1; i <= 200; ++i) {
        const SimTime t = SimTime(i * 60s);
        node::HttpReport r{"node", t, codec::EventCode::periodic_report,
                           {{"flat", 21.5}, {"ramp", 10.0 + 0.01 * i * 60}, {"noisy", 10.0 + 0.01 * i * 60 + noise(rng)}},
                           0};
        b.ingest_http(r, t);
    }
    ReadingQuery q;
    q.sensor_ids = {"flat", "ramp", "noisy", "nope"};
    q.derivative = true;
    auto res = b.query_readings(q);
    REQUIRE(res.series.size() == 4);
    for (const auto& p : res.series[0].points)
        CHECK(p.value == 0.0);
    for (const auto& p : res.series[1].points)
        CHECK(p.value == doctest::Approx(0.01).epsilon(1e-9));
    CHECK(res.series[3].points.empty());
    REQUIRE(res.warnings.size() == 1);
    CHECK(res.warnings[0].find("nope") != std::string::npos);

    q.sensor_ids = {"noisy"};
    q.smooth_window = 5;
    auto sm = b.query_readings(q);
    double sum = 0.0;
    for (const auto& p : sm.series[0].points)
        sum += p.value;
    CHECK(std::abs(sum / sm.series[0].points.size() - 0.01) <= 0.0005);

    q.from = 600s;
    q.to = 1200s;
    q.derivative = false;
    q.smooth_window = 0;
    CHECK(b.query_readings(q).series[0].points.size() == 11);
    q.from = 2000s;
    CHECK_THROWS_AS(b.query_readings(q), ValidationError);
}

TEST_CASE("event retention and waiting") {
    BackendOptions o;
    o.event_retention = 3;
    Backend b(o);
    for (int i = 0; i < 5; ++i)
        b.publish({0, SimTime(i), "node", "reading", "{}"});
    auto evs = b.events_since(0);
    REQUIRE(evs.size() == 3);
    CHECK(evs.front().id == 3);
    auto none = b.wait_events(5, 20ms);
    CHECK(none.empty());
    std::thread th([&] {
        std::this_thread::sleep_for(30ms);
        b.publish({0, 0s, "node", "alert", "{}"});
    });
    auto got = b.wait_events(5, 5000ms);
    th.join();
    REQUIRE(got.size() == 1);
    CHECK(got[0].id == 6);
}

TEST_CASE("persistence: replay, snapshot and torn lines") {
    const auto dir = temp_path("backend-store");
    std::vector<MessageRecord> before;
    std::vector<CommandQueueEntry> cmds;
    {
        BackendOptions o;
        o.data_dir = dir;
        o.snapshot_every = 7;
        Backend b(o);
        setup(b);
        for (int i = 1; i <= 20; ++i)
            b.ingest_http(report(SimTime(i * 60s), 20.0 + 0.1 * i), SimTime(i * 60s));
        b.queue_command("node", {1, 1, 1, 0, {}}, 30min);
        b.unb_callback({"node", uplink(codec::EventCode::power_loss, 17), 31min, -110.25, 12.5, true});
        before = b.records();
        cmds = b.commands();
        CHECK(std::filesystem::exists(dir / "snapshot.json"));
    }
    auto same = [](const std::vector<MessageRecord>& a, const std::vector<MessageRecord>& b) {
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i].id != b[i].id || a[i].t != b[i].t || a[i].event != b[i].event ||
                a[i].rssi != b[i].rssi || a[i].readings.size() != b[i].readings.size())
                return false;
            for (std::size_t k = 0; k < a[i].readings.size(); ++k)
                if (a[i].readings[k].value != b[i].readings[k].value) return false;
        }
        return true;
    };
    {
        BackendOptions o;
        o.data_dir = dir;
        Backend b(o);
        CHECK(same(b.records(), before));
        REQUIRE(b.commands().size() == cmds.size());
        CHECK(b.commands()[0].in_flight == cmds[0].in_flight);
        CHECK(b.device_config("node").version == 2);
        // ids continue after the replayed state
        CHECK(b.ingest_http(report(40min, 21), 40min).record_id == before.back().id + 1);
    }
    // torn trailing write
    const auto log = dir / "log.jsonl";
    const auto good = std::filesystem::file_size(log);
    {
        std::ofstream out(log, std::ios::app | std::ios::binary);
        out << R"({"op":"record","id":99,"t":12)";
    }
    {
        BackendOptions o;
        o.data_dir = dir;
        Backend b(o);
        CHECK(b.records().size() == before.size() + 1);
        CHECK(std::filesystem::file_size(log) == good);
    }
    // replay from the log alone gives the same state as with the snapshot
    std::filesystem::remove(dir / "snapshot.json");
    {
        BackendOptions o;
        o.data_dir = dir;
        Backend b(o);
        CHECK(b.records().size() == before.size() + 1);
        CHECK(b.commands().size() == cmds.size());
    }
    std::filesystem::remove_all(dir);
}

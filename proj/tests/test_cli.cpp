#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "fake_ports.hpp"

namespace {

const std::string kCli = LABMON_CLI;
const std::filesystem::path kScenarios = LABMON_SCENARIO_DIR;

int run(const std::string& args) {
    const int rc = std::system((kCli + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::filesystem::path write_scenario(const std::string& name, const nlohmann::json& j) {
    auto p = labmon::testing::temp_path(name + ".json");
    std::ofstream(p) << j.dump(2);
    return p;
}

nlohmann::json small(const nlohmann::json& checks) {
    return {{"name", "cli_small"},
            {"duration_s", 300},
            {"sensors",
             {{{"id", "probe-1"},
               {"model", "DS18B20"},
               {"bus", "ONE_WIRE"},
               {"operating_range", {{"lo", 15}, {"hi", 30}}},
               {"alarm_range", {{"lo", 10}, {"hi", 35}}},
               {"slot_index", 0},
               {"generator", {{"kind", "constant"}, {"value", 21}}}}}},
            {"checks", checks}};
}

}  // namespace

TEST_CASE("run exit codes") {
    const auto out = labmon::testing::temp_path("cli-out");
    auto pass = write_scenario("cli-pass", small({{{"name", "readings_present"}, {"min", 3}}}));
    CHECK(run("run " + pass.string() + " --out " + out.string()) == 0);
    CHECK(std::filesystem::exists(out / "metrics.json"));
    CHECK(std::filesystem::exists(out / "transcript.log"));

    auto fail = write_scenario("cli-fail", small({{{"name", "readings_present"}, {"min", 1000}}}));
    CHECK(run("run " + fail.string() + " --out " + out.string()) == 1);

    auto bad = write_scenario("cli-bad", small({{{"name", "no_such_check"}}}));
    CHECK(run("run " + bad.string() + " --out " + out.string()) == 2);
    CHECK(run("run /nonexistent.json") == 2);
    CHECK(run("") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("run " + pass.string() + " --seed notanumber") == 2);
    CHECK(run("--help") == 0);
    std::filesystem::remove_all(out);
}

TEST_CASE("seed override changes the bundle") {
    const auto a = labmon::testing::temp_path("cli-seed-a");
    const auto b = labmon::testing::temp_path("cli-seed-b");
    auto scen = kScenarios / "table2_latency.json";
    REQUIRE(run("run " + scen.string() + " --seed 1 --out " + a.string()) == 0);
    REQUIRE(run("run " + scen.string() + " --seed 2 --out " + b.string()) == 0);
    auto read = [](const std::filesystem::path& p) {
        std::ifstream in(p);
        return nlohmann::json::parse(in);
    };
    CHECK(read(a / "metrics.json")["seed"] == 1);
    CHECK(read(a / "metrics.json")["table2"]["uplink_start_s"] != read(b / "metrics.json")["table2"]["uplink_start_s"]);
    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
}

TEST_CASE("serve refuses a port that is already bound") {
    httplib::Server holder;
    const int port = holder.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    const auto data = labmon::testing::temp_path("cli-serve-data");
    setenv("LABMON_DATA_DIR", data.c_str(), 1);
    CHECK(run("serve --port " + std::to_string(port)) == 2);
    setenv("LABMON_PORT", std::to_string(port).c_str(), 1);
    CHECK(run("serve") == 2);
    unsetenv("LABMON_PORT");
    unsetenv("LABMON_DATA_DIR");
    std::filesystem::remove_all(data);
}

// labmon: run bundled scenarios and serve the backend API.
//
//   labmon run <file> [--seed N] [--out DIR]
//   labmon serve [--port P] [--live-scenario FILE] [--speed X]
//
// Exit status: 0 all checks pass, 1 a check failed, 2 usage or config error.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "labmon/backend.hpp"
#include "labmon/http_api.hpp"
#include "labmon/sim.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

std::atomic<bool> g_interrupted{false};

void on_signal(int) {
    g_interrupted = true;
}

int env_port() {
    if (const char* p = std::getenv("LABMON_PORT")) {
        try {
            return std::stoi(p);
        } catch (const std::exception&) {
            std::cerr << "ignoring malformed LABMON_PORT\n";
        }
    }
    return 8080;
}

std::string env_data_dir() {
    const char* d = std::getenv("LABMON_DATA_DIR");
    return d ? d : "labmon-data";
}

int cmd_run(const std::string& file, std::optional<std::uint64_t> seed, std::string out_dir) {
    labmon::sim::Scenario s;
    try {
        s = labmon::sim::load_scenario(file);
    } catch (const labmon::sim::ScenarioError& e) {
        std::cerr << e.what() << '\n';
        return kUsage;
    }
    if (seed)
        s.seed = *seed;
    if (out_dir.empty())
        out_dir = "out/" + s.name;

    labmon::sim::RunReport rep;
    try {
        rep = labmon::sim::run_scenario(s, out_dir);
    } catch (const std::exception& e) {
        std::cerr << "run failed: " << e.what() << '\n';
        return kUsage;
    }
    std::cout << fmt::format("scenario {} (seed {})\n", rep.scenario, s.seed);
    for (const auto& c : rep.checks)
        std::cout << fmt::format("{} {}: {} (expected {})\n", c.passed ? "PASS" : "FAIL", c.name, c.measured,
                                 c.expected);
    std::cout << fmt::format("bundle written to {} ({} files)\n", out_dir, rep.artifacts.size());
    return rep.passed() ? kOk : kCheckFailed;
}

int cmd_serve(int port, const std::string& live_file, double speed) {
    std::optional<labmon::sim::Scenario> scenario;
    if (!live_file.empty()) {
        try {
            scenario = labmon::sim::load_scenario(live_file);
        } catch (const labmon::sim::ScenarioError& e) {
            std::cerr << e.what() << '\n';
            return kUsage;
        }
    }

    labmon::backend::BackendOptions bo;
    bo.data_dir = env_data_dir();
    std::unique_ptr<labmon::backend::Backend> backend;
    try {
        backend = std::make_unique<labmon::backend::Backend>(bo);
    } catch (const std::exception& e) {
        std::cerr << "cannot open data directory: " << e.what() << '\n';
        return kUsage;
    }

    const auto wall_start = std::chrono::steady_clock::now();
    auto virtual_now = [wall_start, speed] {
        auto wall = std::chrono::steady_clock::now() - wall_start;
        return std::chrono::duration_cast<labmon::SimTime>(wall * speed);
    };

    labmon::api::ServerOptions so;
    so.port = port;
    so.clock = virtual_now;
    labmon::api::ApiServer server(*backend, so);
    try {
        server.start();
    } catch (const labmon::api::BindError& e) {
        std::cerr << e.what() << '\n';
        return kUsage;
    }
    std::cout << fmt::format("serving on http://127.0.0.1:{} (data in {})\n", server.port(), bo.data_dir->string())
              << std::flush;

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);

    std::atomic<bool> stop{false};
    std::thread sim;
    if (scenario) {
        sim = std::thread([&] {
            labmon::sim::RunOptions o;
            o.backend = backend.get();
            o.stop = &stop;
            o.before_event = [&](labmon::SimTime t) {
                auto due = wall_start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(t / speed);
                while (!stop && std::chrono::steady_clock::now() < due)
                    std::this_thread::sleep_until(
                        std::min(due, std::chrono::steady_clock::now() + std::chrono::milliseconds(100)));
            };
            try {
                labmon::sim::run_timeline(*scenario, o);
                std::cout << "live scenario finished; still serving\n" << std::flush;
            } catch (const std::exception& e) {
                std::cerr << "live scenario aborted: " << e.what() << '\n';
            }
        });
    }

    while (!g_interrupted)
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    stop = true;
    if (sim.joinable())
        sim.join();
    server.stop();
    backend->snapshot();
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lab monitoring node simulator and backend"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run a scenario and write its output bundle");
    std::string file;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    run->add_option("file", file, "Scenario JSON file")->required();
    run->add_option("--seed", seed, "Override the scenario seed");
    run->add_option("--out", out_dir, "Bundle directory (default out/<scenario name>)");

    auto* serve = app.add_subcommand("serve", "Serve the backend HTTP API");
    int port = env_port();
    std::string live;
    double speed = 1.0;
    serve->add_option("--port", port, "TCP port (default $LABMON_PORT or 8080)")->check(CLI::Range(0, 65535));
    serve->add_option("--live-scenario", live, "Scenario fed into the backend in real time");
    serve->add_option("--speed", speed, "Virtual seconds per wall second")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    if (*run)
        return cmd_run(file, seed, out_dir);
    return cmd_serve(port, live, speed);
}

#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>

#include "labmon/backend.hpp"
#include "labmon/time.hpp"

// HTTP front of the backend: ingest, UNB callback, sensor table, readings
// query, command queue and the server-sent event stream. Schemas are in
// docs/protocol.md.
namespace labmon::api {

class BindError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ServerOptions {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    // Timestamp for requests that carry none; defaults to seconds since start.
    std::function<SimTime()> clock;
    std::chrono::milliseconds stream_keepalive{1000};
};

class ApiServer {
public:
    ApiServer(backend::Backend& backend, ServerOptions options = {});
    ~ApiServer();

    ApiServer(const ApiServer&) = delete;
    ApiServer& operator=(const ApiServer&) = delete;

    // Binds and serves on a background thread; throws BindError.
    int start();
    void stop();
    int port() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace labmon::api

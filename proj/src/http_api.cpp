#include "labmon/http_api.hpp"

#include <sys/socket.h>

#include <atomic>
#include <charconv>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "labmon/json_io.hpp"

namespace labmon::api {

using json = nlohmann::json;

namespace {

void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
    json j = json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw backend::ValidationError("request body must be a JSON object");
    return j;
}

double query_number(const httplib::Request& req, const char* key, double fallback) {
    if (!req.has_param(key))
        return fallback;
    const auto v = req.get_param_value(key);
    double x = 0.0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(x))
        throw backend::ValidationError(fmt::format("query parameter '{}' is not a number", key));
    return x;
}

bool query_flag(const httplib::Request& req, const char* key) {
    if (!req.has_param(key))
        return false;
    const auto v = req.get_param_value(key);
    if (v == "1" || v == "true")
        return true;
    if (v == "0" || v == "false")
        return false;
    throw backend::ValidationError(fmt::format("query parameter '{}' must be 0/1 or true/false", key));
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        auto end = s.find(sep, pos);
        if (end == std::string::npos)
            end = s.size();
        if (end > pos)
            out.push_back(s.substr(pos, end - pos));
        pos = end + 1;
    }
    return out;
}

std::string sse_frame(const backend::PushEvent& e) {
    return fmt::format("id: {}\nevent: {}\ndata: {}\n\n", e.id, e.kind, json_io::to_json(e).dump());
}

}  // namespace

struct ApiServer::Impl {
    backend::Backend& backend;
    ServerOptions options;
    httplib::Server server;
    std::thread thread;
    std::atomic<bool> stopping{false};
    int port = -1;
    std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

    Impl(backend::Backend& b, ServerOptions o) : backend(b), options(std::move(o)) {
        if (!options.clock)
            options.clock = [this] {
                return std::chrono::duration_cast<SimTime>(std::chrono::steady_clock::now() - started);
            };
        // Plain SO_REUSEADDR: a second server on the same port must fail.
        server.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
        });
        routes();
    }

    SimTime time_of(const json& body) const {
        return body.contains("t") ? from_seconds(json_io::get_number(body, "t")) : options.clock();
    }

    template <typename F>
    auto guarded(F f) {
        return [f](const httplib::Request& req, httplib::Response& res) {
            try {
                f(req, res);
            } catch (const backend::ValidationError& e) {
                reply(res, 400, {{"error", e.what()}});
            } catch (const backend::NotFound& e) {
                reply(res, 404, {{"error", e.what()}});
            } catch (const backend::ConflictError& e) {
                reply(res, 409, {{"error", e.what()}});
            } catch (const json::exception& e) {
                reply(res, 400, {{"error", e.what()}});
            } catch (const std::exception& e) {
                reply(res, 500, {{"error", e.what()}});
            }
        };
    }

    void routes() {
        server.Post("/ingest", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto body = parse_body(req);
            auto report = json_io::report_from_json(body);
            auto out = backend.ingest_http(report, time_of(body));
            json command = nullptr;
            if (out.command)
                command = {{"id", out.command->command_id}, {"frame", codec::to_hex(out.command->payload)}};
            reply(res, 200, {{"record_id", out.record_id}, {"command", std::move(command)}});
        }));

        server.Post("/unb/callback", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto body = parse_body(req);
            backend::UnbCallback cb;
            cb.device_id = json_io::get_string(body, "device_id");
            try {
                cb.payload = codec::from_hex(json_io::get_string(body, "payload"));
            } catch (const codec::FrameError& e) {
                throw backend::ValidationError(e.what());
            }
            cb.t = time_of(body);
            if (body.contains("rssi")) cb.rssi = json_io::get_number(body, "rssi");
            if (body.contains("snr")) cb.snr = json_io::get_number(body, "snr");
            cb.downlink_requested = body.value("downlink_requested", false);
            auto out = backend.unb_callback(cb);
            json downlink = nullptr;
            if (out.downlink) {
                // The response itself carries the frame to the network.
                backend.downlink_outcome(out.downlink->command_id, true, cb.t);
                downlink = {{"command_id", out.downlink->command_id},
                            {"payload", codec::to_hex(out.downlink->payload)}};
            }
            reply(res, 200,
                  {{"record_id", out.record_id}, {"event", static_cast<int>(out.event)}, {"downlink", downlink}});
        }));

        server.Get("/sensors", guarded([this](const httplib::Request& req, httplib::Response& res) {
            json rows = json::array();
            for (const auto& r : backend.sensor_rows(req.get_param_value("device")))
                rows.push_back(json_io::to_json(r));
            reply(res, 200, rows);
        }));

        server.Put(R"(/sensors/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto body = parse_body(req);
            const std::string id = req.matches[1];
            if (body.contains("id") && body.at("id") != id)
                throw backend::ValidationError("sensor id in the body does not match the path");
            body["id"] = id;
            if (!body.contains("device_id")) {
                auto existing = backend.sensor_row(id);
                if (!existing) throw backend::ValidationError("field 'device_id': missing");
                body["device_id"] = existing->device_id;
            }
            auto row = json_io::row_from_json(body);
            auto version = backend.update_sensor_config(row, options.clock());
            reply(res, 200, {{"sensor", json_io::to_json(row)}, {"config_version", version}});
        }));

        server.Get("/readings", guarded([this](const httplib::Request& req, httplib::Response& res) {
            backend::ReadingQuery q;
            if (!req.has_param("sensor"))
                throw backend::ValidationError("query parameter 'sensor' is required");
            q.sensor_ids = split(req.get_param_value("sensor"), ',');
            if (req.has_param("from")) q.from = from_seconds(query_number(req, "from", 0.0));
            if (req.has_param("to")) q.to = from_seconds(query_number(req, "to", 0.0));
            q.derivative = query_flag(req, "derivative");
            const double smooth = query_number(req, "smooth", 0.0);
            if (smooth < 0 || smooth > 1000 || smooth != std::floor(smooth))
                throw backend::ValidationError("query parameter 'smooth' must be an integer 0..1000");
            q.smooth_window = static_cast<int>(smooth);
            auto out = backend.query_readings(q);
            json series = json::array();
            for (const auto& s : out.series) {
                json pts = json::array();
                for (const auto& p : s.points) pts.push_back({to_seconds(p.t), p.value});
                series.push_back({{"sensor_id", s.sensor_id}, {"points", std::move(pts)}});
            }
            reply(res, 200, {{"series", std::move(series)}, {"warnings", out.warnings}});
        }));

        server.Post("/commands", guarded([this](const httplib::Request& req, httplib::Response& res) {
            auto body = parse_body(req);
            auto device = json_io::get_string(body, "device_id");
            auto frame = json_io::frame_from_json(body);
            auto e = backend.queue_command(device, frame, time_of(body));
            reply(res, 201, json_io::to_json(e));
        }));

        server.Get("/commands", guarded([this](const httplib::Request& req, httplib::Response& res) {
            json out = json::array();
            for (const auto& c : backend.commands(req.get_param_value("device")))
                out.push_back(json_io::to_json(c));
            reply(res, 200, out);
        }));

        server.Get("/events", guarded([this](const httplib::Request& req, httplib::Response& res) {
            std::uint64_t after = 0;
            const std::string resume =
                req.has_header("Last-Event-ID") ? req.get_header_value("Last-Event-ID") : req.get_param_value("since");
            if (!resume.empty()) {
                auto [p, ec] = std::from_chars(resume.data(), resume.data() + resume.size(), after);
                if (ec != std::errc() || p != resume.data() + resume.size())
                    throw backend::ValidationError("event id must be a non-negative integer");
            }
            res.set_header("Cache-Control", "no-cache");
            if (query_flag(req, "once")) {
                std::string body;
                for (const auto& e : backend.events_since(after)) body += sse_frame(e);
                res.set_content(body, "text/event-stream");
                return;
            }
            auto cursor = std::make_shared<std::uint64_t>(after);
            res.set_chunked_content_provider("text/event-stream", [this, cursor](std::size_t, httplib::DataSink& sink) {
                if (stopping) {
                    sink.done();
                    return true;
                }
                auto events = backend.wait_events(*cursor, options.stream_keepalive);
                std::string chunk;
                for (const auto& e : events) {
                    chunk += sse_frame(e);
                    *cursor = e.id;
                }
                if (chunk.empty()) chunk = ": keepalive\n\n";
                return sink.write(chunk.data(), chunk.size());
            });
        }));
    }
};

ApiServer::ApiServer(backend::Backend& backend, ServerOptions options)
    : impl_(std::make_unique<Impl>(backend, std::move(options))) {}

ApiServer::~ApiServer() {
    stop();
}

int ApiServer::start() {
    auto& s = *impl_;
    if (s.port >= 0)
        return s.port;
    if (s.options.port == 0) {
        s.port = s.server.bind_to_any_port(s.options.host);
        if (s.port < 0)
            throw BindError(fmt::format("cannot bind {}:<any>", s.options.host));
    } else {
        if (!s.server.bind_to_port(s.options.host, s.options.port))
            throw BindError(fmt::format("cannot bind {}:{} (port in use?)", s.options.host, s.options.port));
        s.port = s.options.port;
    }
    s.thread = std::thread([&s] { s.server.listen_after_bind(); });
    s.server.wait_until_ready();
    return s.port;
}

void ApiServer::stop() {
    auto& s = *impl_;
    if (!s.thread.joinable())
        return;
    s.stopping = true;
    s.server.stop();
    s.thread.join();
}

int ApiServer::port() const {
    return impl_->port;
}

}  // namespace labmon::api

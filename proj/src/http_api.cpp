#include "slr/http_api.hpp"

#include <thread>

#include "httplib.h"
#include "slr/errors.hpp"
#include "slr/screening.hpp"
#include "slr/service.hpp"

namespace slr {

using nlohmann::json;

int http_status_for(const std::exception &error) {
    if (dynamic_cast<const UnknownRun *>(&error) or dynamic_cast<const UnknownDecision *>(&error))
        return 404;
    if (dynamic_cast<const InvalidTransition *>(&error) or dynamic_cast<const RunFinalized *>(&error)
        or dynamic_cast<const StageIncomplete *>(&error))
        return 409;
    if (dynamic_cast<const ValidationError *>(&error) or dynamic_cast<const SyntaxError *>(&error)
        or dynamic_cast<const UnknownRating *>(&error) or dynamic_cast<const DialectUnsupported *>(&error))
        return 422;
    return 500;
}


namespace {

/// Raised for request bodies that are not the expected JSON.
struct BadRequest : Error {
    explicit BadRequest(const std::string &message) : Error("BadRequest", message) { }
};


void send_json(httplib::Response &res, int status, json body) {
    body["schema_version"] = API_SCHEMA_VERSION;
    res.status = status;
    res.set_content(body.dump(), "application/json");
}


void send_error(httplib::Response &res, const std::exception &error) {
    const int status = dynamic_cast<const BadRequest *>(&error) ? 400 : http_status_for(error);
    send_json(res, status, json{ { "error", error_json(error) } });
}


json parse_body(const httplib::Request &req) {
    auto body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() or not body.is_object())
        throw BadRequest("request body must be a JSON object");
    return body;
}


std::string string_field(const json &body, const char *name, bool required = false) {
    if (not body.contains(name) or body[name].is_null()) {
        if (required)
            throw ValidationError(std::string("missing field \"") + name + "\"");
        return "";
    }
    if (not body[name].is_string())
        throw ValidationError(std::string("field \"") + name + "\" must be a string");
    return body[name].get<std::string>();
}


const char *status_of(const RunState &state) {
    switch (state.stage) {
    case Stage::finalized: return "finalized";
    case Stage::failed: return "failed";
    case Stage::created: return "created";
    default: return "active";
    }
}

} // unnamed namespace


struct ApiServer::Impl {
    Orchestrator &orchestrator;
    HttpOptions options;
    httplib::Server server;
    std::thread thread;

    Impl(Orchestrator &orchestrator, HttpOptions options) : orchestrator(orchestrator), options(std::move(options)) {
        routes();
    }

    using Handler = std::function<void(const httplib::Request &, httplib::Response &)>;

    Handler guarded(Handler handler) {
        return [this, handler = std::move(handler)](const httplib::Request &req, httplib::Response &res) {
            if (not options.token.empty() and req.get_header_value("Authorization") != "Bearer " + options.token) {
                send_json(res, 401, json{ { "error", { { "kind", "Unauthorized" }, { "message", "bearer token required" } } } });
                return;
            }
            try {
                handler(req, res);
            } catch (const std::exception &error) {
                send_error(res, error);
            }
        };
    }

    void routes() {
        server.set_payload_max_length(options.max_body_bytes);
        server.set_error_handler([](const httplib::Request &, httplib::Response &res) {
            if (not res.body.empty())
                return httplib::Server::HandlerResponse::Unhandled;
            std::string kind = "HttpError", message = httplib::status_message(res.status);
            if (res.status == 413)
                kind = "PayloadTooLarge";
            else if (res.status == 404)
                kind = "NotFound";
            send_json(res, res.status, json{ { "error", { { "kind", kind }, { "message", message } } } });
            return httplib::Server::HandlerResponse::Handled;
        });
        server.set_exception_handler([](const httplib::Request &, httplib::Response &res, std::exception_ptr failure) {
            try {
                std::rethrow_exception(failure);
            } catch (const std::exception &error) {
                send_error(res, error);
            } catch (...) {
                send_json(res, 500, json{ { "error", { { "kind", "InternalError" }, { "message", "unknown failure" } } } });
            }
        });

        server.Post("/api/runs", guarded([this](const httplib::Request &req, httplib::Response &res) {
            auto body = parse_body(req);
            if (body.contains("protocol"))
                body = body["protocol"];
            ReviewProtocol protocol;
            try {
                protocol = body.get<ReviewProtocol>();
            } catch (const json::exception &error) {
                throw ValidationError(std::string("malformed protocol: ") + error.what());
            }
            const auto run_id = orchestrator.create_run(protocol);
            send_json(res, 201, json{ { "run_id", run_id }, { "state", orchestrator.state(run_id) } });
        }));

        server.Get("/api/runs", guarded([this](const httplib::Request &, httplib::Response &res) {
            json runs = json::array();
            for (const auto &run_id : orchestrator.list_runs()) {
                const auto state = orchestrator.state(run_id);
                runs.push_back({ { "run_id", run_id },
                                 { "topic", state.protocol.topic },
                                 { "stage", to_string(state.stage) },
                                 { "status", status_of(state) } });
            }
            send_json(res, 200, json{ { "runs", runs } });
        }));

        server.Get(R"(/api/runs/([^/]+))", guarded([this](const httplib::Request &req, httplib::Response &res) {
            send_json(res, 200, json(orchestrator.state(req.matches[1])));
        }));

        server.Post(R"(/api/runs/([^/]+)/advance)", guarded([this](const httplib::Request &req, httplib::Response &res) {
            const std::string run_id = req.matches[1];
            const auto result = orchestrator.advance(run_id);
            send_json(res, 200, json{ { "executed", to_string(result.executed) },
                                      { "status", result.status },
                                      { "summary", result.summary },
                                      { "state", orchestrator.state(run_id) } });
        }));

        server.Patch(R"(/api/runs/([^/]+)/protocol)", guarded([this](const httplib::Request &req, httplib::Response &res) {
            const std::string run_id = req.matches[1];
            const auto body = parse_body(req);
            if (not body.contains("value"))
                throw ValidationError("missing field \"value\"");
            PlanEdit edit{ string_field(body, "field", true), body["value"], string_field(body, "editor") };
            if (edit.editor.empty())
                edit.editor = "api";
            const auto result = orchestrator.edit_plan(run_id, edit);
            send_json(res, 200, json{ { "protocol", result.protocol },
                                      { "audit",
                                        { { "field", result.audit.field },
                                          { "old_value", result.audit.old_value },
                                          { "new_value", result.audit.new_value },
                                          { "editor", result.audit.editor },
                                          { "timestamp", result.audit.timestamp } } },
                                      { "state", orchestrator.state(run_id) } });
        }));

        server.Get(R"(/api/runs/([^/]+)/candidates)", guarded([this](const httplib::Request &req, httplib::Response &res) {
            send_json(res, 200, json{ { "candidates", orchestrator.candidates(req.matches[1]) } });
        }));

        server.Get(R"(/api/runs/([^/]+)/decisions)", guarded([this](const httplib::Request &req, httplib::Response &res) {
            const auto decisions = orchestrator.decisions(req.matches[1]);
            json effective = json::array();
            for (const auto &[key, decision] : effective_decisions(decisions))
                effective.push_back(decision);
            send_json(res, 200, json{ { "decisions", decisions }, { "effective", effective } });
        }));

        server.Post(R"(/api/runs/([^/]+)/decisions/([^/]+)/override)",
                    guarded([this](const httplib::Request &req, httplib::Response &res) {
                        const auto body = parse_body(req);
                        auto editor = string_field(body, "editor");
                        const auto decision = orchestrator.apply_override(
                            req.matches[1], req.matches[2], parse_verdict(string_field(body, "verdict", true)),
                            string_field(body, "rationale"), editor.empty() ? "api" : editor);
                        send_json(res, 201, json{ { "decision", decision } });
                    }));

        server.Get(R"(/api/runs/([^/]+)/report)", guarded([this](const httplib::Request &req, httplib::Response &res) {
            const auto markdown = orchestrator.report_markdown(req.matches[1]);
            res.set_header("X-Schema-Version", std::to_string(API_SCHEMA_VERSION));
            res.set_content(markdown, "text/markdown; charset=utf-8");
        }));

        server.Post(R"(/api/runs/([^/]+)/feedback)", guarded([this](const httplib::Request &req, httplib::Response &res) {
            const std::string run_id = req.matches[1];
            const auto body = parse_body(req);
            const auto stored = orchestrator.record_feedback(
                run_id, { run_id, parse_rating(string_field(body, "rating", true)), string_field(body, "comment"),
                          string_field(body, "role") });
            send_json(res, 201, json{ { "feedback", stored } });
        }));

        server.Get("/api/ratings", guarded([](const httplib::Request &, httplib::Response &res) {
            json labels = json::array();
            for (const auto rating : all_ratings())
                labels.push_back(to_string(rating));
            send_json(res, 200, json{ { "ratings", labels } });
        }));

        server.Get(R"(/api/events/([^/]+))", guarded([this](const httplib::Request &req, httplib::Response &res) {
            const std::string run_id = req.matches[1];
            long cursor = 0;
            double timeout = 0.0;
            try {
                if (req.has_param("cursor"))
                    cursor = std::stol(req.get_param_value("cursor"));
                if (req.has_param("timeout"))
                    timeout = std::stod(req.get_param_value("timeout"));
            } catch (const std::exception &) {
                throw ValidationError("cursor and timeout must be numbers");
            }
            timeout = std::clamp(timeout, 0.0, 60.0);
            const auto events = orchestrator.wait_events(
                run_id, cursor, std::chrono::milliseconds(static_cast<long>(timeout * 1000)));
            const long next = events.empty() ? cursor : events.back().seq;
            send_json(res, 200, json{ { "events", events }, { "cursor", next } });
        }));

        std::error_code error;
        if (not options.ui_dir.empty() and std::filesystem::is_directory(options.ui_dir, error))
            server.set_mount_point("/ui", options.ui_dir.string());
    }
};


ApiServer::ApiServer(Orchestrator &orchestrator, HttpOptions options)
    : impl_(std::make_unique<Impl>(orchestrator, std::move(options))) { }


ApiServer::~ApiServer() {
    stop();
}


int ApiServer::bind(const std::string &host, int port) {
    int bound = port;
    if (port == 0)
        bound = impl_->server.bind_to_any_port(host);
    else if (not impl_->server.bind_to_port(host, port))
        bound = -1;
    if (bound < 0)
        throw ValidationError("cannot bind " + host + ":" + std::to_string(port));
    return bound;
}


void ApiServer::serve() {
    impl_->server.listen_after_bind();
}


int ApiServer::start(const std::string &host, int port) {
    const int bound = bind(host, port);
    impl_->thread = std::thread([this] { serve(); });
    impl_->server.wait_until_ready();
    return bound;
}


void ApiServer::stop() {
    impl_->server.stop();
    if (impl_->thread.joinable())
        impl_->thread.join();
}

} // namespace slr

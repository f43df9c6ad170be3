#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>

#include "slr/orchestrator.hpp"

namespace slr {

inline constexpr int API_SCHEMA_VERSION = 1;

struct HttpOptions {
    /// When set, /api/ requests need "Authorization: Bearer <token>".
    std::string token;
    /// Served under /ui/ when it exists.
    std::filesystem::path ui_dir;
    std::size_t max_body_bytes = 1 << 20;
};


/// JSON control API over an Orchestrator. See docs/http_api.md for routes.
class ApiServer {
public:
    ApiServer(Orchestrator &orchestrator, HttpOptions options = {});
    ~ApiServer();
    ApiServer(const ApiServer &) = delete;
    ApiServer &operator=(const ApiServer &) = delete;

    /// Binds without serving; port 0 picks a free port. Returns the port.
    int bind(const std::string &host, int port);
    /// Serves on the bound socket until stop().
    void serve();
    /// bind() plus serve() on a background thread.
    int start(const std::string &host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// HTTP status for an exception raised by the orchestrator.
int http_status_for(const std::exception &error);

} // namespace slr

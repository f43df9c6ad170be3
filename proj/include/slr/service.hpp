#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "slr/config.hpp"
#include "slr/orchestrator.hpp"

namespace slr {

/// How to reach the model: "live", "mock", or empty to pick live when a base
/// URL is configured and mock otherwise.
struct ModelChoice {
    std::string provider;
    std::optional<std::filesystem::path> scenario;
};

std::shared_ptr<Provider> make_model_provider(const ServiceConfig &config, const ModelChoice &choice);

/// Hooks tests use to make runs reproducible or to simulate crashes.
struct ServiceHooks {
    Clock *clock = nullptr;
    std::function<void(const std::string &)> crash_hook;
    std::function<std::shared_ptr<Transport>(const ProviderDescriptor &)> transports;
};

OrchestratorConfig make_orchestrator_config(const ServiceConfig &config, const ModelChoice &choice,
                                            const ServiceHooks &hooks = {});

/// Reads a protocol JSON file; a missing max_records takes the configured default.
ReviewProtocol load_protocol(const std::filesystem::path &path, const ServiceConfig &config);


/// Process-level test hooks for the CLI.
struct CliEnvironment {
    ServiceHooks hooks;
};

/// Runs one CLI invocation. `args` excludes the program name. Exit codes:
/// 0 ok, 1 usage or validation error, 2 stage failure, 3 store corruption.
int cli_dispatch(const std::vector<std::string> &args, std::ostream &out, std::ostream &err,
                 const CliEnvironment &environment = {});

/// Maps an exception to the CLI exit code above.
int exit_code_for(const std::exception &error);

/// {"kind", "message"} plus offset/expected for syntax errors.
nlohmann::json error_json(const std::exception &error);

} // namespace slr

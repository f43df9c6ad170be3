#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "slr/extraction.hpp"
#include "slr/orchestrator.hpp"
#include "slr/retrieval.hpp"

namespace slr {

/// Service configuration. The file format is line-based:
///
///     # comment
///     [section]
///     key = value
///
/// Sections: llm, store, providers, provider.<tag>, limits, pause_policy,
/// extraction, planner, http. Unknown sections or keys are errors. See
/// config/slr.conf.example for every key.
struct ServiceConfig {
    struct Llm {
        std::string base_url;
        std::string api_key;
        std::string model = "gpt-4o-mini";
        std::optional<double> temperature;
        int max_output_tokens = 1024;
        int max_retries = 2;
        int timeout_seconds = 60;
    } llm;

    struct Store {
        std::filesystem::path root = "slr-data";
        std::filesystem::path fixtures = "fixtures";
    } store;

    std::vector<std::string> enabled_providers{ "crossref", "openalex" };
    /// provider.<tag> sections: key -> value overrides on the descriptor.
    std::map<std::string, std::map<std::string, std::string>> provider_overrides;

    struct Limits {
        int max_records = 10;
        int max_in_flight = 4;
    } limits;

    PausePolicy pause_policy = PausePolicy::automatic;
    ExtractionOptions extraction;
    int question_count = DEFAULT_QUESTION_COUNT;

    struct Http {
        std::string addr = "127.0.0.1:8080";
        std::string token;
        std::string contact;
        std::filesystem::path ui_dir;
    } http;
};

/// Throws ValidationError naming the line on malformed input.
ServiceConfig parse_config(std::string_view text);
ServiceConfig load_config(const std::filesystem::path &path);

/// SLR_LLM_BASE_URL, SLR_LLM_API_KEY, SLR_LLM_MODEL and SLR_HTTP_TOKEN
/// replace the corresponding settings when set.
void apply_environment(ServiceConfig &config);

/// Built-in descriptors for the enabled providers with overrides applied. A
/// provider.<tag> section with `descriptor = FILE` defines a new provider from
/// a JSON descriptor. The fixture provider reads <fixtures>/providers.
std::vector<ProviderDescriptor> resolve_providers(const ServiceConfig &config);

ProviderDescriptor descriptor_from_json(const nlohmann::json &json);

/// "slr-pipeline/0.1" plus "(mailto:contact)" when a contact is configured.
std::string user_agent(const ServiceConfig &config);

} // namespace slr

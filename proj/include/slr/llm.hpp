#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace slr {

enum class TemplateId { gen_questions, gen_query, screen_title, screen_abstract, summarize, extract_answers, synthesize };

const char *to_string(TemplateId id);
TemplateId parse_template_id(std::string_view text);
const std::vector<TemplateId> &all_template_ids();

using Variables = std::map<std::string, std::string>;

struct PromptTemplate {
    TemplateId template_id;
    /// Placeholders are written `{{name}}`.
    std::string body;
    nlohmann::json output_schema;
    double default_temperature;
};

const PromptTemplate &prompt_template(TemplateId id);

/// Placeholder names in order of first appearance.
std::vector<std::string> placeholders(std::string_view body);

/// Single-pass substitution; substituted values are not re-scanned.
/// Throws MissingVariable / UnknownVariable.
std::string render_prompt(TemplateId id, const Variables &variables);


struct ModelParams {
    double temperature = 0.0;
    int max_output_tokens = 1024;

    friend bool operator==(const ModelParams &, const ModelParams &) = default;
};


struct ModelCall {
    TemplateId template_id;
    std::string rendered_prompt;
    std::string model_id;
    ModelParams params;
    std::string cache_key;
};

/// SHA-256 over (prompt, model, params). Throws ValidationError when the
/// temperature is outside [0, 2].
ModelCall make_model_call(TemplateId id, std::string rendered_prompt, std::string model_id, ModelParams params);


struct ProviderRequest {
    const ModelCall &call;
    /// The variables the prompt was rendered from; mock scenarios match on them.
    const Variables &variables;
    /// Prompt actually sent; differs from call.rendered_prompt on repair retries.
    const std::string &prompt;
    int attempt;
};


class Provider {
public:
    virtual ~Provider() = default;
    /// Returns the raw text of the model response.
    virtual std::string complete(const ProviderRequest &request) = 0;
};


/// Deterministic scripted provider. A scenario is a JSON document:
///
///     { "name": "...",
///       "rules": [ { "template": "screen_title",
///                    "when": { "title": { "icontains": "survey" } },
///                    "responses": [ <json value or raw string>, ... ] } ] }
///
/// Matchers: a bare string means equals; objects take one of equals,
/// contains, icontains. The first matching rule with responses left answers;
/// its responses are consumed in order, and with "repeat": true the last one
/// is reused indefinitely. Raw strings are returned verbatim,
/// anything else is serialized. No match raises MockMiss.
class MockProvider final : public Provider {
public:
    explicit MockProvider(nlohmann::json scenario);
    static std::shared_ptr<MockProvider> from_file(const std::filesystem::path &path);
    static std::shared_ptr<MockProvider> empty();

    std::string complete(const ProviderRequest &request) override;

    std::size_t invocation_count() const { return invocations_.load(); }
    const std::string &name() const { return name_; }

private:
    struct Rule {
        TemplateId template_id;
        nlohmann::json when;
        std::vector<std::string> responses;
        bool repeat = false;
        std::size_t next = 0;
    };

    std::string name_;
    std::vector<Rule> rules_;
    std::mutex mutex_;
    std::atomic<std::size_t> invocations_{ 0 };
};


struct LiveProviderConfig {
    std::string base_url;
    std::string api_key;
    int timeout_seconds = 60;
    int max_in_flight = 4;
};


/// Chat-completion style HTTP endpoint: POST {base_url}/chat/completions.
class LiveProvider final : public Provider {
public:
    explicit LiveProvider(LiveProviderConfig config);

    std::string complete(const ProviderRequest &request) override;

private:
    LiveProviderConfig config_;
    std::counting_semaphore<64> in_flight_;
};


/// Content-addressed store under <root>/<first two hash chars>/<hash>.json.
/// A default-constructed cache is disabled.
class ResponseCache {
public:
    ResponseCache() = default;
    explicit ResponseCache(std::filesystem::path root) : root_(std::move(root)) { }

    bool enabled() const { return not root_.empty(); }
    std::optional<nlohmann::json> lookup(const ModelCall &call) const;
    void store(const ModelCall &call, const nlohmann::json &value) const;
    std::filesystem::path path_for(const std::string &cache_key) const;

private:
    std::filesystem::path root_;
};


struct GatewayOptions {
    std::string model_id = "mock";
    int max_retries = 2;
    int max_output_tokens = 1024;
    /// Replaces the per-template default temperature when set.
    std::optional<double> temperature;
};


struct StructuredResult {
    nlohmann::json value;
    int retry_count = 0;
    bool from_cache = false;
};


/// Extra validation beyond the template schema; returns a message on failure.
/// Failures are retried exactly like schema violations.
using SemanticCheck = std::function<std::optional<std::string>(const nlohmann::json &)>;


class LlmGateway {
public:
    LlmGateway(std::shared_ptr<Provider> provider, ResponseCache cache, GatewayOptions options = {});

    ModelCall prepare(TemplateId id, const Variables &variables) const;

    /// Parses the provider text as JSON and validates it; on failure re-asks up
    /// to max_retries times with a repair instruction appended. Cache hits skip
    /// the provider. Throws SchemaViolation (with the last raw text),
    /// ProviderTimeout, ProviderHttp or MockMiss.
    StructuredResult complete_structured(const ModelCall &call, const Variables &variables,
                                         const SemanticCheck &check = {});

    StructuredResult run(TemplateId id, const Variables &variables, const SemanticCheck &check = {});

    const GatewayOptions &options() const { return options_; }

private:
    std::shared_ptr<Provider> provider_;
    ResponseCache cache_;
    GatewayOptions options_;
};


/// Best-effort JSON extraction: accepts bare JSON, fenced ```json blocks and
/// JSON embedded in surrounding prose. Returns nullopt when nothing parses.
std::optional<nlohmann::json> parse_model_json(std::string_view text);

} // namespace slr

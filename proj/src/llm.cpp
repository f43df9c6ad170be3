#include "slr/llm.hpp"

#include <algorithm>
#include <set>

#include "httplib.h"
#include "slr/errors.hpp"
#include "slr/schema.hpp"
#include "slr/util.hpp"

namespace slr {

using nlohmann::json;

const std::vector<TemplateId> &all_template_ids() {
    static const std::vector<TemplateId> ids{ TemplateId::gen_questions,   TemplateId::gen_query,
                                              TemplateId::screen_title,    TemplateId::screen_abstract,
                                              TemplateId::summarize,       TemplateId::extract_answers,
                                              TemplateId::synthesize };
    return ids;
}


const char *to_string(TemplateId id) {
    switch (id) {
    case TemplateId::gen_questions:
        return "gen_questions";
    case TemplateId::gen_query:
        return "gen_query";
    case TemplateId::screen_title:
        return "screen_title";
    case TemplateId::screen_abstract:
        return "screen_abstract";
    case TemplateId::summarize:
        return "summarize";
    case TemplateId::extract_answers:
        return "extract_answers";
    case TemplateId::synthesize:
        return "synthesize";
    }
    return "?";
}


TemplateId parse_template_id(std::string_view text) {
    for (const auto id : all_template_ids()) {
        if (text == to_string(id))
            return id;
    }
    throw ValidationError("unknown template id: " + std::string(text));
}


// ---------------------------------------------------------------------------
// Templates

namespace {

constexpr double GENERATION_TEMPERATURE = 0.7;
constexpr double JUDGMENT_TEMPERATURE = 0.0;

const char *const GEN_QUESTIONS_BODY = R"(You are the planning agent of a systematic literature review.

Topic: {{topic}}
Objective: {{objective}}

Write exactly {{count}} research questions that the review should answer. For each question give an id (RQ1, RQ2, ...), the question text, and the purpose the question serves in the review.

Respond with JSON only, in this shape:
{"questions": [{"id": "RQ1", "text": "...", "purpose": "..."}]})";

const char *const GEN_QUERY_BODY = R"(You are the planning agent of a systematic literature review.

Topic: {{topic}}
Objective: {{objective}}
Research questions:
{{questions}}

Write one search string for academic databases that retrieves studies answering these questions. Use the Boolean operators AND, OR and NOT, parentheses for grouping, and double quotes around multi-word phrases.
{{guidance}}
Respond with JSON only, in this shape:
{"query": "..."})";

const char *const SCREEN_TITLE_BODY = R"(You are the screening agent of a systematic literature review.

Topic: {{topic}}
Research questions:
{{questions}}
Inclusion keywords: {{include_criteria}}
Exclusion keywords: {{exclude_criteria}}

Decide from the title alone whether the paper is relevant enough to screen its abstract.
Title: {{title}}

Respond with JSON only, in this shape:
{"verdict": "include" or "exclude", "rationale": "one sentence"})";

const char *const SCREEN_ABSTRACT_BODY = R"(You are the screening agent of a systematic literature review.

Topic: {{topic}}
Research questions:
{{questions}}
Inclusion keywords: {{include_criteria}}
Exclusion keywords: {{exclude_criteria}}

Judge the context, methodology and findings described in the abstract and decide whether the paper should be included in the review.
Title: {{title}}
Abstract: {{abstract}}

Respond with JSON only, in this shape:
{"verdict": "include" or "exclude", "rationale": "one sentence"})";

const char *const SUMMARIZE_BODY = R"(You are the data extraction agent of a systematic literature review.

Summarize the paper below in at most {{max_words}} words. Cover its goal, method and main findings.
Title: {{title}}
Content:
{{content}}

Respond with JSON only, in this shape:
{"summary": "..."})";

const char *const EXTRACT_ANSWERS_BODY = R"(You are the data extraction agent of a systematic literature review.

Paper title: {{title}}
Research questions:
{{questions}}

{{instructions}}
Source text:
{{content}}

For every research question give an answer grounded in the source text, a supporting quote copied verbatim from the source text (or an empty string when there is none), and your confidence.

Respond with JSON only, in this shape:
{"answers": [{"question_id": "RQ1", "answer": "...", "support_quote": "...", "confidence": "low" or "medium" or "high"}]})";

const char *const SYNTHESIZE_BODY = R"(You are the data compilation agent of a systematic literature review.

Question: {{question}}
Evidence from the included studies (JSON, one object per study):
{{rows}}

Synthesize what the studies report on this question, assess trends, and identify gaps in the literature. Cite studies only by these record ids: {{allowed_ids}}

Respond with JSON only, in this shape:
{"synthesis": "...", "gap_notes": "...", "citations": ["record id", "..."]})";


json non_empty_string() {
    return json{ { "type", "string" }, { "minLength", 1 } };
}


json verdict_schema() {
    return json{ { "type", "object" },
                 { "required", { "verdict", "rationale" } },
                 { "properties",
                   { { "verdict", { { "type", "string" }, { "enum", { "include", "exclude" } } } },
                     { "rationale", non_empty_string() } } } };
}


std::vector<PromptTemplate> build_templates() {
    std::vector<PromptTemplate> templates;
    templates.push_back(
        { TemplateId::gen_questions, GEN_QUESTIONS_BODY,
          json{ { "type", "object" },
                { "required", { "questions" } },
                { "properties",
                  { { "questions",
                      { { "type", "array" },
                        { "minItems", 1 },
                        { "uniqueItemsBy", "id" },
                        { "items",
                          { { "type", "object" },
                            { "required", { "id", "text", "purpose" } },
                            { "properties",
                              { { "id", non_empty_string() },
                                { "text", non_empty_string() },
                                { "purpose", non_empty_string() } } } } } } } } } },
          GENERATION_TEMPERATURE });
    templates.push_back({ TemplateId::gen_query, GEN_QUERY_BODY,
                          json{ { "type", "object" },
                                { "required", { "query" } },
                                { "properties", { { "query", non_empty_string() } } } },
                          GENERATION_TEMPERATURE });
    templates.push_back({ TemplateId::screen_title, SCREEN_TITLE_BODY, verdict_schema(), JUDGMENT_TEMPERATURE });
    templates.push_back({ TemplateId::screen_abstract, SCREEN_ABSTRACT_BODY, verdict_schema(), JUDGMENT_TEMPERATURE });
    templates.push_back({ TemplateId::summarize, SUMMARIZE_BODY,
                          json{ { "type", "object" },
                                { "required", { "summary" } },
                                { "properties", { { "summary", non_empty_string() } } } },
                          JUDGMENT_TEMPERATURE });
    templates.push_back(
        { TemplateId::extract_answers, EXTRACT_ANSWERS_BODY,
          json{ { "type", "object" },
                { "required", { "answers" } },
                { "properties",
                  { { "answers",
                      { { "type", "array" },
                        { "uniqueItemsBy", "question_id" },
                        { "items",
                          { { "type", "object" },
                            { "required", { "question_id", "answer", "support_quote", "confidence" } },
                            { "properties",
                              { { "question_id", non_empty_string() },
                                { "answer", { { "type", "string" } } },
                                { "support_quote", { { "type", "string" } } },
                                { "confidence",
                                  { { "type", "string" }, { "enum", { "low", "medium", "high" } } } } } } } } } } } } },
          JUDGMENT_TEMPERATURE });
    templates.push_back(
        { TemplateId::synthesize, SYNTHESIZE_BODY,
          json{ { "type", "object" },
                { "required", { "synthesis", "gap_notes", "citations" } },
                { "properties",
                  { { "synthesis", non_empty_string() },
                    { "gap_notes", { { "type", "string" } } },
                    { "citations", { { "type", "array" }, { "items", { { "type", "string" } } } } } } } },
          GENERATION_TEMPERATURE });
    return templates;
}

} // unnamed namespace


const PromptTemplate &prompt_template(TemplateId id) {
    static const std::vector<PromptTemplate> templates = build_templates();
    for (const auto &candidate : templates) {
        if (candidate.template_id == id)
            return candidate;
    }
    throw std::logic_error("template not registered");
}


std::vector<std::string> placeholders(std::string_view body) {
    std::vector<std::string> names;
    std::size_t pos = 0;
    while ((pos = body.find("{{", pos)) != std::string_view::npos) {
        const auto close = body.find("}}", pos + 2);
        if (close == std::string_view::npos)
            break;
        std::string name(body.substr(pos + 2, close - pos - 2));
        if (std::find(names.begin(), names.end(), name) == names.end())
            names.push_back(std::move(name));
        pos = close + 2;
    }
    return names;
}


std::string render_prompt(TemplateId id, const Variables &variables) {
    const auto &body = prompt_template(id).body;
    const auto names = placeholders(body);
    for (const auto &name : names) {
        if (not variables.contains(name))
            throw MissingVariable("template " + std::string(to_string(id)) + " needs variable \"" + name + "\"");
    }
    for (const auto &[name, value] : variables) {
        if (std::find(names.begin(), names.end(), name) == names.end())
            throw UnknownVariable("template " + std::string(to_string(id)) + " has no variable \"" + name + "\"");
    }

    std::string rendered;
    std::size_t pos = 0;
    for (;;) {
        const auto open = body.find("{{", pos);
        const auto close = open == std::string::npos ? std::string::npos : body.find("}}", open + 2);
        if (close == std::string::npos) {
            rendered.append(body, pos, std::string::npos);
            return rendered;
        }
        rendered.append(body, pos, open - pos);
        rendered += variables.at(body.substr(open + 2, close - open - 2));
        pos = close + 2;
    }
}


ModelCall make_model_call(TemplateId id, std::string rendered_prompt, std::string model_id, ModelParams params) {
    if (not(params.temperature >= 0.0 and params.temperature <= 2.0))
        throw ValidationError("temperature must be within [0, 2]");
    if (params.max_output_tokens < 1)
        throw ValidationError("max_output_tokens must be >= 1");
    const json key_material{ { "prompt", rendered_prompt },
                             { "model", model_id },
                             { "temperature", params.temperature },
                             { "max_output_tokens", params.max_output_tokens } };
    auto cache_key = sha256_hex(key_material.dump());
    return ModelCall{ id, std::move(rendered_prompt), std::move(model_id), params, std::move(cache_key) };
}


// ---------------------------------------------------------------------------
// Mock provider

MockProvider::MockProvider(json scenario) {
    if (not scenario.is_object())
        throw ValidationError("mock scenario must be a JSON object");
    name_ = scenario.value("name", "unnamed");
    if (not scenario.contains("rules"))
        return;
    for (const auto &entry : scenario["rules"]) {
        Rule rule;
        rule.template_id = parse_template_id(entry.at("template").get<std::string>());
        rule.when = entry.value("when", json::object());
        for (const auto &response : entry.value("responses", json::array()))
            rule.responses.push_back(response.is_string() ? response.get<std::string>() : response.dump());
        rule.repeat = entry.value("repeat", false);
        rules_.push_back(std::move(rule));
    }
}


std::shared_ptr<MockProvider> MockProvider::from_file(const std::filesystem::path &path) {
    json scenario;
    try {
        scenario = json::parse(fs_util::read_file(path));
    } catch (const std::exception &error) {
        throw ValidationError("cannot load mock scenario " + path.string() + ": " + error.what());
    }
    return std::make_shared<MockProvider>(std::move(scenario));
}


std::shared_ptr<MockProvider> MockProvider::empty() {
    return std::make_shared<MockProvider>(json{ { "name", "empty" }, { "rules", json::array() } });
}


namespace {

bool matcher_accepts(const json &matcher, const std::string &value) {
    if (matcher.is_string())
        return value == matcher.get<std::string>();
    if (matcher.contains("equals"))
        return value == matcher["equals"].get<std::string>();
    if (matcher.contains("contains"))
        return value.find(matcher["contains"].get<std::string>()) != std::string::npos;
    if (matcher.contains("icontains"))
        return icontains(value, matcher["icontains"].get<std::string>());
    return false;
}

} // unnamed namespace


std::string MockProvider::complete(const ProviderRequest &request) {
    ++invocations_;
    std::lock_guard lock(mutex_);
    for (auto &rule : rules_) {
        if (rule.template_id != request.call.template_id or rule.next >= rule.responses.size())
            continue;
        bool matched = true;
        for (const auto &[name, matcher] : rule.when.items()) {
            const auto variable = request.variables.find(name);
            if (variable == request.variables.end() or not matcher_accepts(matcher, variable->second)) {
                matched = false;
                break;
            }
        }
        if (not matched)
            continue;
        if (rule.repeat and rule.next + 1 == rule.responses.size())
            return rule.responses[rule.next];
        return rule.responses[rule.next++];
    }
    json shown = json::object();
    for (const auto &[name, value] : request.variables)
        shown[name] = value.size() > 80 ? value.substr(0, 80) + "..." : value;
    throw MockMiss("scenario \"" + name_ + "\" has no response left for template "
                   + to_string(request.call.template_id) + " with variables " + shown.dump());
}


// ---------------------------------------------------------------------------
// Live provider

LiveProvider::LiveProvider(LiveProviderConfig config)
    : config_(std::move(config)), in_flight_(std::clamp(config_.max_in_flight, 1, 64)) {
    if (config_.base_url.empty())
        throw ValidationError("live LLM provider needs a base URL (SLR_LLM_BASE_URL)");
}


namespace {

struct SplitUrl {
    std::string origin;
    std::string path;
};


SplitUrl split_url(const std::string &url) {
    const auto scheme_end = url.find("://");
    const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    if (path_start == std::string::npos)
        return { url, "" };
    auto path = url.substr(path_start);
    while (not path.empty() and path.back() == '/')
        path.pop_back();
    return { url.substr(0, path_start), path };
}

} // unnamed namespace


std::string LiveProvider::complete(const ProviderRequest &request) {
    in_flight_.acquire();
    struct Release {
        std::counting_semaphore<64> &semaphore;
        ~Release() { semaphore.release(); }
    } release{ in_flight_ };

    const auto url = split_url(config_.base_url);
    httplib::Client client(url.origin);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);
    client.set_write_timeout(config_.timeout_seconds, 0);

    httplib::Headers headers{ { "User-Agent", "slr-pipeline/0.1" } };
    if (not config_.api_key.empty())
        headers.emplace("Authorization", "Bearer " + config_.api_key);

    const json body{ { "model", request.call.model_id },
                     { "temperature", request.call.params.temperature },
                     { "max_tokens", request.call.params.max_output_tokens },
                     { "response_format", { { "type", "json_object" } } },
                     { "messages", json::array({ { { "role", "user" }, { "content", request.prompt } } }) } };

    const auto result = client.Post(url.path + "/chat/completions", headers, body.dump(), "application/json");
    if (not result) {
        if (result.error() == httplib::Error::Read or result.error() == httplib::Error::Connection
            or result.error() == httplib::Error::ConnectionTimeout)
            throw ProviderTimeout("LLM endpoint did not answer: " + httplib::to_string(result.error()));
        throw ProviderTimeout("LLM request failed: " + httplib::to_string(result.error()));
    }
    if (result->status != 200)
        throw ProviderHttp(result->status, result->body.substr(0, 200));

    try {
        const auto response = json::parse(result->body);
        return response.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const std::exception &) {
        // The gateway reports unusable bodies as schema violations.
        return result->body;
    }
}


// ---------------------------------------------------------------------------
// Cache

std::filesystem::path ResponseCache::path_for(const std::string &cache_key) const {
    return root_ / cache_key.substr(0, 2) / (cache_key + ".json");
}


std::optional<json> ResponseCache::lookup(const ModelCall &call) const {
    if (not enabled())
        return std::nullopt;
    const auto path = path_for(call.cache_key);
    std::error_code error;
    if (not std::filesystem::exists(path, error))
        return std::nullopt;
    try {
        const auto entry = json::parse(fs_util::read_file(path));
        if (entry.value("cache_key", "") != call.cache_key)
            return std::nullopt;
        return entry.at("value");
    } catch (const std::exception &) {
        return std::nullopt;
    }
}


void ResponseCache::store(const ModelCall &call, const json &value) const {
    if (not enabled())
        return;
    const json entry{ { "cache_key", call.cache_key },
                      { "template_id", to_string(call.template_id) },
                      { "model_id", call.model_id },
                      { "value", value } };
    fs_util::write_atomic(path_for(call.cache_key), entry.dump(2) + "\n");
}


// ---------------------------------------------------------------------------
// Gateway

std::optional<json> parse_model_json(std::string_view text) {
    auto attempt = [](std::string_view candidate) -> std::optional<json> {
        auto parsed = json::parse(candidate.begin(), candidate.end(), nullptr, false);
        if (parsed.is_discarded())
            return std::nullopt;
        return parsed;
    };

    const auto trimmed = trim(text);
    if (auto parsed = attempt(trimmed))
        return parsed;

    std::string_view body(trimmed);
    if (body.starts_with("```")) {
        const auto first_newline = body.find('\n');
        const auto closing = body.rfind("```");
        if (first_newline != std::string_view::npos and closing > first_newline) {
            if (auto parsed = attempt(body.substr(first_newline + 1, closing - first_newline - 1)))
                return parsed;
        }
    }

    const auto open = body.find_first_of("{[");
    const auto close = body.find_last_of("}]");
    if (open != std::string_view::npos and close != std::string_view::npos and close > open)
        return attempt(body.substr(open, close - open + 1));
    return std::nullopt;
}


LlmGateway::LlmGateway(std::shared_ptr<Provider> provider, ResponseCache cache, GatewayOptions options)
    : provider_(std::move(provider)), cache_(std::move(cache)), options_(std::move(options)) {
    if (provider_ == nullptr)
        throw std::invalid_argument("gateway needs a provider");
    if (options_.max_retries < 0)
        throw ValidationError("max_retries must be >= 0");
}


ModelCall LlmGateway::prepare(TemplateId id, const Variables &variables) const {
    ModelParams params;
    params.temperature = options_.temperature.value_or(prompt_template(id).default_temperature);
    params.max_output_tokens = options_.max_output_tokens;
    return make_model_call(id, render_prompt(id, variables), options_.model_id, params);
}


namespace {

std::optional<std::string> full_check(const ModelCall &call, const json &value, const SemanticCheck &check) {
    if (auto error = validate_schema(prompt_template(call.template_id).output_schema, value))
        return error;
    if (check)
        return check(value);
    return std::nullopt;
}

} // unnamed namespace


StructuredResult LlmGateway::complete_structured(const ModelCall &call, const Variables &variables,
                                                 const SemanticCheck &check) {
    if (auto cached = cache_.lookup(call)) {
        if (not full_check(call, *cached, check))
            return { std::move(*cached), 0, true };
    }

    std::string prompt = call.rendered_prompt;
    std::string raw;
    std::string problem;
    for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
        raw = provider_->complete(ProviderRequest{ call, variables, prompt, attempt });
        const auto parsed = parse_model_json(raw);
        if (not parsed)
            problem = "response is not valid JSON";
        else if (auto error = full_check(call, *parsed, check))
            problem = *error;
        else {
            cache_.store(call, *parsed);
            return { *parsed, attempt, false };
        }
        const auto excerpt = raw.size() > 400 ? raw.substr(0, 400) + "..." : raw;
        prompt = call.rendered_prompt + "\n\nYour previous response could not be used (" + problem
                 + "). Previous response:\n" + excerpt
                 + "\nReply again with only a JSON value that follows the requested shape exactly.";
    }
    throw SchemaViolation("template " + std::string(to_string(call.template_id)) + " failed validation after "
                              + std::to_string(options_.max_retries) + " retries: " + problem,
                          raw);
}


StructuredResult LlmGateway::run(TemplateId id, const Variables &variables, const SemanticCheck &check) {
    return complete_structured(prepare(id, variables), variables, check);
}

} // namespace slr

#include <gtest/gtest.h>

#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "slr/errors.hpp"
#include "slr/llm.hpp"
#include "slr/schema.hpp"
#include "support.hpp"

using namespace slr;
using nlohmann::json;
namespace t = slr::testing;

namespace {

/// Returns scripted raw strings and counts calls.
class ScriptProvider final : public Provider {
public:
    explicit ScriptProvider(std::vector<std::string> replies) : replies_(std::move(replies)) { }

    std::string complete(const ProviderRequest &request) override {
        prompts.push_back(request.prompt);
        attempts.push_back(request.attempt);
        if (calls >= replies_.size())
            throw MockMiss("script exhausted");
        return replies_[calls++];
    }

    std::size_t calls = 0;
    std::vector<std::string> prompts;
    std::vector<int> attempts;

private:
    std::vector<std::string> replies_;
};


Variables summarize_vars(const std::string &title = "T") {
    return { { "title", title }, { "content", "Some content." }, { "max_words", "150" } };
}


Variables sample_variables(TemplateId id) {
    const std::string questions = "RQ1: How are models used? (purpose: map uses)\nRQ2: What limits them? (purpose: obstacles)";
    switch (id) {
    case TemplateId::gen_questions:
        return { { "topic", "Large language models in software development" },
                 { "objective", "Map uses and limits." },
                 { "count", "2" } };
    case TemplateId::gen_query:
        return { { "topic", "Large language models in software development" },
                 { "objective", "Map uses and limits." },
                 { "questions", questions },
                 { "guidance", "" } };
    case TemplateId::screen_title:
        return { { "topic", "X" }, { "questions", questions }, { "include_criteria", "large language model" },
                 { "exclude_criteria", "survey" }, { "title", "A Title" } };
    case TemplateId::screen_abstract:
        return { { "topic", "X" }, { "questions", questions }, { "include_criteria", "none" },
                 { "exclude_criteria", "none" }, { "title", "A Title" }, { "abstract", "An abstract." } };
    case TemplateId::summarize:
        return summarize_vars("A Title");
    case TemplateId::extract_answers:
        return { { "title", "A Title" }, { "questions", questions }, { "instructions", "Answer each question." },
                 { "content", "Source." } };
    case TemplateId::synthesize:
        return { { "question", "RQ1: How are models used?" }, { "rows", "[]" }, { "allowed_ids", "rec_1" } };
    }
    return {};
}

} // unnamed namespace


TEST(Schema, Keywords) {
    const json schema{ { "type", "object" },
                       { "required", { "a" } },
                       { "additionalProperties", false },
                       { "properties",
                         { { "a", { { "type", "array" }, { "minItems", 1 }, { "maxItems", 2 }, { "uniqueItemsBy", "id" },
                                    { "items", { { "type", "object" }, { "properties", { { "id", { { "type", "string" }, { "minLength", 1 } } } } } } } } },
                           { "b", { { "type", { "string", "null" } }, { "enum", { "x", nullptr } } } } } } };
    EXPECT_FALSE(validate_schema(schema, json{ { "a", { { { "id", "1" } } } } }));
    EXPECT_TRUE(validate_schema(schema, json::array()));
    EXPECT_TRUE(validate_schema(schema, json::object()));
    EXPECT_TRUE(validate_schema(schema, json{ { "a", json::array() } }));
    EXPECT_TRUE(validate_schema(schema, json{ { "a", { { { "id", "1" } }, { { "id", "2" } }, { { "id", "3" } } } } }));
    EXPECT_TRUE(validate_schema(schema, json{ { "a", { { { "id", "1" } }, { { "id", "1" } } } } }));
    EXPECT_TRUE(validate_schema(schema, json{ { "a", { { { "id", "" } } } } }));
    EXPECT_TRUE(validate_schema(schema, json{ { "a", { { { "id", "1" } } } }, { "c", 1 } }));
    EXPECT_FALSE(validate_schema(schema, json{ { "a", { { { "id", "1" } } } }, { "b", nullptr } }));
    EXPECT_TRUE(validate_schema(schema, json{ { "a", { { { "id", "1" } } } }, { "b", "y" } }));
    const auto message = validate_schema(schema, json{ { "a", { { { "id", 5 } } } } });
    ASSERT_TRUE(message);
    EXPECT_NE(message->find("a"), std::string::npos);
}


TEST(Prompts, RenderSubstitutesAndChecksVariables) {
    const auto rendered = render_prompt(TemplateId::gen_query, { { "topic", "X" }, { "objective", "O" },
                                                                 { "questions", "RQ1: Q?" }, { "guidance", "" } });
    EXPECT_NE(rendered.find("Topic: X"), std::string::npos);
    EXPECT_NE(rendered.find("RQ1: Q?"), std::string::npos);
    EXPECT_EQ(rendered.find("{{"), std::string::npos);
    try {
        render_prompt(TemplateId::gen_query, { { "objective", "O" }, { "questions", "" }, { "guidance", "" } });
        FAIL();
    } catch (const MissingVariable &error) {
        EXPECT_NE(std::string(error.what()).find("\"topic\""), std::string::npos);
    }
    auto extra = summarize_vars();
    extra["colour"] = "red";
    EXPECT_THROW(render_prompt(TemplateId::summarize, extra), UnknownVariable);
}


TEST(Prompts, SubstitutionIsSinglePass) {
    auto variables = summarize_vars("{{content}}");
    const auto rendered = render_prompt(TemplateId::summarize, variables);
    EXPECT_NE(rendered.find("Title: {{content}}"), std::string::npos);
}


TEST(Prompts, EveryTemplateMatchesGoldenFile) {
    const bool update = std::getenv("SLR_UPDATE_GOLDEN") != nullptr;
    for (const auto id : all_template_ids()) {
        const auto path = t::source_dir() / "tests" / "golden" / "prompts" / (std::string(to_string(id)) + ".txt");
        const auto rendered = render_prompt(id, sample_variables(id));
        if (update)
            t::spit(path, rendered);
        ASSERT_TRUE(std::filesystem::exists(path)) << path;
        EXPECT_EQ(rendered, t::slurp(path)) << to_string(id);
        EXPECT_FALSE(placeholders(prompt_template(id).body).empty());
    }
}


TEST(ModelCall, CacheKeyCoversPromptModelAndParams) {
    const auto a = make_model_call(TemplateId::summarize, "p", "m", { 0.0, 100 });
    EXPECT_EQ(a.cache_key, make_model_call(TemplateId::summarize, "p", "m", { 0.0, 100 }).cache_key);
    EXPECT_NE(a.cache_key, make_model_call(TemplateId::summarize, "q", "m", { 0.0, 100 }).cache_key);
    EXPECT_NE(a.cache_key, make_model_call(TemplateId::summarize, "p", "n", { 0.0, 100 }).cache_key);
    EXPECT_NE(a.cache_key, make_model_call(TemplateId::summarize, "p", "m", { 0.5, 100 }).cache_key);
    EXPECT_NE(a.cache_key, make_model_call(TemplateId::summarize, "p", "m", { 0.0, 101 }).cache_key);
    EXPECT_EQ(a.cache_key.size(), 64u);
    EXPECT_THROW(make_model_call(TemplateId::summarize, "p", "m", { 2.5, 100 }), ValidationError);
    EXPECT_THROW(make_model_call(TemplateId::summarize, "p", "m", { -0.1, 100 }), ValidationError);
}


TEST(Gateway, DemoScenarioGeneratesPaperQuestion) {
    LlmGateway gateway(MockProvider::from_file(t::demo_scenario()), {});
    const auto result = gateway.run(TemplateId::gen_questions,
                                    { { "topic", "Large language models in software development" },
                                      { "objective", "o" },
                                      { "count", "2" } });
    EXPECT_EQ(result.value["questions"][0]["text"],
              "How have large language models been utilized in various aspects of the software development process?");
}


TEST(Gateway, SecondIdenticalCallIsServedFromCache) {
    t::TempDir dir;
    auto provider = std::make_shared<ScriptProvider>(std::vector<std::string>{ R"({"summary": "s"})" });
    LlmGateway gateway(provider, ResponseCache(dir / "cache"));
    const auto first = gateway.run(TemplateId::summarize, summarize_vars());
    const auto second = gateway.run(TemplateId::summarize, summarize_vars());
    EXPECT_EQ(provider->calls, 1u);
    EXPECT_FALSE(first.from_cache);
    EXPECT_TRUE(second.from_cache);
    EXPECT_EQ(second.value, first.value);

    // A fresh gateway over the same directory also hits.
    LlmGateway again(std::make_shared<ScriptProvider>(std::vector<std::string>{}), ResponseCache(dir / "cache"));
    EXPECT_TRUE(again.run(TemplateId::summarize, summarize_vars()).from_cache);
}


TEST(Gateway, InvalidJsonTwiceThenValidRetriesTwice) {
    auto provider = std::make_shared<ScriptProvider>(
        std::vector<std::string>{ "not json at all", "{\"summary\": ", R"({"summary": "ok"})" });
    LlmGateway gateway(provider, {}, GatewayOptions{ "mock", 2, 1024, std::nullopt });
    const auto result = gateway.run(TemplateId::summarize, summarize_vars());
    EXPECT_EQ(result.retry_count, 2);
    EXPECT_EQ(result.value["summary"], "ok");
    EXPECT_EQ(provider->attempts, (std::vector<int>{ 0, 1, 2 }));
    EXPECT_NE(provider->prompts[1].find("could not be used"), std::string::npos);
    EXPECT_NE(provider->prompts[2].find("{\"summary\": "), std::string::npos);
}


TEST(Gateway, ExhaustedRetriesRaiseSchemaViolationWithRawText) {
    auto provider = std::make_shared<ScriptProvider>(
        std::vector<std::string>{ R"({"summary": ""})", R"({"summary": 3})", R"({"nothing": true})" });
    LlmGateway gateway(provider, {}, GatewayOptions{ "mock", 2, 1024, std::nullopt });
    try {
        gateway.run(TemplateId::summarize, summarize_vars());
        FAIL();
    } catch (const SchemaViolation &error) {
        EXPECT_EQ(error.raw_text(), R"({"nothing": true})");
    }
    EXPECT_EQ(provider->calls, 3u);
}


TEST(Gateway, SemanticCheckFailuresAreRetried) {
    auto provider = std::make_shared<ScriptProvider>(
        std::vector<std::string>{ R"({"summary": "bad"})", R"({"summary": "good"})" });
    LlmGateway gateway(provider, {});
    const auto result = gateway.run(TemplateId::summarize, summarize_vars(), [](const json &value) -> std::optional<std::string> {
        if (value["summary"] == "bad")
            return "summary is bad";
        return std::nullopt;
    });
    EXPECT_EQ(result.value["summary"], "good");
    EXPECT_EQ(result.retry_count, 1);
}


TEST(Gateway, AcceptsFencedAndEmbeddedJson) {
    EXPECT_EQ(parse_model_json("```json\n{\"a\": 1}\n```"), json({ { "a", 1 } }));
    EXPECT_EQ(parse_model_json("Sure! Here it is: {\"a\": [1, 2]} Hope that helps."), json({ { "a", { 1, 2 } } }));
    EXPECT_EQ(parse_model_json("  [1]  "), json({ 1 }));
    EXPECT_FALSE(parse_model_json("no json here"));
    EXPECT_FALSE(parse_model_json("{broken"));
}


TEST(Gateway, TemperatureOverrideAndDefaults) {
    LlmGateway defaults(std::make_shared<ScriptProvider>(std::vector<std::string>{}), {});
    EXPECT_EQ(defaults.prepare(TemplateId::screen_title, sample_variables(TemplateId::screen_title)).params.temperature,
              prompt_template(TemplateId::screen_title).default_temperature);
    LlmGateway fixed(std::make_shared<ScriptProvider>(std::vector<std::string>{}), {},
                     GatewayOptions{ "m", 1, 256, 0.3 });
    const auto call = fixed.prepare(TemplateId::gen_questions, sample_variables(TemplateId::gen_questions));
    EXPECT_DOUBLE_EQ(call.params.temperature, 0.3);
    EXPECT_EQ(call.params.max_output_tokens, 256);
}


TEST(Mock, EmptyScenarioMisses) {
    LlmGateway gateway(MockProvider::empty(), {});
    EXPECT_THROW(gateway.run(TemplateId::summarize, summarize_vars()), MockMiss);
}


TEST(Mock, SequenceIsConsumedThenMisses) {
    auto mock = std::make_shared<MockProvider>(json{
        { "name", "two" },
        { "rules", { t::rule("summarize", { { { "summary", "one" } }, { { "summary", "two" } } }, nullptr, false) } } });
    LlmGateway gateway(mock, {});
    auto vars = summarize_vars();
    EXPECT_EQ(gateway.run(TemplateId::summarize, vars).value["summary"], "one");
    vars["title"] = "other";
    EXPECT_EQ(gateway.run(TemplateId::summarize, vars).value["summary"], "two");
    vars["title"] = "third";
    EXPECT_THROW(gateway.run(TemplateId::summarize, vars), MockMiss);
    EXPECT_EQ(mock->invocation_count(), 3u);
}


TEST(Mock, MatchersAndRepeat) {
    auto mock = std::make_shared<MockProvider>(json{
        { "name", "m" },
        { "rules",
          { t::rule("summarize", { { { "summary", "exact" } } }, { { "title", "Exact" } }),
            t::rule("summarize", { { { "summary", "contains" } } }, { { "title", { { "contains", "Mid" } } } }),
            t::rule("summarize", { { { "summary", "icase" } } }, { { "title", { { "icontains", "loud" } } } }),
            t::rule("summarize", { "raw {\"summary\": \"raw\"} text" }) } } });
    LlmGateway gateway(mock, {});
    auto ask = [&](const std::string &title) {
        return gateway.run(TemplateId::summarize, summarize_vars(title)).value["summary"].get<std::string>();
    };
    EXPECT_EQ(ask("Exact"), "exact");
    EXPECT_EQ(ask("Exact"), "exact");
    EXPECT_EQ(ask("A Mid Title"), "contains");
    EXPECT_EQ(ask("LOUD"), "icase");
    EXPECT_EQ(ask("anything"), "raw");
    EXPECT_THROW(MockProvider(json{ { "rules", { { { "template", "nope" } } } } }), ValidationError);
}


TEST(LiveProvider, TalksChatCompletionsAndMapsErrors) {
    httplib::Server server;
    std::string seen_auth, seen_model;
    int status = 200;
    server.Post("/v1/chat/completions", [&](const httplib::Request &req, httplib::Response &res) {
        seen_auth = req.get_header_value("Authorization");
        const auto body = json::parse(req.body);
        seen_model = body["model"];
        res.status = status;
        json reply{ { "choices", { { { "message", { { "role", "assistant" }, { "content", "{\"summary\": \"live\"}" } } } } } } };
        res.set_content(status == 200 ? reply.dump() : "{\"error\": \"overloaded\"}", "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    auto live = std::make_shared<LiveProvider>(
        LiveProviderConfig{ "http://127.0.0.1:" + std::to_string(port) + "/v1", "secret", 5, 2 });
    LlmGateway gateway(live, {}, GatewayOptions{ "gpt-test", 0, 64, std::nullopt });
    EXPECT_EQ(gateway.run(TemplateId::summarize, summarize_vars()).value["summary"], "live");
    EXPECT_EQ(seen_auth, "Bearer secret");
    EXPECT_EQ(seen_model, "gpt-test");

    status = 503;
    try {
        gateway.run(TemplateId::summarize, summarize_vars("different"));
        ADD_FAILURE();
    } catch (const ProviderHttp &error) {
        EXPECT_EQ(error.status(), 503);
    }
    server.stop();
    thread.join();

    LlmGateway unreachable(live, {}, GatewayOptions{ "gpt-test", 0, 64, std::nullopt });
    EXPECT_THROW(unreachable.run(TemplateId::summarize, summarize_vars("again")), ProviderTimeout);
    EXPECT_THROW(LiveProvider(LiveProviderConfig{}), ValidationError);
}

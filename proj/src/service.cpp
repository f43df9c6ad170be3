#include "slr/service.hpp"

#include <atomic>
#include <csignal>
#include <ostream>

#include "CLI11.hpp"
#include "slr/errors.hpp"
#include "slr/http_api.hpp"
#include "slr/planner.hpp"
#include "slr/screening.hpp"

namespace slr {

using nlohmann::json;
namespace fs = std::filesystem;

std::shared_ptr<Provider> make_model_provider(const ServiceConfig &config, const ModelChoice &choice) {
    std::string kind = choice.provider;
    if (kind.empty())
        kind = config.llm.base_url.empty() ? "mock" : "live";
    if (kind == "mock")
        return choice.scenario ? std::shared_ptr<Provider>(MockProvider::from_file(*choice.scenario))
                               : std::shared_ptr<Provider>(MockProvider::empty());
    if (kind == "live") {
        if (choice.scenario)
            throw ValidationError("--scenario only applies to the mock provider");
        return std::make_shared<LiveProvider>(LiveProviderConfig{ config.llm.base_url, config.llm.api_key,
                                                                  config.llm.timeout_seconds,
                                                                  config.limits.max_in_flight });
    }
    throw ValidationError("model provider must be live or mock, got \"" + kind + "\"");
}


namespace {

/// Mock responses are cached under a model id derived from the scenario
/// content so that different scenarios never share cache entries.
std::string model_id_for(const ServiceConfig &config, const ModelChoice &choice) {
    const bool mock = choice.provider == "mock" or (choice.provider.empty() and config.llm.base_url.empty());
    if (not mock)
        return config.llm.model;
    if (not choice.scenario)
        return "mock:empty";
    return "mock:" + sha256_hex(fs_util::read_file(*choice.scenario)).substr(0, 16);
}


GatewayOptions gateway_options(const ServiceConfig &config, const ModelChoice &choice) {
    GatewayOptions options;
    options.model_id = model_id_for(config, choice);
    options.max_retries = config.llm.max_retries;
    options.max_output_tokens = config.llm.max_output_tokens;
    options.temperature = config.llm.temperature;
    return options;
}

} // unnamed namespace


OrchestratorConfig make_orchestrator_config(const ServiceConfig &config, const ModelChoice &choice,
                                            const ServiceHooks &hooks) {
    OrchestratorConfig result;
    result.root = config.store.root;
    result.llm = make_model_provider(config, choice);
    result.gateway = gateway_options(config, choice);
    result.providers = resolve_providers(config);
    result.transports = hooks.transports ? hooks.transports : default_transports(user_agent(config));
    result.pause_policy = config.pause_policy;
    result.max_in_flight = config.limits.max_in_flight;
    result.question_count = config.question_count;
    result.extraction = config.extraction;
    result.clock = hooks.clock ? hooks.clock : &SystemClock::instance();
    result.crash_hook = hooks.crash_hook;
    return result;
}


ReviewProtocol load_protocol(const fs::path &path, const ServiceConfig &config) {
    json document;
    try {
        document = json::parse(fs_util::read_file(path));
    } catch (const std::exception &error) {
        throw ValidationError("cannot read protocol " + path.string() + ": " + error.what());
    }
    if (not document.is_object())
        throw ValidationError("protocol " + path.string() + " must be a JSON object");
    if (not document.contains("max_records"))
        document["max_records"] = config.limits.max_records;
    return document.get<ReviewProtocol>();
}


int exit_code_for(const std::exception &error) {
    if (dynamic_cast<const CorruptStore *>(&error))
        return 3;
    if (dynamic_cast<const StageFailed *>(&error) or dynamic_cast<const AllProvidersFailed *>(&error)
        or dynamic_cast<const ProviderTimeout *>(&error) or dynamic_cast<const ProviderHttp *>(&error)
        or dynamic_cast<const SchemaViolation *>(&error) or dynamic_cast<const MockMiss *>(&error)
        or dynamic_cast<const TransportError *>(&error))
        return 2;
    return 1;
}


json error_json(const std::exception &error) {
    const auto *typed = dynamic_cast<const Error *>(&error);
    json body{ { "kind", typed ? typed->kind() : std::string("InternalError") }, { "message", error.what() } };
    if (const auto *syntax = dynamic_cast<const SyntaxError *>(&error)) {
        body["offset"] = syntax->offset();
        body["expected"] = syntax->expected();
    }
    if (const auto *corrupt = dynamic_cast<const CorruptStore *>(&error))
        body["path"] = corrupt->path();
    return body;
}


// ---------------------------------------------------------------------------
// CLI

namespace {

std::atomic<ApiServer *> active_server{ nullptr };

void stop_active_server(int) {
    if (auto *server = active_server.load())
        server->stop();
}


json versioned(json body) {
    body["schema_version"] = API_SCHEMA_VERSION;
    return body;
}


void print_funnel(std::ostream &out, const FunnelCounts &funnel) {
    out << "  identified:        " << funnel.identified() << "\n"
        << "  deduplicated:      " << funnel.deduplicated() << "\n"
        << "  title included:    " << funnel.title_included() << "\n"
        << "  abstract included: " << funnel.abstract_included() << "\n"
        << "  final included:    " << funnel.final_included() << "\n";
}


void print_state(std::ostream &out, const RunState &state) {
    out << "run " << state.run_id << ": " << to_string(state.stage);
    if (state.next_stage)
        out << " (next: " << to_string(*state.next_stage) << ")";
    out << "\n";
    if (state.failure)
        out << "failure: " << *state.failure << "\n";
    if (state.funnel) {
        out << "funnel:\n";
        print_funnel(out, *state.funnel);
    }
}


struct CliOptions {
    std::string config_path;
    std::string provider;
    std::string scenario;
    std::string root;
    bool json = false;
};


ServiceConfig cli_config(const CliOptions &options) {
    ServiceConfig config = options.config_path.empty() ? ServiceConfig{} : load_config(options.config_path);
    apply_environment(config);
    if (not options.root.empty())
        config.store.root = options.root;
    return config;
}


ModelChoice cli_model(const CliOptions &options) {
    ModelChoice choice{ options.provider, std::nullopt };
    if (not options.scenario.empty())
        choice.scenario = options.scenario;
    return choice;
}


std::pair<std::string, int> split_addr(const std::string &addr) {
    const auto colon = addr.rfind(':');
    if (colon == std::string::npos or colon == 0)
        throw ValidationError("address must be HOST:PORT, got \"" + addr + "\"");
    int port = 0;
    try {
        port = std::stoi(addr.substr(colon + 1));
    } catch (const std::exception &) {
        throw ValidationError("address must be HOST:PORT, got \"" + addr + "\"");
    }
    if (port < 0 or port > 65535)
        throw ValidationError("port out of range in \"" + addr + "\"");
    return { addr.substr(0, colon), port };
}

} // unnamed namespace


int cli_dispatch(const std::vector<std::string> &args, std::ostream &out, std::ostream &err,
                 const CliEnvironment &environment) {
    CLI::App app{ "Systematic literature review pipeline", "slr" };
    app.fallthrough();
    app.require_subcommand(1);
    CliOptions options;
    app.add_option("--config", options.config_path, "Configuration file");
    app.add_option("--provider", options.provider, "Model provider")->check(CLI::IsMember({ "live", "mock" }));
    app.add_option("--scenario", options.scenario, "Mock scenario JSON (with --provider mock)");
    app.add_option("--root", options.root, "Run store root (overrides [store] root)");
    app.add_flag("--json", options.json, "Machine-readable output");

    std::string topic, objective, mode = "paper_faithful", out_path, year, protocol_path, run_id, decision_id, verdict,
                       why, editor = "cli", query, rating, comment, role, addr, ui_dir;
    int question_count = DEFAULT_QUESTION_COUNT, max_records = 0;
    std::vector<std::string> include_keywords, exclude_keywords;
    bool pause = false;

    auto *plan = app.add_subcommand("plan", "Generate research questions and a search string");
    plan->add_option("topic", topic, "Review topic")->required();
    plan->add_option("--objective", objective, "Review objective");
    plan->add_option("--questions", question_count, "Number of research questions (2-6)");
    plan->add_option("--mode", mode, "paper_faithful or extended")
        ->check(CLI::IsMember({ "paper_faithful", "extended" }));
    plan->add_option("--out", out_path, "Write a protocol file ready for `run`");
    plan->add_option("--year", year, "Publication years A:B for the written protocol");
    plan->add_option("--max-records", max_records, "max_records for the written protocol");
    plan->add_option("--include", include_keywords, "Include keyword for the written protocol");
    plan->add_option("--exclude", exclude_keywords, "Exclude keyword for the written protocol");

    auto *run = app.add_subcommand("run", "Create a run from a protocol file and execute it");
    run->add_option("protocol", protocol_path, "Protocol JSON file")->required();
    run->add_flag("--pause", pause, "Stop after each stage for human review");

    auto *advance = app.add_subcommand("advance", "Execute the next stage of a run");
    advance->add_option("run_id", run_id)->required();

    auto *override_cmd = app.add_subcommand("override", "Replace a screening decision with a human verdict");
    override_cmd->add_option("run_id", run_id)->required();
    override_cmd->add_option("decision_id", decision_id)->required();
    override_cmd->add_option("verdict", verdict)->required()->check(CLI::IsMember({ "include", "exclude" }));
    override_cmd->add_option("--why", why, "Rationale");
    override_cmd->add_option("--editor", editor, "Who made the change");

    auto *edit = app.add_subcommand("edit", "Edit the protocol of a run");
    edit->add_option("run_id", run_id)->required();
    edit->add_option("--query", query, "New search string");
    edit->add_option("--year", year, "New publication years A:B");
    edit->add_option("--max-records", max_records, "New maximum records per provider");
    edit->add_option("--editor", editor, "Who made the change");

    auto *report = app.add_subcommand("report", "Show the report artifacts of a finalized run");
    report->add_option("run_id", run_id)->required();

    auto *status = app.add_subcommand("status", "Show the state of a run");
    status->add_option("run_id", run_id)->required();

    auto *resume = app.add_subcommand("resume", "Recover a run and continue it");
    resume->add_option("run_id", run_id)->required();
    resume->add_flag("--pause", pause, "Stop after the next stage");

    auto *feedback = app.add_subcommand("feedback", "Record reviewer feedback for a run");
    feedback->add_option("run_id", run_id)->required();
    feedback->add_option("--rating", rating, "One of: Not Satisfied, Fair, Satisfactory, Good, Very Good, Excellent")
        ->required();
    feedback->add_option("--comment", comment, "Free-text comment");
    feedback->add_option("--role", role, "Reviewer role");

    auto *serve = app.add_subcommand("serve", "Serve the HTTP API");
    serve->add_option("--addr", addr, "HOST:PORT to bind (default from config)");
    serve->add_option("--ui", ui_dir, "Directory served under /ui/");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp &) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError &error) {
        err << "error: " << error.what() << "\n\n" << app.help();
        return 1;
    }

    auto emit = [&](const json &body, const std::function<void()> &text) {
        if (options.json)
            out << versioned(body).dump(2) << "\n";
        else
            text();
    };

    try {
        auto config = cli_config(options);
        if (pause)
            config.pause_policy = PausePolicy::pause_after_each_stage;
        const auto model = cli_model(options);

        if (*plan) {
            LlmGateway gateway(make_model_provider(config, model), ResponseCache(config.store.root / "cache" / "llm"),
                               gateway_options(config, model));
            const auto replication = parse_replication_mode(mode);
            ReviewProtocol protocol;
            protocol.topic = topic;
            protocol.objective = objective;
            protocol.replication_mode = replication;
            protocol.questions = generate_questions(gateway, topic, objective, question_count);
            const auto planned = generate_search_query(gateway, topic, objective, protocol.questions, replication);
            protocol.query = planned.query;
            protocol.max_records = max_records > 0 ? max_records : config.limits.max_records;
            if (not year.empty())
                protocol.year_range = parse_year_range(year);
            protocol.criteria.include_keywords = include_keywords;
            protocol.criteria.exclude_keywords = exclude_keywords;
            validate(protocol);
            if (not out_path.empty())
                fs_util::write_atomic(out_path, json(protocol).dump(2) + "\n");
            emit(json{ { "questions", protocol.questions },
                       { "query", print_query(planned.query) },
                       { "query_ast", planned.query },
                       { "prompts_used", planned.prompts_used },
                       { "warnings", planned.warnings },
                       { "protocol_path", out_path.empty() ? json(nullptr) : json(out_path) } },
                 [&] {
                     out << "Research questions:\n" << format_questions(protocol.questions);
                     out << "Search string: " << print_query(planned.query) << "\n";
                     for (const auto &warning : planned.warnings)
                         out << "warning: " << warning << "\n";
                     if (not out_path.empty())
                         out << "protocol written to " << out_path << "\n";
                 });
            return 0;
        }

        if (*serve) {
            Orchestrator orchestrator(make_orchestrator_config(config, model, environment.hooks));
            HttpOptions http{ config.http.token, ui_dir.empty() ? config.http.ui_dir : fs::path(ui_dir), 1 << 20 };
            ApiServer server(orchestrator, http);
            const auto [host, port] = split_addr(addr.empty() ? config.http.addr : addr);
            const int bound = server.bind(host, port);
            out << "listening on http://" << host << ":" << bound << "\n" << std::flush;
            active_server = &server;
            std::signal(SIGINT, stop_active_server);
            std::signal(SIGTERM, stop_active_server);
            server.serve();
            active_server = nullptr;
            return 0;
        }

        Orchestrator orchestrator(make_orchestrator_config(config, model, environment.hooks));

        if (*run) {
            const auto id = orchestrator.create_run(load_protocol(protocol_path, config));
            const auto state = orchestrator.run(id);
            emit(json(state), [&] { print_state(out, state); });
            return 0;
        }
        if (*advance) {
            const auto result = orchestrator.advance(run_id);
            const auto state = orchestrator.state(run_id);
            emit(json{ { "executed", to_string(result.executed) },
                       { "status", result.status },
                       { "summary", result.summary },
                       { "state", state } },
                 [&] {
                     out << "executed " << to_string(result.executed) << ": " << result.status << "\n";
                     print_state(out, state);
                 });
            return 0;
        }
        if (*resume) {
            orchestrator.resume(run_id);
            auto state = orchestrator.state(run_id);
            if (state.stage != Stage::finalized)
                state = orchestrator.run(run_id);
            emit(json(state), [&] { print_state(out, state); });
            return 0;
        }
        if (*status) {
            const auto state = orchestrator.state(run_id);
            emit(json(state), [&] { print_state(out, state); });
            return 0;
        }
        if (*override_cmd) {
            const auto decision = orchestrator.apply_override(run_id, decision_id, parse_verdict(verdict), why, editor);
            emit(json{ { "decision", decision } }, [&] {
                out << "recorded " << decision.decision_id << ": " << decision.record_id << " "
                    << to_string(decision.stage) << " -> " << to_string(decision.verdict) << "\n";
            });
            return 0;
        }
        if (*edit) {
            std::vector<PlanEdit> edits;
            if (not query.empty())
                edits.push_back({ "query", query, editor });
            if (not year.empty())
                edits.push_back({ "year_range", year, editor });
            if (max_records > 0)
                edits.push_back({ "max_records", max_records, editor });
            if (edits.empty())
                throw ValidationError("edit needs --query, --year or --max-records");
            json audits = json::array();
            for (const auto &change : edits) {
                const auto result = orchestrator.edit_plan(run_id, change);
                audits.push_back({ { "field", result.audit.field },
                                   { "old_value", result.audit.old_value },
                                   { "new_value", result.audit.new_value } });
            }
            const auto state = orchestrator.state(run_id);
            emit(json{ { "edits", audits }, { "state", state } }, [&] {
                for (const auto &audit : audits)
                    out << "edited " << audit["field"].get<std::string>() << ": " << audit["new_value"].dump() << "\n";
                print_state(out, state);
            });
            return 0;
        }
        if (*report) {
            orchestrator.report_markdown(run_id);
            const auto dir = orchestrator.run_dir(run_id);
            const auto funnel = json::parse(fs_util::read_file(dir / "funnel.json"));
            emit(json{ { "funnel", funnel },
                       { "report_md", (dir / "report.md").string() },
                       { "report_csv", (dir / "report.csv").string() },
                       { "funnel_json", (dir / "funnel.json").string() } },
                 [&] {
                     out << "funnel:\n";
                     print_funnel(out, funnel.get<FunnelCounts>());
                     out << "report: " << (dir / "report.md").string() << "\n"
                         << "table:  " << (dir / "report.csv").string() << "\n"
                         << "funnel: " << (dir / "funnel.json").string() << "\n";
                 });
            return 0;
        }
        if (*feedback) {
            const auto stored = orchestrator.record_feedback(run_id, { run_id, parse_rating(rating), comment, role });
            emit(json{ { "feedback", stored } },
                 [&] { out << "feedback recorded: " << to_string(stored.rating) << "\n"; });
            return 0;
        }
    } catch (const std::exception &error) {
        const auto code = exit_code_for(error);
        const auto body = error_json(error);
        if (options.json)
            out << versioned(json{ { "error", body } }).dump(2) << "\n";
        err << "error: " << body["kind"].get<std::string>() << ": " << error.what() << "\n";
        return code;
    }
    err << app.help();
    return 1;
}

} // namespace slr

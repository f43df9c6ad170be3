#include "slr/orchestrator.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include "slr/errors.hpp"
#include "slr/screening.hpp"

namespace slr {

using nlohmann::json;
namespace fs = std::filesystem;

const char *to_string(Stage stage) {
    switch (stage) {
    case Stage::created: return "created";
    case Stage::plan: return "plan";
    case Stage::retrieve: return "retrieve";
    case Stage::screen_title: return "screen_title";
    case Stage::screen_abstract: return "screen_abstract";
    case Stage::extract: return "extract";
    case Stage::synthesize: return "synthesize";
    case Stage::report: return "report";
    case Stage::finalized: return "finalized";
    case Stage::failed: return "failed";
    }
    return "?";
}


Stage parse_stage(std::string_view text) {
    for (auto stage : { Stage::created, Stage::plan, Stage::retrieve, Stage::screen_title, Stage::screen_abstract,
                        Stage::extract, Stage::synthesize, Stage::report, Stage::finalized, Stage::failed }) {
        if (text == to_string(stage))
            return stage;
    }
    throw ValidationError("unknown stage \"" + std::string(text) + "\"");
}


const std::vector<Stage> &pipeline_stages() {
    static const std::vector<Stage> stages{ Stage::plan,    Stage::retrieve,   Stage::screen_title, Stage::screen_abstract,
                                            Stage::extract, Stage::synthesize, Stage::report };
    return stages;
}


const char *to_string(PausePolicy policy) {
    return policy == PausePolicy::automatic ? "auto" : "pause_after_each_stage";
}


PausePolicy parse_pause_policy(std::string_view text) {
    if (text == "auto")
        return PausePolicy::automatic;
    if (text == "pause_after_each_stage")
        return PausePolicy::pause_after_each_stage;
    throw ValidationError("pause_policy must be auto or pause_after_each_stage, got \"" + std::string(text) + "\"");
}


void to_json(json &j, const RunState &state) {
    std::string status = "active";
    if (state.stage == Stage::finalized)
        status = "finalized";
    else if (state.stage == Stage::failed)
        status = "failed";
    else if (state.stage == Stage::created)
        status = "created";
    json completed = json::array();
    for (const auto stage : state.completed)
        completed.push_back(to_string(stage));
    j = json{ { "run_id", state.run_id },
              { "protocol", state.protocol },
              { "query_text", state.protocol.query ? json(print_query(*state.protocol.query)) : json(nullptr) },
              { "stage", to_string(state.stage) },
              { "status", status },
              { "next_stage", state.next_stage ? json(to_string(*state.next_stage)) : json(nullptr) },
              { "completed", completed },
              { "checkpoints", state.checkpoints },
              { "event_cursor", state.event_cursor },
              { "funnel", state.funnel ? json(*state.funnel) : json(nullptr) },
              { "failure", state.failure ? json(*state.failure) : json(nullptr) } };
}


void to_json(json &j, const Event &event) {
    j = json{ { "seq", event.seq }, { "timestamp", event.timestamp }, { "type", event.type }, { "data", event.data } };
}


// ---------------------------------------------------------------------------
// Store primitives

namespace {

const char *const PROTOCOL_FILE = "protocol.json";
const char *const CANDIDATES_FILE = "candidates.jsonl";
const char *const DECISIONS_FILE = "decisions.jsonl";
const char *const EXTRACTIONS_FILE = "extractions.jsonl";
const char *const SYNTHESIS_FILE = "synthesis.json";
const char *const REPORT_MD_FILE = "report.md";
const char *const REPORT_CSV_FILE = "report.csv";
const char *const FUNNEL_FILE = "funnel.json";
const char *const EVENTS_FILE = "events.log";
const char *const FEEDBACK_FILE = "feedback.jsonl";
const char *const LOCK_FILE = ".lock";

const std::vector<const char *> &appended_files() {
    static const std::vector<const char *> files{ EVENTS_FILE, DECISIONS_FILE, EXTRACTIONS_FILE, FEEDBACK_FILE };
    return files;
}


std::string read_or_empty(const fs::path &path) {
    std::error_code error;
    if (not fs::exists(path, error))
        return "";
    return fs_util::read_file(path);
}


struct JsonlContent {
    std::vector<json> lines;
    /// Byte length of the complete lines.
    std::size_t valid_length = 0;
    bool torn = false;
};


/// A trailing segment without newline is a torn append and is ignored; an
/// unparsable complete line is corruption.
JsonlContent parse_jsonl(const std::string &content, const fs::path &path, std::size_t offset = 0) {
    JsonlContent parsed;
    std::size_t start = offset, line_number = 0;
    while (start < content.size()) {
        const auto end = content.find('\n', start);
        if (end == std::string::npos) {
            parsed.torn = true;
            break;
        }
        ++line_number;
        const auto line = std::string_view(content).substr(start, end - start);
        if (not trim(line).empty()) {
            auto value = json::parse(line, nullptr, false);
            if (value.is_discarded())
                throw CorruptStore(path.string(), "line " + std::to_string(line_number) + " is not valid JSON");
            parsed.lines.push_back(std::move(value));
        }
        start = end + 1;
    }
    parsed.valid_length = parsed.torn ? start : content.size();
    return parsed;
}


JsonlContent read_jsonl(const fs::path &path) {
    return parse_jsonl(read_or_empty(path), path);
}


template <typename T>
std::vector<T> decode_lines(const JsonlContent &content, const fs::path &path) {
    std::vector<T> values;
    for (std::size_t i = 0; i < content.lines.size(); ++i) {
        try {
            values.push_back(content.lines[i].get<T>());
        } catch (const std::exception &error) {
            throw CorruptStore(path.string(), "entry " + std::to_string(i + 1) + ": " + error.what());
        }
    }
    return values;
}


json read_json_file(const fs::path &path) {
    std::string content;
    try {
        content = fs_util::read_file(path);
    } catch (const std::exception &) {
        throw CorruptStore(path.string(), "missing or unreadable");
    }
    auto value = json::parse(content, nullptr, false);
    if (value.is_discarded())
        throw CorruptStore(path.string(), "not valid JSON");
    return value;
}


ReviewProtocol read_protocol(const fs::path &dir) {
    const auto path = dir / PROTOCOL_FILE;
    try {
        return read_json_file(path).get<ReviewProtocol>();
    } catch (const CorruptStore &) {
        throw;
    } catch (const std::exception &error) {
        throw CorruptStore(path.string(), error.what());
    }
}


void write_json_file(const fs::path &path, const json &value) {
    fs_util::write_atomic(path, value.dump(2) + "\n");
}


fs::path marker_path(const fs::path &dir, Stage stage) {
    return dir / "checkpoints" / (std::string(to_string(stage)) + ".marker");
}


json file_digest(const fs::path &dir, const std::string &name) {
    const auto content = read_or_empty(dir / name);
    return json{ { "file", name }, { "length", content.size() }, { "sha256", sha256_hex(content) } };
}


bool marker_matches(const fs::path &dir, const json &marker) {
    try {
        for (const auto &output : marker.at("outputs")) {
            const auto content = read_or_empty(dir / output.at("file").get<std::string>());
            const auto length = output.at("length").get<std::size_t>();
            if (content.size() < length
                or sha256_hex(std::string_view(content).substr(0, length)) != output.at("sha256").get<std::string>())
                return false;
        }
        return true;
    } catch (const json::exception &) {
        return false;
    }
}


std::optional<json> read_marker(const fs::path &dir, Stage stage) {
    const auto path = marker_path(dir, stage);
    std::error_code error;
    if (not fs::exists(path, error))
        return std::nullopt;
    return read_json_file(path);
}


/// Completed stages form a prefix of the pipeline: the first missing or stale
/// marker ends it.
std::vector<std::pair<Stage, json>> valid_markers(const fs::path &dir) {
    std::vector<std::pair<Stage, json>> valid;
    for (const auto stage : pipeline_stages()) {
        auto marker = read_marker(dir, stage);
        if (not marker or not marker_matches(dir, *marker))
            break;
        valid.emplace_back(stage, std::move(*marker));
    }
    return valid;
}


std::vector<Event> parse_events(const JsonlContent &content, const fs::path &path) {
    std::vector<Event> events;
    for (const auto &line : content.lines) {
        try {
            events.push_back({ line.at("seq").get<long>(), line.at("timestamp").get<std::string>(),
                               line.at("type").get<std::string>(), line.value("data", json::object()) });
        } catch (const json::exception &error) {
            throw CorruptStore(path.string(), std::string("malformed event: ") + error.what());
        }
    }
    return events;
}


std::optional<std::string> failure_from(const std::vector<Event> &events) {
    for (auto it = events.rbegin(); it != events.rend(); ++it) {
        if (it->type == "stage_failed")
            return it->data.value("stage", std::string("?")) + ": " + it->data.value("message", std::string());
        if (it->type == "stage_started" or it->type == "stage_completed" or it->type == "run_resumed")
            return std::nullopt;
    }
    return std::nullopt;
}


std::vector<ExtractionRecord> committed_extractions(const fs::path &dir, const json &marker) {
    const auto path = dir / EXTRACTIONS_FILE;
    const auto content = read_or_empty(path);
    std::size_t start = marker.value("extractions_start", std::size_t{ 0 });
    std::size_t length = 0;
    for (const auto &output : marker.at("outputs")) {
        if (output.at("file") == EXTRACTIONS_FILE)
            length = output.at("length").get<std::size_t>();
    }
    start = std::min(start, length);
    return decode_lines<ExtractionRecord>(parse_jsonl(content.substr(0, length), path, start), path);
}


RunSnapshot load_snapshot(const fs::path &dir, const std::vector<std::pair<Stage, json>> &markers) {
    RunSnapshot snapshot;
    snapshot.candidates = decode_lines<PaperRecord>(read_jsonl(dir / CANDIDATES_FILE), dir / CANDIDATES_FILE);
    snapshot.decisions = decode_lines<ScreeningDecision>(read_jsonl(dir / DECISIONS_FILE), dir / DECISIONS_FILE);
    for (const auto &[stage, marker] : markers) {
        if (stage == Stage::extract)
            snapshot.extractions = committed_extractions(dir, marker);
    }
    return snapshot;
}


bool has_stage(const std::vector<std::pair<Stage, json>> &markers, Stage stage) {
    return std::any_of(markers.begin(), markers.end(), [stage](const auto &entry) { return entry.first == stage; });
}


RunState derive_state(const fs::path &dir, const std::string &run_id) {
    RunState state;
    state.run_id = run_id;
    state.protocol = read_protocol(dir);
    const auto markers = valid_markers(dir);
    for (const auto &[stage, marker] : markers) {
        state.completed.push_back(stage);
        state.checkpoints[to_string(stage)] = marker;
    }
    const auto events = parse_events(read_jsonl(dir / EVENTS_FILE), dir / EVENTS_FILE);
    state.event_cursor = events.empty() ? 0 : events.back().seq;

    if (markers.size() == pipeline_stages().size())
        state.stage = Stage::finalized;
    else {
        state.next_stage = pipeline_stages()[markers.size()];
        state.failure = failure_from(events);
        if (state.failure)
            state.stage = Stage::failed;
        else
            state.stage = markers.empty() ? Stage::created : markers.back().first;
    }
    if (has_stage(markers, Stage::screen_abstract)) {
        try {
            state.funnel = compute_funnel(load_snapshot(dir, markers));
        } catch (const StageIncomplete &) {
        }
    }
    return state;
}


/// Advisory lock on runs/<id>/.lock for the lifetime of the object.
class FileLock {
public:
    explicit FileLock(const fs::path &path) {
        fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
        if (fd_ < 0)
            throw CorruptStore(path.string(), "cannot open lock file");
        if (::flock(fd_, LOCK_EX) != 0) {
            ::close(fd_);
            throw CorruptStore(path.string(), "cannot lock");
        }
    }
    ~FileLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    FileLock(const FileLock &) = delete;
    FileLock &operator=(const FileLock &) = delete;

private:
    int fd_ = -1;
};


std::string new_run_id(Clock &clock) {
    static std::mutex mutex;
    static std::mt19937_64 generator{ std::random_device{}() };
    std::lock_guard lock(mutex);
    const auto stamp = format_timestamp(clock.now());
    std::string compact;
    for (const char ch : stamp.substr(0, 19)) {
        if (ch != '-' and ch != ':')
            compact += ch;
    }
    static constexpr char HEX[] = "0123456789abcdef";
    std::string suffix;
    auto bits = generator();
    for (int i = 0; i < 8; ++i, bits >>= 4)
        suffix += HEX[bits & 0xf];
    return "run-" + compact + "-" + suffix;
}


bool valid_run_id(const std::string &run_id) {
    return not run_id.empty() and run_id.size() <= 128 and run_id[0] != '.'
           and std::all_of(run_id.begin(), run_id.end(), [](char ch) {
                  return (ch >= 'a' and ch <= 'z') or (ch >= 'A' and ch <= 'Z') or (ch >= '0' and ch <= '9') or ch == '-'
                         or ch == '_' or ch == '.';
              });
}


json stage_counts(const std::vector<ScreeningDecision> &decisions) {
    int include = 0, exclude = 0, needs_judge = 0, by_model = 0, unavailable = 0;
    for (const auto &decision : decisions) {
        include += decision.verdict == Verdict::include;
        exclude += decision.verdict == Verdict::exclude;
        needs_judge += decision.verdict == Verdict::needs_judge;
        by_model += decision.actor == Actor::model;
        unavailable += decision.rationale == JUDGE_UNAVAILABLE;
    }
    return json{ { "screened", decisions.size() }, { "include", include },          { "exclude", exclude },
                 { "needs_judge", needs_judge },   { "judged_by_model", by_model }, { "judge_unavailable", unavailable } };
}

} // unnamed namespace


// ---------------------------------------------------------------------------
// Execution: one locked mutation of one run

class Orchestrator::Execution {
public:
    Execution(const Orchestrator &owner, const std::string &run_id)
        : owner_(owner), run_id_(run_id), dir_(owner.checked_dir(run_id)), guard_(owner.run_mutex(run_id)),
          file_lock_(dir_ / LOCK_FILE) { }

    const fs::path &dir() const { return dir_; }
    Clock &clock() const { return *owner_.config_.clock; }

    void event(const std::string &type, json data = json::object()) {
        const auto path = dir_ / EVENTS_FILE;
        const auto existing = read_jsonl(path);
        long seq = 1;
        if (not existing.lines.empty())
            seq = existing.lines.back().value("seq", static_cast<long>(existing.lines.size())) + 1;
        const json line{ { "seq", seq }, { "timestamp", format_timestamp(clock().now()) }, { "type", type }, { "data", data } };
        fs_util::append_line(path, line.dump());
        owner_.notify();
    }

    /// Truncates torn appends; with `discard_stale` also deletes markers that
    /// no longer match their outputs (and every later marker).
    void repair(bool discard_stale) {
        for (const auto *name : appended_files()) {
            const auto path = dir_ / name;
            const auto content = read_or_empty(path);
            const auto parsed = parse_jsonl(content, path);
            if (not parsed.torn)
                continue;
            fs::resize_file(path, parsed.valid_length);
            event("store_recovered",
                  { { "file", name }, { "discarded_bytes", content.size() - parsed.valid_length } });
        }
        const auto valid = valid_markers(dir_);
        std::vector<std::string> discarded;
        for (std::size_t i = valid.size(); i < pipeline_stages().size(); ++i) {
            const auto path = marker_path(dir_, pipeline_stages()[i]);
            std::error_code error;
            if (fs::exists(path, error) and (discard_stale or i > valid.size())) {
                fs::remove(path);
                discarded.push_back(to_string(pipeline_stages()[i]));
            }
        }
        if (not discarded.empty())
            event("checkpoints_discarded", { { "stages", discarded }, { "reason", "outputs do not match marker" } });
    }

    void invalidate_from(Stage from, const std::string &reason) {
        std::vector<std::string> removed;
        bool reached = false;
        for (const auto stage : pipeline_stages()) {
            reached = reached or stage == from;
            if (not reached)
                continue;
            const auto path = marker_path(dir_, stage);
            std::error_code error;
            if (fs::exists(path, error)) {
                fs::remove(path);
                removed.push_back(to_string(stage));
            }
        }
        if (not removed.empty())
            event("checkpoints_invalidated", { { "from", to_string(from) }, { "stages", removed }, { "reason", reason } });
    }

    void commit(Stage stage, const std::vector<std::string> &outputs, json extra = json::object()) {
        json marker = extra;
        marker["stage"] = to_string(stage);
        marker["outputs"] = json::array();
        for (const auto &name : outputs)
            marker["outputs"].push_back(file_digest(dir_, name));
        write_json_file(marker_path(dir_, stage), marker);
    }

    ScreeningDecision append_decision(ScreeningDecision decision) {
        const auto path = dir_ / DECISIONS_FILE;
        const auto existing = read_jsonl(path);
        char id[16];
        std::snprintf(id, sizeof id, "D%06zu", existing.lines.size() + 1);
        decision.decision_id = id;
        fs_util::append_line(path, json(decision).dump());
        return decision;
    }

    void crash_point(const std::string &point) const {
        if (owner_.config_.crash_hook)
            owner_.config_.crash_hook(point);
    }

    json execute(Stage stage, ReviewProtocol &protocol);

private:
    json run_plan(ReviewProtocol &protocol);
    json run_retrieve(const ReviewProtocol &protocol);
    json run_screen(const ReviewProtocol &protocol, ScreeningStage stage);
    json run_extract(const ReviewProtocol &protocol);
    json run_synthesize(const ReviewProtocol &protocol);
    json run_report(const ReviewProtocol &protocol);

    const Orchestrator &owner_;
    std::string run_id_;
    fs::path dir_;
    std::lock_guard<std::mutex> guard_;
    FileLock file_lock_;
};


json Orchestrator::Execution::execute(Stage stage, ReviewProtocol &protocol) {
    switch (stage) {
    case Stage::plan: return run_plan(protocol);
    case Stage::retrieve: return run_retrieve(protocol);
    case Stage::screen_title: return run_screen(protocol, ScreeningStage::title);
    case Stage::screen_abstract: return run_screen(protocol, ScreeningStage::abstract);
    case Stage::extract: return run_extract(protocol);
    case Stage::synthesize: return run_synthesize(protocol);
    case Stage::report: return run_report(protocol);
    default: throw InvalidTransition(std::string("stage ") + to_string(stage) + " is not executable");
    }
}


json Orchestrator::Execution::run_plan(ReviewProtocol &protocol) {
    auto &gateway = *owner_.gateway_;
    json summary{ { "generated_questions", false }, { "generated_query", false } };
    if (protocol.questions.empty()) {
        protocol.questions = generate_questions(gateway, protocol.topic, protocol.objective, owner_.config_.question_count);
        summary["generated_questions"] = true;
    }
    if (not protocol.query) {
        auto planned = generate_search_query(gateway, protocol.topic, protocol.objective, protocol.questions,
                                             protocol.replication_mode);
        protocol.query = planned.query;
        summary["generated_query"] = true;
        summary["prompts_used"] = planned.prompts_used;
        summary["warnings"] = planned.warnings;
        for (const auto &warning : planned.warnings)
            event("warning", { { "stage", "plan" }, { "message", warning } });
    }
    validate(protocol);
    write_json_file(dir_ / PROTOCOL_FILE, protocol);
    crash_point("after_outputs:plan");
    commit(Stage::plan, { PROTOCOL_FILE });
    summary["questions"] = protocol.questions.size();
    summary["query"] = print_query(*protocol.query);
    return summary;
}


json Orchestrator::Execution::run_retrieve(const ReviewProtocol &protocol) {
    const auto &config = owner_.config_;
    RetrievalContext context;
    context.transport_for = config.transports ? config.transports : default_transports("slr-pipeline/0.1");
    context.clock = config.clock;
    context.max_in_flight = config.max_in_flight;
    const auto fetched = fetch_candidates(protocol, config.providers, context);
    for (const auto &failure : fetched.failures)
        event("provider_failed", { { "provider", failure.provider }, { "message", failure.message } });
    for (const auto &warning : fetched.warnings)
        event("warning", { { "stage", "retrieve" }, { "message", warning } });

    const auto deduplicated = deduplicate(fetched.records);
    std::string content;
    for (const auto &record : deduplicated.records)
        content += json(record).dump() + "\n";
    fs_util::write_atomic(dir_ / CANDIDATES_FILE, content);
    crash_point("after_outputs:retrieve");
    commit(Stage::retrieve, { CANDIDATES_FILE });
    return json{ { "identified", fetched.records.size() },
                 { "deduplicated", deduplicated.records.size() },
                 { "merges", deduplicated.merge_log },
                 { "pages_requested", fetched.pages_requested } };
}


json Orchestrator::Execution::run_screen(const ReviewProtocol &protocol, ScreeningStage stage) {
    if (protocol.questions.empty())
        throw ValidationError("screening needs research questions");
    const auto snapshot = load_snapshot(dir_, {});
    std::vector<PaperRecord> input = snapshot.candidates;
    if (stage == ScreeningStage::abstract)
        input = included_records(snapshot.candidates, effective_decisions(snapshot.decisions), ScreeningStage::title);

    ScreeningOptions options;
    options.max_in_flight = owner_.config_.max_in_flight;
    const auto decisions = screen_stage(
        input, protocol, stage, *owner_.gateway_, [this](ScreeningDecision decision) { return append_decision(std::move(decision)); },
        clock(), options);
    const auto name = stage == ScreeningStage::title ? Stage::screen_title : Stage::screen_abstract;
    crash_point(std::string("after_outputs:") + to_string(name));
    commit(name, { DECISIONS_FILE });
    return stage_counts(decisions);
}


json Orchestrator::Execution::run_extract(const ReviewProtocol &protocol) {
    const auto path = dir_ / EXTRACTIONS_FILE;
    const auto start = read_or_empty(path).size();
    const auto records = abstract_included(load_snapshot(dir_, {}));

    struct Outcome {
        std::optional<ExtractionRecord> extraction;
        std::vector<std::string> ungrounded;
        std::string error_kind;
        std::string error;
    };
    std::vector<Outcome> outcomes(records.size());
    parallel_for(records.size(), owner_.config_.max_in_flight, [&](std::size_t i) {
        try {
            outcomes[i].extraction = extract_record(*owner_.gateway_, records[i], protocol, owner_.config_.extraction,
                                                    &outcomes[i].ungrounded);
        } catch (const Error &error) {
            outcomes[i].error_kind = error.kind();
            outcomes[i].error = error.what();
        } catch (const std::exception &error) {
            outcomes[i].error_kind = "Error";
            outcomes[i].error = error.what();
        }
    });

    int extracted = 0, failed = 0, stripped = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto &outcome = outcomes[i];
        if (not outcome.extraction) {
            ++failed;
            event("extraction_failed",
                  { { "record_id", records[i].record_id }, { "kind", outcome.error_kind }, { "message", outcome.error } });
            continue;
        }
        if (not outcome.ungrounded.empty()) {
            stripped += static_cast<int>(outcome.ungrounded.size());
            event("quote_stripped", { { "record_id", records[i].record_id }, { "questions", outcome.ungrounded } });
        }
        fs_util::append_line(path, json(*outcome.extraction).dump());
        ++extracted;
    }
    if (records.empty() and not fs::exists(path))
        fs_util::write_atomic(path, "");
    crash_point("after_outputs:extract");
    commit(Stage::extract, { EXTRACTIONS_FILE }, { { "extractions_start", start } });
    return json{ { "input", records.size() }, { "extracted", extracted }, { "failed", failed }, { "quotes_stripped", stripped } };
}


json Orchestrator::Execution::run_synthesize(const ReviewProtocol &protocol) {
    const auto markers = valid_markers(dir_);
    const auto snapshot = load_snapshot(dir_, markers);
    const auto included = abstract_included(snapshot);
    const auto synthesis = synthesize_review(*owner_.gateway_, protocol, included, snapshot.extractions);
    write_json_file(dir_ / SYNTHESIS_FILE, synthesis);
    crash_point("after_outputs:synthesize");
    commit(Stage::synthesize, { SYNTHESIS_FILE });
    int citations = 0;
    for (const auto &question : synthesis.questions)
        citations += static_cast<int>(question.citations.size());
    return json{ { "questions", synthesis.questions.size() }, { "citations", citations } };
}


namespace {

std::vector<AuditEntry> audit_entries(const std::vector<Event> &events) {
    std::vector<AuditEntry> entries;
    for (const auto &event : events) {
        const auto editor = event.data.value("editor", std::string());
        if (event.type == "plan_edit") {
            entries.push_back({ event.timestamp, "plan edit", editor,
                                event.data.value("field", std::string()) + ": " + event.data["old_value"].dump() + " -> "
                                    + event.data["new_value"].dump() });
        } else if (event.type == "override") {
            entries.push_back({ event.timestamp, "screening override", editor,
                                event.data.value("decision_id", std::string()) + " ("
                                    + event.data.value("record_id", std::string()) + ", "
                                    + event.data.value("stage", std::string()) + ") -> "
                                    + event.data.value("verdict", std::string()) + ": "
                                    + event.data.value("rationale", std::string()) });
        }
    }
    return entries;
}

} // unnamed namespace


json Orchestrator::Execution::run_report(const ReviewProtocol &protocol) {
    const auto markers = valid_markers(dir_);
    const auto snapshot = load_snapshot(dir_, markers);

    ReportInput input;
    input.protocol = protocol;
    input.funnel = compute_funnel(snapshot);
    std::map<std::string, const ExtractionRecord *> extraction_of;
    for (const auto &extraction : snapshot.extractions)
        extraction_of[extraction.record_id] = &extraction;
    for (const auto &record : abstract_included(snapshot)) {
        const auto found = extraction_of.find(record.record_id);
        if (found == extraction_of.end())
            continue;
        input.included.push_back(record);
        input.extractions.push_back(*found->second);
    }
    try {
        input.synthesis = read_json_file(dir_ / SYNTHESIS_FILE).get<SynthesisReport>();
    } catch (const CorruptStore &) {
        throw;
    } catch (const std::exception &error) {
        throw CorruptStore((dir_ / SYNTHESIS_FILE).string(), error.what());
    }
    input.audit = audit_entries(parse_events(read_jsonl(dir_ / EVENTS_FILE), dir_ / EVENTS_FILE));

    const auto artifacts = render_report(input);
    fs_util::write_atomic(dir_ / REPORT_CSV_FILE, artifacts.csv);
    fs_util::write_atomic(dir_ / FUNNEL_FILE, artifacts.funnel_json);
    fs_util::write_atomic(dir_ / REPORT_MD_FILE, artifacts.markdown);
    crash_point("after_outputs:report");
    commit(Stage::report, { REPORT_MD_FILE, REPORT_CSV_FILE, FUNNEL_FILE });
    return json{ { "funnel", input.funnel }, { "included", input.included.size() } };
}


// ---------------------------------------------------------------------------
// Orchestrator

Orchestrator::Orchestrator(OrchestratorConfig config) : config_(std::move(config)) {
    if (config_.root.empty())
        throw ValidationError("run store root must be set");
    if (not config_.llm)
        config_.llm = MockProvider::empty();
    if (config_.clock == nullptr)
        config_.clock = &SystemClock::instance();
    fs::create_directories(config_.root / "runs");
    gateway_ = std::make_shared<LlmGateway>(config_.llm, ResponseCache(config_.root / "cache" / "llm"), config_.gateway);
}


fs::path Orchestrator::run_dir(const std::string &run_id) const {
    return config_.root / "runs" / run_id;
}


bool Orchestrator::run_exists(const std::string &run_id) const {
    std::error_code error;
    return valid_run_id(run_id) and fs::exists(run_dir(run_id) / PROTOCOL_FILE, error);
}


fs::path Orchestrator::checked_dir(const std::string &run_id) const {
    if (not run_exists(run_id))
        throw UnknownRun("no run with id \"" + run_id + "\"");
    return run_dir(run_id);
}


std::mutex &Orchestrator::run_mutex(const std::string &run_id) const {
    std::lock_guard lock(registry_mutex_);
    auto &slot = run_mutexes_[run_id];
    if (not slot)
        slot = std::make_unique<std::mutex>();
    return *slot;
}


void Orchestrator::notify() const {
    std::lock_guard lock(event_mutex_);
    event_cv_.notify_all();
}


std::string Orchestrator::create_run(const ReviewProtocol &protocol) {
    validate(protocol);
    for (;;) {
        const auto run_id = new_run_id(*config_.clock);
        const auto dir = run_dir(run_id);
        std::error_code error;
        if (not fs::create_directory(dir, error))
            continue;
        try {
            fs::create_directories(dir / "checkpoints");
            write_json_file(dir / PROTOCOL_FILE, protocol);
            fs_util::write_atomic(dir / EVENTS_FILE, "");
            fs_util::write_atomic(dir / LOCK_FILE, "");
        } catch (...) {
            fs::remove_all(dir, error);
            throw;
        }
        return run_id;
    }
}


std::vector<std::string> Orchestrator::list_runs() const {
    std::vector<std::string> runs;
    for (const auto &entry : fs::directory_iterator(config_.root / "runs")) {
        const auto name = entry.path().filename().string();
        if (entry.is_directory() and run_exists(name))
            runs.push_back(name);
    }
    std::sort(runs.begin(), runs.end());
    return runs;
}


RunState Orchestrator::state(const std::string &run_id) const {
    return derive_state(checked_dir(run_id), run_id);
}


AdvanceResult Orchestrator::advance(const std::string &run_id) {
    Execution execution(*this, run_id);
    execution.repair(false);
    auto current = derive_state(execution.dir(), run_id);
    if (current.stage == Stage::finalized)
        throw InvalidTransition("run " + run_id + " is finalized");
    if (current.stage == Stage::failed)
        throw InvalidTransition("run " + run_id + " failed (" + *current.failure + "); resume it first");

    const auto stage = *current.next_stage;
    execution.event("stage_started", { { "stage", to_string(stage) } });
    AdvanceResult result;
    result.executed = stage;
    try {
        result.summary = execution.execute(stage, current.protocol);
    } catch (const CorruptStore &) {
        throw;
    } catch (const std::exception &error) {
        const auto *typed = dynamic_cast<const Error *>(&error);
        const std::string kind = typed ? typed->kind() : "Error";
        execution.event("stage_failed", { { "stage", to_string(stage) }, { "kind", kind }, { "message", error.what() } });
        throw StageFailed(std::string(to_string(stage)) + " failed: " + kind + ": " + error.what());
    }
    execution.event("stage_completed", { { "stage", to_string(stage) }, { "summary", result.summary } });
    if (stage == Stage::report)
        execution.event("run_finalized");
    execution.crash_point(std::string("after_marker:") + to_string(stage));

    if (stage == Stage::report)
        result.status = "finalized";
    else if (config_.pause_policy == PausePolicy::pause_after_each_stage)
        result.status = "paused_awaiting_human";
    else
        result.status = "active";
    return result;
}


RunState Orchestrator::run(const std::string &run_id) {
    for (;;) {
        const auto result = advance(run_id);
        if (result.status != "active")
            break;
    }
    return state(run_id);
}


RunState Orchestrator::resume(const std::string &run_id) {
    {
        Execution execution(*this, run_id);
        if (derive_state(execution.dir(), run_id).stage == Stage::finalized)
            return derive_state(execution.dir(), run_id);
        execution.repair(true);
        const auto current = derive_state(execution.dir(), run_id);
        execution.event("run_resumed", { { "next_stage", to_string(*current.next_stage) } });
    }
    return state(run_id);
}


ScreeningDecision Orchestrator::apply_override(const std::string &run_id, const std::string &decision_id,
                                               Verdict verdict, const std::string &rationale, const std::string &editor) {
    Execution execution(*this, run_id);
    execution.repair(false);
    if (derive_state(execution.dir(), run_id).stage == Stage::finalized)
        throw RunFinalized("run " + run_id + " is finalized; overrides are closed");

    const auto all = decode_lines<ScreeningDecision>(read_jsonl(execution.dir() / DECISIONS_FILE),
                                                     execution.dir() / DECISIONS_FILE);
    const auto original = std::find_if(all.begin(), all.end(),
                                       [&decision_id](const auto &decision) { return decision.decision_id == decision_id; });
    if (original == all.end())
        throw UnknownDecision("run " + run_id + " has no decision " + decision_id);

    auto stored = execution.append_decision(make_override(*original, verdict, rationale, execution.clock()));
    execution.event("override", { { "decision_id", decision_id },
                                  { "new_decision_id", stored.decision_id },
                                  { "record_id", stored.record_id },
                                  { "stage", to_string(stored.stage) },
                                  { "verdict", to_string(verdict) },
                                  { "rationale", stored.rationale },
                                  { "editor", editor } });
    execution.invalidate_from(stored.stage == ScreeningStage::title ? Stage::screen_abstract : Stage::extract,
                              "override " + stored.decision_id);
    return stored;
}


PlanEditResult Orchestrator::edit_plan(const std::string &run_id, const PlanEdit &edit) {
    Execution execution(*this, run_id);
    execution.repair(false);
    const auto current = derive_state(execution.dir(), run_id);
    if (current.stage == Stage::finalized)
        throw RunFinalized("run " + run_id + " is finalized; the plan can no longer change");

    auto result = apply_plan_edit(current.protocol, edit, execution.clock());
    const bool plan_done = std::find(current.completed.begin(), current.completed.end(), Stage::plan)
                           != current.completed.end();
    write_json_file(execution.dir() / PROTOCOL_FILE, result.protocol);
    const bool affects_retrieval = edit.field == "query" or edit.field == "year_range" or edit.field == "max_records";
    execution.invalidate_from(affects_retrieval ? Stage::retrieve : Stage::screen_title, "plan edit of " + edit.field);
    if (plan_done)
        execution.commit(Stage::plan, { PROTOCOL_FILE });
    execution.event("plan_edit", { { "field", result.audit.field },
                                   { "old_value", result.audit.old_value },
                                   { "new_value", result.audit.new_value },
                                   { "editor", result.audit.editor } });
    return result;
}


FeedbackEntry Orchestrator::record_feedback(const std::string &run_id, const FeedbackEntry &entry) {
    Execution execution(*this, run_id);
    execution.repair(false);
    FeedbackEntry stored = entry;
    stored.run_id = run_id;
    json line = stored;
    line.erase("run_id");
    fs_util::append_line(execution.dir() / FEEDBACK_FILE, line.dump());
    execution.event("feedback_recorded", { { "rating", to_string(stored.rating) } });
    return stored;
}


std::vector<PaperRecord> Orchestrator::candidates(const std::string &run_id) const {
    const auto path = checked_dir(run_id) / CANDIDATES_FILE;
    return decode_lines<PaperRecord>(read_jsonl(path), path);
}


std::vector<ScreeningDecision> Orchestrator::decisions(const std::string &run_id) const {
    const auto path = checked_dir(run_id) / DECISIONS_FILE;
    return decode_lines<ScreeningDecision>(read_jsonl(path), path);
}


std::vector<FeedbackEntry> Orchestrator::feedback(const std::string &run_id) const {
    const auto path = checked_dir(run_id) / FEEDBACK_FILE;
    auto content = read_jsonl(path);
    for (auto &line : content.lines)
        line["run_id"] = run_id;
    return decode_lines<FeedbackEntry>(content, path);
}


std::vector<Event> Orchestrator::events(const std::string &run_id, long cursor) const {
    const auto path = checked_dir(run_id) / EVENTS_FILE;
    auto all = parse_events(read_jsonl(path), path);
    std::vector<Event> newer;
    for (auto &event : all) {
        if (event.seq > cursor)
            newer.push_back(std::move(event));
    }
    return newer;
}


std::vector<Event> Orchestrator::wait_events(const std::string &run_id, long cursor,
                                             std::chrono::milliseconds timeout) const {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        auto newer = events(run_id, cursor);
        const auto now = std::chrono::steady_clock::now();
        if (not newer.empty() or now >= deadline)
            return newer;
        // Short waits also pick up writers in other processes.
        std::unique_lock lock(event_mutex_);
        event_cv_.wait_for(lock, std::min<std::chrono::steady_clock::duration>(deadline - now, std::chrono::milliseconds(200)));
    }
}


std::string Orchestrator::report_markdown(const std::string &run_id) const {
    const auto dir = checked_dir(run_id);
    if (derive_state(dir, run_id).stage != Stage::finalized)
        throw StageIncomplete("run " + run_id + " has no report yet");
    return fs_util::read_file(dir / REPORT_MD_FILE);
}

} // namespace slr

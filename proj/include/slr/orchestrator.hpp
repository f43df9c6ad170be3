#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "slr/domain.hpp"
#include "slr/extraction.hpp"
#include "slr/llm.hpp"
#include "slr/planner.hpp"
#include "slr/retrieval.hpp"
#include "slr/synthesis.hpp"
#include "slr/util.hpp"

namespace slr {

enum class Stage { created, plan, retrieve, screen_title, screen_abstract, extract, synthesize, report, finalized, failed };

const char *to_string(Stage stage);
Stage parse_stage(std::string_view text);

/// The seven executable stages in order.
const std::vector<Stage> &pipeline_stages();


enum class PausePolicy { automatic, pause_after_each_stage };

/// "auto" or "pause_after_each_stage".
const char *to_string(PausePolicy policy);
PausePolicy parse_pause_policy(std::string_view text);


struct RunState {
    std::string run_id;
    ReviewProtocol protocol;
    /// Last completed stage, or created / finalized / failed.
    Stage stage = Stage::created;
    std::optional<Stage> next_stage;
    std::vector<Stage> completed;
    /// Stage name -> checkpoint marker.
    std::map<std::string, nlohmann::json> checkpoints;
    long event_cursor = 0;
    std::optional<FunnelCounts> funnel;
    std::optional<std::string> failure;
};

void to_json(nlohmann::json &json, const RunState &state);


struct AdvanceResult {
    Stage executed = Stage::created;
    /// "active", "paused_awaiting_human" or "finalized".
    std::string status;
    nlohmann::json summary;
};


struct Event {
    long seq = 0;
    std::string timestamp;
    std::string type;
    nlohmann::json data;
};

void to_json(nlohmann::json &json, const Event &event);


struct OrchestratorConfig {
    /// Runs live under <root>/runs, the response cache under <root>/cache/llm.
    std::filesystem::path root;
    std::shared_ptr<Provider> llm;
    GatewayOptions gateway;
    std::vector<ProviderDescriptor> providers;
    std::function<std::shared_ptr<Transport>(const ProviderDescriptor &)> transports;
    PausePolicy pause_policy = PausePolicy::automatic;
    int max_in_flight = 4;
    int question_count = DEFAULT_QUESTION_COUNT;
    ExtractionOptions extraction;
    Clock *clock = &SystemClock::instance();
    /// Called at "after_outputs:<stage>" and "after_marker:<stage>"; tests use
    /// it to simulate crashes.
    std::function<void(const std::string &)> crash_hook;
};


/// Owns the run store and drives runs through the stage machine. Mutations on
/// one run are serialized by an in-process mutex plus an flock on runs/<id>/.lock.
class Orchestrator {
public:
    explicit Orchestrator(OrchestratorConfig config);

    /// Throws ValidationError and leaves no directory behind for invalid input.
    std::string create_run(const ReviewProtocol &protocol);
    std::vector<std::string> list_runs() const;
    bool run_exists(const std::string &run_id) const;
    std::filesystem::path run_dir(const std::string &run_id) const;

    /// Read-only view; never modifies the store.
    RunState state(const std::string &run_id) const;

    /// Executes exactly the next stage. Throws InvalidTransition on finalized or
    /// failed runs and StageFailed when the stage raised (the run is then failed).
    AdvanceResult advance(const std::string &run_id);

    /// Advances until finalized, or for one stage under pause_after_each_stage.
    RunState run(const std::string &run_id);

    /// Repairs torn appends, drops markers whose outputs no longer match and
    /// clears a failure. A finalized run is returned untouched.
    RunState resume(const std::string &run_id);

    ScreeningDecision apply_override(const std::string &run_id, const std::string &decision_id, Verdict verdict,
                                     const std::string &rationale, const std::string &editor);
    PlanEditResult edit_plan(const std::string &run_id, const PlanEdit &edit);
    FeedbackEntry record_feedback(const std::string &run_id, const FeedbackEntry &entry);

    std::vector<PaperRecord> candidates(const std::string &run_id) const;
    std::vector<ScreeningDecision> decisions(const std::string &run_id) const;
    std::vector<FeedbackEntry> feedback(const std::string &run_id) const;
    /// Events with seq > cursor.
    std::vector<Event> events(const std::string &run_id, long cursor = 0) const;
    /// Like events() but blocks up to `timeout` while there is nothing new.
    std::vector<Event> wait_events(const std::string &run_id, long cursor, std::chrono::milliseconds timeout) const;
    /// Throws StageIncomplete before the report stage.
    std::string report_markdown(const std::string &run_id) const;

    const OrchestratorConfig &config() const { return config_; }

private:
    class Execution;

    std::filesystem::path checked_dir(const std::string &run_id) const;
    std::mutex &run_mutex(const std::string &run_id) const;
    void notify() const;

    OrchestratorConfig config_;
    std::shared_ptr<LlmGateway> gateway_;
    mutable std::mutex registry_mutex_;
    mutable std::map<std::string, std::unique_ptr<std::mutex>> run_mutexes_;
    mutable std::mutex event_mutex_;
    mutable std::condition_variable event_cv_;
};

} // namespace slr

#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "slr/domain.hpp"
#include "slr/extraction.hpp"
#include "slr/llm.hpp"

namespace slr {

/// Fixed synthesis text when no included study answers a question.
inline constexpr const char *NO_EVIDENCE = "No included study addressed this question.";

/// Persisted state the funnel is computed from.
struct RunSnapshot {
    /// Deduplicated candidates in candidates.jsonl order.
    std::vector<PaperRecord> candidates;
    /// decisions.jsonl in log order.
    std::vector<ScreeningDecision> decisions;
    /// Extractions committed by the latest extract stage.
    std::vector<ExtractionRecord> extractions;
};

/// identified counts every raw record (the provenance entries of the
/// deduplicated candidates). Throws StageIncomplete when a candidate has no
/// title decision or a title-included record has no abstract decision.
FunnelCounts compute_funnel(const RunSnapshot &snapshot);

/// Records included at the abstract stage (and therefore at title stage too),
/// in candidate order.
std::vector<PaperRecord> abstract_included(const RunSnapshot &snapshot);


struct SynthesisRow {
    std::string record_id;
    std::string title;
    Answer answer;
};


struct QuestionSynthesis {
    std::string question_id;
    std::string synthesis;
    std::string gap_notes;
    std::vector<std::string> citations;

    friend bool operator==(const QuestionSynthesis &, const QuestionSynthesis &) = default;
};


struct SynthesisReport {
    std::vector<QuestionSynthesis> questions;
    /// Trends and gaps across all questions; question_id is "overall".
    QuestionSynthesis overall;

    friend bool operator==(const SynthesisReport &, const SynthesisReport &) = default;
};

void to_json(nlohmann::json &json, const QuestionSynthesis &synthesis);
void from_json(const nlohmann::json &json, QuestionSynthesis &synthesis);
void to_json(nlohmann::json &json, const SynthesisReport &report);
void from_json(const nlohmann::json &json, SynthesisReport &report);

/// Citations, and any record id mentioned in the text, must be row ids;
/// violations are retried and end in SchemaViolation.
QuestionSynthesis synthesize_question(LlmGateway &gateway, const ResearchQuestion &question,
                                      const std::vector<SynthesisRow> &rows);

/// Per-question syntheses over `extractions` plus one overall trends-and-gaps call.
SynthesisReport synthesize_review(LlmGateway &gateway, const ReviewProtocol &protocol,
                                  const std::vector<PaperRecord> &included,
                                  const std::vector<ExtractionRecord> &extractions);


/// A human edit or override for the audit appendix.
struct AuditEntry {
    std::string timestamp;
    std::string kind;
    std::string editor;
    std::string detail;
};


struct ReportInput {
    ReviewProtocol protocol;
    FunnelCounts funnel;
    /// Finally included records with their extractions, in inclusion order.
    std::vector<PaperRecord> included;
    std::vector<ExtractionRecord> extractions;
    SynthesisReport synthesis;
    std::vector<AuditEntry> audit;
};


struct ReportArtifacts {
    std::string markdown;
    std::string csv;
    std::string funnel_json;
};

/// Pure and byte-stable for identical input.
ReportArtifacts render_report(const ReportInput &input);

} // namespace slr

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "slr/query.hpp"

namespace slr {

enum class ReplicationMode { paper_faithful, extended };
enum class ScreeningStage { title, abstract, fulltext };
enum class Verdict { include, exclude, needs_judge };
enum class Actor { rule, model, human };
enum class Rating { NotSatisfied, Fair, Satisfactory, Good, VeryGood, Excellent };

const char *to_string(ReplicationMode mode);
const char *to_string(ScreeningStage stage);
const char *to_string(Verdict verdict);
const char *to_string(Actor actor);
/// Display label, e.g. "Not Satisfied".
const char *to_string(Rating rating);

ReplicationMode parse_replication_mode(std::string_view text);
ScreeningStage parse_screening_stage(std::string_view text);
Verdict parse_verdict(std::string_view text);
Actor parse_actor(std::string_view text);
/// Accepts the display label ("Very Good") or the enumerator name ("VeryGood").
/// Throws UnknownRating otherwise.
Rating parse_rating(std::string_view text);

/// All six labels, lowest to highest.
const std::vector<Rating> &all_ratings();


/// Inclusive calendar-year bounds; either side may be open.
struct YearRange {
    std::optional<int> start;
    std::optional<int> end;

    bool is_open() const { return not start and not end; }
    bool contains(int year) const { return (not start or year >= *start) and (not end or year <= *end); }

    friend bool operator==(const YearRange &, const YearRange &) = default;
};

/// Parses "A:B", "A:" or ":B".
YearRange parse_year_range(std::string_view text);
std::string format_year_range(const YearRange &range);


struct ResearchQuestion {
    std::string id;
    std::string text;
    std::string purpose;

    friend bool operator==(const ResearchQuestion &, const ResearchQuestion &) = default;
};


struct CriteriaSet {
    std::vector<std::string> include_keywords;
    std::vector<std::string> exclude_keywords;
    bool require_abstract = false;
    std::vector<std::string> language_allowlist;

    friend bool operator==(const CriteriaSet &, const CriteriaSet &) = default;
};


struct ReviewProtocol {
    std::string topic;
    std::string objective;
    std::vector<ResearchQuestion> questions;
    /// Absent until the planner (or a human edit) supplies one.
    std::optional<Query> query;
    YearRange year_range;
    int max_records = 10;
    CriteriaSet criteria;
    ReplicationMode replication_mode = ReplicationMode::paper_faithful;

    friend bool operator==(const ReviewProtocol &, const ReviewProtocol &) = default;
};

/// Checks the structural invariants: non-empty topic, max_records >= 1,
/// ordered year range, unique non-empty question ids, non-empty question texts, disjoint
/// include/exclude lists. Keywords are compared after normalize_title().
void validate(const ReviewProtocol &protocol);


struct PaperRecord {
    std::string record_id;
    std::string title;
    std::vector<std::string> authors;
    std::string url;
    std::string venue;
    std::optional<std::string> doi;
    std::string paper_type;
    std::optional<std::string> affiliation_country;
    std::optional<std::string> affiliation_institution;
    std::optional<int> year;
    std::optional<std::string> abstract;
    std::optional<std::string> fulltext;
    std::string source_provider;
    std::vector<std::string> provenance;

    friend bool operator==(const PaperRecord &, const PaperRecord &) = default;
};


struct ScreeningDecision {
    std::string decision_id;
    std::string record_id;
    ScreeningStage stage = ScreeningStage::title;
    Verdict verdict = Verdict::needs_judge;
    Actor actor = Actor::rule;
    std::string rationale;
    std::string timestamp;

    friend bool operator==(const ScreeningDecision &, const ScreeningDecision &) = default;
};


/// PRISMA-style counts. Construction enforces
/// identified >= deduplicated >= title_included >= abstract_included >= final_included.
class FunnelCounts {
public:
    FunnelCounts() = default;
    FunnelCounts(long identified, long deduplicated, long title_included, long abstract_included,
                 long final_included);

    long identified() const noexcept { return identified_; }
    long deduplicated() const noexcept { return deduplicated_; }
    long title_included() const noexcept { return title_included_; }
    long abstract_included() const noexcept { return abstract_included_; }
    long final_included() const noexcept { return final_included_; }

    friend bool operator==(const FunnelCounts &, const FunnelCounts &) = default;

private:
    long identified_ = 0;
    long deduplicated_ = 0;
    long title_included_ = 0;
    long abstract_included_ = 0;
    long final_included_ = 0;
};


struct FeedbackEntry {
    std::string run_id;
    Rating rating = Rating::Satisfactory;
    std::string comment;
    std::string role;

    friend bool operator==(const FeedbackEntry &, const FeedbackEntry &) = default;
};


/// Lowercase, punctuation to spaces, whitespace collapsed and trimmed.
/// Non-ASCII letters are kept; Unicode punctuation and spacing become spaces.
std::string normalize_title(std::string_view text);

/// Strips resolver prefixes (https://doi.org/, doi:) and lowercases. Returns
/// nullopt when the result does not look like a DOI ("10." prefix).
std::optional<std::string> normalize_doi(std::string_view text);

/// Content hash of (normalized title, doi or empty); stable across runs.
std::string make_record_id(std::string_view title, const std::optional<std::string> &doi);

/// DOI is authoritative when both records carry one. Otherwise the normalized
/// titles must match (and be non-empty) and the years must be equal or at least
/// one absent.
bool records_equivalent(const PaperRecord &a, const PaperRecord &b);

/// Field-wise union preferring `a`; provenance is a's followed by b's.
/// Throws NotEquivalent when !records_equivalent(a, b).
PaperRecord merge_records(const PaperRecord &a, const PaperRecord &b);

/// The same union without the equivalence precondition. Used when folding a
/// duplicate cluster whose members are only transitively equivalent.
PaperRecord merge_record_fields(const PaperRecord &a, const PaperRecord &b);


void to_json(nlohmann::json &json, const YearRange &range);
void from_json(const nlohmann::json &json, YearRange &range);
void to_json(nlohmann::json &json, const ResearchQuestion &question);
void from_json(const nlohmann::json &json, ResearchQuestion &question);
void to_json(nlohmann::json &json, const CriteriaSet &criteria);
void from_json(const nlohmann::json &json, CriteriaSet &criteria);
void to_json(nlohmann::json &json, const ReviewProtocol &protocol);
void from_json(const nlohmann::json &json, ReviewProtocol &protocol);
void to_json(nlohmann::json &json, const PaperRecord &record);
void from_json(const nlohmann::json &json, PaperRecord &record);
void to_json(nlohmann::json &json, const ScreeningDecision &decision);
void from_json(const nlohmann::json &json, ScreeningDecision &decision);
void to_json(nlohmann::json &json, const FunnelCounts &counts);
void from_json(const nlohmann::json &json, FunnelCounts &counts);
void to_json(nlohmann::json &json, const FeedbackEntry &entry);
void from_json(const nlohmann::json &json, FeedbackEntry &entry);

} // namespace slr

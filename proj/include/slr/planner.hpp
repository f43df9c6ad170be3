#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "slr/domain.hpp"
#include "slr/llm.hpp"
#include "slr/util.hpp"

namespace slr {

inline constexpr int DEFAULT_QUESTION_COUNT = 2;
inline constexpr int QUERY_PROMPT_BUDGET = 2;

/// Asks the model for exactly `count` (2..6) questions; ids come back as
/// RQ1..RQn in model order.
std::vector<ResearchQuestion> generate_questions(LlmGateway &gateway, const std::string &topic,
                                                 const std::string &objective, int count = DEFAULT_QUESTION_COUNT);

struct PlannedQuery {
    Query query;
    /// Model text the accepted query was parsed from.
    std::string raw_text;
    int prompts_used = 1;
    std::vector<std::string> warnings;
};

/// In extended mode an OR-only answer is re-prompted once; if the second
/// answer still has no AND it is accepted with a warning.
PlannedQuery generate_search_query(LlmGateway &gateway, const std::string &topic, const std::string &objective,
                                   const std::vector<ResearchQuestion> &questions, ReplicationMode mode);

/// "RQ1: text (purpose: ...)" per line; shared by several prompts.
std::string format_questions(const std::vector<ResearchQuestion> &questions);


struct PlanEdit {
    /// One of questions, query, year_range, max_records, criteria.
    std::string field;
    nlohmann::json value;
    std::string editor;
};


struct PlanAudit {
    std::string field;
    nlohmann::json old_value;
    nlohmann::json new_value;
    std::string editor;
    std::string timestamp;
};


struct PlanEditResult {
    ReviewProtocol protocol;
    PlanAudit audit;
};

/// `questions` takes either a full list or one question object (matched by id).
/// `query` takes query text or an AST object; `year_range` takes "A:B".
/// Throws SyntaxError for bad query text and ValidationError for anything that
/// would break a protocol invariant; the input protocol is never modified.
PlanEditResult apply_plan_edit(const ReviewProtocol &protocol, const PlanEdit &edit, Clock &clock);

} // namespace slr

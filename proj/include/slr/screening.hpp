#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "slr/domain.hpp"
#include "slr/llm.hpp"
#include "slr/util.hpp"

namespace slr {

struct RuleVerdict {
    Verdict verdict = Verdict::needs_judge;
    std::string rationale;
};

/// Rationale used when the model judge fails; the record stays needs_judge.
inline constexpr const char *JUDGE_UNAVAILABLE = "judge unavailable";

/// Deterministic criteria. Keywords match as substrings of the normalized
/// stage text (title, or title and abstract). Exclusion is checked first:
/// exclude keyword, then year outside range, then a missing abstract when
/// required at the abstract stage. Otherwise the first matching include
/// keyword includes; no match yields needs_judge.
RuleVerdict apply_rules(const PaperRecord &record, const CriteriaSet &criteria, const YearRange &year_range,
                        ScreeningStage stage);


/// Assigns a decision id and persists the decision; returns the stored copy.
using DecisionSink = std::function<ScreeningDecision(ScreeningDecision)>;

struct ScreeningOptions {
    int max_in_flight = 4;
};

/// One decision per input record, persisted through `sink` in input order.
/// Only the title and abstract stages are screened.
std::vector<ScreeningDecision> screen_stage(const std::vector<PaperRecord> &records, const ReviewProtocol &protocol,
                                            ScreeningStage stage, LlmGateway &gateway, const DecisionSink &sink,
                                            Clock &clock, const ScreeningOptions &options = {});


/// A human decision superseding `original`. Throws ValidationError for a
/// needs_judge verdict or an exclude without rationale.
ScreeningDecision make_override(const ScreeningDecision &original, Verdict verdict, const std::string &rationale,
                                Clock &clock);


using DecisionKey = std::pair<std::string, ScreeningStage>;

/// Per (record, stage): the latest human decision, else the latest other one.
/// `decisions` is in log order.
std::map<DecisionKey, ScreeningDecision> effective_decisions(const std::vector<ScreeningDecision> &decisions);

/// Records (in input order) whose effective decision at `stage` is include.
std::vector<PaperRecord> included_records(const std::vector<PaperRecord> &records,
                                          const std::map<DecisionKey, ScreeningDecision> &effective,
                                          ScreeningStage stage);

} // namespace slr

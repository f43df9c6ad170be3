#include "slr/screening.hpp"

#include "slr/errors.hpp"
#include "slr/planner.hpp"

namespace slr {

namespace {

std::string stage_text(const PaperRecord &record, ScreeningStage stage) {
    std::string text = record.title;
    if (stage != ScreeningStage::title and record.abstract)
        text += " " + *record.abstract;
    return normalize_title(text);
}


std::string keyword_list(const std::vector<std::string> &keywords) {
    return keywords.empty() ? "none" : join(keywords, "; ");
}

} // unnamed namespace


RuleVerdict apply_rules(const PaperRecord &record, const CriteriaSet &criteria, const YearRange &year_range,
                        ScreeningStage stage) {
    const auto text = stage_text(record, stage);
    for (const auto &keyword : criteria.exclude_keywords) {
        const auto needle = normalize_title(keyword);
        if (not needle.empty() and text.find(needle) != std::string::npos)
            return { Verdict::exclude, "exclude_keyword: " + keyword };
    }
    if (record.year and not year_range.contains(*record.year))
        return { Verdict::exclude,
                 "year_out_of_range: " + std::to_string(*record.year) + " not in " + format_year_range(year_range) };
    if (stage == ScreeningStage::abstract and criteria.require_abstract
        and (not record.abstract or trim(*record.abstract).empty()))
        return { Verdict::exclude, "require_abstract: no abstract available" };
    for (const auto &keyword : criteria.include_keywords) {
        const auto needle = normalize_title(keyword);
        if (not needle.empty() and text.find(needle) != std::string::npos)
            return { Verdict::include, "include_keyword: " + keyword };
    }
    return { Verdict::needs_judge, "no rule matched" };
}


std::vector<ScreeningDecision> screen_stage(const std::vector<PaperRecord> &records, const ReviewProtocol &protocol,
                                            ScreeningStage stage, LlmGateway &gateway, const DecisionSink &sink,
                                            Clock &clock, const ScreeningOptions &options) {
    if (stage == ScreeningStage::fulltext)
        throw ValidationError("full-text screening is part of extraction");

    const auto template_id = stage == ScreeningStage::title ? TemplateId::screen_title : TemplateId::screen_abstract;
    const auto questions = format_questions(protocol.questions);

    std::vector<RuleVerdict> verdicts(records.size());
    std::vector<Actor> actors(records.size(), Actor::rule);
    parallel_for(records.size(), options.max_in_flight, [&](std::size_t i) {
        const auto &record = records[i];
        verdicts[i] = apply_rules(record, protocol.criteria, protocol.year_range, stage);
        if (verdicts[i].verdict != Verdict::needs_judge)
            return;

        Variables variables{ { "topic", protocol.topic },
                             { "questions", questions },
                             { "include_criteria", keyword_list(protocol.criteria.include_keywords) },
                             { "exclude_criteria", keyword_list(protocol.criteria.exclude_keywords) },
                             { "title", record.title } };
        if (template_id == TemplateId::screen_abstract)
            variables["abstract"] = record.abstract.value_or("(no abstract available)");
        try {
            const auto result = gateway.run(template_id, variables);
            verdicts[i] = { parse_verdict(result.value["verdict"].get<std::string>()),
                            trim(result.value["rationale"].get<std::string>()) };
            actors[i] = Actor::model;
        } catch (const std::exception &) {
            verdicts[i] = { Verdict::needs_judge, JUDGE_UNAVAILABLE };
        }
    });

    std::vector<ScreeningDecision> decisions;
    decisions.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        ScreeningDecision decision;
        decision.record_id = records[i].record_id;
        decision.stage = stage;
        decision.verdict = verdicts[i].verdict;
        decision.actor = actors[i];
        decision.rationale = verdicts[i].rationale;
        decision.timestamp = format_timestamp(clock.now());
        decisions.push_back(sink(std::move(decision)));
    }
    return decisions;
}


ScreeningDecision make_override(const ScreeningDecision &original, Verdict verdict, const std::string &rationale,
                                Clock &clock) {
    if (verdict == Verdict::needs_judge)
        throw ValidationError("an override must include or exclude");
    if (verdict == Verdict::exclude and trim(rationale).empty())
        throw ValidationError("an exclude override needs a rationale");
    ScreeningDecision decision;
    decision.record_id = original.record_id;
    decision.stage = original.stage;
    decision.verdict = verdict;
    decision.actor = Actor::human;
    decision.rationale = trim(rationale);
    decision.timestamp = format_timestamp(clock.now());
    return decision;
}


std::map<DecisionKey, ScreeningDecision> effective_decisions(const std::vector<ScreeningDecision> &decisions) {
    std::map<DecisionKey, ScreeningDecision> effective;
    for (const auto &decision : decisions) {
        const DecisionKey key{ decision.record_id, decision.stage };
        const auto found = effective.find(key);
        if (found == effective.end())
            effective.emplace(key, decision);
        else if (decision.actor == Actor::human or found->second.actor != Actor::human)
            found->second = decision;
    }
    return effective;
}


std::vector<PaperRecord> included_records(const std::vector<PaperRecord> &records,
                                          const std::map<DecisionKey, ScreeningDecision> &effective,
                                          ScreeningStage stage) {
    std::vector<PaperRecord> included;
    for (const auto &record : records) {
        const auto found = effective.find({ record.record_id, stage });
        if (found != effective.end() and found->second.verdict == Verdict::include)
            included.push_back(record);
    }
    return included;
}

} // namespace slr

#include "slr/planner.hpp"

#include <set>

#include "slr/errors.hpp"

namespace slr {

using nlohmann::json;

namespace {

constexpr const char *AND_GUIDANCE
    = "Join the distinct concepts of the review with AND so that every retrieved study covers all of them.\n";

} // unnamed namespace


std::vector<ResearchQuestion> generate_questions(LlmGateway &gateway, const std::string &topic,
                                                 const std::string &objective, int count) {
    if (trim(topic).empty())
        throw ValidationError("topic must be non-empty");
    if (count < 2 or count > 6)
        throw ValidationError("question count must be within 2..6");

    const auto check = [count](const json &value) -> std::optional<std::string> {
        const auto &questions = value["questions"];
        if (questions.size() != static_cast<std::size_t>(count))
            return "expected exactly " + std::to_string(count) + " questions, got " + std::to_string(questions.size());
        return std::nullopt;
    };
    const auto result = gateway.run(TemplateId::gen_questions,
                                    { { "topic", topic }, { "objective", objective }, { "count", std::to_string(count) } },
                                    check);

    std::vector<ResearchQuestion> questions;
    for (const auto &item : result.value["questions"]) {
        questions.push_back({ "RQ" + std::to_string(questions.size() + 1), trim(item["text"].get<std::string>()),
                              trim(item["purpose"].get<std::string>()) });
    }
    return questions;
}


std::string format_questions(const std::vector<ResearchQuestion> &questions) {
    std::string formatted;
    for (const auto &question : questions) {
        formatted += question.id + ": " + question.text;
        if (not question.purpose.empty())
            formatted += " (purpose: " + question.purpose + ")";
        formatted += "\n";
    }
    return formatted;
}


PlannedQuery generate_search_query(LlmGateway &gateway, const std::string &topic, const std::string &objective,
                                   const std::vector<ResearchQuestion> &questions, ReplicationMode mode) {
    if (questions.empty())
        throw ValidationError("search query generation needs at least one research question");

    std::string guidance;
    if (mode == ReplicationMode::extended)
        guidance = AND_GUIDANCE;

    PlannedQuery planned{ Query::term("placeholder"), "", 0, {} };
    for (int prompt = 1; prompt <= QUERY_PROMPT_BUDGET; ++prompt) {
        const auto result = gateway.run(TemplateId::gen_query, { { "topic", topic },
                                                                 { "objective", objective },
                                                                 { "questions", format_questions(questions) },
                                                                 { "guidance", guidance } });
        planned.raw_text = result.value["query"].get<std::string>();
        planned.query = parse_query(planned.raw_text);
        planned.prompts_used = prompt;

        if (mode == ReplicationMode::paper_faithful or planned.query.contains(Query::Kind::And))
            return planned;
        guidance = std::string(AND_GUIDANCE) + "The previous search string " + planned.raw_text
                   + " contains no AND operator; rewrite it so that it does.\n";
    }

    planned.warnings.push_back("accepted search string without AND after " + std::to_string(QUERY_PROMPT_BUDGET)
                               + " prompts: " + print_query(planned.query));
    return planned;
}


namespace {

json question_list_json(const std::vector<ResearchQuestion> &questions) {
    return json(questions);
}

} // unnamed namespace


PlanEditResult apply_plan_edit(const ReviewProtocol &protocol, const PlanEdit &edit, Clock &clock) {
    ReviewProtocol updated = protocol;
    PlanAudit audit{ edit.field, nullptr, nullptr, edit.editor, format_timestamp(clock.now()) };

    try {
        if (edit.field == "questions") {
            if (edit.value.is_array()) {
                audit.old_value = question_list_json(protocol.questions);
                updated.questions = edit.value.get<std::vector<ResearchQuestion>>();
                audit.new_value = question_list_json(updated.questions);
            } else if (edit.value.is_object()) {
                const auto id = edit.value.at("id").get<std::string>();
                bool found = false;
                for (auto &question : updated.questions) {
                    if (question.id != id)
                        continue;
                    audit.old_value = question;
                    if (edit.value.contains("text"))
                        question.text = edit.value["text"].get<std::string>();
                    if (edit.value.contains("purpose"))
                        question.purpose = edit.value["purpose"].get<std::string>();
                    audit.new_value = question;
                    found = true;
                }
                if (not found)
                    throw ValidationError("no research question with id " + id);
            } else
                throw ValidationError("questions edit needs a list of questions or one question object");
        } else if (edit.field == "query") {
            if (protocol.query)
                audit.old_value = print_query(*protocol.query);
            updated.query = query_from_json(edit.value);
            audit.new_value = print_query(*updated.query);
        } else if (edit.field == "year_range") {
            audit.old_value = protocol.year_range;
            updated.year_range = edit.value.get<YearRange>();
            audit.new_value = updated.year_range;
        } else if (edit.field == "max_records") {
            if (not edit.value.is_number_integer())
                throw ValidationError("max_records must be an integer");
            audit.old_value = protocol.max_records;
            updated.max_records = edit.value.get<int>();
            audit.new_value = updated.max_records;
        } else if (edit.field == "criteria") {
            audit.old_value = protocol.criteria;
            updated.criteria = edit.value.get<CriteriaSet>();
            audit.new_value = updated.criteria;
        } else
            throw ValidationError("field \"" + edit.field
                                  + "\" is not editable; use questions, query, year_range, max_records or criteria");
    } catch (const nlohmann::json::exception &error) {
        throw ValidationError("malformed value for " + edit.field + ": " + error.what());
    }

    validate(updated);
    return { std::move(updated), std::move(audit) };
}

} // namespace slr

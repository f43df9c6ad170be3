#include "slr/synthesis.hpp"

#include <map>
#include <regex>
#include <set>

#include "slr/errors.hpp"
#include "slr/screening.hpp"
#include "slr/util.hpp"

namespace slr {

using nlohmann::json;

FunnelCounts compute_funnel(const RunSnapshot &snapshot) {
    const auto effective = effective_decisions(snapshot.decisions);
    long identified = 0;
    for (const auto &record : snapshot.candidates)
        identified += static_cast<long>(record.provenance.size());

    long title_included = 0, abstract_count = 0;
    std::set<std::string> abstract_ids;
    for (const auto &record : snapshot.candidates) {
        const auto title = effective.find({ record.record_id, ScreeningStage::title });
        if (title == effective.end())
            throw StageIncomplete("record " + record.record_id + " has no title-stage decision");
        if (title->second.verdict != Verdict::include)
            continue;
        ++title_included;
        const auto abstract = effective.find({ record.record_id, ScreeningStage::abstract });
        if (abstract == effective.end())
            throw StageIncomplete("record " + record.record_id + " has no abstract-stage decision");
        if (abstract->second.verdict == Verdict::include) {
            ++abstract_count;
            abstract_ids.insert(record.record_id);
        }
    }

    std::set<std::string> extracted;
    for (const auto &extraction : snapshot.extractions) {
        if (abstract_ids.contains(extraction.record_id))
            extracted.insert(extraction.record_id);
    }
    return FunnelCounts(identified, static_cast<long>(snapshot.candidates.size()), title_included, abstract_count,
                        static_cast<long>(extracted.size()));
}


std::vector<PaperRecord> abstract_included(const RunSnapshot &snapshot) {
    const auto effective = effective_decisions(snapshot.decisions);
    std::vector<PaperRecord> included;
    for (const auto &record : snapshot.candidates) {
        const auto title = effective.find({ record.record_id, ScreeningStage::title });
        const auto abstract = effective.find({ record.record_id, ScreeningStage::abstract });
        if (title != effective.end() and title->second.verdict == Verdict::include and abstract != effective.end()
            and abstract->second.verdict == Verdict::include)
            included.push_back(record);
    }
    return included;
}


void to_json(json &j, const QuestionSynthesis &synthesis) {
    j = json{ { "question_id", synthesis.question_id },
              { "synthesis", synthesis.synthesis },
              { "gap_notes", synthesis.gap_notes },
              { "citations", synthesis.citations } };
}


void from_json(const json &j, QuestionSynthesis &synthesis) {
    try {
        synthesis.question_id = j.at("question_id").get<std::string>();
        synthesis.synthesis = j.at("synthesis").get<std::string>();
        synthesis.gap_notes = j.at("gap_notes").get<std::string>();
        synthesis.citations = j.at("citations").get<std::vector<std::string>>();
    } catch (const json::exception &error) {
        throw ValidationError(std::string("malformed synthesis: ") + error.what());
    }
}


void to_json(json &j, const SynthesisReport &report) {
    j = json{ { "questions", report.questions }, { "overall", report.overall } };
}


void from_json(const json &j, SynthesisReport &report) {
    try {
        report.questions = j.at("questions").get<std::vector<QuestionSynthesis>>();
        report.overall = j.at("overall").get<QuestionSynthesis>();
    } catch (const json::exception &error) {
        throw ValidationError(std::string("malformed synthesis report: ") + error.what());
    }
}


namespace {

const std::regex &record_id_pattern() {
    static const std::regex pattern("rec_[0-9a-f]{16}(-[0-9]+)?");
    return pattern;
}


SemanticCheck citation_allowlist(std::set<std::string> allowed) {
    return [allowed = std::move(allowed)](const json &value) -> std::optional<std::string> {
        for (const auto &citation : value["citations"]) {
            if (not allowed.contains(citation.get<std::string>()))
                return "citation " + citation.get<std::string>() + " is not one of the allowed record ids";
        }
        for (const auto *field : { "synthesis", "gap_notes" }) {
            const auto text = value[field].get<std::string>();
            for (std::sregex_iterator it(text.begin(), text.end(), record_id_pattern()), end; it != end; ++it) {
                if (not allowed.contains(it->str()))
                    return field + std::string(" mentions ") + it->str() + ", which is not an allowed record id";
            }
        }
        return std::nullopt;
    };
}


QuestionSynthesis from_model(const std::string &question_id, const json &value) {
    return { question_id, trim(value["synthesis"].get<std::string>()), trim(value["gap_notes"].get<std::string>()),
             value["citations"].get<std::vector<std::string>>() };
}

} // unnamed namespace


QuestionSynthesis synthesize_question(LlmGateway &gateway, const ResearchQuestion &question,
                                      const std::vector<SynthesisRow> &rows) {
    if (rows.empty())
        return { question.id, NO_EVIDENCE, "", {} };

    json evidence = json::array();
    std::set<std::string> allowed;
    std::vector<std::string> ids;
    for (const auto &row : rows) {
        if (trim(row.answer.answer).empty())
            throw ValidationError("record " + row.record_id + " has no answer for " + question.id);
        evidence.push_back({ { "record_id", row.record_id },
                             { "title", row.title },
                             { "answer", row.answer.answer },
                             { "support_quote", row.answer.support_quote },
                             { "confidence", to_string(row.answer.confidence) } });
        if (allowed.insert(row.record_id).second)
            ids.push_back(row.record_id);
    }
    const auto result = gateway.run(TemplateId::synthesize,
                                    { { "question", question.id + ": " + question.text },
                                      { "rows", evidence.dump(2) },
                                      { "allowed_ids", join(ids, ", ") } },
                                    citation_allowlist(allowed));
    return from_model(question.id, result.value);
}


SynthesisReport synthesize_review(LlmGateway &gateway, const ReviewProtocol &protocol,
                                  const std::vector<PaperRecord> &included,
                                  const std::vector<ExtractionRecord> &extractions) {
    std::map<std::string, const ExtractionRecord *> by_id;
    for (const auto &extraction : extractions)
        by_id[extraction.record_id] = &extraction;

    SynthesisReport report;
    for (const auto &question : protocol.questions) {
        std::vector<SynthesisRow> rows;
        for (const auto &record : included) {
            const auto extraction = by_id.find(record.record_id);
            if (extraction == by_id.end())
                continue;
            const auto answer = extraction->second->answers.find(question.id);
            if (answer != extraction->second->answers.end() and not trim(answer->second.answer).empty())
                rows.push_back({ record.record_id, record.title, answer->second });
        }
        report.questions.push_back(synthesize_question(gateway, question, rows));
    }

    std::set<std::string> allowed;
    std::vector<std::string> ids;
    for (const auto &record : included) {
        if (by_id.contains(record.record_id) and allowed.insert(record.record_id).second)
            ids.push_back(record.record_id);
    }
    if (ids.empty()) {
        report.overall = { "overall", NO_EVIDENCE, "", {} };
        return report;
    }
    json per_question = json::array();
    for (const auto &synthesis : report.questions)
        per_question.push_back(synthesis);
    const auto result = gateway.run(TemplateId::synthesize,
                                    { { "question", "Overall trends and gaps across all research questions" },
                                      { "rows", per_question.dump(2) },
                                      { "allowed_ids", join(ids, ", ") } },
                                    citation_allowlist(allowed));
    report.overall = from_model("overall", result.value);
    return report;
}


// ---------------------------------------------------------------------------
// Rendering

namespace {

std::string cell(std::string_view text) {
    std::string escaped;
    for (const char ch : text) {
        if (ch == '|')
            escaped += "\\|";
        else if (ch == '\n' or ch == '\r')
            escaped += ' ';
        else
            escaped += ch;
    }
    return escaped.empty() ? "-" : escaped;
}


std::string row(const std::vector<std::string> &cells) {
    std::string line = "|";
    for (const auto &value : cells)
        line += " " + cell(value) + " |";
    return line + "\n";
}


std::string separator(std::size_t columns) {
    std::string line = "|";
    for (std::size_t i = 0; i < columns; ++i)
        line += " --- |";
    return line + "\n";
}


std::string list_or(const std::vector<std::string> &values, const char *empty) {
    return values.empty() ? empty : join(values, "; ");
}

} // unnamed namespace


ReportArtifacts render_report(const ReportInput &input) {
    const auto &protocol = input.protocol;
    const auto &funnel = input.funnel;
    std::string md;

    md += "# Systematic literature review: " + protocol.topic + "\n\n";

    md += "## Protocol\n\n";
    md += "- Topic: " + protocol.topic + "\n";
    md += "- Objective: " + (protocol.objective.empty() ? std::string("-") : protocol.objective) + "\n";
    md += std::string("- Replication mode: ") + to_string(protocol.replication_mode) + "\n";
    md += "- Search string: `" + (protocol.query ? print_query(*protocol.query) : std::string("(none)")) + "`\n";
    md += "- Publication years: " + format_year_range(protocol.year_range) + "\n";
    md += "- Maximum records per provider: " + std::to_string(protocol.max_records) + "\n";
    md += "- Include keywords: " + list_or(protocol.criteria.include_keywords, "none") + "\n";
    md += "- Exclude keywords: " + list_or(protocol.criteria.exclude_keywords, "none") + "\n";
    md += std::string("- Abstract required: ") + (protocol.criteria.require_abstract ? "yes" : "no") + "\n";
    md += "- Languages: " + list_or(protocol.criteria.language_allowlist, "any") + "\n\n";

    md += "### Research questions\n\n";
    md += row({ "ID", "Question", "Purpose" }) + separator(3);
    for (const auto &question : protocol.questions)
        md += row({ question.id, question.text, question.purpose });
    md += "\n";

    md += "## Funnel\n\n";
    md += row({ "Stage", "Records" }) + separator(2);
    md += row({ "Identified", std::to_string(funnel.identified()) });
    md += row({ "After deduplication", std::to_string(funnel.deduplicated()) });
    md += row({ "Included at title screening", std::to_string(funnel.title_included()) });
    md += row({ "Included at abstract screening", std::to_string(funnel.abstract_included()) });
    md += row({ "Finally included", std::to_string(funnel.final_included()) });
    md += "\n";

    md += "## Included studies\n\n";
    md += row({ "#", "Record", "Title", "Authors", "URL", "Journal", "DOI", "Paper type", "Affiliation country",
                "Affiliation institution", "Year" })
          + separator(11);
    for (std::size_t i = 0; i < input.included.size(); ++i) {
        const auto &record = input.included[i];
        md += row({ std::to_string(i + 1), record.record_id, record.title, join(record.authors, ", "), record.url,
                    record.venue, record.doi.value_or(""), record.paper_type, record.affiliation_country.value_or(""),
                    record.affiliation_institution.value_or(""), record.year ? std::to_string(*record.year) : "" });
    }
    md += "\n";

    std::map<std::string, const ExtractionRecord *> extraction_of;
    for (const auto &extraction : input.extractions)
        extraction_of[extraction.record_id] = &extraction;

    md += "## Extracted data\n\n";
    if (input.included.empty())
        md += "No study was included.\n\n";
    for (const auto &record : input.included) {
        md += "### " + record.title + " (" + record.record_id + ")\n\n";
        const auto found = extraction_of.find(record.record_id);
        if (found == extraction_of.end()) {
            md += "No extraction available.\n\n";
            continue;
        }
        md += "Summary: " + found->second->summary + "\n\n";
        md += row({ "Question", "Answer", "Support quote", "Confidence" }) + separator(4);
        for (const auto &question : protocol.questions) {
            const auto answer = found->second->answers.find(question.id);
            if (answer == found->second->answers.end())
                md += row({ question.id, "", "", "" });
            else
                md += row({ question.id, answer->second.answer, answer->second.support_quote,
                            to_string(answer->second.confidence) });
        }
        md += "\n";
    }

    md += "## Synthesis\n\n";
    std::map<std::string, const QuestionSynthesis *> synthesis_of;
    for (const auto &synthesis : input.synthesis.questions)
        synthesis_of[synthesis.question_id] = &synthesis;
    for (const auto &question : protocol.questions) {
        md += "### " + question.id + ": " + question.text + "\n\n";
        const auto found = synthesis_of.find(question.id);
        if (found == synthesis_of.end()) {
            md += std::string(NO_EVIDENCE) + "\n\n";
            continue;
        }
        md += found->second->synthesis + "\n\n";
        if (not found->second->gap_notes.empty())
            md += "Gaps: " + found->second->gap_notes + "\n\n";
        md += "Cited records: " + list_or(found->second->citations, "none") + "\n\n";
    }
    md += "### Trends and gaps\n\n";
    md += (input.synthesis.overall.synthesis.empty() ? std::string(NO_EVIDENCE) : input.synthesis.overall.synthesis)
          + "\n\n";
    if (not input.synthesis.overall.gap_notes.empty())
        md += "Gaps: " + input.synthesis.overall.gap_notes + "\n\n";

    md += "## Audit appendix\n\n";
    if (input.audit.empty())
        md += "No human edits or overrides were recorded.\n";
    else {
        md += row({ "Time", "Change", "Editor", "Detail" }) + separator(4);
        for (const auto &entry : input.audit)
            md += row({ entry.timestamp, entry.kind, entry.editor, entry.detail });
    }

    ReportArtifacts artifacts;
    artifacts.markdown = std::move(md);
    artifacts.csv = to_csv(tabulate(input.extractions, input.included, protocol));
    artifacts.funnel_json = json(funnel).dump(2) + "\n";
    return artifacts;
}

} // namespace slr

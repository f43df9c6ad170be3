#include "slr/extraction.hpp"

#include <set>

#include "slr/errors.hpp"
#include "slr/planner.hpp"
#include "slr/util.hpp"

namespace slr {

using nlohmann::json;

const char *to_string(Confidence confidence) {
    switch (confidence) {
    case Confidence::low: return "low";
    case Confidence::medium: return "medium";
    case Confidence::high: return "high";
    }
    return "?";
}


Confidence parse_confidence(std::string_view text) {
    if (text == "low")
        return Confidence::low;
    if (text == "medium")
        return Confidence::medium;
    if (text == "high")
        return Confidence::high;
    throw ValidationError("unknown confidence \"" + std::string(text) + "\"");
}


void to_json(json &j, const ExtractionRecord &record) {
    json answers = json::object();
    for (const auto &[question_id, answer] : record.answers) {
        answers[question_id] = json{ { "answer", answer.answer },
                                     { "support_quote", answer.support_quote },
                                     { "confidence", to_string(answer.confidence) } };
    }
    j = json{ { "record_id", record.record_id }, { "summary", record.summary }, { "answers", answers } };
}


void from_json(const json &j, ExtractionRecord &record) {
    try {
        record.record_id = j.at("record_id").get<std::string>();
        record.summary = j.at("summary").get<std::string>();
        record.answers.clear();
        for (const auto &[question_id, answer] : j.at("answers").items()) {
            record.answers[question_id] = { answer.at("answer").get<std::string>(),
                                            answer.at("support_quote").get<std::string>(),
                                            parse_confidence(answer.at("confidence").get<std::string>()) };
        }
    } catch (const json::exception &error) {
        throw ValidationError(std::string("malformed extraction record: ") + error.what());
    }
}


// ---------------------------------------------------------------------------
// Summaries and chunking

std::string summarize(LlmGateway &gateway, const PaperRecord &record, std::size_t max_words) {
    const bool has_abstract = record.abstract and not trim(*record.abstract).empty();
    const bool has_fulltext = record.fulltext and not trim(*record.fulltext).empty();
    if (not has_abstract and not has_fulltext)
        throw NoContent("record " + record.record_id + " has neither abstract nor full text");
    if (max_words == 0)
        throw InvalidParams("summary word cap must be positive");

    std::string content;
    if (has_abstract)
        content = *record.abstract;
    if (has_fulltext) {
        if (not content.empty())
            content += "\n\n";
        content += chunk_text(*record.fulltext, 4000, 0).front();
    }
    const auto result = gateway.run(TemplateId::summarize, { { "max_words", std::to_string(max_words) },
                                                             { "title", record.title },
                                                             { "content", content } });
    auto summary = trim(result.value["summary"].get<std::string>());
    if (word_count(summary) > max_words)
        summary = truncate_words(summary, max_words);
    return summary;
}


namespace {

/// Byte offset of every code point start, plus the total size. Invalid
/// sequences count one byte per code point.
std::vector<std::size_t> code_point_offsets(std::string_view text) {
    std::vector<std::size_t> offsets;
    std::size_t i = 0;
    while (i < text.size()) {
        offsets.push_back(i);
        const auto lead = static_cast<unsigned char>(text[i]);
        std::size_t length = 1;
        if (lead >= 0xC2 and lead <= 0xDF)
            length = 2;
        else if (lead >= 0xE0 and lead <= 0xEF)
            length = 3;
        else if (lead >= 0xF0 and lead <= 0xF4)
            length = 4;
        bool valid = i + length <= text.size();
        for (std::size_t k = 1; valid and k < length; ++k)
            valid = (static_cast<unsigned char>(text[i + k]) & 0xC0) == 0x80;
        i += valid ? length : 1;
    }
    offsets.push_back(text.size());
    return offsets;
}

} // unnamed namespace


std::vector<std::string> chunk_text(std::string_view text, std::size_t max_size, std::size_t overlap) {
    if (max_size == 0 or overlap >= max_size)
        throw InvalidParams("chunking needs max size > overlap >= 0 (got " + std::to_string(max_size) + ", "
                            + std::to_string(overlap) + ")");

    const auto offsets = code_point_offsets(text);
    const std::size_t n = offsets.size() - 1;
    auto byte_at = [&](std::size_t cp) { return text[offsets[cp]]; };
    auto is_single = [&](std::size_t cp) { return offsets[cp + 1] - offsets[cp] == 1; };

    std::vector<std::string> chunks;
    std::size_t start = 0;
    for (;;) {
        if (n - start <= max_size) {
            chunks.emplace_back(text.substr(offsets[start]));
            return chunks;
        }
        const std::size_t limit = start + max_size;
        const std::size_t window = max_size / 5;
        const std::size_t lowest = std::max(start + overlap + 1, limit - window);

        std::size_t cut = 0;
        for (std::size_t p = limit; p >= lowest and p >= 2 and cut == 0; --p) {
            if (is_single(p - 1) and is_single(p - 2) and byte_at(p - 1) == '\n' and byte_at(p - 2) == '\n')
                cut = p;
        }
        for (std::size_t p = limit; p >= lowest and p >= 2 and cut == 0; --p) {
            const char before = byte_at(p - 2), last = byte_at(p - 1);
            if (is_single(p - 1) and is_single(p - 2) and (last == ' ' or last == '\n')
                and (before == '.' or before == '!' or before == '?'))
                cut = p;
        }
        if (cut == 0)
            cut = limit;

        chunks.emplace_back(text.substr(offsets[start], offsets[cut] - offsets[start]));
        start = cut - overlap;
    }
}


// ---------------------------------------------------------------------------
// Answers

bool quote_is_grounded(const PaperRecord &record, const std::string &quote) {
    if (quote.empty())
        return true;
    return (record.abstract and record.abstract->find(quote) != std::string::npos)
           or (record.fulltext and record.fulltext->find(quote) != std::string::npos);
}


namespace {

SemanticCheck covers_questions(const ReviewProtocol &protocol) {
    std::set<std::string> expected;
    for (const auto &question : protocol.questions)
        expected.insert(question.id);
    return [expected](const json &value) -> std::optional<std::string> {
        std::set<std::string> seen;
        for (const auto &answer : value["answers"])
            seen.insert(answer["question_id"].get<std::string>());
        if (seen != expected) {
            std::vector<std::string> ids(expected.begin(), expected.end());
            return "answers must cover exactly the question ids " + join(ids, ", ");
        }
        return std::nullopt;
    };
}


std::map<std::string, Answer> answers_from(const json &value) {
    std::map<std::string, Answer> answers;
    for (const auto &item : value["answers"]) {
        answers[item["question_id"].get<std::string>()] = { trim(item["answer"].get<std::string>()),
                                                            item["support_quote"].get<std::string>(),
                                                            parse_confidence(item["confidence"].get<std::string>()) };
    }
    return answers;
}

} // unnamed namespace


AnswerSet extract_answers(LlmGateway &gateway, const PaperRecord &record, const ReviewProtocol &protocol,
                          const ExtractionOptions &options) {
    if (protocol.questions.empty())
        throw ValidationError("extraction needs at least one research question");
    const bool has_abstract = record.abstract and not trim(*record.abstract).empty();
    const bool has_fulltext = record.fulltext and not trim(*record.fulltext).empty();
    if (not has_abstract and not has_fulltext)
        throw NoContent("record " + record.record_id + " has neither abstract nor full text");

    const auto questions = format_questions(protocol.questions);
    const auto check = covers_questions(protocol);
    const auto chunks = has_fulltext ? chunk_text(*record.fulltext, options.chunk_size, options.chunk_overlap)
                                     : std::vector<std::string>{ *record.abstract };

    json value;
    if (chunks.size() == 1) {
        value = gateway
                    .run(TemplateId::extract_answers,
                         { { "title", record.title }, { "questions", questions }, { "instructions", "" }, { "content", chunks[0] } },
                         check)
                    .value;
    } else {
        json partial = json::array();
        for (std::size_t k = 0; k < chunks.size(); ++k) {
            const auto instructions = "The source text is part " + std::to_string(k + 1) + " of "
                                      + std::to_string(chunks.size())
                                      + " of the paper. Answer from this part only and say so when it does not "
                                        "address a question.\n";
            const auto result = gateway.run(TemplateId::extract_answers, { { "title", record.title },
                                                                          { "questions", questions },
                                                                          { "instructions", instructions },
                                                                          { "content", chunks[k] } },
                                            check);
            partial.push_back({ { "part", k + 1 }, { "answers", result.value["answers"] } });
        }
        const auto instructions = "The source text below holds partial answers gathered from the "
                                  + std::to_string(chunks.size())
                                  + " parts of the paper. Merge them into one answer per question and keep each "
                                    "support quote exactly as given.\n";
        value = gateway
                    .run(TemplateId::extract_answers, { { "title", record.title },
                                                        { "questions", questions },
                                                        { "instructions", instructions },
                                                        { "content", partial.dump(2) } },
                         check)
                    .value;
    }

    AnswerSet result{ answers_from(value), {} };
    for (auto &[question_id, answer] : result.answers) {
        if (not quote_is_grounded(record, answer.support_quote)) {
            answer.support_quote.clear();
            answer.confidence = Confidence::low;
            result.ungrounded.push_back(question_id);
        }
    }
    return result;
}


ExtractionRecord extract_record(LlmGateway &gateway, const PaperRecord &record, const ReviewProtocol &protocol,
                                const ExtractionOptions &options, std::vector<std::string> *ungrounded) {
    ExtractionRecord extraction;
    extraction.record_id = record.record_id;
    extraction.summary = summarize(gateway, record, options.summary_words);
    auto answers = extract_answers(gateway, record, protocol, options);
    extraction.answers = std::move(answers.answers);
    if (ungrounded)
        *ungrounded = std::move(answers.ungrounded);
    return extraction;
}


// ---------------------------------------------------------------------------
// Tables

Table tabulate(const std::vector<ExtractionRecord> &extractions, const std::vector<PaperRecord> &records,
               const ReviewProtocol &protocol) {
    std::map<std::string, const PaperRecord *> by_id;
    for (const auto &record : records)
        by_id[record.record_id] = &record;

    Table table;
    table.header = { "record_id", "title" };
    for (const auto &question : protocol.questions)
        table.header.push_back(question.id);
    for (const auto &extraction : extractions) {
        const auto found = by_id.find(extraction.record_id);
        std::vector<std::string> row{ extraction.record_id, found == by_id.end() ? "" : found->second->title };
        for (const auto &question : protocol.questions) {
            const auto answer = extraction.answers.find(question.id);
            row.push_back(answer == extraction.answers.end() ? "" : answer->second.answer);
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}


namespace {

void append_csv_row(std::string &out, const std::vector<std::string> &cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i > 0)
            out += ',';
        const auto &cell = cells[i];
        if (cell.find_first_of(",\"\r\n") == std::string::npos) {
            out += cell;
            continue;
        }
        out += '"';
        for (const char ch : cell) {
            if (ch == '"')
                out += '"';
            out += ch;
        }
        out += '"';
    }
    out += "\r\n";
}

} // unnamed namespace


std::string to_csv(const Table &table) {
    std::string out;
    append_csv_row(out, table.header);
    for (const auto &row : table.rows)
        append_csv_row(out, row);
    return out;
}

} // namespace slr

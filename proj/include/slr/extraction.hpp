#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "slr/domain.hpp"
#include "slr/llm.hpp"

namespace slr {

enum class Confidence { low, medium, high };

const char *to_string(Confidence confidence);
Confidence parse_confidence(std::string_view text);


struct Answer {
    std::string answer;
    std::string support_quote;
    Confidence confidence = Confidence::low;

    friend bool operator==(const Answer &, const Answer &) = default;
};


struct ExtractionRecord {
    std::string record_id;
    std::string summary;
    /// Question id -> answer; one entry per protocol question.
    std::map<std::string, Answer> answers;

    friend bool operator==(const ExtractionRecord &, const ExtractionRecord &) = default;
};

void to_json(nlohmann::json &json, const ExtractionRecord &record);
void from_json(const nlohmann::json &json, ExtractionRecord &record);


struct ExtractionOptions {
    std::size_t summary_words = 150;
    std::size_t chunk_size = 4000;
    std::size_t chunk_overlap = 200;
};


/// Summarizes the abstract (plus the start of any full text). Throws NoContent
/// when the record has neither. Summaries over the cap are cut to it.
std::string summarize(LlmGateway &gateway, const PaperRecord &record, std::size_t max_words = 150);

/// Splits `text` into chunks of at most `max_size` code points where each
/// chunk repeats the last `overlap` code points of the previous one. Cuts
/// prefer a paragraph break, then a sentence end, within the last fifth of the
/// window. Throws InvalidParams unless max_size > overlap.
std::vector<std::string> chunk_text(std::string_view text, std::size_t max_size, std::size_t overlap);


struct AnswerSet {
    std::map<std::string, Answer> answers;
    /// Question ids whose quote was not found in the source and was stripped.
    std::vector<std::string> ungrounded;
};

/// One extract_answers call per full-text chunk (or one over the abstract),
/// followed by a merge call when there was more than one chunk. Quotes that
/// are not verbatim substrings of the abstract or full text are removed and
/// their confidence set to low.
AnswerSet extract_answers(LlmGateway &gateway, const PaperRecord &record, const ReviewProtocol &protocol,
                          const ExtractionOptions &options = {});

/// summarize() followed by extract_answers().
ExtractionRecord extract_record(LlmGateway &gateway, const PaperRecord &record, const ReviewProtocol &protocol,
                                const ExtractionOptions &options = {}, std::vector<std::string> *ungrounded = nullptr);

/// True when `quote` is empty or occurs verbatim in the record's abstract or full text.
bool quote_is_grounded(const PaperRecord &record, const std::string &quote);


struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

/// Columns: record_id, title, then one answer column per question id.
/// Rows follow `extractions`; titles are looked up in `records`.
Table tabulate(const std::vector<ExtractionRecord> &extractions, const std::vector<PaperRecord> &records,
               const ReviewProtocol &protocol);

/// RFC 4180: CRLF line ends; fields with comma, quote, CR or LF are quoted.
std::string to_csv(const Table &table);

} // namespace slr

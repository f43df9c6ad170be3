#include <gtest/gtest.h>

#include <random>

#include "slr/errors.hpp"
#include "slr/extraction.hpp"
#include "slr/util.hpp"
#include "support.hpp"

using namespace slr;
using nlohmann::json;
namespace t = slr::testing;

namespace {

ReviewProtocol extraction_protocol() {
    auto protocol = t::demo_protocol();
    protocol.questions = {
        { "RQ1", "How have large language models been utilized in various aspects of the software development process?", "" },
        { "RQ2", "What challenges and limitations exist in the adoption and implementation of large language models in software development?", "" },
    };
    return protocol;
}


std::shared_ptr<MockProvider> mock_with(std::vector<json> rules) {
    return std::make_shared<MockProvider>(json{ { "name", "extraction" }, { "rules", rules } });
}


json answers_reply(const std::string &quote1, const std::string &quote2 = "") {
    return { { "answers",
               { { { "question_id", "RQ1" }, { "answer", "first" }, { "support_quote", quote1 }, { "confidence", "high" } },
                 { { "question_id", "RQ2" }, { "answer", "second" }, { "support_quote", quote2 }, { "confidence", "medium" } } } } };
}


// Code point boundaries, computed independently of the library.
std::vector<std::size_t> utf8_starts(const std::string &text) {
    std::vector<std::size_t> starts;
    for (std::size_t i = 0; i < text.size(); ++i)
        if ((static_cast<unsigned char>(text[i]) & 0xC0) != 0x80)
            starts.push_back(i);
    starts.push_back(text.size());
    return starts;
}


std::size_t code_points(const std::string &text) {
    return utf8_starts(text).size() - 1;
}


std::string drop_code_points(const std::string &text, std::size_t count) {
    const auto starts = utf8_starts(text);
    return text.substr(starts[std::min(count, starts.size() - 1)]);
}


std::string last_code_points(const std::string &text, std::size_t count) {
    const auto starts = utf8_starts(text);
    const std::size_t n = starts.size() - 1;
    return text.substr(starts[n - std::min(count, n)]);
}


std::string first_code_points(const std::string &text, std::size_t count) {
    const auto starts = utf8_starts(text);
    return text.substr(0, starts[std::min(count, starts.size() - 1)]);
}


void expect_chunking_contract(const std::string &text, std::size_t size, std::size_t overlap) {
    const auto chunks = chunk_text(text, size, overlap);
    ASSERT_FALSE(chunks.empty());
    std::string rebuilt = chunks[0];
    for (std::size_t k = 0; k < chunks.size(); ++k) {
        EXPECT_LE(code_points(chunks[k]), size);
        if (k == 0)
            continue;
        EXPECT_EQ(last_code_points(chunks[k - 1], overlap), first_code_points(chunks[k], overlap));
        EXPECT_GT(code_points(chunks[k]), overlap);
        rebuilt += drop_code_points(chunks[k], overlap);
    }
    EXPECT_EQ(rebuilt, text) << "size " << size << " overlap " << overlap;
}


std::string synthetic_text(std::mt19937 &rng, std::size_t length) {
    static const std::vector<std::string> pieces{ "a", "b", "c", " ", " ", ". ", "\n", "\n\n", "é", "ü", "語", "🙂", "!", "?" };
    std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
    std::string text;
    while (code_points(text) < length)
        text += pieces[pick(rng)];
    return text;
}


// RFC 4180 reader used as the CSV oracle.
std::vector<std::vector<std::string>> parse_csv(const std::string &csv) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string cell;
    bool quoted = false, row_open = false;
    for (std::size_t i = 0; i < csv.size(); ++i) {
        const char c = csv[i];
        row_open = true;
        if (quoted) {
            if (c == '"' and i + 1 < csv.size() and csv[i + 1] == '"') {
                cell += '"';
                ++i;
            } else if (c == '"')
                quoted = false;
            else
                cell += c;
        } else if (c == '"')
            quoted = true;
        else if (c == ',') {
            row.push_back(cell);
            cell.clear();
        } else if (c == '\r' and i + 1 < csv.size() and csv[i + 1] == '\n') {
            row.push_back(cell);
            rows.push_back(row);
            row.clear();
            cell.clear();
            row_open = false;
            ++i;
        } else
            cell += c;
    }
    if (row_open) {
        row.push_back(cell);
        rows.push_back(row);
    }
    return rows;
}

} // unnamed namespace


TEST(Summaries, DemoSummaryIsVerbatimAndCapped) {
    const auto records = t::fixture_records();
    const auto scenario = t::load_json(t::demo_scenario());
    LlmGateway gateway(MockProvider::from_file(t::demo_scenario()), {});
    for (std::size_t i = 0; i < 3; ++i) {
        std::string canned;
        for (const auto &rule : scenario["rules"])
            if (rule["template"] == "summarize" and rule["when"]["title"] == records[i].title)
                canned = rule["responses"][0]["summary"];
        ASSERT_FALSE(canned.empty());
        const auto summary = summarize(gateway, records[i]);
        EXPECT_EQ(summary, canned);
        EXPECT_LE(word_count(summary), 150u);
    }
}


TEST(Summaries, LongSummariesAreCutToTheCap) {
    std::string long_summary;
    for (int i = 0; i < 400; ++i)
        long_summary += "word" + std::to_string(i) + " ";
    LlmGateway gateway(mock_with({ t::rule("summarize", { { { "summary", long_summary } } }) }), {});
    auto record = t::fixture_records()[1];
    record.fulltext.reset();
    const auto summary = summarize(gateway, record, 150);
    EXPECT_EQ(word_count(summary), 150u);
    EXPECT_EQ(summary.substr(0, 12), "word0 word1 ");
    EXPECT_EQ(word_count(summarize(gateway, record, 7)), 7u);
}


TEST(Summaries, NoContentWithoutAbstractOrFulltext) {
    LlmGateway gateway(MockProvider::empty(), {});
    auto record = t::fixture_records()[0];
    record.abstract.reset();
    record.fulltext = "   ";
    EXPECT_THROW(summarize(gateway, record), NoContent);
    EXPECT_THROW(extract_answers(gateway, record, extraction_protocol()), NoContent);
}


TEST(Chunking, ShortTextIsOneChunk) {
    EXPECT_EQ(chunk_text("short text", 100, 10), std::vector<std::string>{ "short text" });
    EXPECT_EQ(chunk_text("", 100, 10), std::vector<std::string>{ "" });
    EXPECT_THROW(chunk_text("abc", 10, 10), InvalidParams);
    EXPECT_THROW(chunk_text("abc", 10, 11), InvalidParams);
    EXPECT_THROW(chunk_text("abc", 0, 0), InvalidParams);
}


TEST(Chunking, TenThousandCharactersReconstruct) {
    std::mt19937 rng(7);
    std::string text;
    std::uniform_int_distribution<int> letter('a', 'z');
    while (text.size() < 10000)
        text += static_cast<char>(text.size() % 97 == 96 ? ' ' : letter(rng));
    expect_chunking_contract(text, 4000, 200);
    EXPECT_EQ(chunk_text(text, 4000, 200).size(), 3u);
}


TEST(Chunking, PrefersParagraphThenSentenceBreaks) {
    std::string text = std::string(850, 'x') + ". " + std::string(50, 'y') + "\n\n" + std::string(500, 'z');
    auto chunks = chunk_text(text, 1000, 0);
    EXPECT_EQ(chunks[0], std::string(850, 'x') + ". " + std::string(50, 'y') + "\n\n");

    text = std::string(850, 'x') + ". " + std::string(500, 'z');
    chunks = chunk_text(text, 1000, 0);
    EXPECT_EQ(chunks[0], std::string(850, 'x') + ". ");

    // A break before the tolerance window is ignored.
    text = std::string(100, 'x') + ". " + std::string(1500, 'z');
    chunks = chunk_text(text, 1000, 0);
    EXPECT_EQ(code_points(chunks[0]), 1000u);
}


TEST(Chunking, FuzzedReconstructionIsLossless) {
    std::mt19937 rng(20240501);
    std::uniform_int_distribution<std::size_t> length(0, 3000), size(2, 600);
    for (int round = 0; round < 300; ++round) {
        const auto text = synthetic_text(rng, length(rng));
        const auto max_size = size(rng);
        std::uniform_int_distribution<std::size_t> overlap(0, max_size - 1);
        expect_chunking_contract(text, max_size, overlap(rng));
        if (::testing::Test::HasFailure())
            return;
    }
}


TEST(Answers, DemoInferLinkAnswerMentionsProgramRepair) {
    LlmGateway gateway(MockProvider::from_file(t::demo_scenario()), {});
    const auto records = t::fixture_records();
    const auto extraction = extract_record(gateway, records[0], extraction_protocol());
    EXPECT_EQ(extraction.record_id, records[0].record_id);
    std::vector<std::string> keys;
    for (const auto &[id, answer] : extraction.answers)
        keys.push_back(id);
    EXPECT_EQ(keys, (std::vector<std::string>{ "RQ1", "RQ2" }));
    EXPECT_NE(extraction.answers.at("RQ1").answer.find("program repair"), std::string::npos);

    for (std::size_t i = 0; i < 3; ++i) {
        const auto other = extract_record(gateway, records[i], extraction_protocol());
        for (const auto &[id, answer] : other.answers) {
            EXPECT_FALSE(answer.support_quote.empty()) << i << id;
            EXPECT_TRUE((records[i].abstract and records[i].abstract->find(answer.support_quote) != std::string::npos)
                        or (records[i].fulltext and records[i].fulltext->find(answer.support_quote) != std::string::npos));
        }
    }
}


TEST(Answers, FabricatedQuoteIsStrippedAndDowngraded) {
    auto record = t::fixture_records()[1];
    const auto genuine = record.abstract->substr(0, 40);
    LlmGateway gateway(mock_with({ t::rule("extract_answers", { answers_reply("a sentence the paper never wrote", genuine) }) }), {});
    const auto set = extract_answers(gateway, record, extraction_protocol());
    EXPECT_EQ(set.answers.at("RQ1").support_quote, "");
    EXPECT_EQ(set.answers.at("RQ1").confidence, Confidence::low);
    EXPECT_EQ(set.answers.at("RQ2").support_quote, genuine);
    EXPECT_EQ(set.answers.at("RQ2").confidence, Confidence::medium);
    EXPECT_EQ(set.ungrounded, std::vector<std::string>{ "RQ1" });
}


TEST(Answers, MissingQuestionIsRetriedThenRejected) {
    json partial{ { "answers", { { { "question_id", "RQ1" }, { "answer", "only" }, { "support_quote", "" }, { "confidence", "low" } } } } };
    auto record = t::fixture_records()[1];
    LlmGateway stubborn(mock_with({ t::rule("extract_answers", { partial }) }), {});
    EXPECT_THROW(extract_answers(stubborn, record, extraction_protocol()), SchemaViolation);

    auto mock = mock_with({ t::rule("extract_answers", { partial, answers_reply("") }) });
    LlmGateway recovering(mock, {});
    EXPECT_EQ(extract_answers(recovering, record, extraction_protocol()).answers.size(), 2u);
    EXPECT_EQ(mock->invocation_count(), 2u);
}


TEST(Answers, LongFulltextIsChunkedAndMerged) {
    auto record = t::fixture_records()[1];
    std::string fulltext;
    for (int i = 0; i < 60; ++i)
        fulltext += "Paragraph " + std::to_string(i) + " discusses generated tests in some detail.\n\n";
    record.fulltext = fulltext;
    const json part{ { "instructions", { { "contains", "part" } } } };
    const json merge{ { "instructions", { { "contains", "Merge" } } } };
    auto mock = mock_with({ t::rule("extract_answers", { answers_reply("merged", "") }, merge),
                            t::rule("extract_answers", { answers_reply("Paragraph 3 discusses", "") }, part) });
    LlmGateway gateway(mock, {});
    ExtractionOptions options;
    options.chunk_size = 1000;
    options.chunk_overlap = 100;
    const auto chunks = chunk_text(fulltext, 1000, 100).size();
    ASSERT_GT(chunks, 1u);
    const auto set = extract_answers(gateway, record, extraction_protocol(), options);
    EXPECT_EQ(mock->invocation_count(), chunks + 1);
    // The merge answer's quote does not occur in the paper.
    EXPECT_EQ(set.answers.at("RQ1").support_quote, "");
}


TEST(Tables, ShapeOrderAndCsvRoundTrip) {
    const auto protocol = extraction_protocol();
    const auto records = t::fixture_records();
    std::vector<ExtractionRecord> extractions;
    for (int i : { 2, 0, 1 }) {
        ExtractionRecord extraction{ records[i].record_id, "s", {} };
        extraction.answers["RQ1"] = { "uses, \"quoted\" and\ncommas", "", Confidence::low };
        extraction.answers["RQ2"] = { "plain " + std::to_string(i), "", Confidence::high };
        extractions.push_back(extraction);
    }
    const auto table = tabulate(extractions, records, protocol);
    EXPECT_EQ(table.header, (std::vector<std::string>{ "record_id", "title", "RQ1", "RQ2" }));
    ASSERT_EQ(table.rows.size(), 3u);
    for (const auto &row : table.rows)
        EXPECT_EQ(row.size(), 4u);
    EXPECT_EQ(table.rows[0][0], records[2].record_id);
    EXPECT_EQ(table.rows[0][1], records[2].title);

    const auto csv = to_csv(table);
    const auto parsed = parse_csv(csv);
    ASSERT_EQ(parsed.size(), 4u);
    EXPECT_EQ(parsed[0], table.header);
    for (std::size_t r = 0; r < 3; ++r)
        EXPECT_EQ(parsed[r + 1], table.rows[r]);
    EXPECT_EQ(csv.substr(csv.size() - 2), "\r\n");

    const auto empty = tabulate({}, records, protocol);
    EXPECT_TRUE(empty.rows.empty());
    EXPECT_EQ(to_csv(empty), "record_id,title,RQ1,RQ2\r\n");
}


TEST(Tables, CsvFuzzRoundTrip) {
    std::mt19937 rng(99);
    const std::string alphabet = "ab,\"\r\n x";
    std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1), len(0, 12), width(1, 5);
    for (int round = 0; round < 500; ++round) {
        Table table;
        const auto columns = width(rng);
        for (std::size_t c = 0; c < columns; ++c)
            table.header.push_back("h" + std::to_string(c));
        for (int r = 0; r < 3; ++r) {
            std::vector<std::string> row;
            for (std::size_t c = 0; c < columns; ++c) {
                std::string cell;
                for (std::size_t k = len(rng); k > 0; --k)
                    cell += alphabet[pick(rng)];
                row.push_back(cell);
            }
            table.rows.push_back(row);
        }
        const auto parsed = parse_csv(to_csv(table));
        ASSERT_EQ(parsed.size(), 4u);
        for (int r = 0; r < 3; ++r)
            ASSERT_EQ(parsed[r + 1], table.rows[r]);
    }
}


TEST(Extractions, JsonRoundTrip) {
    ExtractionRecord record{ "rec_1", "summary", {} };
    record.answers["RQ1"] = { "a", "q", Confidence::medium };
    EXPECT_EQ(json(record).get<ExtractionRecord>(), record);
    EXPECT_THROW(json({ { "record_id", "r" } }).get<ExtractionRecord>(), ValidationError);
}

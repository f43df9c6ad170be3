#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include <openssl/evp.h>

#include "slr/domain.hpp"
#include "slr/errors.hpp"
#include "slr/util.hpp"
#include "support.hpp"

using namespace slr;
using slr::testing::load_json;

namespace {

// Character-class reference for ASCII input: letters and digits survive
// (lowercased), everything else separates words.
std::string reference_normalize(const std::string &text) {
    std::string out, word;
    auto flush = [&] {
        if (word.empty())
            return;
        if (not out.empty())
            out += ' ';
        out += word;
        word.clear();
    };
    for (unsigned char c : text) {
        if (std::isalnum(c))
            word += static_cast<char>(std::tolower(c));
        else
            flush();
    }
    flush();
    return out;
}


std::string evp_sha256(const std::string &data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr);
    static const char *hex = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < length; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}


PaperRecord record(std::string title, std::optional<std::string> doi, std::optional<int> year, std::string source) {
    PaperRecord r;
    r.title = std::move(title);
    r.doi = std::move(doi);
    r.year = year;
    r.record_id = make_record_id(r.title, r.doi);
    r.source_provider = source;
    r.provenance = { source + ":1" };
    return r;
}


// Equivalence restated from its definition.
bool oracle_equivalent(const PaperRecord &a, const PaperRecord &b) {
    if (a.doi.has_value() and b.doi.has_value())
        return a.doi.value() == b.doi.value();
    const auto ta = reference_normalize(a.title), tb = reference_normalize(b.title);
    if (ta.empty() or ta != tb)
        return false;
    if (a.year.has_value() and b.year.has_value())
        return a.year.value() == b.year.value();
    return true;
}

} // unnamed namespace


TEST(Domain, NormalizeTitleExamples) {
    EXPECT_EQ(normalize_title("InferLink End-to-End Program Repair with Large Language Models"),
              "inferlink end to end program repair with large language models");
    EXPECT_EQ(normalize_title(""), "");
    EXPECT_EQ(normalize_title("A\xe2\x80\x94" "B   c!!"), "a b c");
    EXPECT_EQ(normalize_title("  Caf\xc3\xa9 \xe2\x80\x9c" "d\xc3\xa9j\xc3\xa0\xe2\x80\x9d vu\xc2\xbf "), "caf\xc3\xa9 d\xc3\xa9j\xc3\xa0 vu");
}


TEST(Domain, NormalizeTitleMatchesReferenceOnFuzzCorpus) {
    std::mt19937 rng(11);
    for (int n = 0; n < 5000; ++n) {
        std::string text;
        const int length = rng() % 40;
        for (int k = 0; k < length; ++k)
            text += static_cast<char>(32 + rng() % 95);
        if (rng() % 4 == 0)
            text += "\t\n";
        ASSERT_EQ(normalize_title(text), reference_normalize(text)) << text;
        EXPECT_EQ(normalize_title(normalize_title(text)), normalize_title(text));
    }
}


TEST(Domain, NormalizeDoi) {
    EXPECT_EQ(normalize_doi("https://doi.org/10.1000/ABC"), "10.1000/abc");
    EXPECT_EQ(normalize_doi(" doi:10.5555/X.1 "), "10.5555/x.1");
    EXPECT_EQ(normalize_doi("not a doi"), std::nullopt);
}


TEST(Domain, RecordIdIsContentHash) {
    const std::string title = "InferLink End-to-End Program Repair with Large Language Models";
    const std::optional<std::string> doi = "10.5555/slr-fixture.001";
    const auto expected = "rec_" + evp_sha256(reference_normalize(title) + "\x1f" + *doi).substr(0, 16);
    EXPECT_EQ(make_record_id(title, doi), expected);
    EXPECT_EQ(make_record_id("INFERLINK end to end, program repair with large language models!", doi), expected);
    EXPECT_NE(make_record_id(title, std::nullopt), expected);
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}


TEST(Domain, EquivalenceExamples) {
    EXPECT_TRUE(records_equivalent(record("One", "10.1000/x", 2020, "a"), record("Two", "10.1000/x", 2021, "b")));
    EXPECT_FALSE(records_equivalent(record("Same", "10.1000/x", 2020, "a"), record("Same", "10.1000/y", 2020, "b")));
    EXPECT_TRUE(records_equivalent(record("Code Review!", std::nullopt, 2023, "a"),
                                   record("code  review", std::nullopt, 2023, "b")));
    EXPECT_FALSE(records_equivalent(record("Code Review", std::nullopt, 2022, "a"),
                                    record("code review", std::nullopt, 2023, "b")));
    EXPECT_TRUE(records_equivalent(record("Code Review", "10.1/z", std::nullopt, "a"),
                                   record("code review", std::nullopt, 2023, "b")));
    EXPECT_FALSE(records_equivalent(record("!!", std::nullopt, 2023, "a"), record("??", std::nullopt, 2023, "b")));
}


TEST(Domain, EquivalenceMatchesPairwiseOracleOnFixtureCorpus) {
    const auto corpus = load_json(slr::testing::fixtures_dir() / "dedup_corpus.json");
    std::vector<PaperRecord> records;
    for (const auto &item : corpus["records"])
        records.push_back(item.get<PaperRecord>());
    // Mutations that exercise every branch of the rule.
    const auto base = records;
    for (const auto &r : base) {
        auto variant = r;
        variant.doi.reset();
        records.push_back(variant);
        variant.year.reset();
        variant.title = to_lower_ascii(variant.title) + "!";
        records.push_back(variant);
        auto shifted = r;
        shifted.doi.reset();
        if (shifted.year)
            shifted.year = *shifted.year + 1;
        records.push_back(shifted);
    }
    std::size_t positives = 0;
    for (const auto &a : records) {
        for (const auto &b : records) {
            ASSERT_EQ(records_equivalent(a, b), oracle_equivalent(a, b)) << a.title << " | " << b.title;
            ASSERT_EQ(records_equivalent(a, b), records_equivalent(b, a));
            positives += records_equivalent(a, b);
        }
    }
    EXPECT_GT(positives, records.size());
}


TEST(Domain, MergePrefersLeftAndUnionsOptionals) {
    auto a = record("Paper", "10.1/p", 2023, "crossref");
    a.url = "https://a.example/p";
    auto b = record("Paper", "10.1/p", 2023, "openalex");
    b.url = "https://b.example/p";
    b.abstract = "An abstract.";
    b.venue = "Venue";
    const auto merged = merge_records(a, b);
    EXPECT_EQ(merged.url, a.url);
    EXPECT_EQ(merged.abstract, b.abstract);
    EXPECT_EQ(merged.venue, "Venue");
    EXPECT_EQ(merged.record_id, a.record_id);
    EXPECT_EQ(merged.provenance, (std::vector<std::string>{ "crossref:1", "openalex:1" }));
    EXPECT_THROW(merge_records(a, record("Other", "10.1/q", 2023, "x")), NotEquivalent);
}


TEST(Domain, MergeOfThreeDuplicatesIsOrderIndependentUpToProvenance) {
    std::vector<PaperRecord> cluster{ record("Shared Title", "10.9/s", 2023, "p1"),
                                      record("Shared Title", "10.9/s", std::nullopt, "p2"),
                                      record("Shared Title", "10.9/s", 2023, "p3") };
    cluster[0].abstract = "abstract from p1";
    cluster[1].url = "https://p2.example";
    cluster[1].authors = { "Ada" };
    cluster[2].venue = "Venue";
    cluster[2].fulltext = "fulltext from p3";
    // For every permutation and both association orders the merged fields
    // agree with a field-wise "first non-empty in that order" oracle.
    std::vector<int> order{ 0, 1, 2 };
    do {
        const auto &x = cluster[order[0]], &y = cluster[order[1]], &z = cluster[order[2]];
        const auto left = merge_records(merge_records(x, y), z);
        const auto right = merge_records(x, merge_records(y, z));
        auto strip = [](PaperRecord r) {
            std::sort(r.provenance.begin(), r.provenance.end());
            return r;
        };
        EXPECT_EQ(strip(left), strip(right));
        EXPECT_EQ(left.provenance.size(), 3u);
        EXPECT_EQ(left.abstract, std::optional<std::string>("abstract from p1"));
        EXPECT_EQ(left.url, "https://p2.example");
        EXPECT_EQ(left.fulltext, std::optional<std::string>("fulltext from p3"));
        EXPECT_EQ(left.year, 2023);
    } while (std::next_permutation(order.begin(), order.end()));
}


TEST(Domain, FunnelCountsEnforceMonotonicity) {
    EXPECT_NO_THROW(FunnelCounts(10, 10, 3, 3, 3));
    EXPECT_THROW(FunnelCounts(10, 11, 3, 3, 3), ValidationError);
    EXPECT_THROW(FunnelCounts(10, 10, 3, 4, 3), ValidationError);
    EXPECT_THROW(FunnelCounts(1, 1, 1, 1, -1), ValidationError);
    nlohmann::json j = FunnelCounts(10, 10, 3, 3, 3);
    EXPECT_EQ(j, load_json(slr::testing::fixtures_dir() / "expected_demo_funnel.json"));
}


TEST(Domain, RatingsAreTheSixLikertLabels) {
    std::vector<std::string> labels;
    for (auto rating : all_ratings())
        labels.push_back(to_string(rating));
    EXPECT_EQ(labels, (std::vector<std::string>{ "Not Satisfied", "Fair", "Satisfactory", "Good", "Very Good",
                                                  "Excellent" }));
    EXPECT_EQ(parse_rating("Very Good"), Rating::VeryGood);
    EXPECT_EQ(parse_rating("NotSatisfied"), Rating::NotSatisfied);
    EXPECT_THROW(parse_rating("Amazing"), UnknownRating);
}


TEST(Domain, YearRange) {
    EXPECT_EQ(parse_year_range("2023:2023"), (YearRange{ 2023, 2023 }));
    EXPECT_EQ(parse_year_range("2020:"), (YearRange{ 2020, std::nullopt }));
    EXPECT_EQ(parse_year_range(":2021"), (YearRange{ std::nullopt, 2021 }));
    EXPECT_EQ(format_year_range({ 2019, 2021 }), "2019\xe2\x80\x93" "2021");
    EXPECT_EQ(format_year_range({}), "any");
    EXPECT_THROW(parse_year_range("soon"), ValidationError);
    EXPECT_TRUE((YearRange{ 2023, 2023 }).contains(2023));
    EXPECT_FALSE((YearRange{ 2023, 2023 }).contains(2022));
}


TEST(Domain, ProtocolValidation) {
    auto protocol = slr::testing::demo_protocol();
    EXPECT_NO_THROW(validate(protocol));
    auto bad = protocol;
    bad.topic = "  ";
    EXPECT_THROW(validate(bad), ValidationError);
    bad = protocol;
    bad.year_range = { 2024, 2023 };
    EXPECT_THROW(validate(bad), ValidationError);
    bad = protocol;
    bad.max_records = 0;
    EXPECT_THROW(validate(bad), ValidationError);
    bad = protocol;
    bad.questions = { { "RQ1", "a?", "" }, { "RQ1", "b?", "" } };
    EXPECT_THROW(validate(bad), ValidationError);
    bad = protocol;
    bad.criteria.exclude_keywords.push_back("Large Language Model");
    EXPECT_THROW(validate(bad), ValidationError);
}


TEST(Domain, JsonRoundTrips) {
    auto protocol = slr::testing::demo_protocol();
    protocol.query = parse_query("llm AND testing");
    protocol.questions = { { "RQ1", "What?", "Why." } };
    EXPECT_EQ(nlohmann::json(protocol).get<ReviewProtocol>(), protocol);

    PaperRecord r = record("T", "10.1/t", 2023, "fixture");
    r.affiliation_country = "Germany";
    EXPECT_EQ(nlohmann::json(r).get<PaperRecord>(), r);

    ScreeningDecision d{ "D000001", r.record_id, ScreeningStage::abstract, Verdict::exclude, Actor::human, "off topic",
                         "2026-01-01T00:00:00.000Z" };
    EXPECT_EQ(nlohmann::json(d).get<ScreeningDecision>(), d);

    FeedbackEntry f{ "", Rating::Good, "fine", "SE Researcher" };
    EXPECT_EQ(nlohmann::json(f).get<FeedbackEntry>(), f);
}

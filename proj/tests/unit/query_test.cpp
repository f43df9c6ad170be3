#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <functional>
#include <optional>
#include <random>
#include <set>

#include "slr/errors.hpp"
#include "slr/query.hpp"
#include "query_oracle.hpp"

using namespace slr;
using namespace slr::testing;

namespace {

// ---------------------------------------------------------------------------
// Reference implementation: a shunting-yard parser over its own tokenizer
// producing binary trees, then a separate normalizer.

struct RefNode {
    char op = 0; // 0 leaf, '!' not, '&' and, '|' or
    std::string text;
    std::vector<RefNode> kids;
};


bool ref_space(char c) {
    return c == ' ' or c == '\t' or c == '\n' or c == '\r' or c == '\f' or c == '\v';
}


std::string ref_lower(std::string s) {
    for (auto &c : s)
        if (c >= 'A' and c <= 'Z')
            c = static_cast<char>(c + 32);
    return s;
}


std::string ref_clean(const std::string &text) {
    std::string out;
    std::string word;
    auto flush = [&] {
        if (word.empty())
            return;
        if (not out.empty())
            out += ' ';
        out += word;
        word.clear();
    };
    for (char c : text) {
        if (c == '"')
            continue;
        if (ref_space(c))
            flush();
        else
            word += c;
    }
    flush();
    return ref_lower(out);
}


struct RefToken {
    enum { operand, lparen, rparen, op_and, op_or, op_not } type;
    std::string text;
};


std::optional<std::vector<RefToken>> ref_tokenize(const std::string &s) {
    std::vector<RefToken> out;
    std::size_t i = 0;
    std::vector<std::string> run;
    auto flush_run = [&] {
        if (run.empty())
            return;
        std::string joined;
        for (std::size_t k = 0; k < run.size(); ++k)
            joined += (k ? " " : "") + run[k];
        out.push_back({ RefToken::operand, joined });
        run.clear();
    };
    while (i < s.size()) {
        if (ref_space(s[i])) {
            ++i;
            continue;
        }
        if (s[i] == '(' or s[i] == ')') {
            flush_run();
            out.push_back({ s[i] == '(' ? RefToken::lparen : RefToken::rparen, "" });
            ++i;
            continue;
        }
        if (s[i] == '"') {
            flush_run();
            auto close = s.find('"', i + 1);
            if (close == std::string::npos)
                return std::nullopt;
            auto inner = s.substr(i + 1, close - i - 1);
            if (ref_clean(inner).empty())
                return std::nullopt;
            // A quoted phrase is its own operand and never merges with words.
            out.push_back({ RefToken::operand, inner });
            i = close + 1;
            continue;
        }
        std::size_t j = i;
        while (j < s.size() and not ref_space(s[j]) and s[j] != '(' and s[j] != ')' and s[j] != '"')
            ++j;
        auto w = s.substr(i, j - i);
        auto lw = ref_lower(w);
        if (lw == "and" or lw == "or" or lw == "not") {
            flush_run();
            out.push_back({ lw == "and" ? RefToken::op_and : lw == "or" ? RefToken::op_or : RefToken::op_not, "" });
        } else
            run.push_back(w);
        i = j;
    }
    flush_run();
    return out;
}


std::optional<RefNode> ref_parse(const std::string &s) {
    auto tokens = ref_tokenize(s);
    if (not tokens)
        return std::nullopt;
    std::vector<RefNode> output;
    std::vector<int> ops; // '(' , '!', '&', '|'
    auto prec = [](int op) { return op == '!' ? 3 : op == '&' ? 2 : op == '|' ? 1 : 0; };
    auto reduce = [&]() -> bool {
        int op = ops.back();
        ops.pop_back();
        if (op == '!') {
            if (output.empty())
                return false;
            RefNode n{ '!', "", { output.back() } };
            output.back() = n;
            return true;
        }
        if (output.size() < 2)
            return false;
        RefNode rhs = output.back();
        output.pop_back();
        RefNode n{ static_cast<char>(op), "", { output.back(), rhs } };
        output.back() = n;
        return true;
    };
    bool expect_operand = true;
    for (const auto &t : *tokens) {
        if (expect_operand) {
            if (t.type == RefToken::operand) {
                RefNode leaf;
                leaf.text = t.text;
                output.push_back(leaf);
                expect_operand = false;
            } else if (t.type == RefToken::op_not)
                ops.push_back('!');
            else if (t.type == RefToken::lparen)
                ops.push_back('(');
            else
                return std::nullopt;
        } else {
            if (t.type == RefToken::op_and or t.type == RefToken::op_or) {
                int op = t.type == RefToken::op_and ? '&' : '|';
                while (not ops.empty() and ops.back() != '(' and prec(ops.back()) >= prec(op))
                    if (not reduce())
                        return std::nullopt;
                ops.push_back(op);
                expect_operand = true;
            } else if (t.type == RefToken::rparen) {
                while (not ops.empty() and ops.back() != '(')
                    if (not reduce())
                        return std::nullopt;
                if (ops.empty())
                    return std::nullopt;
                ops.pop_back();
            } else
                return std::nullopt;
        }
    }
    if (expect_operand)
        return std::nullopt;
    while (not ops.empty()) {
        if (ops.back() == '(')
            return std::nullopt;
        if (not reduce())
            return std::nullopt;
    }
    if (output.size() != 1)
        return std::nullopt;
    return output.front();
}


Query ref_normalize(const RefNode &n) {
    if (n.op == 0) {
        auto text = ref_clean(n.text);
        return text.find(' ') == std::string::npos ? Query::term(text) : Query::phrase(text);
    }
    if (n.op == '!')
        return Query::negate(ref_normalize(n.kids[0]));
    const auto kind = n.op == '&' ? Query::Kind::And : Query::Kind::Or;
    std::vector<Query> flat;
    std::function<void(const RefNode &)> collect = [&](const RefNode &k) {
        if (k.op == n.op) {
            for (const auto &g : k.kids)
                collect(g);
            return;
        }
        auto q = ref_normalize(k);
        if (q.kind() == kind)
            flat.insert(flat.end(), q.children().begin(), q.children().end());
        else
            flat.push_back(q);
    };
    for (const auto &k : n.kids)
        collect(k);
    std::vector<Query> unique;
    for (auto &q : flat)
        if (std::find(unique.begin(), unique.end(), q) == unique.end())
            unique.push_back(q);
    if (unique.size() == 1)
        return unique.front();
    return kind == Query::Kind::And ? Query::all_of(unique) : Query::any_of(unique);
}


std::optional<Query> reference(const std::string &s) {
    auto tree = ref_parse(s);
    if (not tree)
        return std::nullopt;
    return ref_normalize(*tree);
}


} // unnamed namespace


TEST(Query, PaperSearchStringIsTwoPhraseOr) {
    const auto q = parse_query("large language models OR software development");
    EXPECT_EQ(describe(q), "Or[Phrase(\"large language models\"), Phrase(\"software development\")]");
    EXPECT_EQ(print_query(q), "\"large language models\" OR \"software development\"");
    EXPECT_EQ(parse_query(print_query(q)), q);
}


TEST(Query, PrecedenceNotAndOr) {
    EXPECT_EQ(describe(parse_query("a OR b AND NOT c")), "Or[Term(\"a\"), And[Term(\"b\"), Not(Term(\"c\"))]]");
    EXPECT_EQ(describe(parse_query("(a OR b) AND c")), "And[Or[Term(\"a\"), Term(\"b\")], Term(\"c\")]");
    EXPECT_EQ(describe(parse_query("not not x")), "Not(Not(Term(\"x\")))");
    EXPECT_EQ(print_query(parse_query("(a or b) and not (c and d)")), "(a OR b) AND NOT (c AND d)");
}


TEST(Query, NormalizationFlattensDedupsAndLowercases) {
    EXPECT_EQ(describe(parse_query("A AND (b AND (a AND C))")), "And[Term(\"a\"), Term(\"b\"), Term(\"c\")]");
    EXPECT_EQ(describe(parse_query("\"Code   Review\" OR code review")), "Phrase(\"code review\")");
    EXPECT_EQ(describe(parse_query("\"single\"")), "Term(\"single\")");
    const auto q = Query::all_of({ Query::any_of({ Query::term("X") }), Query::term("x") });
    EXPECT_EQ(describe(normalize_query(q)), "Term(\"x\")");
    EXPECT_EQ(normalize_query(normalize_query(q)), normalize_query(q));
}


TEST(Query, SyntaxErrorsCarryOffsetAndExpected) {
    struct Case {
        std::string input;
        std::size_t offset;
        std::string expected_token;
    };
    const std::vector<Case> cases{
        { "((broken", 8, ")" }, { "", 0, "TERM" },      { "a AND", 5, "TERM" },  { "a)", 1, "end of input" },
        { "(a b", 4, ")" },     { "\"open", 5, "\"" },  { "\"\"", 0, "non-empty phrase" },
        { "OR a", 0, "(" },
    };
    for (const auto &c : cases) {
        try {
            parse_query(c.input);
            ADD_FAILURE() << "no error for " << c.input;
        } catch (const SyntaxError &error) {
            EXPECT_EQ(error.offset(), c.offset) << c.input;
            EXPECT_NE(std::find(error.expected().begin(), error.expected().end(), c.expected_token),
                      error.expected().end())
                << c.input;
            EXPECT_EQ(error.input(), c.input);
        }
    }
}


TEST(Query, AgreesWithReferenceParserOnHandPickedInputs) {
    for (std::string s : { "a", "a b c", "a AND b OR c", "NOT a AND b", "a OR (b OR c)", "\"x  y\" AND z",
                           "((a))", "a AND (b OR NOT (c AND d))", "NOT (a OR b) OR NOT c" }) {
        auto expected = reference(s);
        ASSERT_TRUE(expected) << s;
        EXPECT_EQ(parse_query(s), *expected) << s;
    }
}


TEST(Query, ExhaustiveRoundTripDepthThree) {
    const auto started = std::chrono::steady_clock::now();
    std::size_t failed = 0;
    const auto checked = for_each_depth_three([&](const Query &q) {
        const auto printed = print_query(q);
        if (not(parse_query(printed) == q)) {
            if (++failed < 5)
                ADD_FAILURE() << describe(q) << " printed as " << printed;
        }
    });
    const auto seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    EXPECT_EQ(failed, 0u);
    EXPECT_GT(checked, 1000000u);
    RecordProperty("cases", static_cast<int>(checked));
    RecordProperty("seconds", std::to_string(seconds));
}


TEST(Query, FuzzParseOrSyntaxErrorAndMatchesReference) {
    std::mt19937 rng(20240501);
    const std::vector<std::string> pieces{ "a",  "B",   "foo", "and", "OR",   "Not", "(",     ")",    "\"",  "\"x y\"",
                                           " ",  "  ",  "\t",  "\xc3\xa9", "\x01", "-", "+",    "\"\"", "llm", "\n" };
    for (int n = 0; n < 10000; ++n) {
        std::string input;
        const int length = std::uniform_int_distribution<int>(0, 12)(rng);
        for (int k = 0; k < length; ++k) {
            if (rng() % 10 == 0)
                input += static_cast<char>(rng() % 256);
            else
                input += pieces[rng() % pieces.size()];
        }
        std::optional<Query> parsed;
        try {
            parsed = parse_query(input);
        } catch (const SyntaxError &error) {
            EXPECT_LE(error.offset(), input.size());
            EXPECT_FALSE(error.expected().empty());
        } catch (const std::exception &error) {
            ADD_FAILURE() << "non-syntax exception for input #" << n << ": " << error.what();
            continue;
        }
        const auto expected = reference(input);
        ASSERT_EQ(parsed.has_value(), expected.has_value()) << "input: [" << input << "]";
        if (parsed) {
            EXPECT_EQ(*parsed, *expected) << input;
            EXPECT_EQ(parse_query(print_query(*parsed)), *parsed) << input;
        }
    }
}


TEST(Query, NormalizationPreservesMatchSets) {
    std::mt19937 rng(7);
    const auto universe = random_universe(rng);
    int mismatches = 0;
    for (int n = 0; n < 1000; ++n) {
        const auto q = random_query(rng, 4);
        const auto normalized = normalize_query(q);
        EXPECT_EQ(normalize_query(normalized), normalized);
        for (const auto &doc : universe)
            if (matches(q, doc) != matches(normalized, doc))
                ++mismatches;
    }
    EXPECT_EQ(mismatches, 0);
}


TEST(Query, DialectTranslation) {
    const auto paper = parse_query("large language models OR software development");
    EXPECT_EQ(translate_query(paper, Dialect::canonical), print_query(paper));
    EXPECT_EQ(translate_query(paper, Dialect::url_keywords),
              "%22large%20language%20models%22%20OR%20%22software%20development%22");
    EXPECT_THROW(translate_query(paper, Dialect::plus_minus), DialectUnsupported);
    EXPECT_EQ(translate_query(parse_query("llm AND \"code review\" AND NOT survey"), Dialect::plus_minus),
              "llm \"code review\" -survey");
    try {
        translate_query(parse_query("a AND (b OR c)"), Dialect::plus_minus);
        FAIL();
    } catch (const DialectUnsupported &error) {
        EXPECT_EQ(error.construct(), "Or");
    }
    EXPECT_THROW(parse_dialect("lucene"), ValidationError);
}


TEST(Query, JsonForms) {
    const auto q = parse_query("a AND NOT \"b c\"");
    nlohmann::json j = q;
    EXPECT_EQ(j["kind"], "and");
    EXPECT_EQ(query_from_json(j), q);
    EXPECT_EQ(query_from_json(nlohmann::json("a and not \"b c\"")), q);
    EXPECT_THROW(query_from_json(nlohmann::json{ { "kind", "xor" }, { "children", nlohmann::json::array() } }),
                 ValidationError);
    EXPECT_THROW(query_from_json(nlohmann::json{ { "kind", "term" }, { "text", "" } }), ValidationError);
    EXPECT_THROW(query_from_json(nlohmann::json("((")), SyntaxError);
}

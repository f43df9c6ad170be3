#include "slr/query.hpp"

#include <algorithm>
#include <stdexcept>

#include "slr/errors.hpp"
#include "slr/util.hpp"

namespace slr {

namespace {

bool is_space(char ch) {
    return ch == ' ' or ch == '\t' or ch == '\n' or ch == '\r' or ch == '\f' or ch == '\v';
}


bool is_special(char ch) {
    return ch == '(' or ch == ')' or ch == '"';
}


bool is_keyword(std::string_view word) {
    return iequals(word, "and") or iequals(word, "or") or iequals(word, "not");
}


// Lowercases, drops double quotes and collapses whitespace runs.
std::string clean_leaf_text(std::string_view text) {
    std::string cleaned;
    bool pending_space = false;
    for (const char ch : text) {
        if (ch == '"')
            continue;
        if (is_space(ch)) {
            pending_space = not cleaned.empty();
            continue;
        }
        if (pending_space) {
            cleaned.push_back(' ');
            pending_space = false;
        }
        cleaned.push_back(ch >= 'A' and ch <= 'Z' ? static_cast<char>(ch - 'A' + 'a') : ch);
    }
    return cleaned;
}


void require_leaf_text(const std::string &text) {
    if (trim(text).empty())
        throw std::invalid_argument("query leaf text must be non-empty");
    if (text.find('"') != std::string::npos)
        throw std::invalid_argument("query leaf text must not contain double quotes");
}

} // unnamed namespace


Query Query::term(std::string text) {
    require_leaf_text(text);
    return Query(Kind::Term, std::move(text), {});
}


Query Query::phrase(std::string text) {
    require_leaf_text(text);
    return Query(Kind::Phrase, std::move(text), {});
}


Query Query::negate(Query child) {
    std::vector<Query> children;
    children.push_back(std::move(child));
    return Query(Kind::Not, "", std::move(children));
}


Query Query::all_of(std::vector<Query> children) {
    if (children.empty())
        throw std::invalid_argument("And needs at least one child");
    return Query(Kind::And, "", std::move(children));
}


Query Query::any_of(std::vector<Query> children) {
    if (children.empty())
        throw std::invalid_argument("Or needs at least one child");
    return Query(Kind::Or, "", std::move(children));
}


bool Query::contains(Kind kind) const {
    if (kind_ == kind)
        return true;
    return std::any_of(children_.begin(), children_.end(), [kind](const Query &child) { return child.contains(kind); });
}


const char *to_string(Query::Kind kind) {
    switch (kind) {
    case Query::Kind::Term:
        return "Term";
    case Query::Kind::Phrase:
        return "Phrase";
    case Query::Kind::Not:
        return "Not";
    case Query::Kind::And:
        return "And";
    case Query::Kind::Or:
        return "Or";
    }
    return "?";
}


const char *to_string(Dialect dialect) {
    switch (dialect) {
    case Dialect::canonical:
        return "canonical";
    case Dialect::plus_minus:
        return "plus_minus";
    case Dialect::url_keywords:
        return "url_keywords";
    }
    return "?";
}


Dialect parse_dialect(std::string_view name) {
    if (name == "canonical")
        return Dialect::canonical;
    if (name == "plus_minus")
        return Dialect::plus_minus;
    if (name == "url_keywords")
        return Dialect::url_keywords;
    throw ValidationError("unknown query dialect: " + std::string(name));
}


// ---------------------------------------------------------------------------
// Parsing

namespace {

enum class TokenType { Word, Quoted, LParen, RParen, And, Or, Not, End };


struct Token {
    TokenType type;
    std::string text;
    std::size_t offset;
};


std::vector<Token> tokenize(std::string_view input) {
    std::vector<Token> tokens;
    tokens.reserve(input.size() / 3 + 2);
    std::size_t pos = 0;
    while (pos < input.size()) {
        const char ch = input[pos];
        if (is_space(ch)) {
            ++pos;
            continue;
        }
        if (ch == '(') {
            tokens.push_back({ TokenType::LParen, "(", pos++ });
            continue;
        }
        if (ch == ')') {
            tokens.push_back({ TokenType::RParen, ")", pos++ });
            continue;
        }
        if (ch == '"') {
            const auto close = input.find('"', pos + 1);
            if (close == std::string_view::npos)
                throw SyntaxError(std::string(input), input.size(), { "\"" }, "unterminated phrase");
            tokens.push_back({ TokenType::Quoted, std::string(input.substr(pos + 1, close - pos - 1)), pos });
            pos = close + 1;
            continue;
        }

        const auto start = pos;
        while (pos < input.size() and not is_space(input[pos]) and not is_special(input[pos]))
            ++pos;
        const auto word = input.substr(start, pos - start);
        TokenType type = TokenType::Word;
        if (iequals(word, "and"))
            type = TokenType::And;
        else if (iequals(word, "or"))
            type = TokenType::Or;
        else if (iequals(word, "not"))
            type = TokenType::Not;
        tokens.push_back({ type, std::string(word), start });
    }
    tokens.push_back({ TokenType::End, "", input.size() });
    return tokens;
}


class Parser {
public:
    explicit Parser(std::string_view input) : input_(input), tokens_(tokenize(input)) { }

    Query parse() {
        Query query = parse_or();
        if (peek().type != TokenType::End)
            fail(follow_set(), "unexpected token");
        return query;
    }

private:
    const Token &peek() const { return tokens_[position_]; }
    const Token &take() { return tokens_[position_++]; }

    [[noreturn]] void fail(std::vector<std::string> expected, const std::string &detail) const {
        throw SyntaxError(std::string(input_), peek().offset, std::move(expected), detail);
    }

    std::vector<std::string> follow_set() const {
        std::vector<std::string> expected{ "AND", "OR" };
        expected.emplace_back(depth_ > 0 ? ")" : "end of input");
        return expected;
    }

    // Operands arrive normalized, so combining them yields the same tree
    // normalize_query() would build from the raw parse.
    static Query combine(Query::Kind kind, std::vector<Query> operands) {
        if (operands.size() == 1)
            return std::move(operands.front());
        const bool plain = std::none_of(operands.begin(), operands.end(), [kind](const Query &q) { return q.kind() == kind; });
        if (plain and operands.size() == 2 and not(operands[0] == operands[1]))
            return kind == Query::Kind::And ? Query::all_of(std::move(operands)) : Query::any_of(std::move(operands));
        std::vector<Query> unique;
        unique.reserve(operands.size());
        auto add = [&unique](Query child) {
            if (std::find(unique.begin(), unique.end(), child) == unique.end())
                unique.push_back(std::move(child));
        };
        for (auto &operand : operands) {
            if (operand.kind() == kind) {
                for (const auto &grandchild : operand.children())
                    add(grandchild);
            } else
                add(std::move(operand));
        }
        if (unique.size() == 1)
            return std::move(unique.front());
        return kind == Query::Kind::And ? Query::all_of(std::move(unique)) : Query::any_of(std::move(unique));
    }

    static Query leaf(std::string_view raw) {
        auto text = clean_leaf_text(raw);
        if (text.find(' ') != std::string::npos)
            return Query::phrase(std::move(text));
        return Query::term(std::move(text));
    }

    Query parse_or() {
        std::vector<Query> operands;
        operands.reserve(2);
        operands.push_back(parse_and());
        while (peek().type == TokenType::Or) {
            take();
            operands.push_back(parse_and());
        }
        return combine(Query::Kind::Or, std::move(operands));
    }

    Query parse_and() {
        std::vector<Query> operands;
        operands.reserve(2);
        operands.push_back(parse_not());
        while (peek().type == TokenType::And) {
            take();
            operands.push_back(parse_not());
        }
        return combine(Query::Kind::And, std::move(operands));
    }

    Query parse_not() {
        if (peek().type == TokenType::Not) {
            take();
            return Query::negate(parse_not());
        }
        return parse_primary();
    }

    Query parse_primary() {
        switch (peek().type) {
        case TokenType::Quoted: {
            if (clean_leaf_text(peek().text).empty())
                fail({ "non-empty phrase" }, "empty phrase");
            return leaf(take().text);
        }
        case TokenType::Word: {
            std::string words = take().text;
            while (peek().type == TokenType::Word)
                words += " " + take().text;
            return leaf(words);
        }
        case TokenType::LParen: {
            take();
            ++depth_;
            Query inner = parse_or();
            if (peek().type != TokenType::RParen)
                fail({ "AND", "OR", ")" }, "unbalanced parenthesis");
            take();
            --depth_;
            return inner;
        }
        default:
            fail({ "PHRASE", "TERM", "(", "NOT" }, peek().type == TokenType::End ? "unexpected end of input"
                                                                                  : "unexpected token");
        }
    }

    std::string_view input_;
    std::vector<Token> tokens_;
    std::size_t position_ = 0;
    int depth_ = 0;
};

} // unnamed namespace


Query parse_query(std::string_view text) {
    return Parser(text).parse();
}


// ---------------------------------------------------------------------------
// Normalization

Query normalize_query(const Query &query) {
    switch (query.kind()) {
    case Query::Kind::Term:
    case Query::Kind::Phrase: {
        auto text = clean_leaf_text(query.text());
        if (text.find(' ') != std::string::npos)
            return Query::phrase(std::move(text));
        return Query::term(std::move(text));
    }
    case Query::Kind::Not:
        return Query::negate(normalize_query(query.children().front()));
    case Query::Kind::And:
    case Query::Kind::Or:
        break;
    }

    std::vector<Query> flattened;
    for (const auto &child : query.children()) {
        auto normalized = normalize_query(child);
        if (normalized.kind() == query.kind()) {
            for (const auto &grandchild : normalized.children())
                flattened.push_back(grandchild);
        } else
            flattened.push_back(std::move(normalized));
    }

    std::vector<Query> unique;
    for (auto &child : flattened) {
        if (std::find(unique.begin(), unique.end(), child) == unique.end())
            unique.push_back(std::move(child));
    }

    if (unique.size() == 1)
        return std::move(unique.front());
    return query.kind() == Query::Kind::And ? Query::all_of(std::move(unique)) : Query::any_of(std::move(unique));
}


// ---------------------------------------------------------------------------
// Printing

namespace {

int precedence(const Query &query) {
    switch (query.kind()) {
    case Query::Kind::Or:
        return 1;
    case Query::Kind::And:
        return 2;
    case Query::Kind::Not:
        return 3;
    default:
        return 4;
    }
}


void append_leaf(std::string &out, const Query &leaf) {
    const auto &text = leaf.text();
    const bool needs_quotes = text.find_first_of(" \t\r\n\f\v()") != std::string::npos or is_keyword(text);
    if (needs_quotes)
        out += '"';
    out += text;
    if (needs_quotes)
        out += '"';
}


std::string print_leaf(const Query &leaf) {
    std::string out;
    append_leaf(out, leaf);
    return out;
}


void append_node(std::string &out, const Query &query) {
    if (query.is_leaf()) {
        append_leaf(out, query);
        return;
    }

    if (query.kind() == Query::Kind::Not) {
        const auto &child = query.children().front();
        out += child.is_group() ? "NOT (" : "NOT ";
        append_node(out, child);
        if (child.is_group())
            out += ')';
        return;
    }

    const char *separator = query.kind() == Query::Kind::And ? " AND " : " OR ";
    for (std::size_t i = 0; i < query.children().size(); ++i) {
        const auto &child = query.children()[i];
        if (i > 0)
            out += separator;
        const bool wrap = child.is_group() and precedence(child) <= precedence(query);
        if (wrap)
            out += '(';
        append_node(out, child);
        if (wrap)
            out += ')';
    }
}


std::string print_plus_minus(const Query &query, bool top_level) {
    if (query.is_leaf())
        return print_leaf(query);
    if (query.kind() == Query::Kind::Or)
        throw DialectUnsupported("Or");
    if (query.kind() == Query::Kind::Not) {
        if (not query.children().front().is_leaf())
            throw DialectUnsupported("Not");
        return "-" + print_leaf(query.children().front());
    }
    if (not top_level)
        throw DialectUnsupported("And");
    std::vector<std::string> parts;
    for (const auto &child : query.children())
        parts.push_back(print_plus_minus(child, false));
    return join(parts, " ");
}

} // unnamed namespace


std::string print_query(const Query &query) {
    std::string out;
    append_node(out, query);
    return out;
}


std::string translate_query(const Query &query, Dialect dialect) {
    switch (dialect) {
    case Dialect::canonical:
        return print_query(query);
    case Dialect::plus_minus:
        return print_plus_minus(query, true);
    case Dialect::url_keywords:
        return percent_encode(print_query(query));
    }
    throw std::logic_error("unhandled dialect");
}


std::string describe(const Query &query) {
    if (query.is_leaf())
        return std::string(to_string(query.kind())) + "(\"" + query.text() + "\")";
    std::vector<std::string> parts;
    for (const auto &child : query.children())
        parts.push_back(describe(child));
    if (query.kind() == Query::Kind::Not)
        return "Not(" + parts.front() + ")";
    return std::string(to_string(query.kind())) + "[" + join(parts, ", ") + "]";
}


// ---------------------------------------------------------------------------
// JSON

void to_json(nlohmann::json &json, const Query &query) {
    json = nlohmann::json::object();
    json["kind"] = to_lower_ascii(to_string(query.kind()));
    if (query.is_leaf())
        json["text"] = query.text();
    else {
        json["children"] = nlohmann::json::array();
        for (const auto &child : query.children()) {
            nlohmann::json child_json;
            to_json(child_json, child);
            json["children"].push_back(std::move(child_json));
        }
    }
}


namespace {

Query build_from_json(const nlohmann::json &json) {
    if (not json.is_object() or not json.contains("kind") or not json["kind"].is_string())
        throw ValidationError("query node must be an object with a string \"kind\"");
    const auto kind = json["kind"].get<std::string>();
    try {
        if (kind == "term" or kind == "phrase") {
            if (not json.contains("text") or not json["text"].is_string())
                throw ValidationError("query leaf requires string \"text\"");
            auto text = json["text"].get<std::string>();
            return kind == "term" ? Query::term(std::move(text)) : Query::phrase(std::move(text));
        }
        if (not json.contains("children") or not json["children"].is_array())
            throw ValidationError("query operator requires \"children\" array");
        std::vector<Query> children;
        for (const auto &child : json["children"])
            children.push_back(build_from_json(child));
        if (kind == "not") {
            if (children.size() != 1)
                throw ValidationError("not requires exactly one child");
            return Query::negate(std::move(children.front()));
        }
        if (kind == "and")
            return Query::all_of(std::move(children));
        if (kind == "or")
            return Query::any_of(std::move(children));
    } catch (const std::invalid_argument &error) {
        throw ValidationError(std::string("invalid query node: ") + error.what());
    }
    throw ValidationError("unknown query node kind: " + kind);
}

} // unnamed namespace


Query query_from_json(const nlohmann::json &json) {
    if (json.is_string())
        return parse_query(json.get<std::string>());
    return normalize_query(build_from_json(json));
}

} // namespace slr

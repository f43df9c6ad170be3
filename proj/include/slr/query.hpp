#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace slr {

/// Boolean search expression. A value type: copies are deep, equality is
/// structural.
///
/// Grammar accepted by parse_query():
///
///     query   := or
///     or      := and ("OR" and)*
///     and     := not ("AND" not)*
///     not     := "NOT" not | primary
///     primary := PHRASE | TERM+ | "(" query ")"
///
/// Operators are case-insensitive keywords. A run of two or more bare words
/// folds into one Phrase, so `large language models OR testing` is a
/// two-operand Or.
class Query {
public:
    enum class Kind { Term, Phrase, Not, And, Or };

    static Query term(std::string text);
    static Query phrase(std::string text);
    static Query negate(Query child);
    static Query all_of(std::vector<Query> children);
    static Query any_of(std::vector<Query> children);

    Kind kind() const noexcept { return kind_; }
    bool is_leaf() const noexcept { return kind_ == Kind::Term or kind_ == Kind::Phrase; }
    bool is_group() const noexcept { return kind_ == Kind::And or kind_ == Kind::Or; }

    /// Leaf text; empty for operator nodes.
    const std::string &text() const noexcept { return text_; }
    const std::vector<Query> &children() const noexcept { return children_; }

    /// True when this node or any descendant has kind `kind`.
    bool contains(Kind kind) const;

    friend bool operator==(const Query &, const Query &) = default;

private:
    Query(Kind kind, std::string text, std::vector<Query> children)
        : kind_(kind), text_(std::move(text)), children_(std::move(children)) { }

    Kind kind_;
    std::string text_;
    std::vector<Query> children_;
};

const char *to_string(Query::Kind kind);

enum class Dialect { canonical, plus_minus, url_keywords };

const char *to_string(Dialect dialect);
Dialect parse_dialect(std::string_view name);

/// Parses and normalizes. Throws SyntaxError carrying the byte offset and the
/// set of tokens that would have been accepted there.
Query parse_query(std::string_view text);

/// Canonical text: uppercase operators, multi-word phrases quoted, parentheses
/// only where precedence needs them.
std::string print_query(const Query &query);

/// Flattens same-operator nesting, drops duplicate siblings (first occurrence
/// wins), lowercases text and collapses single-child groups. Idempotent.
Query normalize_query(const Query &query);

/// Throws DialectUnsupported naming the first node the dialect cannot express.
std::string translate_query(const Query &query, Dialect dialect);

/// Debug form used by tests, e.g. `Or[Phrase("a b"), Term("c")]`.
std::string describe(const Query &query);

void to_json(nlohmann::json &json, const Query &query);
/// Accepts either the AST object form or a query string.
Query query_from_json(const nlohmann::json &json);

} // namespace slr

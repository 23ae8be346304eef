#pragma once

// TDQL, the threat data query language.
//
//   query  := FETCH target [WHERE cond (AND cond)*] [SINCE ts] [UNTIL ts] [LIMIT n]
//   target := events | attributes | objects | sessions | count(events)
//   cond   := attribute <sub_type> = <string|integer>
//           | hash = <hex>
//           | ref CONTAINS <hex|sealed edge>
//           | score < <number>
//           | session = <hex>
//
// Keywords and target/condition words are case-insensitive; values are not.
// Timestamps are ISO-8601 (UTC) or integer epoch seconds.

#include "cybexp/privacy.hpp"
#include "cybexp/store.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace cybexp::tdql {

enum class TokenKind { keyword, ident, string, hex, number, timestamp, symbol };

std::string_view to_string(TokenKind kind);

struct Token {
    TokenKind kind;
    std::string text;    // source spelling; strings unescaped
    std::size_t offset;  // byte offset in the source
    bool operator==(const Token&) const = default;
};

/// Lexical or grammatical error. `token_index` is 1-based (0 for lexical
/// errors); `offset` is the byte position in the query text.
class SyntaxError : public Error {
public:
    SyntaxError(std::string message, std::size_t token_index, std::size_t offset,
                std::vector<std::string> expected = {});
    std::size_t token_index() const { return token_index_; }
    std::size_t offset() const { return offset_; }
    const std::vector<std::string>& expected() const { return expected_; }

private:
    std::size_t token_index_;
    std::size_t offset_;
    std::vector<std::string> expected_;
};

/// Well-formed query that cannot be evaluated (malformed hex, bad value).
class QueryError : public Error {
public:
    using Error::Error;
};

std::vector<Token> tokenize(std::string_view text);

enum class Target { events, attributes, objects, sessions, count_events };

struct AttributeCond {
    std::string sub_type;
    tahoe::Scalar value; // string or integer
    bool operator==(const AttributeCond&) const = default;
};
struct HashCond {
    std::string hex;
    bool operator==(const HashCond&) const = default;
};
struct RefContainsCond {
    std::string term;
    bool operator==(const RefContainsCond&) const = default;
};
struct ScoreBelowCond {
    double threshold = 0;
    bool operator==(const ScoreBelowCond&) const = default;
};
struct SessionCond {
    std::string hex;
    bool operator==(const SessionCond&) const = default;
};

using Condition = std::variant<AttributeCond, HashCond, RefContainsCond, ScoreBelowCond, SessionCond>;

struct QueryAst {
    Target target = Target::events;
    std::vector<Condition> conditions;
    std::optional<std::int64_t> since;
    std::optional<std::int64_t> until;
    std::optional<std::uint64_t> limit;
    bool operator==(const QueryAst&) const = default;
};

QueryAst parse(std::span<const Token> tokens);
QueryAst parse(std::string_view text);

/// Canonical text; parse(render(ast)) == ast.
std::string render(const QueryAst& ast);

struct QueryResult {
    std::vector<tahoe::Instance> instances; // ordered by (timestamp, hash)
    std::optional<std::size_t> count;       // set for count(events)

    /// {"count": n} or an array of instance documents.
    nlohmann::json to_json() const;
    /// Newline-delimited instance documents, or the count object.
    std::string to_ndjson() const;
};

/// Conditions resolve through the `_hash` and `_ref` indexes only. An
/// attribute condition matches the plaintext hash and, for every secret
/// supplied, its sealed form. The window bounds are inclusive.
QueryResult execute(const QueryAst& ast, const store::ArchiveStore& store,
                    std::span<const privacy::EdgeSecret> secrets = {});

} // namespace cybexp::tdql

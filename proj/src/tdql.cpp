#include "cybexp/tdql.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <regex>
#include <set>

namespace cybexp::tdql {

using tahoe::Instance;
using tahoe::InstanceKind;

namespace {

constexpr std::array<std::string_view, 7> kKeywords = {"FETCH", "WHERE", "AND", "SINCE", "UNTIL", "LIMIT", "CONTAINS"};
constexpr std::string_view kEnd = "end of input";

std::string lower(std::string_view s)
{
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string upper(std::string_view s)
{
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

bool is_word_char(char c)
{
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == ':' || c == '+' || c == '-';
}

bool looks_like_date(std::string_view w)
{
    return w.size() >= 10 && std::isdigit(static_cast<unsigned char>(w[0])) && w[4] == '-' && w[7] == '-';
}

bool looks_like_number(std::string_view w)
{
    static const std::regex re(R"([+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?)");
    return std::regex_match(w.begin(), w.end(), re);
}

bool is_integer_text(std::string_view w)
{
    return w.find_first_of(".eE") == std::string_view::npos;
}

void append_utf8(std::string& out, std::uint32_t cp)
{
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

std::string describe(char c)
{
    const auto u = static_cast<unsigned char>(c);
    if (u >= 0x21 && u < 0x7F) return std::string("'") + c + "'";
    char buf[8];
    std::snprintf(buf, sizeof buf, "0x%02x", u);
    return buf;
}

} // namespace

std::string_view to_string(TokenKind kind)
{
    switch (kind) {
    case TokenKind::keyword: return "keyword";
    case TokenKind::ident: return "identifier";
    case TokenKind::string: return "string";
    case TokenKind::hex: return "hex";
    case TokenKind::number: return "number";
    case TokenKind::timestamp: return "timestamp";
    case TokenKind::symbol: return "symbol";
    }
    return "?";
}

SyntaxError::SyntaxError(std::string message, std::size_t token_index, std::size_t offset,
                         std::vector<std::string> expected)
    : Error(std::move(message)), token_index_(token_index), offset_(offset), expected_(std::move(expected))
{
}

std::vector<Token> tokenize(std::string_view text)
{
    std::vector<Token> out;
    std::size_t i = 0;
    const auto lex_error = [&](const std::string& what, std::size_t at) -> SyntaxError {
        return SyntaxError("syntax error at offset " + std::to_string(at) + ": " + what, 0, at);
    };

    while (i < text.size()) {
        const char c = text[i];
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            ++i;
            continue;
        }
        const std::size_t start = i;
        if (c == '=' || c == '<' || c == '(' || c == ')') {
            out.push_back({TokenKind::symbol, std::string(1, c), start});
            ++i;
            continue;
        }
        if (c == '"') {
            std::string value;
            ++i;
            bool closed = false;
            while (i < text.size()) {
                const char d = text[i];
                if (d == '"') {
                    closed = true;
                    ++i;
                    break;
                }
                if (static_cast<unsigned char>(d) < 0x20) throw lex_error("control character in string", i);
                if (d != '\\') {
                    value.push_back(d);
                    ++i;
                    continue;
                }
                if (i + 1 >= text.size()) break;
                const char e = text[i + 1];
                i += 2;
                switch (e) {
                case '"': value.push_back('"'); break;
                case '\\': value.push_back('\\'); break;
                case 'n': value.push_back('\n'); break;
                case 't': value.push_back('\t'); break;
                case 'r': value.push_back('\r'); break;
                case 'u': {
                    const auto read4 = [&](std::size_t at) -> std::uint32_t {
                        std::uint32_t cp = 0;
                        if (at + 4 > text.size() ||
                            std::from_chars(text.data() + at, text.data() + at + 4, cp, 16).ptr != text.data() + at + 4)
                            throw lex_error("bad \\u escape", at - 2);
                        return cp;
                    };
                    std::uint32_t cp = read4(i);
                    i += 4;
                    if (cp >= 0xD800 && cp < 0xDC00) {
                        if (i + 6 > text.size() || text[i] != '\\' || text[i + 1] != 'u')
                            throw lex_error("unpaired surrogate", i - 6);
                        const std::uint32_t lo = read4(i + 2);
                        if (lo < 0xDC00 || lo >= 0xE000) throw lex_error("unpaired surrogate", i);
                        cp = 0x10000 + ((cp - 0xD800) << 10) + (lo - 0xDC00);
                        i += 6;
                    } else if (cp >= 0xDC00 && cp < 0xE000) {
                        throw lex_error("unpaired surrogate", i - 6);
                    }
                    append_utf8(value, cp);
                    break;
                }
                default: throw lex_error("unknown escape \\" + std::string(1, e), i - 2);
                }
            }
            if (!closed) throw lex_error("unterminated string", start);
            out.push_back({TokenKind::string, std::move(value), start});
            continue;
        }
        if (!is_word_char(c)) throw lex_error("illegal character " + describe(c), start);

        while (i < text.size() && is_word_char(text[i])) ++i;
        const std::string_view w = text.substr(start, i - start);
        TokenKind kind;
        if (is_digest_hex(w) || tahoe::is_sealed_edge(w)) {
            kind = TokenKind::hex;
        } else if (looks_like_date(w)) {
            if (!parse_iso8601(w)) throw lex_error("invalid timestamp '" + std::string(w) + "'", start);
            kind = TokenKind::timestamp;
        } else if (looks_like_number(w)) {
            kind = TokenKind::number;
        } else if (std::find(kKeywords.begin(), kKeywords.end(), upper(w)) != kKeywords.end()) {
            kind = TokenKind::keyword;
        } else {
            kind = TokenKind::ident;
        }
        out.push_back({kind, std::string(w), start});
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

class Parser {
public:
    explicit Parser(std::span<const Token> tokens) : t_(tokens) {}

    QueryAst run()
    {
        QueryAst ast;
        expect_keyword("FETCH");
        ast.target = target();

        if (at_keyword("WHERE")) {
            ++i_;
            ast.conditions.push_back(condition());
            while (at_keyword("AND")) {
                ++i_;
                ast.conditions.push_back(condition());
            }
        }
        const std::size_t window_at = i_;
        if (at_keyword("SINCE")) {
            ++i_;
            ast.since = timestamp();
        }
        if (at_keyword("UNTIL")) {
            ++i_;
            ast.until = timestamp();
            if (ast.since && *ast.since > *ast.until) fail_at(i_ - 1, "UNTIL precedes SINCE", {});
        }
        if (ast.conditions.empty() && !ast.since && !ast.until)
            fail({"WHERE", "SINCE", "UNTIL"});
        if ((ast.since || ast.until) && ast.target != Target::events && ast.target != Target::count_events)
            fail_at(window_at, "time window applies to events only", {});
        if (at_keyword("LIMIT")) {
            ++i_;
            const Token* n = peek();
            if (!n || n->kind != TokenKind::number || !is_integer_text(n->text)) fail({"positive integer"});
            std::uint64_t v = 0;
            auto [p, ec] = std::from_chars(n->text.data(), n->text.data() + n->text.size(), v);
            if (ec != std::errc() || p != n->text.data() + n->text.size() || v == 0) fail({"positive integer"});
            ast.limit = v;
            ++i_;
        }
        if (peek()) {
            std::vector<std::string> exp;
            if (!ast.limit) {
                if (!ast.until) {
                    if (!ast.since) {
                        if (ast.conditions.empty()) exp.push_back("WHERE");
                        else exp.push_back("AND");
                        exp.push_back("SINCE");
                    }
                    exp.push_back("UNTIL");
                }
                exp.push_back("LIMIT");
            }
            exp.emplace_back(kEnd);
            fail(exp);
        }
        return ast;
    }

private:
    const Token* peek() const { return i_ < t_.size() ? &t_[i_] : nullptr; }

    bool at_keyword(std::string_view kw) const
    {
        const Token* tok = peek();
        return tok && tok->kind == TokenKind::keyword && upper(tok->text) == kw;
    }

    bool at_word(std::string_view word) const
    {
        const Token* tok = peek();
        return tok && (tok->kind == TokenKind::ident || tok->kind == TokenKind::keyword) && lower(tok->text) == word;
    }

    bool at_symbol(char c) const
    {
        const Token* tok = peek();
        return tok && tok->kind == TokenKind::symbol && tok->text[0] == c;
    }

    [[noreturn]] void fail_at(std::size_t index, const std::string& what, std::vector<std::string> expected) const
    {
        std::size_t offset = 0;
        if (index < t_.size())
            offset = t_[index].offset;
        else if (!t_.empty())
            offset = t_.back().offset + t_.back().text.size();
        std::string msg = "syntax error at token " + std::to_string(index + 1) + " (offset " + std::to_string(offset) +
                          "): " + what;
        if (!expected.empty()) {
            msg += "; expected ";
            for (std::size_t k = 0; k < expected.size(); ++k) msg += (k ? ", " : "") + expected[k];
        }
        throw SyntaxError(msg, index + 1, offset, std::move(expected));
    }

    [[noreturn]] void fail(std::vector<std::string> expected) const
    {
        const Token* tok = peek();
        fail_at(i_, tok ? "unexpected " + std::string(to_string(tok->kind)) + " '" + tok->text + "'" : "unexpected end of input",
                std::move(expected));
    }

    void expect_keyword(std::string_view kw)
    {
        if (!at_keyword(kw)) fail({std::string(kw)});
        ++i_;
    }

    void expect_symbol(char c)
    {
        if (!at_symbol(c)) fail({std::string(1, c)});
        ++i_;
    }

    Target target()
    {
        static const std::vector<std::string> kTargets = {"events", "attributes", "objects", "sessions", "count(events)"};
        if (at_word("events")) return ++i_, Target::events;
        if (at_word("attributes")) return ++i_, Target::attributes;
        if (at_word("objects")) return ++i_, Target::objects;
        if (at_word("sessions")) return ++i_, Target::sessions;
        if (at_word("count")) {
            ++i_;
            expect_symbol('(');
            if (!at_word("events")) fail({"events"});
            ++i_;
            expect_symbol(')');
            return Target::count_events;
        }
        fail(kTargets);
    }

    std::string word_value(const char* what)
    {
        const Token* tok = peek();
        if (!tok || tok->kind == TokenKind::string || tok->kind == TokenKind::symbol) fail({what});
        ++i_;
        return tok->text;
    }

    double number()
    {
        const Token* tok = peek();
        if (!tok || tok->kind != TokenKind::number) fail({"number"});
        double v = 0;
        const char* first = tok->text.data();
        if (*first == '+') ++first;
        auto [p, ec] = std::from_chars(first, tok->text.data() + tok->text.size(), v);
        if (ec != std::errc() || p != tok->text.data() + tok->text.size()) fail({"finite number"});
        ++i_;
        return v;
    }

    std::int64_t timestamp()
    {
        const Token* tok = peek();
        if (tok && tok->kind == TokenKind::timestamp) {
            ++i_;
            return *parse_iso8601(tok->text);
        }
        if (tok && tok->kind == TokenKind::number && is_integer_text(tok->text) && tok->text[0] != '-') {
            std::int64_t v = 0;
            const char* first = tok->text.data() + (tok->text[0] == '+');
            auto [p, ec] = std::from_chars(first, tok->text.data() + tok->text.size(), v);
            if (ec == std::errc() && p == tok->text.data() + tok->text.size() && v <= 253402300799) {
                ++i_;
                return v;
            }
        }
        fail({"timestamp"});
    }

    Condition condition()
    {
        if (at_word("attribute")) {
            ++i_;
            const Token* st = peek();
            if (!st || (st->kind != TokenKind::ident && st->kind != TokenKind::keyword && st->kind != TokenKind::hex) ||
                !tahoe::is_token(st->text))
                fail({"sub_type"});
            ++i_;
            expect_symbol('=');
            const Token* v = peek();
            if (v && v->kind == TokenKind::string) {
                ++i_;
                return AttributeCond{st->text, v->text};
            }
            if (v && v->kind == TokenKind::number && is_integer_text(v->text)) {
                std::int64_t n = 0;
                const char* first = v->text.data() + (v->text[0] == '+');
                auto [p, ec] = std::from_chars(first, v->text.data() + v->text.size(), n);
                if (ec == std::errc() && p == v->text.data() + v->text.size()) {
                    ++i_;
                    return AttributeCond{st->text, n};
                }
            }
            fail({"string", "integer"});
        }
        if (at_word("hash")) {
            ++i_;
            expect_symbol('=');
            return HashCond{word_value("hex")};
        }
        if (at_word("ref")) {
            ++i_;
            expect_keyword("CONTAINS");
            return RefContainsCond{word_value("hex")};
        }
        if (at_word("score")) {
            ++i_;
            expect_symbol('<');
            return ScoreBelowCond{number()};
        }
        if (at_word("session")) {
            ++i_;
            expect_symbol('=');
            return SessionCond{word_value("hex")};
        }
        fail({"attribute", "hash", "ref", "score", "session"});
    }

    std::span<const Token> t_;
    std::size_t i_ = 0;
};

std::string quote(std::string_view s)
{
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        case '\r': out += "\\r"; break;
        default:
            if (static_cast<unsigned char>(c) < 0x20) {
                char buf[8];
                std::snprintf(buf, sizeof buf, "\\u%04x", static_cast<unsigned>(c));
                out += buf;
            } else {
                out.push_back(c);
            }
        }
    }
    out.push_back('"');
    return out;
}

InstanceKind kind_of_target(Target t)
{
    switch (t) {
    case Target::attributes: return InstanceKind::attribute;
    case Target::objects: return InstanceKind::object;
    case Target::sessions: return InstanceKind::session;
    default: return InstanceKind::event;
    }
}

} // namespace

QueryAst parse(std::span<const Token> tokens) { return Parser(tokens).run(); }

QueryAst parse(std::string_view text)
{
    const auto tokens = tokenize(text);
    return parse(tokens);
}

std::string render(const QueryAst& ast)
{
    std::string out = "FETCH ";
    switch (ast.target) {
    case Target::events: out += "events"; break;
    case Target::attributes: out += "attributes"; break;
    case Target::objects: out += "objects"; break;
    case Target::sessions: out += "sessions"; break;
    case Target::count_events: out += "count(events)"; break;
    }
    for (std::size_t k = 0; k < ast.conditions.size(); ++k) {
        out += k == 0 ? " WHERE " : " AND ";
        std::visit(
            [&](const auto& c) {
                using T = std::decay_t<decltype(c)>;
                if constexpr (std::is_same_v<T, AttributeCond>) {
                    out += "attribute " + c.sub_type + " = ";
                    if (const auto* s = std::get_if<std::string>(&c.value))
                        out += quote(*s);
                    else
                        out += tahoe::scalar_to_string(c.value);
                } else if constexpr (std::is_same_v<T, HashCond>) {
                    out += "hash = " + c.hex;
                } else if constexpr (std::is_same_v<T, RefContainsCond>) {
                    out += "ref CONTAINS " + c.term;
                } else if constexpr (std::is_same_v<T, ScoreBelowCond>) {
                    out += "score < " + format_double(c.threshold);
                } else {
                    out += "session = " + c.hex;
                }
            },
            ast.conditions[k]);
    }
    if (ast.since) out += " SINCE " + format_iso8601(*ast.since);
    if (ast.until) out += " UNTIL " + format_iso8601(*ast.until);
    if (ast.limit) out += " LIMIT " + std::to_string(*ast.limit);
    return out;
}

// ---------------------------------------------------------------------------

nlohmann::json QueryResult::to_json() const
{
    if (count) return {{"count", *count}};
    auto arr = nlohmann::json::array();
    for (const auto& i : instances) arr.push_back(tahoe::to_json(i));
    return arr;
}

std::string QueryResult::to_ndjson() const
{
    if (count) return to_json().dump() + "\n";
    std::string out;
    for (const auto& i : instances) out += tahoe::canonicalize(tahoe::to_json(i)) + "\n";
    return out;
}

QueryResult execute(const QueryAst& ast, const store::ArchiveStore& store, std::span<const privacy::EdgeSecret> secrets)
{
    const InstanceKind kind = kind_of_target(ast.target);
    const auto of_kind = [&](const std::string& h) { return store.kind_of(h) == kind; };
    const auto require_digest = [](const std::string& h) {
        if (!is_digest_hex(h)) throw QueryError("malformed hex '" + h + "'");
    };

    const auto resolve = [&](const Condition& cond) -> std::set<std::string> {
        std::set<std::string> out;
        if (const auto* a = std::get_if<AttributeCond>(&cond)) {
            std::vector<std::string> terms;
            try {
                terms = privacy::query_terms(a->sub_type, a->value, secrets);
            } catch (const tahoe::TahoeError& e) {
                throw QueryError(std::string("bad attribute value: ") + e.what());
            }
            for (auto& h : store.referencing(terms, kind)) out.insert(std::move(h));
            if (kind == InstanceKind::attribute && of_kind(terms.front())) out.insert(terms.front());
        } else if (const auto* h = std::get_if<HashCond>(&cond)) {
            require_digest(h->hex);
            if (of_kind(h->hex)) out.insert(h->hex);
        } else if (const auto* r = std::get_if<RefContainsCond>(&cond)) {
            if (!is_digest_hex(r->term) && !privacy::sealed_key_id(r->term))
                throw QueryError("malformed hex '" + r->term + "'");
            const std::string t[] = {r->term};
            for (auto& x : store.referencing(t, kind)) out.insert(std::move(x));
        } else if (const auto* s = std::get_if<ScoreBelowCond>(&cond)) {
            for (auto& x : store.scored_below(s->threshold))
                if (of_kind(x)) out.insert(std::move(x));
        } else {
            const auto& sess = std::get<SessionCond>(cond);
            require_digest(sess.hex);
            if (const auto session = store.get(sess.hex); session && session->is(InstanceKind::session))
                for (const auto& m : session->ref)
                    if (of_kind(m)) out.insert(m);
        }
        return out;
    };

    QueryResult result;
    std::vector<Instance> rows;
    if (ast.conditions.empty()) {
        rows = store.scan(kind);
    } else {
        std::set<std::string> candidates = resolve(ast.conditions.front());
        for (std::size_t k = 1; k < ast.conditions.size(); ++k) {
            const auto next = resolve(ast.conditions[k]);
            std::set<std::string> both;
            std::set_intersection(candidates.begin(), candidates.end(), next.begin(), next.end(),
                                  std::inserter(both, both.end()));
            candidates = std::move(both);
        }
        rows.reserve(candidates.size());
        for (const auto& h : candidates)
            if (auto inst = store.get(h)) rows.push_back(std::move(*inst));
    }
    if (ast.since || ast.until)
        std::erase_if(rows, [&](const Instance& i) {
            return (ast.since && i.timestamp < *ast.since) || (ast.until && i.timestamp > *ast.until);
        });
    std::sort(rows.begin(), rows.end(), [](const Instance& a, const Instance& b) {
        return std::tie(a.timestamp, a.hash) < std::tie(b.timestamp, b.hash);
    });
    if (ast.limit && rows.size() > *ast.limit) rows.resize(*ast.limit);
    if (ast.target == Target::count_events)
        result.count = rows.size();
    else
        result.instances = std::move(rows);
    return result;
}

} // namespace cybexp::tdql

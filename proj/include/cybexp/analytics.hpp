#pragma once

// Analysis over the archive: defensive rule feed, phishing URL features,
// the online second-order perceptron and asynchronous reports.

#include "cybexp/store.hpp"
#include "cybexp/threatrank.hpp"

#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cybexp::analytics {

class AnalyticsError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Rules

struct DefensiveRule {
    std::string action = "block";
    std::string sub_type;
    std::string value;
    double score = 0;                 // lowest score among supporting events
    std::vector<std::string> events;  // supporting event hashes, sorted
    std::int64_t issued_at = 0;

    nlohmann::json to_json() const;
};

struct RuleOptions {
    double threshold = -0.2;
    std::int64_t issued_at = 0;
    /// Attribute sub_types that can be blocked.
    std::set<std::string> sub_types{"ip", "url", "domain", "email_addr", "filename"};
};

/// One rule per attribute linked to an event scored at or below the
/// threshold (and below zero). When such an event carries `_mal_ref`
/// edges only those attributes count. Ordered by score, then sub_type,
/// then value.
std::vector<DefensiveRule> gen_rules(const store::ArchiveStore& store, const RuleOptions& opts = {});

/// `BLOCK <sub_type> <value> # score=<s>` per line.
std::string rules_text(const std::vector<DefensiveRule>& rules);
nlohmann::json rules_json(const std::vector<DefensiveRule>& rules);

// ---------------------------------------------------------------------------
// URL features

/// Sorted (index, value) pairs with unique indexes and nonzero values.
using SparseVector = std::vector<std::pair<std::uint32_t, double>>;

double dot(const SparseVector& a, const SparseVector& b);

inline constexpr std::uint32_t kLexicalSlots = 5;
inline constexpr std::uint32_t kNgramSlots = 1u << 18;
inline constexpr std::uint32_t kFeatureDim = kLexicalSlots + kNgramSlots;

struct UrlFeatures {
    std::uint32_t length = 0;
    std::uint32_t dots = 0;        // over the whole URL
    std::uint32_t symbols = 0;     // characters outside [A-Za-z0-9]
    std::uint32_t digits = 0;
    std::uint32_t path_depth = 0;  // non-empty path segments
    SparseVector vector;           // lexical block then hashed n-gram counts
};

std::uint32_t fnv1a32(std::string_view bytes);

/// Slot of an n-gram in the full feature space.
std::uint32_t ngram_slot(std::string_view gram);

UrlFeatures extract_features(std::string_view url);

// ---------------------------------------------------------------------------
// Second-order perceptron

enum class Label { benign = -1, phishing = 1 };

std::string_view to_string(Label l);
std::optional<Label> label_from_string(std::string_view text);

/// Online second-order perceptron kept in dual form: the examples stored
/// on mistakes, their labels and the inverse of (a I + Gram).
class SopModel {
public:
    explicit SopModel(double a = 1.0);

    /// v' (a I + S S' + x x')^-1 x, with S the stored examples.
    double margin(const SparseVector& x) const;
    /// Phishing when the margin is positive.
    Label predict(const SparseVector& x) const;
    /// Stores `x` when the prediction was wrong. Returns whether it did.
    bool update(const SparseVector& x, Label truth);

    double a() const { return a_; }
    std::size_t mistakes() const { return ys_.size(); }
    std::size_t updates_seen() const { return seen_; }

    nlohmann::json to_json() const;
    static SopModel from_json(const nlohmann::json& doc);
    bool operator==(const SopModel& other) const;

private:
    struct Probe {
        std::vector<double> mkx;  // Minv * K(stored, x)
        double schur = 0;         // a + x'x - K(stored, x)' Minv K(stored, x)
    };
    Probe probe(const SparseVector& x) const;
    void store_example(const SparseVector& x, Label y, const Probe& p);

    double a_;
    std::vector<SparseVector> xs_;
    std::vector<double> ys_;
    std::vector<std::vector<double>> minv_;  // (a I + Gram)^-1
    std::size_t seen_ = 0;
};

// ---------------------------------------------------------------------------
// Graph view used by reports and the HTTP layer

/// Neighbourhood of `root` with kinds, scores and colours.
nlohmann::json graph_json(const store::ArchiveStore& store, std::string_view root, int depth);

// ---------------------------------------------------------------------------
// Reports

enum class ReportKind { count, related_graph, url_check };
enum class ReportStatus { pending, running, done, failed };

std::string_view to_string(ReportKind k);
std::optional<ReportKind> report_kind_from_string(std::string_view text);
std::string_view to_string(ReportStatus s);

struct ReportRequest {
    ReportKind kind = ReportKind::count;
    nlohmann::json params = nlohmann::json::object();
    std::string requester;
};

struct Report {
    std::string id;
    nlohmann::json payload;
    std::int64_t created_at = 0;
};

struct ReportState {
    ReportRequest request;
    ReportStatus status = ReportStatus::pending;
    std::optional<Report> report;
    std::string diagnostic;

    nlohmann::json to_json() const;
};

/// Submit returns immediately; workers calling process_pending() claim each
/// request exactly once.
///
/// Parameters by kind:
///   count:         {"query": "<TDQL>"} or {"sub_type", "value", "since"?, "until"?}
///   related_graph: {"hash", "depth"?}
///   url_check:     {"url"}
class ReportService {
public:
    explicit ReportService(const SopModel* model = nullptr) : model_(model) {}

    void set_model(const SopModel* model);

    /// Throws AnalyticsError on a malformed request.
    std::string submit(ReportRequest req);

    /// Processes up to `max` pending requests; returns how many completed
    /// (done or failed).
    std::size_t process_pending(const store::ArchiveStore& store, std::size_t max = SIZE_MAX);

    /// Throws AnalyticsError for an unknown id.
    ReportState fetch(const std::string& id) const;
    std::vector<std::string> ids() const;

    /// Deterministic payload for one request against the current store.
    nlohmann::json run(const ReportRequest& req, const store::ArchiveStore& store) const;

private:
    std::optional<std::pair<std::string, ReportRequest>> claim();

    mutable std::mutex mutex_;
    std::map<std::string, ReportState> states_;
    std::deque<std::string> queue_;
    std::size_t next_ = 1;
    const SopModel* model_;
};

} // namespace cybexp::analytics

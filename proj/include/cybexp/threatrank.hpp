#pragma once

// ThreatRank: events are scored by summing, over every simple alternating
// path from a known-malicious event, the product of per-node factors
// 0.998^d(x) / L(x) for every node but the last, starting from -1.
// d(x) is the age in whole days of an event (0 for other nodes) and L(x)
// its plaintext degree.

#include "cybexp/store.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cybexp::threatrank {

class RankError : public Error {
public:
    using Error::Error;
};

enum class Provenance { admin, vote, automatic };

std::string_view to_string(Provenance p);
std::optional<Provenance> provenance_from_string(std::string_view text);

/// The seed set: events known to be malicious, each fixed at -1.
class MalKnowledge {
public:
    void mark(std::string event_hash, Provenance provenance = Provenance::admin);
    void unmark(std::string_view event_hash);
    bool contains(std::string_view event_hash) const;
    bool empty() const { return events_.empty(); }
    std::size_t size() const { return events_.size(); }
    const std::map<std::string, Provenance, std::less<>>& events() const { return events_; }

    nlohmann::json to_json() const;
    static MalKnowledge from_json(const nlohmann::json& doc);
    void save(const std::filesystem::path& file) const;
    static MalKnowledge load(const std::filesystem::path& file); // empty when absent

private:
    std::map<std::string, Provenance, std::less<>> events_;
};

struct RankContext {
    std::int64_t as_of = 0;  // epoch seconds
    double decay = 0.998;
    int max_hops = 7;        // edges per path
};

using RankPath = std::vector<std::string>;

enum class Color { blue, green, yellow, red };

std::string_view to_string(Color c);

/// blue when unscored; green above -0.01; yellow above -0.2; red otherwise.
Color color_of(std::optional<double> score);

struct ThreatScore {
    double value = 0;
    Color color = Color::green;
};

/// Event: the plaintext members of its `_ref`. Any other node: the events
/// whose `_ref` holds it. Sorted.
std::vector<std::string> get_related(std::string_view node, const store::ArchiveStore& store);

/// Plaintext degree used for normalisation.
std::size_t degree(std::string_view node, const store::ArchiveStore& store);

/// Whole days between the event's timestamp and `as_of` (never negative);
/// 0 for non-events.
std::int64_t age_days(const tahoe::Instance& node, std::int64_t as_of);

/// Every simple path src -> dest with at most `max_hops` edges, in
/// lexicographic order of node hashes.
std::vector<RankPath> find_paths(std::string_view src_event, std::string_view dest_event,
                                 const store::ArchiveStore& store, int max_hops = 7);

/// Score contributed by one path; a single-node path scores -1.
double threat_rank_path(const RankPath& path, const store::ArchiveStore& store, const RankContext& ctx);

/// Members of `mal` score -1. Others sum threat_rank_path over all paths
/// from every member.
ThreatScore threat_rank(std::string_view event, const store::ArchiveStore& store, const MalKnowledge& mal,
                        const RankContext& ctx);

/// Scores of every stored event, without writing them.
std::map<std::string, double> compute_scores(const store::ArchiveStore& store, const MalKnowledge& mal,
                                             const RankContext& ctx);

/// Recomputes and stores `_malicious_score` for every event. Returns the
/// number of events scored.
std::size_t update_scores(store::ArchiveStore& store, const MalKnowledge& mal, const RankContext& ctx);

/// Adds the event to `mal` and records which of its edges carry the
/// malicious context.
void flag_malicious(store::ArchiveStore& store, MalKnowledge& mal, const std::string& event_hash,
                    std::vector<std::string> mal_refs, Provenance provenance = Provenance::admin);

} // namespace cybexp::threatrank

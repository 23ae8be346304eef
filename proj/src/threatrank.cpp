#include "cybexp/threatrank.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

namespace cybexp::threatrank {

using tahoe::Instance;
using tahoe::InstanceKind;
using nlohmann::json;

std::string_view to_string(Provenance p)
{
    switch (p) {
    case Provenance::admin: return "admin";
    case Provenance::vote: return "vote";
    case Provenance::automatic: return "automatic";
    }
    return "admin";
}

std::optional<Provenance> provenance_from_string(std::string_view text)
{
    if (text == "admin") return Provenance::admin;
    if (text == "vote") return Provenance::vote;
    if (text == "automatic") return Provenance::automatic;
    return std::nullopt;
}

void MalKnowledge::mark(std::string event_hash, Provenance provenance) { events_[std::move(event_hash)] = provenance; }

void MalKnowledge::unmark(std::string_view event_hash)
{
    if (auto it = events_.find(event_hash); it != events_.end()) events_.erase(it);
}

bool MalKnowledge::contains(std::string_view event_hash) const { return events_.find(event_hash) != events_.end(); }

json MalKnowledge::to_json() const
{
    json doc = json::object();
    for (const auto& [h, p] : events_) doc[h] = to_string(p);
    return doc;
}

MalKnowledge MalKnowledge::from_json(const json& doc)
{
    MalKnowledge m;
    for (const auto& [h, p] : doc.items()) {
        auto prov = provenance_from_string(p.get<std::string>());
        if (!prov) throw RankError("unknown provenance for " + h);
        m.mark(h, *prov);
    }
    return m;
}

void MalKnowledge::save(const std::filesystem::path& file) const
{
    const auto tmp = file.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << to_json().dump(2) << '\n';
        if (!out) throw RankError("cannot write " + tmp);
    }
    std::filesystem::rename(tmp, file);
}

MalKnowledge MalKnowledge::load(const std::filesystem::path& file)
{
    if (!std::filesystem::exists(file)) return {};
    std::ifstream in(file);
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw RankError("malformed " + file.string());
    return from_json(doc);
}

std::string_view to_string(Color c)
{
    switch (c) {
    case Color::blue: return "blue";
    case Color::green: return "green";
    case Color::yellow: return "yellow";
    case Color::red: return "red";
    }
    return "blue";
}

Color color_of(std::optional<double> score)
{
    if (!score) return Color::blue;
    if (*score > -0.01) return Color::green;
    if (*score > -0.2) return Color::yellow;
    return Color::red;
}

std::int64_t age_days(const Instance& node, std::int64_t as_of)
{
    if (!node.is(InstanceKind::event) || as_of <= node.timestamp) return 0;
    return (as_of - node.timestamp) / 86400;
}

namespace {

// Lazily materialised adjacency over the store; each node is fetched once.
class GraphView {
public:
    GraphView(const store::ArchiveStore& s, std::int64_t as_of) : store_(s), as_of_(as_of) {}

    struct Node {
        bool is_event = false;
        std::vector<std::string> related;
        std::size_t degree = 0;
        std::int64_t days = 0;
    };

    const Node& at(const std::string& hash)
    {
        if (auto it = nodes_.find(hash); it != nodes_.end()) return it->second;
        Node n;
        const auto kind = store_.kind_of(hash);
        if (kind == InstanceKind::event) {
            const auto ev = store_.get(hash);
            n.is_event = true;
            for (const auto& r : ev->ref)
                if (tahoe::is_plain_edge(r)) n.related.push_back(r);
            std::sort(n.related.begin(), n.related.end());
            n.days = age_days(*ev, as_of_);
        } else {
            const std::string t[] = {hash};
            n.related = store_.referencing(t, InstanceKind::event);
            std::sort(n.related.begin(), n.related.end());
        }
        n.degree = n.related.size();
        return nodes_.emplace(hash, std::move(n)).first->second;
    }

private:
    const store::ArchiveStore& store_;
    std::int64_t as_of_;
    std::unordered_map<std::string, Node> nodes_;
};

double node_factor(const GraphView::Node& n, double decay)
{
    if (n.degree == 0) throw RankError("zero degree on an interior path node");
    return std::pow(decay, static_cast<double>(n.days)) / static_cast<double>(n.degree);
}

void require_event(const store::ArchiveStore& s, std::string_view h, const char* what)
{
    if (s.kind_of(h) != InstanceKind::event) throw RankError(std::string(what) + " is not a stored event: " + std::string(h));
}

} // namespace

std::vector<std::string> get_related(std::string_view node, const store::ArchiveStore& store)
{
    const std::string h(node);
    if (!store.contains(h) && store.reference_count(h) == 0) throw RankError("unknown node " + h);
    GraphView g(store, 0);
    return g.at(h).related;
}

std::size_t degree(std::string_view node, const store::ArchiveStore& store)
{
    GraphView g(store, 0);
    return g.at(std::string(node)).degree;
}

std::vector<RankPath> find_paths(std::string_view src_event, std::string_view dest_event,
                                 const store::ArchiveStore& store, int max_hops)
{
    require_event(store, src_event, "source");
    require_event(store, dest_event, "destination");
    GraphView g(store, 0);
    std::vector<RankPath> out;
    RankPath path{std::string(src_event)};
    std::unordered_set<std::string> on_path{path.front()};
    const std::string dest(dest_event);

    auto dfs = [&](auto&& self) -> void {
        const std::string cur = path.back();
        if (cur == dest) {
            out.push_back(path);
            return;
        }
        if (static_cast<int>(path.size()) - 1 >= max_hops) return;
        for (const auto& next : g.at(cur).related) {
            if (on_path.contains(next)) continue;
            path.push_back(next);
            on_path.insert(next);
            self(self);
            on_path.erase(next);
            path.pop_back();
        }
    };
    dfs(dfs);
    return out;
}

double threat_rank_path(const RankPath& path, const store::ArchiveStore& store, const RankContext& ctx)
{
    if (path.empty()) throw RankError("empty path");
    GraphView g(store, ctx.as_of);
    double tr = -1.0;
    for (std::size_t k = 0; k + 1 < path.size(); ++k) tr *= node_factor(g.at(path[k]), ctx.decay);
    return tr;
}

std::map<std::string, double> compute_scores(const store::ArchiveStore& store, const MalKnowledge& mal,
                                             const RankContext& ctx)
{
    std::map<std::string, double> scores;
    for (const auto& e : store.scan(InstanceKind::event)) scores[e.hash] = 0.0;

    GraphView g(store, ctx.as_of);
    for (const auto& [src, prov] : mal.events()) {
        if (!scores.contains(src)) continue;
        // Every simple path from src is visited once; its value is credited
        // to the event it ends at.
        std::unordered_set<std::string> on_path{src};
        auto dfs = [&](auto&& self, const std::string& cur, double tr, int hops) -> void {
            if (hops >= ctx.max_hops) return;
            const auto& node = g.at(cur);
            const double next_tr = tr * node_factor(node, ctx.decay);
            for (const auto& next : node.related) {
                if (on_path.contains(next)) continue;
                if (g.at(next).is_event) scores[next] += next_tr;
                on_path.insert(next);
                self(self, next, next_tr, hops + 1);
                on_path.erase(next);
            }
        };
        dfs(dfs, src, -1.0, 0);
    }
    for (const auto& [src, prov] : mal.events())
        if (auto it = scores.find(src); it != scores.end()) it->second = -1.0;
    return scores;
}

ThreatScore threat_rank(std::string_view event, const store::ArchiveStore& store, const MalKnowledge& mal,
                        const RankContext& ctx)
{
    require_event(store, event, "target");
    ThreatScore out;
    if (mal.contains(event)) {
        out.value = -1.0;
    } else {
        for (const auto& [src, prov] : mal.events()) {
            if (store.kind_of(src) != InstanceKind::event) continue;
            for (const auto& p : find_paths(src, event, store, ctx.max_hops))
                out.value += threat_rank_path(p, store, ctx);
        }
    }
    out.color = color_of(out.value);
    return out;
}

std::size_t update_scores(store::ArchiveStore& store, const MalKnowledge& mal, const RankContext& ctx)
{
    const auto scores = compute_scores(store, mal, ctx);
    store.set_scores(scores);
    return scores.size();
}

void flag_malicious(store::ArchiveStore& store, MalKnowledge& mal, const std::string& event_hash,
                    std::vector<std::string> mal_refs, Provenance provenance)
{
    require_event(store, event_hash, "flagged node");
    if (!mal_refs.empty()) {
        const auto ev = store.get(event_hash);
        std::vector<std::string> merged = ev->mal_ref;
        merged.insert(merged.end(), mal_refs.begin(), mal_refs.end());
        std::sort(merged.begin(), merged.end());
        merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
        store.set_mal_ref(event_hash, std::move(merged));
    }
    mal.mark(event_hash, provenance);
}

} // namespace cybexp::threatrank

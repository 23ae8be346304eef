#include "cybexp/store.hpp"

#include <algorithm>
#include <istream>
#include <mutex>
#include <ostream>
#include <set>
#include <unordered_set>

namespace cybexp::store {

using nlohmann::json;
using tahoe::is_plain_edge;
using tahoe::is_sealed_edge;

namespace {

constexpr std::uint64_t kDigestBytes = 32;
constexpr const char* kLogName = "instances.log";
constexpr const char* kManifestName = "manifest.json";

bool before(const Instance& a, const Instance& b)
{
    return std::tie(a.timestamp, a.hash) < std::tie(b.timestamp, b.hash);
}

std::string encode_record(const Instance& inst)
{
    const std::string body = tahoe::canonicalize(tahoe::to_json(inst));
    const auto n = static_cast<std::uint32_t>(body.size());
    std::string rec;
    rec.reserve(4 + body.size());
    for (int i = 0; i < 4; ++i) rec.push_back(static_cast<char>((n >> (8 * i)) & 0xff));
    rec += body;
    return rec;
}

} // namespace

double StoreStats::compression_gain_percent() const
{
    if (raw_input_bytes == 0) return 0.0;
    return 100.0 * (static_cast<double>(raw_input_bytes) - static_cast<double>(stored_bytes)) /
           static_cast<double>(raw_input_bytes);
}

std::uint64_t edge_storage_bytes(std::string_view ref)
{
    if (!is_sealed_edge(ref)) return kDigestBytes;
    std::uint64_t hex_chars = 0;
    for (char c : ref.substr(tahoe::kSealedEdgePrefix.size()))
        if (c != '.') ++hex_chars;
    return hex_chars / 2;
}

std::uint64_t stored_size(const Instance& inst)
{
    if (inst.is(InstanceKind::raw)) return 0;
    json body = tahoe::hash_body(inst);
    std::uint64_t edges = 0;
    if (body.contains("_ref")) {
        body["_ref"] = json::array();
        for (const auto& r : inst.ref) edges += edge_storage_bytes(r);
    }
    return tahoe::canonicalize(body).size() + kDigestBytes + edges;
}

ArchiveStore::ArchiveStore() = default;

ArchiveStore::ArchiveStore(std::filesystem::path dir) : dir_(std::move(dir))
{
    std::filesystem::create_directories(*dir_);
    load();
    log_.open(*dir_ / kLogName, std::ios::binary | std::ios::app);
    if (!log_) throw StoreError("cannot open archive log in " + dir_->string());
}

ArchiveStore::~ArchiveStore()
{
    try {
        flush();
    } catch (...) {
    }
}

void ArchiveStore::load()
{
    const auto log_path = *dir_ / kLogName;
    if (std::filesystem::exists(*dir_ / kManifestName)) {
        std::ifstream in(*dir_ / kManifestName);
        json manifest = json::parse(in, nullptr, false);
        if (manifest.is_discarded() || manifest.value("format", "") != "cybexp-archive")
            throw StoreError("corrupt archive manifest in " + dir_->string());
        stats_.duplicate_hits = manifest.value("duplicate_hits", std::uint64_t{0});
    }
    if (!std::filesystem::exists(log_path)) return;

    std::ifstream in(log_path, std::ios::binary);
    std::uint64_t good = 0;
    std::string body;
    for (;;) {
        unsigned char len_buf[4];
        if (!in.read(reinterpret_cast<char*>(len_buf), 4)) break;
        const std::uint32_t n = len_buf[0] | len_buf[1] << 8 | len_buf[2] << 16 |
                                static_cast<std::uint32_t>(len_buf[3]) << 24;
        body.resize(n);
        if (!in.read(body.data(), n)) break;
        json doc = json::parse(body, nullptr, false);
        if (doc.is_discarded()) break;
        Instance inst = tahoe::from_json(doc);
        auto [it, fresh] = instances_.try_emplace(inst.hash, inst);
        if (fresh) {
            index_locked(inst);
            account_locked(inst, +1);
        } else {
            it->second = std::move(inst);
        }
        good += 4 + n;
    }
    in.close();
    // Drop a torn trailing record left by an interrupted append.
    if (std::filesystem::file_size(log_path) != good) std::filesystem::resize_file(log_path, good);
}

void ArchiveStore::index_locked(const Instance& inst)
{
    for (const auto& r : inst.ref) ref_index_[r].push_back(inst.hash);
}

void ArchiveStore::account_locked(const Instance& inst, int sign)
{
    const auto delta = [&](std::uint64_t& counter, std::uint64_t n) {
        counter = sign > 0 ? counter + n : counter - n;
    };
    delta(stats_.instance_count, 1);
    if (inst.is(InstanceKind::raw))
        delta(stats_.raw_input_bytes, inst.payload.size());
    else
        delta(stats_.stored_bytes, stored_size(inst));
}

void ArchiveStore::append_record(const Instance& inst)
{
    if (!dir_) return;
    const auto rec = encode_record(inst);
    log_.write(rec.data(), static_cast<std::streamsize>(rec.size()));
}

void ArchiveStore::write_manifest() const
{
    if (!dir_) return;
    json manifest = {
        {"format", "cybexp-archive"},
        {"version", 1},
        {"log", kLogName},
        {"instance_count", stats_.instance_count},
        {"duplicate_hits", stats_.duplicate_hits},
        {"raw_input_bytes", stats_.raw_input_bytes},
        {"stored_bytes", stats_.stored_bytes},
    };
    const auto tmp = *dir_ / (std::string(kManifestName) + ".tmp");
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << manifest.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, *dir_ / kManifestName);
}

void ArchiveStore::flush()
{
    std::unique_lock lock(mutex_);
    if (!dir_) return;
    log_.flush();
    write_manifest();
}

bool ArchiveStore::resolvable_locked(const std::string& ref,
                                     const std::unordered_map<std::string, const Instance*>& bundle) const
{
    return is_sealed_edge(ref) || bundle.contains(ref) || instances_.contains(ref);
}

InsertReceipt ArchiveStore::insert(std::span<const Instance> bundle)
{
    for (const auto& inst : bundle) {
        auto problems = tahoe::validate(inst);
        if (!problems.empty())
            throw StoreError("rejecting " + std::string(tahoe::to_string(inst.kind)) + " " + inst.hash +
                             ": " + problems.front());
    }

    std::unique_lock lock(mutex_);
    std::unordered_map<std::string, const Instance*> local;
    for (const auto& inst : bundle) local.emplace(inst.hash, &inst);

    const auto lookup = [&](const std::string& h) -> const Instance* {
        if (auto it = local.find(h); it != local.end()) return it->second;
        if (auto it = instances_.find(h); it != instances_.end()) return &it->second;
        return nullptr;
    };

    for (const auto& inst : bundle) {
        for (const auto& r : inst.ref) {
            if (!resolvable_locked(r, local))
                throw StoreError("dangling edge " + r + " in " + inst.hash);
            if (inst.is(InstanceKind::session)) {
                const Instance* member = lookup(r);
                if (!member->is(InstanceKind::event))
                    throw StoreError("session " + inst.hash + " references non-event " + r);
            }
        }
        if (!inst.is(InstanceKind::event)) continue;
        // Events must carry the closure of their children.
        const std::unordered_set<std::string> closure(inst.ref.begin(), inst.ref.end());
        for (const auto& r : inst.ref) {
            if (is_sealed_edge(r)) continue;
            const Instance* child = lookup(r);
            if (child->is(InstanceKind::event) || child->is(InstanceKind::session) ||
                child->is(InstanceKind::raw))
                throw StoreError("event " + inst.hash + " references a " +
                                 std::string(tahoe::to_string(child->kind)));
            for (const auto& grand : child->ref)
                if (!closure.contains(grand))
                    throw StoreError("event " + inst.hash + " misses descendant " + grand);
        }
    }

    InsertReceipt receipt;
    for (const auto& inst : bundle) {
        auto [it, fresh] = instances_.try_emplace(inst.hash, inst);
        if (!fresh) {
            ++receipt.deduped;
            ++stats_.duplicate_hits;
            continue;
        }
        ++receipt.inserted;
        index_locked(inst);
        account_locked(inst, +1);
        append_record(inst);
    }
    if (dir_ && receipt.inserted > 0) log_.flush();
    return receipt;
}

std::optional<Instance> ArchiveStore::get(std::string_view hash) const
{
    std::shared_lock lock(mutex_);
    auto it = instances_.find(std::string(hash));
    if (it == instances_.end()) return std::nullopt;
    if (it->second.is(InstanceKind::attribute)) ++attribute_reads_;
    return it->second;
}

bool ArchiveStore::contains(std::string_view hash) const
{
    std::shared_lock lock(mutex_);
    return instances_.contains(std::string(hash));
}

std::optional<InstanceKind> ArchiveStore::kind_of(std::string_view hash) const
{
    std::shared_lock lock(mutex_);
    auto it = instances_.find(std::string(hash));
    if (it == instances_.end()) return std::nullopt;
    return it->second.kind;
}

std::vector<std::string> ArchiveStore::scored_below(double threshold) const
{
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [h, inst] : instances_)
        if (inst.malicious_score && *inst.malicious_score < threshold) out.push_back(h);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::string> ArchiveStore::referencing(std::span<const std::string> terms,
                                                   std::optional<InstanceKind> kind) const
{
    std::shared_lock lock(mutex_);
    std::set<std::string> hits;
    for (const auto& t : terms) {
        auto it = ref_index_.find(t);
        if (it == ref_index_.end()) continue;
        for (const auto& h : it->second)
            if (!kind || instances_.at(h).kind == *kind) hits.insert(h);
    }
    return {hits.begin(), hits.end()};
}

std::size_t ArchiveStore::reference_count(std::string_view term, std::optional<InstanceKind> kind) const
{
    std::shared_lock lock(mutex_);
    auto it = ref_index_.find(std::string(term));
    if (it == ref_index_.end()) return 0;
    if (!kind) return it->second.size();
    return static_cast<std::size_t>(std::count_if(it->second.begin(), it->second.end(), [&](const auto& h) {
        return instances_.at(h).kind == *kind;
    }));
}

std::vector<Instance> ArchiveStore::events_referencing(std::span<const std::string> terms) const
{
    const auto hashes = referencing(terms, InstanceKind::event);
    std::shared_lock lock(mutex_);
    std::vector<Instance> out;
    out.reserve(hashes.size());
    for (const auto& h : hashes) out.push_back(instances_.at(h));
    std::sort(out.begin(), out.end(), before);
    return out;
}

Subgraph ArchiveStore::neighbors(std::string_view root_view, int depth) const
{
    if (depth < 1) throw StoreError("neighbors: depth must be >= 1");
    const std::string root(root_view);
    std::shared_lock lock(mutex_);
    if (!instances_.contains(root) && !ref_index_.contains(root))
        throw StoreError("neighbors: unknown node " + root);

    Subgraph g;
    std::unordered_set<std::string> seen{root};
    std::set<std::pair<std::string, std::string>> edges;
    std::vector<std::string> frontier{root};
    g.nodes.push_back(root);

    const auto visit = [&](const std::string& n, std::vector<std::string>& next) {
        if (seen.insert(n).second) {
            g.nodes.push_back(n);
            next.push_back(n);
        }
    };

    for (int level = 0; level < depth && !frontier.empty(); ++level) {
        std::vector<std::string> next;
        for (const auto& node : frontier) {
            auto it = instances_.find(node);
            if (it != instances_.end() && it->second.is(InstanceKind::event)) {
                for (const auto& m : it->second.ref) {
                    edges.emplace(node, m);
                    visit(m, next);
                }
                continue;
            }
            auto rit = ref_index_.find(node);
            if (rit == ref_index_.end()) continue;
            std::vector<std::string> events;
            for (const auto& h : rit->second)
                if (instances_.at(h).is(InstanceKind::event)) events.push_back(h);
            std::sort(events.begin(), events.end());
            for (const auto& e : events) {
                edges.emplace(e, node);
                visit(e, next);
            }
        }
        frontier = std::move(next);
    }
    g.edges.assign(edges.begin(), edges.end());
    return g;
}

StoreStats ArchiveStore::stats() const
{
    std::shared_lock lock(mutex_);
    return stats_;
}

std::vector<Instance> ArchiveStore::scan(std::optional<InstanceKind> kind) const
{
    std::shared_lock lock(mutex_);
    std::vector<Instance> out;
    for (const auto& [h, inst] : instances_)
        if (!kind || inst.kind == *kind) out.push_back(inst);
    std::sort(out.begin(), out.end(), [](const Instance& a, const Instance& b) { return a.hash < b.hash; });
    return out;
}

void ArchiveStore::set_scores(const std::map<std::string, double>& scores)
{
    std::unique_lock lock(mutex_);
    bool wrote = false;
    for (const auto& [h, score] : scores) {
        auto it = instances_.find(h);
        if (it == instances_.end() || !it->second.is(InstanceKind::event))
            throw StoreError("set_scores: unknown event " + h);
        if (score > 0) throw StoreError("set_scores: scores must be <= 0");
        if (it->second.malicious_score == score) continue;
        it->second.malicious_score = score;
        append_record(it->second);
        wrote = true;
    }
    if (dir_ && wrote) log_.flush();
}

void ArchiveStore::set_mal_ref(std::string_view event_hash, std::vector<std::string> mal_ref)
{
    std::unique_lock lock(mutex_);
    auto it = instances_.find(std::string(event_hash));
    if (it == instances_.end() || !it->second.is(InstanceKind::event))
        throw StoreError("set_mal_ref: unknown event " + std::string(event_hash));
    const std::unordered_set<std::string> refs(it->second.ref.begin(), it->second.ref.end());
    for (const auto& m : mal_ref)
        if (!refs.contains(m)) throw StoreError("set_mal_ref: " + m + " is not in the event's _ref");
    std::sort(mal_ref.begin(), mal_ref.end());
    mal_ref.erase(std::unique(mal_ref.begin(), mal_ref.end()), mal_ref.end());
    it->second.mal_ref = std::move(mal_ref);
    append_record(it->second);
    if (dir_) log_.flush();
}

void ArchiveStore::export_ndjson(std::ostream& out) const
{
    auto all = scan();
    std::unordered_map<std::string, const Instance*> by_hash;
    for (const auto& inst : all) by_hash.emplace(inst.hash, &inst);

    // Emit children before parents: raw/attributes, objects by nesting
    // depth, events, sessions.
    std::unordered_map<std::string, int> object_depth;
    std::function<int(const Instance&)> depth_of = [&](const Instance& o) -> int {
        if (auto it = object_depth.find(o.hash); it != object_depth.end()) return it->second;
        int d = 0;
        for (const auto& r : o.ref)
            if (auto it = by_hash.find(r); it != by_hash.end() && it->second->is(InstanceKind::object))
                d = std::max(d, depth_of(*it->second) + 1);
        object_depth[o.hash] = d;
        return d;
    };
    const auto rank = [&](const Instance& i) -> long {
        switch (i.kind) {
        case InstanceKind::raw:
        case InstanceKind::attribute: return 0;
        case InstanceKind::object: return 1 + depth_of(i);
        case InstanceKind::event: return 1L << 30;
        case InstanceKind::session: return (1L << 30) + 1;
        }
        return 0;
    };
    std::vector<std::pair<long, const Instance*>> order;
    order.reserve(all.size());
    for (const auto& inst : all) order.emplace_back(rank(inst), &inst);
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [r, inst] : order) out << tahoe::canonicalize(tahoe::to_json(*inst)) << '\n';
}

InsertReceipt ArchiveStore::import_ndjson(std::istream& in)
{
    InsertReceipt total;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded()) throw StoreError("import: line " + std::to_string(lineno) + " is not JSON");
        Instance inst = tahoe::from_json(doc);
        const Instance one[] = {inst};
        auto r = insert(one);
        if (r.deduped > 0 && inst.is(InstanceKind::event)) {
            if (inst.malicious_score) set_scores({{inst.hash, *inst.malicious_score}});
            if (!inst.mal_ref.empty()) set_mal_ref(inst.hash, inst.mal_ref);
        }
        total.inserted += r.inserted;
        total.deduped += r.deduped;
    }
    return total;
}

} // namespace cybexp::store

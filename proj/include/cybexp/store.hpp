#pragma once

#include "cybexp/tahoe.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cybexp::store {

using tahoe::Bundle;
using tahoe::Instance;
using tahoe::InstanceKind;

class StoreError : public Error {
public:
    using Error::Error;
};

struct InsertReceipt {
    std::size_t inserted = 0;
    std::size_t deduped = 0;
};

struct StoreStats {
    std::uint64_t raw_input_bytes = 0;
    std::uint64_t stored_bytes = 0;
    std::uint64_t instance_count = 0;
    std::uint64_t duplicate_hits = 0;

    /// 100 * (raw_input_bytes - stored_bytes) / raw_input_bytes; 0 when no
    /// raw input has been seen.
    double compression_gain_percent() const;
};

struct Subgraph {
    std::vector<std::string> nodes;                          // BFS order
    std::vector<std::pair<std::string, std::string>> edges;  // (event, member)
};

/// Bytes an edge occupies in the archive: a digest is 32 bytes, a sealed
/// edge its decoded ciphertext length.
std::uint64_t edge_storage_bytes(std::string_view ref);

/// Archive footprint of a structured instance: canonical identity fields
/// with the edge array emptied, plus 32 bytes for `_hash` and
/// edge_storage_bytes() per `_ref` entry. Raw instances are the input side
/// of the compression ratio (raw_input_bytes) and report 0 here.
std::uint64_t stored_size(const Instance& inst);

/// Content-addressed archive with exactly two indexes: `_hash` and the
/// multimap over every `_ref` entry. Many readers, one writer.
///
/// Backed either by memory only or by a directory holding
/// `instances.log` (u32 little-endian length + canonical JSON record) and
/// `manifest.json`. Indexes are rebuilt on open; a later record for the same
/// hash supersedes an earlier one (score and `_mal_ref` updates).
class ArchiveStore {
public:
    ArchiveStore();
    explicit ArchiveStore(std::filesystem::path dir);
    ~ArchiveStore();

    ArchiveStore(const ArchiveStore&) = delete;
    ArchiveStore& operator=(const ArchiveStore&) = delete;

    /// Every plaintext edge must resolve to a stored instance or to another
    /// member of the bundle. Idempotent.
    InsertReceipt insert(std::span<const Instance> bundle);

    std::optional<Instance> get(std::string_view hash) const;
    bool contains(std::string_view hash) const;

    /// Kind of a stored instance, answered from the `_hash` index alone.
    std::optional<InstanceKind> kind_of(std::string_view hash) const;

    /// Events whose `_malicious_score` is set and strictly below `threshold`.
    std::vector<std::string> scored_below(double threshold) const;

    /// All events whose `_ref` intersects `terms`, sorted by (timestamp, hash).
    std::vector<Instance> events_referencing(std::span<const std::string> terms) const;

    /// Hashes of instances (optionally of one kind) whose `_ref` intersects
    /// `terms`, sorted ascending.
    std::vector<std::string> referencing(std::span<const std::string> terms,
                                         std::optional<InstanceKind> kind = std::nullopt) const;

    /// Number of instances holding `term` in `_ref`, optionally of one kind.
    std::size_t reference_count(std::string_view term,
                                std::optional<InstanceKind> kind = std::nullopt) const;

    /// Breadth-first expansion: non-event nodes expand to the events that
    /// reference them, events to their `_ref` members. `depth` counts hops.
    Subgraph neighbors(std::string_view root, int depth) const;

    StoreStats stats() const;

    /// Snapshot of every instance of `kind` (all kinds when empty), sorted by hash.
    std::vector<Instance> scan(std::optional<InstanceKind> kind = std::nullopt) const;

    /// Mutable, non-identity event fields.
    void set_scores(const std::map<std::string, double>& scores);
    void set_mal_ref(std::string_view event_hash, std::vector<std::string> mal_ref);

    void export_ndjson(std::ostream& out) const;
    InsertReceipt import_ndjson(std::istream& in);

    /// Count of get() calls that returned an attribute. Lets callers verify
    /// that a code path resolved attributes by hash without reading values.
    std::uint64_t attribute_reads() const { return attribute_reads_.load(); }

    void flush();

private:
    void load();
    void append_record(const Instance& inst);
    void write_manifest() const;
    void index_locked(const Instance& inst);
    void account_locked(const Instance& inst, int sign);
    bool resolvable_locked(const std::string& ref,
                           const std::unordered_map<std::string, const Instance*>& bundle) const;

    mutable std::shared_mutex mutex_;
    std::unordered_map<std::string, Instance> instances_;
    std::unordered_map<std::string, std::vector<std::string>> ref_index_;
    StoreStats stats_;
    mutable std::atomic<std::uint64_t> attribute_reads_{0};

    std::optional<std::filesystem::path> dir_;
    std::ofstream log_;
};

} // namespace cybexp::store

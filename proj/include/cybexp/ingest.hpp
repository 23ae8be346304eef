#pragma once

// Collector and archiver. Raw payloads are sealed to the archive key as
// they enter the cache directory; the archiver opens them in arrival
// order, runs the format filters and inserts the results.

#include "cybexp/privacy.hpp"
#include "cybexp/store.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace cybexp::ingest {

using tahoe::EventBundle;
using tahoe::Instance;

class IngestError : public Error {
public:
    using Error::Error;
};

class AuthError : public IngestError {
public:
    using IngestError::IngestError;
};

/// A record that does not fit its format. `fields` names every offending
/// field or key.
class ParseError : public IngestError {
public:
    ParseError(std::string message, std::vector<std::string> fields);
    const std::vector<std::string>& fields() const { return fields_; }

private:
    std::vector<std::string> fields_;
};

/// Bearer tokens issued to contributing organisations.
class OrgRegistry {
public:
    OrgRegistry() = default;
    explicit OrgRegistry(std::filesystem::path file); // loaded if present

    std::string register_org(const std::string& orgid); // returns a new token
    std::optional<std::string> authenticate(std::string_view token) const;
    std::vector<std::string> orgs() const;

private:
    void save() const;

    mutable std::mutex mutex_;
    std::map<std::string, std::string, std::less<>> by_token_; // token digest -> orgid
    std::optional<std::filesystem::path> file_;
};

/// Directory of sealed envelopes named by a zero-padded arrival sequence.
/// Entries that fail to open are moved to `quarantine/`.
class CacheLake {
public:
    explicit CacheLake(std::filesystem::path dir);

    /// Stores an already sealed envelope; returns its entry name.
    std::string append(std::string_view sealed);

    /// Pending entry names in arrival order.
    std::vector<std::string> pending() const;
    std::string read(const std::string& entry) const;
    void acknowledge(const std::string& entry);
    void quarantine(const std::string& entry, const std::string& reason);
    std::vector<std::string> quarantined() const;
    std::size_t size() const { return pending().size(); }
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    mutable std::mutex mutex_;
    std::uint64_t next_seq_ = 1;
};

inline const std::vector<std::string>& known_formats()
{
    static const std::vector<std::string> f{"iptables", "cowrie", "email", "url_feed"};
    return f;
}

struct PostReceipt {
    std::string entry;
    std::string raw_hash;
    std::string orgid;
    bool known_format = true;
};

/// Builds the raw instance, seals it to `archive_public` and appends it.
PostReceipt post_raw(CacheLake& cache, const privacy::Key256& archive_public, const OrgRegistry& orgs,
                     std::string_view token, const std::string& format_tag, std::string payload,
                     std::int64_t timestamp);

// ---------------------------------------------------------------------------
// Formats

struct IptablesRecord {
    std::string src_ip;
    std::string dst_ip;
    std::int64_t dst_port = 0;
    std::string protocol;
    std::optional<std::int64_t> timestamp; // leading ISO-8601 stamp when present
    bool operator==(const IptablesRecord&) const = default;
};

IptablesRecord parse_iptables(std::string_view line);
std::string format_iptables(const IptablesRecord& rec, std::string_view host = "fw01");

struct CowrieRecord {
    std::string src_ip;
    std::string username;
    std::string password;
    std::int64_t timestamp = 0;
    bool operator==(const CowrieRecord&) const = default;
};

CowrieRecord parse_cowrie(std::string_view json_text);
std::string format_cowrie(const CowrieRecord& rec);

struct EmailRecord {
    std::string from;
    std::vector<std::string> to;
    std::string subject;
    std::optional<std::int64_t> timestamp;
    std::string body;
    std::vector<std::string> urls; // found in the body
    bool operator==(const EmailRecord&) const = default;
};

EmailRecord parse_email(std::string_view text);
std::string format_email(const EmailRecord& rec);

struct UrlFeedRecord {
    std::string url;
    std::string label;
    std::string source;
    std::optional<std::int64_t> timestamp;
    bool operator==(const UrlFeedRecord&) const = default;
};

UrlFeedRecord parse_url_feed(std::string_view json_text);
std::string format_url_feed(const UrlFeedRecord& rec);

/// Event builders. `fallback_ts` stands in when the record carries no time.
EventBundle iptables_event(const IptablesRecord& rec, std::int64_t fallback_ts, const std::string& orgid);
EventBundle cowrie_event(const CowrieRecord& rec, const std::string& orgid);
EventBundle email_event(const EmailRecord& rec, std::int64_t fallback_ts, const std::string& orgid);
EventBundle url_feed_event(const UrlFeedRecord& rec, std::int64_t fallback_ts, const std::string& orgid);

/// Synthetic corpora. IP addresses and names are drawn from pools sized so
/// that repeats, and hence deduplication, occur.
class Generator {
public:
    explicit Generator(std::uint64_t seed, std::size_t pool = 256);

    IptablesRecord iptables(std::int64_t ts);
    CowrieRecord cowrie(std::int64_t ts);
    EmailRecord email(std::int64_t ts);
    UrlFeedRecord url_feed(std::int64_t ts);

    /// One payload in the named format; throws on an unknown format.
    std::string payload(const std::string& format, std::int64_t ts);

private:
    std::string ip();
    std::string word();

    std::mt19937_64 rng_;
    std::size_t pool_;
};

/// Host part of an http(s) URL, lower-cased; empty when absent.
std::string url_host(std::string_view url);

// ---------------------------------------------------------------------------
// Filters

/// Input key of a raw record is its format tag; of an event, "event:" plus
/// its sub_type.
std::string input_key(const Instance& inst);

struct Filter {
    std::string id;
    std::vector<std::string> inputs;
    std::function<std::vector<EventBundle>(const Instance&, const store::ArchiveStore&)> apply;
};

class FilterRegistry {
public:
    void add(Filter f);
    std::vector<const Filter*> applicable(const Instance& inst) const;
    const std::vector<Filter>& filters() const { return filters_; }

    /// F1-F4 parse the four formats; F5 derives a url_host event from any
    /// event carrying url attributes.
    static FilterRegistry standard();

private:
    std::vector<Filter> filters_;
};

struct FilterRun {
    std::vector<std::string> derived; // event hashes, in derivation order
    std::size_t applications = 0;
    std::vector<std::string> errors;  // "<filter id>: <message>"
};

/// Applies every applicable filter, inserts its output and feeds fresh
/// events back in until nothing new appears. `input` must already be stored.
FilterRun run_filters(const Instance& input, const FilterRegistry& registry, store::ArchiveStore& store);

struct DrainReport {
    std::size_t opened = 0;
    std::size_t archived = 0;      // raw instances stored
    std::size_t events = 0;        // derived events
    std::size_t quarantined = 0;
    std::vector<std::string> errors;

    nlohmann::json to_json() const;
};

/// Opens, archives and acknowledges every pending entry in order. Entries
/// that cannot be opened are quarantined and skipped.
DrainReport drain_cache(CacheLake& cache, const privacy::ArchiveKeyPair& archive_key,
                        const FilterRegistry& registry, store::ArchiveStore& store);

} // namespace cybexp::ingest

#pragma once

// Service boundary: a workspace bundling every component under one data
// directory, and a transport-neutral request handler for the JSON API.

#include "cybexp/analytics.hpp"
#include "cybexp/ingest.hpp"
#include "cybexp/privacy.hpp"
#include "cybexp/store.hpp"
#include "cybexp/threatrank.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

namespace cybexp::api {

/// Data directory layout:
///   store/          archive log and manifest
///   cache/          sealed cache entries (+ quarantine/)
///   archive.key     X25519 private key, passphrase-sealed when one is set
///   orgs.json       token digests
///   kms.json        wrapped edge keys and grants
///   mal.json        known-malicious events
///   sop.json        URL classifier state
class Workspace {
public:
    /// `passphrase` protects the KMS file and the archive key; without one
    /// the KMS is unavailable and the archive key is stored unsealed.
    static std::unique_ptr<Workspace> open(const std::filesystem::path& home, std::optional<std::string> passphrase);
    /// Everything in memory except the cache, which lives under `cache_dir`.
    static std::unique_ptr<Workspace> ephemeral(const std::filesystem::path& cache_dir);

    store::ArchiveStore& store() { return *store_; }
    ingest::CacheLake& cache() { return *cache_; }
    const privacy::ArchiveKeyPair& archive_key() const { return archive_; }
    ingest::OrgRegistry& orgs() { return *orgs_; }
    privacy::Kms& kms();
    bool has_kms() const { return kms_ != nullptr; }
    threatrank::MalKnowledge& mal() { return mal_; }
    analytics::SopModel& model() { return *model_; }
    analytics::ReportService& reports() { return reports_; }
    const std::optional<std::filesystem::path>& home() const { return home_; }

    void save_mal() const;
    void save_model() const;

    /// Serialises writers that touch more than one component.
    std::mutex& write_mutex() { return write_mutex_; }

private:
    Workspace() = default;

    std::optional<std::filesystem::path> home_;
    std::unique_ptr<store::ArchiveStore> store_;
    std::unique_ptr<ingest::CacheLake> cache_;
    privacy::ArchiveKeyPair archive_;
    std::unique_ptr<ingest::OrgRegistry> orgs_;
    std::unique_ptr<privacy::Kms> kms_;
    threatrank::MalKnowledge mal_;
    std::unique_ptr<analytics::SopModel> model_;
    analytics::ReportService reports_;
    std::mutex write_mutex_;
};

struct ApiRequest {
    std::string method;                         // GET | POST
    std::string path;                           // without the query string
    std::map<std::string, std::string> query;   // decoded query parameters
    std::string token;                          // bearer token, may be empty
    std::string body;                           // raw JSON text
};

struct ApiResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;

    nlohmann::json json() const { return nlohmann::json::parse(body); }
};

/// Endpoints (JSON in and out unless noted):
///   GET  /health
///   POST /raw              {format, payload, timestamp?}            token
///   POST /query            {q, key_ids?}                            token when key_ids given
///   GET  /graph/neighbors/{hash}?depth=k
///   GET  /instance/{hash}
///   POST /mal/flag         {event, mal_refs?, provenance?, as_of?}  token
///   POST /score            {as_of?}                                 token
///   POST /report           {kind, params}                           token
///   GET  /report/{id}
///   GET  /feed/rules?format=text|json&threshold=t
///   POST /kms/keys         {}                                       token
///   POST /kms/share        {key_id, to}                             token
///   GET  /stats
///
/// Errors are {"error": message, ...}: 400 malformed input (TDQL errors
/// carry token, offset and expected), 401 bad token or unauthorised key
/// use, 404 unknown route, id or node, 405 wrong method.
class Service {
public:
    using Clock = std::function<std::int64_t()>;

    explicit Service(Workspace& ws, Clock clock = {});

    ApiResponse handle(const ApiRequest& req);

    /// Drains the cache and completes pending reports; what a background
    /// worker runs periodically.
    nlohmann::json tick();

private:
    Workspace& ws_;
    Clock clock_;
};

/// Blocking HTTP server on `host:port`; `ready` is called once listening.
/// Returns when stop_server() is called from another thread.
void serve(Service& service, const std::string& host, int port, std::function<void(int)> ready = {},
           int tick_ms = 1000);
void stop_server();

} // namespace cybexp::api

#include "cybexp/api.hpp"

#include "cybexp/tdql.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

namespace cybexp::api {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class KmsUnavailable : public Error {
public:
    using Error::Error;
};

void write_private_file(const fs::path& file, const std::string& content)
{
    const auto tmp = fs::path(file.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << content;
    }
    fs::permissions(tmp, fs::perms::owner_read | fs::perms::owner_write, fs::perm_options::replace);
    fs::rename(tmp, file);
}

std::string read_file(const fs::path& file)
{
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error("cannot read " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

privacy::Key256 key_from(std::string_view bytes)
{
    privacy::Key256 k{};
    if (bytes.size() != k.size()) throw Error("archive key has the wrong length");
    std::copy(bytes.begin(), bytes.end(), k.begin());
    return k;
}

privacy::ArchiveKeyPair load_archive_key(const fs::path& file, const std::optional<std::string>& passphrase)
{
    if (!fs::exists(file)) {
        auto pair = privacy::ArchiveKeyPair::generate();
        const std::string raw = to_string(std::span<const std::uint8_t>(pair.private_key));
        json doc;
        if (passphrase) {
            doc = {{"sealed", true}, {"key", base64_encode(privacy::passphrase_seal(raw, *passphrase))}};
        } else {
            doc = {{"sealed", false}, {"key", base64_encode(raw)}};
        }
        write_private_file(file, doc.dump() + "\n");
        return pair;
    }
    const json doc = json::parse(read_file(file), nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw Error("archive.key is unreadable");
    auto blob = base64_decode(doc.value("key", ""));
    if (!blob) throw Error("archive.key is unreadable");
    if (doc.value("sealed", false)) {
        if (!passphrase) throw Error("archive.key is sealed; set CYBEXP_KMS_PASSPHRASE");
        return privacy::ArchiveKeyPair::from_private(key_from(privacy::passphrase_open(*blob, *passphrase)));
    }
    return privacy::ArchiveKeyPair::from_private(key_from(*blob));
}

ApiResponse reply(int status, const json& body)
{
    ApiResponse r;
    r.status = status;
    r.body = body.dump();
    return r;
}

ApiResponse error(int status, const std::string& message, json extra = json::object())
{
    extra["error"] = message;
    return reply(status, extra);
}

/// Thrown inside handlers to short-circuit with a status.
struct HttpFailure {
    int status;
    std::string message;
    json extra = json::object();
};

json parse_body(const ApiRequest& req)
{
    if (req.body.empty()) return json::object();
    json doc = json::parse(req.body, nullptr, false);
    if (doc.is_discarded()) throw HttpFailure{400, "request body is not valid JSON"};
    if (!doc.is_object()) throw HttpFailure{400, "request body must be a JSON object"};
    return doc;
}

template <class T>
T field(const json& body, const char* name)
{
    auto it = body.find(name);
    if (it == body.end()) throw HttpFailure{400, std::string("missing field: ") + name};
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw HttpFailure{400, std::string("wrong type for field: ") + name};
    }
}

template <class T>
T field_or(const json& body, const char* name, T fallback)
{
    return body.contains(name) ? field<T>(body, name) : fallback;
}

std::vector<std::string> split_path(std::string_view path)
{
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < path.size()) {
        while (i < path.size() && path[i] == '/') ++i;
        const auto j = path.find('/', i);
        const auto end = j == std::string_view::npos ? path.size() : j;
        if (end > i) out.emplace_back(path.substr(i, end - i));
        i = end;
    }
    return out;
}

std::optional<std::string> query_param(const ApiRequest& req, const std::string& key)
{
    auto it = req.query.find(key);
    if (it == req.query.end()) return std::nullopt;
    return it->second;
}

double parse_number(const std::string& text, const char* what)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    throw HttpFailure{400, std::string("bad ") + what + ": " + text};
}

} // namespace

// ---------------------------------------------------------------------------

std::unique_ptr<Workspace> Workspace::open(const fs::path& home, std::optional<std::string> passphrase)
{
    if (passphrase && passphrase->empty()) passphrase.reset();
    fs::create_directories(home);
    std::unique_ptr<Workspace> ws(new Workspace());
    ws->home_ = home;
    ws->store_ = std::make_unique<store::ArchiveStore>(home / "store");
    ws->cache_ = std::make_unique<ingest::CacheLake>(home / "cache");
    ws->archive_ = load_archive_key(home / "archive.key", passphrase);
    ws->orgs_ = std::make_unique<ingest::OrgRegistry>(home / "orgs.json");
    if (passphrase) ws->kms_ = std::make_unique<privacy::Kms>(home / "kms.json", *passphrase);
    ws->mal_ = threatrank::MalKnowledge::load(home / "mal.json");
    if (fs::exists(home / "sop.json")) {
        const json doc = json::parse(read_file(home / "sop.json"), nullptr, false);
        if (doc.is_discarded()) throw Error("sop.json is unreadable");
        ws->model_ = std::make_unique<analytics::SopModel>(analytics::SopModel::from_json(doc));
    } else {
        ws->model_ = std::make_unique<analytics::SopModel>();
    }
    ws->reports_.set_model(ws->model_.get());
    return ws;
}

std::unique_ptr<Workspace> Workspace::ephemeral(const fs::path& cache_dir)
{
    std::unique_ptr<Workspace> ws(new Workspace());
    ws->store_ = std::make_unique<store::ArchiveStore>();
    ws->cache_ = std::make_unique<ingest::CacheLake>(cache_dir);
    ws->archive_ = privacy::ArchiveKeyPair::generate();
    ws->orgs_ = std::make_unique<ingest::OrgRegistry>();
    ws->kms_ = std::make_unique<privacy::Kms>();
    ws->model_ = std::make_unique<analytics::SopModel>();
    ws->reports_.set_model(ws->model_.get());
    return ws;
}

privacy::Kms& Workspace::kms()
{
    if (!kms_) throw KmsUnavailable("key management is disabled; set CYBEXP_KMS_PASSPHRASE");
    return *kms_;
}

void Workspace::save_mal() const
{
    if (home_) mal_.save(*home_ / "mal.json");
}

void Workspace::save_model() const
{
    if (home_) write_private_file(*home_ / "sop.json", model_->to_json().dump() + "\n");
}

// ---------------------------------------------------------------------------

Service::Service(Workspace& ws, Clock clock) : ws_(ws), clock_(std::move(clock))
{
    if (!clock_) {
        clock_ = [] {
            return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
                .count();
        };
    }
}

json Service::tick()
{
    std::lock_guard lock(ws_.write_mutex());
    const auto drained = ingest::drain_cache(ws_.cache(), ws_.archive_key(), ingest::FilterRegistry::standard(),
                                             ws_.store());
    const auto done = ws_.reports().process_pending(ws_.store());
    return {{"drain", drained.to_json()}, {"reports_completed", done}};
}

ApiResponse Service::handle(const ApiRequest& req)
{
    const auto parts = split_path(req.path);
    const bool get = req.method == "GET";
    const bool post = req.method == "POST";

    auto require_org = [&]() -> std::string {
        if (req.token.empty()) throw HttpFailure{401, "missing bearer token"};
        auto org = ws_.orgs().authenticate(req.token);
        if (!org) throw HttpFailure{401, "invalid token"};
        return *org;
    };
    auto method_is = [&](bool ok) {
        if (!ok) throw HttpFailure{405, "method not allowed: " + req.method + " " + req.path};
    };
    auto node_exists = [&](const std::string& hash) {
        if (!is_digest_hex(hash) || !ws_.store().contains(hash)) throw HttpFailure{404, "unknown node: " + hash};
    };

    try {
        if (parts.size() == 1 && parts[0] == "health") {
            method_is(get);
            return reply(200, {{"status", "ok"}, {"instances", ws_.store().stats().instance_count}});
        }

        if (parts.size() == 1 && parts[0] == "stats") {
            method_is(get);
            const auto s = ws_.store().stats();
            return reply(200, {{"raw_input_bytes", s.raw_input_bytes},
                               {"stored_bytes", s.stored_bytes},
                               {"instance_count", s.instance_count},
                               {"duplicate_hits", s.duplicate_hits},
                               {"compression_gain_percent", s.compression_gain_percent()},
                               {"cache_pending", ws_.cache().size()},
                               {"cache_quarantined", ws_.cache().quarantined().size()},
                               {"malicious_events", ws_.mal().size()}});
        }

        if (parts.size() == 1 && parts[0] == "raw") {
            method_is(post);
            const auto body = parse_body(req);
            const auto format = field<std::string>(body, "format");
            const auto payload = field<std::string>(body, "payload");
            const auto ts = field_or<std::int64_t>(body, "timestamp", clock_());
            const auto r =
                ingest::post_raw(ws_.cache(), ws_.archive_key().public_key, ws_.orgs(), req.token, format, payload, ts);
            return reply(201, {{"entry", r.entry},
                               {"raw_hash", r.raw_hash},
                               {"orgid", r.orgid},
                               {"known_format", r.known_format}});
        }

        if (parts.size() == 1 && parts[0] == "query") {
            method_is(post);
            const auto body = parse_body(req);
            const auto q = field<std::string>(body, "q");
            const auto key_ids = field_or<std::vector<std::string>>(body, "key_ids", {});
            std::vector<privacy::EdgeSecret> secrets;
            if (!key_ids.empty()) {
                const auto org = require_org();
                for (const auto& id : key_ids) secrets.push_back(ws_.kms().get(org, id));
            }
            const auto ast = tdql::parse(q);
            return reply(200, tdql::execute(ast, ws_.store(), secrets).to_json());
        }

        if (parts.size() == 3 && parts[0] == "graph" && parts[1] == "neighbors") {
            method_is(get);
            int depth = 1;
            if (auto d = query_param(req, "depth")) {
                const double v = parse_number(*d, "depth");
                if (v < 0 || v > 16 || v != static_cast<int>(v)) throw HttpFailure{400, "depth must be 0..16"};
                depth = static_cast<int>(v);
            }
            try {
                return reply(200, analytics::graph_json(ws_.store(), parts[2], depth));
            } catch (const analytics::AnalyticsError&) {
                throw HttpFailure{404, "unknown node: " + parts[2]};
            }
        }

        if (parts.size() == 2 && parts[0] == "instance") {
            method_is(get);
            node_exists(parts[1]);
            auto doc = tahoe::to_json(*ws_.store().get(parts[1]));
            return reply(200, doc);
        }

        if (parts.size() == 2 && parts[0] == "mal" && parts[1] == "flag") {
            method_is(post);
            const auto org = require_org();
            const auto body = parse_body(req);
            const auto event = field<std::string>(body, "event");
            node_exists(event);
            if (ws_.store().kind_of(event) != tahoe::InstanceKind::event)
                throw HttpFailure{400, "not an event: " + event};
            const auto mal_refs = field_or<std::vector<std::string>>(body, "mal_refs", {});
            auto provenance = threatrank::Provenance::admin;
            if (body.contains("provenance")) {
                auto p = threatrank::provenance_from_string(field<std::string>(body, "provenance"));
                if (!p) throw HttpFailure{400, "unknown provenance"};
                provenance = *p;
            }
            threatrank::RankContext ctx;
            ctx.as_of = field_or<std::int64_t>(body, "as_of", clock_());
            std::lock_guard lock(ws_.write_mutex());
            threatrank::flag_malicious(ws_.store(), ws_.mal(), event, mal_refs, provenance);
            ws_.save_mal();
            const auto scored = threatrank::update_scores(ws_.store(), ws_.mal(), ctx);
            return reply(200, {{"flagged", event}, {"by", org}, {"scored", scored}, {"as_of", ctx.as_of}});
        }

        if (parts.size() == 1 && parts[0] == "score") {
            method_is(post);
            require_org();
            const auto body = parse_body(req);
            threatrank::RankContext ctx;
            ctx.as_of = field_or<std::int64_t>(body, "as_of", clock_());
            std::lock_guard lock(ws_.write_mutex());
            const auto scored = threatrank::update_scores(ws_.store(), ws_.mal(), ctx);
            return reply(200, {{"scored", scored}, {"as_of", ctx.as_of}});
        }

        if (parts.size() == 1 && parts[0] == "report") {
            method_is(post);
            const auto org = require_org();
            const auto body = parse_body(req);
            auto kind = analytics::report_kind_from_string(field<std::string>(body, "kind"));
            if (!kind) throw HttpFailure{400, "unknown report kind"};
            analytics::ReportRequest rr;
            rr.kind = *kind;
            rr.params = field_or<json>(body, "params", json::object());
            rr.requester = org;
            const auto id = ws_.reports().submit(std::move(rr));
            return reply(202, {{"id", id}, {"status", "pending"}});
        }

        if (parts.size() == 2 && parts[0] == "report") {
            method_is(get);
            analytics::ReportState st;
            try {
                st = ws_.reports().fetch(parts[1]);
            } catch (const analytics::AnalyticsError&) {
                throw HttpFailure{404, "unknown report: " + parts[1]};
            }
            auto doc = st.to_json();
            doc["id"] = parts[1];
            return reply(200, doc);
        }

        if (parts.size() == 2 && parts[0] == "feed" && parts[1] == "rules") {
            method_is(get);
            analytics::RuleOptions opts;
            if (auto t = query_param(req, "threshold")) opts.threshold = parse_number(*t, "threshold");
            opts.issued_at = clock_();
            const auto rules = analytics::gen_rules(ws_.store(), opts);
            const auto format = query_param(req, "format").value_or("json");
            if (format == "text") {
                ApiResponse r;
                r.content_type = "text/plain";
                r.body = analytics::rules_text(rules);
                return r;
            }
            if (format != "json") throw HttpFailure{400, "format must be text or json"};
            return reply(200, analytics::rules_json(rules));
        }

        if (parts.size() == 2 && parts[0] == "kms" && parts[1] == "keys") {
            method_is(post);
            const auto org = require_org();
            const auto s = ws_.kms().create_key(org);
            return reply(201, {{"key_id", s.key_id}, {"owner", s.owner}});
        }

        if (parts.size() == 2 && parts[0] == "kms" && parts[1] == "share") {
            method_is(post);
            const auto org = require_org();
            const auto body = parse_body(req);
            const auto key_id = field<std::string>(body, "key_id");
            const auto to = field<std::string>(body, "to");
            ws_.kms().share(key_id, org, to);
            return reply(200, {{"key_id", key_id}, {"from", org}, {"to", to}});
        }

        if (parts.size() == 1 && parts[0] == "share") {
            method_is(post);
            const auto org = require_org();
            const auto body = parse_body(req);
            tahoe::Bundle bundle;
            try {
                for (const auto& doc : field<json>(body, "instances")) bundle.push_back(tahoe::from_json(doc));
            } catch (const tahoe::TahoeError& e) {
                throw HttpFailure{400, std::string("bad instance: ") + e.what()};
            }
            for (const auto& inst : bundle) {
                if (auto problems = tahoe::validate(inst); !problems.empty())
                    throw HttpFailure{400, "invalid instance", {{"problems", problems}}};
                if (inst.is(tahoe::InstanceKind::event) && inst.orgid != org)
                    throw HttpFailure{401, "event orgid does not match token"};
            }
            privacy::AclPolicy acl;
            std::vector<privacy::EdgeSecret> held;
            const auto priv = field_or<std::vector<std::string>>(body, "private", {});
            if (!priv.empty()) {
                const auto key_id = field<std::string>(body, "key_id");
                held.push_back(ws_.kms().get(org, key_id));
                for (const auto& h : priv) acl.make_private(h, key_id);
            }
            const auto shared = privacy::apply_acl(bundle, acl, held);
            const auto rec = ws_.store().insert(shared);
            json events = json::array();
            for (const auto& inst : shared)
                if (inst.is(tahoe::InstanceKind::event)) events.push_back(inst.hash);
            return reply(201, {{"inserted", rec.inserted}, {"deduped", rec.deduped}, {"events", events}});
        }

        if (parts.size() == 2 && parts[0] == "url" && parts[1] == "check") {
            method_is(post);
            const auto url = field<std::string>(parse_body(req), "url");
            const auto x = analytics::extract_features(url).vector;
            std::lock_guard lock(ws_.write_mutex());
            const double m = ws_.model().margin(x);
            return reply(200, {{"url", url}, {"label", analytics::to_string(ws_.model().predict(x))}, {"margin", m}});
        }

        if (parts.size() == 2 && parts[0] == "url" && parts[1] == "train") {
            method_is(post);
            require_org();
            const auto body = parse_body(req);
            const auto url = field<std::string>(body, "url");
            auto label = analytics::label_from_string(field<std::string>(body, "label"));
            if (!label) throw HttpFailure{400, "label must be benign or phishing"};
            std::lock_guard lock(ws_.write_mutex());
            const bool mistake = ws_.model().update(analytics::extract_features(url).vector, *label);
            ws_.save_model();
            return reply(200, {{"mistake", mistake}, {"mistakes", ws_.model().mistakes()}});
        }

        return error(404, "unknown route: " + req.method + " " + req.path);
    } catch (const HttpFailure& f) {
        return error(f.status, f.message, f.extra);
    } catch (const tdql::SyntaxError& e) {
        return error(400, e.what(),
                     {{"token_index", e.token_index()}, {"offset", e.offset()}, {"expected", e.expected()}});
    } catch (const tdql::QueryError& e) {
        return error(400, e.what());
    } catch (const ingest::AuthError& e) {
        return error(401, e.what());
    } catch (const ingest::ParseError& e) {
        return error(400, e.what(), {{"fields", e.fields()}});
    } catch (const privacy::AccessDenied& e) {
        return error(401, e.what());
    } catch (const KmsUnavailable& e) {
        return error(503, e.what());
    } catch (const analytics::AnalyticsError& e) {
        return error(400, e.what());
    } catch (const threatrank::RankError& e) {
        return error(400, e.what());
    } catch (const Error& e) {
        return error(400, e.what());
    } catch (const std::exception& e) {
        return error(500, e.what());
    }
}

} // namespace cybexp::api

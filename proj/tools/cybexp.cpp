// Operator command line for a CYBEX-P data directory.

#include "cybexp/api.hpp"
#include "cybexp/bench.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace cybexp;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Usage : Error {
    using Error::Error;
};

std::string env_or(const char* name, std::string fallback = {})
{
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

std::string read_all(std::istream& in)
{
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string read_source(const std::string& file)
{
    if (file.empty() || file == "-") return read_all(std::cin);
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error("cannot open " + file);
    return read_all(in);
}

std::int64_t parse_time(const std::string& text)
{
    if (auto t = parse_iso8601(text)) return *t;
    try {
        std::size_t used = 0;
        const auto v = std::stoll(text, &used);
        if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    throw Usage("expected ISO-8601 time or epoch seconds: " + text);
}

/// Lazily opened data directory plus a service bound to it.
struct Context {
    std::string home;
    std::string token;
    std::unique_ptr<api::Workspace> ws;
    std::unique_ptr<api::Service> svc;

    api::Service& service()
    {
        if (!svc) {
            std::optional<std::string> pass;
            if (auto p = env_or("CYBEXP_KMS_PASSPHRASE"); !p.empty()) pass = p;
            ws = api::Workspace::open(home, pass);
            svc = std::make_unique<api::Service>(*ws);
        }
        return *svc;
    }
    api::Workspace& workspace()
    {
        service();
        return *ws;
    }

    /// Sends one request and prints the response; non-2xx becomes a runtime error.
    json call(const std::string& method, const std::string& path, const json& body = nullptr,
              std::map<std::string, std::string> query = {}, bool print = true)
    {
        api::ApiRequest r{method, path, std::move(query), token, body.is_null() ? "" : body.dump()};
        const auto out = service().handle(r);
        if (out.status >= 300) {
            std::string msg = out.body;
            if (out.content_type == "application/json") {
                const auto doc = json::parse(out.body, nullptr, false);
                if (doc.is_object() && doc.contains("error")) {
                    msg = doc.at("error").get<std::string>();
                    if (doc.contains("offset"))
                        msg += " (token " + doc.at("token_index").dump() + ", offset " + doc.at("offset").dump() +
                               ", expected " + doc.at("expected").dump() + ")";
                }
            }
            throw Error("HTTP " + std::to_string(out.status) + ": " + msg);
        }
        if (out.content_type != "application/json") {
            if (print) std::cout << out.body;
            return nullptr;
        }
        auto doc = json::parse(out.body);
        if (print) std::cout << doc.dump() << '\n';
        return doc;
    }
};

std::vector<std::string> split_records(const std::string& text, const std::string& format)
{
    std::vector<std::string> out;
    if (format == "email") {
        // Messages separated by a line holding only "%%".
        std::istringstream in(text);
        std::string line, cur;
        while (std::getline(in, line)) {
            if (line == "%%") {
                if (!cur.empty()) out.push_back(cur);
                cur.clear();
            } else {
                cur += line + "\n";
            }
        }
        if (cur.find_first_not_of(" \r\n\t") != std::string::npos) out.push_back(cur);
        return out;
    }
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

void sigint_handler(int) { api::stop_server(); }

int run(int argc, char** argv)
{
    CLI::App app{"CYBEX-P threat data archive"};
    app.require_subcommand(1);
    Context ctx;
    ctx.home = env_or("CYBEXP_HOME", ".cybexp");
    ctx.token = env_or("CYBEXP_TOKEN");
    app.add_option("--home", ctx.home, "Data directory (default $CYBEXP_HOME or ./.cybexp)");
    app.add_option("--token", ctx.token, "Organisation token (default $CYBEXP_TOKEN)");

    std::vector<std::function<void()>> actions;
    auto on = [&](CLI::App* sub, std::function<void()> fn) { sub->callback([&actions, fn] { actions.push_back(fn); }); };

    // init / org
    auto* init = app.add_subcommand("init", "Create the data directory and archive key");
    on(init, [&] {
        auto& ws = ctx.workspace();
        std::cout << json{{"home", ctx.home},
                          {"archive_key_id", ws.archive_key().key_id()},
                          {"kms", ws.has_kms()}}
                         .dump()
                  << '\n';
    });

    auto* org = app.add_subcommand("org", "Organisation tokens");
    org->require_subcommand(1);
    std::string org_id;
    auto* org_add = org->add_subcommand("add", "Register an organisation and print its token");
    org_add->add_option("orgid", org_id)->required();
    on(org_add, [&] {
        if (!tahoe::is_token(org_id)) throw Usage("orgid must match [A-Za-z0-9_.-]+: " + org_id);
        std::cout << ctx.workspace().orgs().register_org(org_id) << '\n';
    });
    auto* org_list = org->add_subcommand("list", "List registered organisations");
    on(org_list, [&] {
        for (const auto& o : ctx.workspace().orgs().orgs()) std::cout << o << '\n';
    });

    // ingest
    auto* ing = app.add_subcommand("ingest", "Post, drain and generate raw records");
    ing->require_subcommand(1);
    std::string fmt, file;
    std::optional<std::string> post_ts;
    auto* post = ing->add_subcommand("post", "Seal records into the cache (one per line; emails split on %%)");
    post->add_option("--format", fmt, "iptables | cowrie | email | url_feed | other tag")->required();
    post->add_option("--file", file, "Input file, - for stdin")->default_val("-");
    post->add_option("--timestamp", post_ts, "Receive time, ISO-8601 or epoch");
    on(post, [&] {
        const auto records = split_records(read_source(file), fmt);
        const std::int64_t ts = post_ts ? parse_time(*post_ts) : std::time(nullptr);
        std::size_t n = 0;
        for (const auto& rec : records) {
            ctx.call("POST", "/raw", {{"format", fmt}, {"payload", rec}, {"timestamp", ts}}, {}, false);
            ++n;
        }
        std::cout << json{{"posted", n}}.dump() << '\n';
    });
    auto* drain = ing->add_subcommand("drain", "Archive every pending cache entry and process reports");
    on(drain, [&] { std::cout << ctx.service().tick().dump() << '\n'; });
    std::size_t gen_n = 10;
    std::uint64_t gen_seed = 1;
    std::size_t gen_pool = 256;
    std::string gen_start = "2021-01-01T00:00:00Z";
    auto* gen = ing->add_subcommand("gen", "Print synthetic records in a fixture format");
    gen->add_option("--format", fmt)->required()->check(CLI::IsMember(ingest::known_formats()));
    gen->add_option("--n", gen_n)->default_val(10);
    gen->add_option("--seed", gen_seed)->default_val(1);
    gen->add_option("--pool", gen_pool, "Distinct values per field")->default_val(256);
    gen->add_option("--start", gen_start)->default_val("2021-01-01T00:00:00Z");
    on(gen, [&] {
        ingest::Generator g(gen_seed, gen_pool);
        const auto t0 = parse_time(gen_start);
        for (std::size_t i = 0; i < gen_n; ++i) {
            auto p = g.payload(fmt, t0 + static_cast<std::int64_t>(i));
            if (fmt == "email") {
                std::cout << p << (p.ends_with('\n') ? "" : "\n") << "%%\n";
            } else {
                std::cout << p << '\n';
            }
        }
    });

    // query / graph / instance / stats
    std::string tdql_text;
    std::vector<std::string> key_ids;
    auto* query = app.add_subcommand("query", "Run a TDQL query; prints NDJSON or {\"count\": n}");
    query->add_option("--tdql,q", tdql_text)->required();
    query->add_option("--key", key_ids, "Key ids to search sealed edges with");
    on(query, [&] {
        json body{{"q", tdql_text}};
        if (!key_ids.empty()) body["key_ids"] = key_ids;
        const auto doc = ctx.call("POST", "/query", body, {}, false);
        if (doc.is_array()) {
            for (const auto& d : doc) std::cout << d.dump() << '\n';
        } else {
            std::cout << doc.dump() << '\n';
        }
    });

    std::string node;
    int depth = 1;
    auto* graph = app.add_subcommand("graph", "Neighbourhood of a node with scores and colours");
    graph->add_option("hash", node)->required();
    graph->add_option("--depth", depth)->default_val(1)->check(CLI::Range(0, 16));
    on(graph, [&] { ctx.call("GET", "/graph/neighbors/" + node, nullptr, {{"depth", std::to_string(depth)}}); });

    auto* inst = app.add_subcommand("instance", "Print one stored instance");
    inst->add_option("hash", node)->required();
    on(inst, [&] { ctx.call("GET", "/instance/" + node); });

    auto* stats = app.add_subcommand("stats", "Store and cache counters");
    on(stats, [&] { ctx.call("GET", "/stats"); });

    std::string share_key;
    std::vector<std::string> private_hashes;
    auto* share = app.add_subcommand("share", "Insert a bundle (JSON array), sealing private attribute edges");
    share->add_option("--file", file, "Bundle file, - for stdin")->default_val("-");
    share->add_option("--private", private_hashes, "Attribute hashes to keep private");
    share->add_option("--key", share_key, "Key id sealing the private edges");
    on(share, [&] {
        json body{{"instances", json::parse(read_source(file))}};
        if (!private_hashes.empty()) {
            if (share_key.empty()) throw Usage("--private requires --key");
            body["private"] = private_hashes;
            body["key_id"] = share_key;
        }
        ctx.call("POST", "/share", body);
    });

    // score
    std::optional<std::string> as_of;
    auto* score = app.add_subcommand("score", "Recompute threat scores");
    score->add_option("--as-of", as_of, "Scoring date, ISO-8601 or epoch (default now)");
    std::vector<std::string> mal_refs;
    std::string provenance = "admin";
    auto* flag = score->add_subcommand("flag", "Mark an event malicious, then rescore");
    flag->add_option("event", node)->required();
    flag->add_option("--mal-ref", mal_refs, "Edges carrying the malicious context");
    flag->add_option("--provenance", provenance)->check(CLI::IsMember({"admin", "vote", "automatic"}));
    flag->add_option("--as-of", as_of);
    on(score, [&] {
        if (!flag->parsed()) {
            json body = json::object();
            if (as_of) body["as_of"] = parse_time(*as_of);
            ctx.call("POST", "/score", body);
        }
    });
    on(flag, [&] {
        json body{{"event", node}, {"mal_refs", mal_refs}, {"provenance", provenance}};
        if (as_of) body["as_of"] = parse_time(*as_of);
        ctx.call("POST", "/mal/flag", body);
    });

    // report
    std::string report_kind, report_params = "{}";
    auto* report = app.add_subcommand("report", "Run a report through the queue and print it");
    report->add_option("--kind", report_kind)->required()->check(CLI::IsMember({"count", "related_graph", "url_check"}));
    report->add_option("--params", report_params, "JSON parameters")->default_val("{}");
    on(report, [&] {
        const auto params = json::parse(report_params, nullptr, false);
        if (params.is_discarded() || !params.is_object()) throw Usage("--params must be a JSON object");
        const auto sub = ctx.call("POST", "/report", {{"kind", report_kind}, {"params", params}}, {}, false);
        ctx.service().tick();
        ctx.call("GET", "/report/" + sub.at("id").get<std::string>());
    });

    // rules
    std::string rule_format = "text";
    std::optional<double> threshold;
    auto* rules = app.add_subcommand("rules", "Defensive rule feed");
    rules->add_option("--format", rule_format)->check(CLI::IsMember({"text", "json"}));
    rules->add_option("--threshold", threshold);
    on(rules, [&] {
        std::map<std::string, std::string> q{{"format", rule_format}};
        if (threshold) q["threshold"] = format_double(*threshold);
        ctx.call("GET", "/feed/rules", nullptr, q);
    });

    // kms
    auto* kms = app.add_subcommand("kms", "Edge keys (needs CYBEXP_KMS_PASSPHRASE)");
    kms->require_subcommand(1);
    auto* kms_create = kms->add_subcommand("create", "Create a key owned by the token's organisation");
    on(kms_create, [&] { ctx.call("POST", "/kms/keys", json::object()); });
    std::string share_to;
    auto* kms_share = kms->add_subcommand("share", "Grant another organisation a key");
    kms_share->add_option("--key", share_key)->required();
    kms_share->add_option("--to", share_to)->required();
    on(kms_share, [&] { ctx.call("POST", "/kms/share", {{"key_id", share_key}, {"to", share_to}}); });
    auto* kms_audit = kms->add_subcommand("audit", "Export the grant log as JSON lines");
    on(kms_audit, [&] { ctx.workspace().kms().export_audit_jsonl(std::cout); });

    // url
    auto* url = app.add_subcommand("url", "Phishing URL classifier");
    url->require_subcommand(1);
    std::vector<std::string> urls;
    std::string label;
    auto* url_train = url->add_subcommand("train", "Update on labelled URLs (args, or --file of 'label<TAB>url')");
    url_train->add_option("urls", urls);
    url_train->add_option("--label", label)->check(CLI::IsMember({"benign", "phishing"}));
    url_train->add_option("--file", file);
    on(url_train, [&] {
        std::vector<std::pair<std::string, std::string>> items;
        for (const auto& u : urls) {
            if (label.empty()) throw Usage("--label is required with URL arguments");
            items.emplace_back(label, u);
        }
        if (!file.empty()) {
            std::istringstream in(read_source(file));
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                const auto tab = line.find('\t');
                if (tab == std::string::npos) throw Error("expected label<TAB>url: " + line);
                items.emplace_back(line.substr(0, tab), line.substr(tab + 1));
            }
        }
        std::size_t mistakes = 0;
        for (const auto& [l, u] : items)
            mistakes += ctx.call("POST", "/url/train", {{"url", u}, {"label", l}}, {}, false).at("mistake").get<bool>();
        std::cout << json{{"trained", items.size()}, {"mistakes", mistakes}}.dump() << '\n';
    });
    auto* url_check = url->add_subcommand("check", "Classify URLs");
    url_check->add_option("urls", urls)->required();
    on(url_check, [&] {
        for (const auto& u : urls) ctx.call("POST", "/url/check", {{"url", u}});
    });

    // serve
    std::string host = "127.0.0.1";
    int port = 8080, tick_ms = 1000;
    auto* serve = app.add_subcommand("serve", "Serve the JSON API over HTTP");
    serve->add_option("--host", host)->default_val("127.0.0.1");
    serve->add_option("--port", port)->default_val(8080)->check(CLI::Range(0, 65535));
    serve->add_option("--tick-ms", tick_ms, "Drain/report interval")->default_val(1000)->check(CLI::PositiveNumber);
    on(serve, [&] {
        auto& svc = ctx.service();
        std::signal(SIGINT, sigint_handler);
        std::signal(SIGTERM, sigint_handler);
        api::serve(svc, host, port, [&](int p) { std::cerr << "listening on " << host << ':' << p << std::endl; },
                   tick_ms);
    });

    // bench
    auto* bench = app.add_subcommand("bench", "Scaling and compression measurements (CSV on stdout)");
    bench->require_subcommand(1);
    std::vector<std::size_t> sizes{10000, 20000, 40000, 80000};
    std::uint64_t seed = 1;
    std::string workdir = (fs::temp_directory_path() / "cybexp-bench").string();
    auto* b_ing = bench->add_subcommand("ingest", "Time post + drain of N iptables lines");
    b_ing->add_option("--n", sizes, "Line counts")->delimiter(',');
    b_ing->add_option("--seed", seed);
    b_ing->add_option("--workdir", workdir);
    on(b_ing, [&] {
        std::vector<bench::IngestTiming> rows;
        std::vector<double> xs, ys;
        for (auto n : sizes) {
            rows.push_back(bench::time_ingest(n, seed, workdir));
            xs.push_back(static_cast<double>(n));
            ys.push_back(rows.back().seconds);
        }
        std::cout << bench::ingest_csv(rows);
        if (rows.size() >= 2) {
            const auto f = bench::fit_line(xs, ys);
            std::cerr << "fit: seconds = " << format_double(f.slope) << " * n + " << format_double(f.intercept)
                      << "  r2 = " << format_double(f.r2) << '\n';
        }
    });
    std::vector<double> ratios{0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::size_t records = 3000;
    auto* b_cmp = bench->add_subcommand("compress", "Compression gain across duplicate-attribute ratios");
    b_cmp->add_option("--ratios", ratios)->delimiter(',')->check(CLI::Range(0.0, 1.0));
    b_cmp->add_option("--records", records)->default_val(3000);
    b_cmp->add_option("--seed", seed);
    on(b_cmp, [&] {
        std::vector<bench::CompressionPoint> rows;
        for (double r : ratios) rows.push_back(bench::compression_point(r, records, seed));
        std::cout << bench::compression_csv(rows);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    try {
        for (auto& a : actions) a();
    } catch (const Usage& e) {
        std::cerr << "cybexp: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "cybexp: " << e.what() << '\n';
        return 1;
    }
}

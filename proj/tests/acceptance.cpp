// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit when any
// criterion fails. Every check runs offline against embedded stores.

#include "cybexp/analytics.hpp"
#include "cybexp/bench.hpp"
#include "cybexp/ingest.hpp"
#include "cybexp/privacy.hpp"
#include "cybexp/tdql.hpp"
#include "cybexp/threatrank.hpp"
#include "support/footprint.hpp"
#include "support/random_graph.hpp"
#include "support/rank_oracle.hpp"
#include "support/sha256_reference.hpp"
#include "support/tdql_oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

using namespace cybexp;
using tahoe::Instance;
using tahoe::new_attribute;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;
    std::vector<std::string> notes;

    void check(bool ok, const std::string& what)
    {
        if (ok) return;
        pass = false;
        const auto note = "failed: " + what;
        if (std::find(notes.begin(), notes.end(), note) == notes.end()) notes.push_back(note);
    }
};

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fixed(double v, int digits)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// ---------------------------------------------------------------------------

Instance random_leaf(std::mt19937_64& rng)
{
    static const char* kTypes[] = {"ip", "url", "domain", "email_addr", "filename", "port", "ratio", "comment"};
    const std::string st = kTypes[rng() % 8];
    if (st == "port") return new_attribute(st, static_cast<std::int64_t>(rng() % 65536));
    if (st == "ratio") return new_attribute(st, static_cast<double>(rng() % 100000) / 997.0);
    std::string v;
    for (int n = 1 + static_cast<int>(rng() % 24); n > 0; --n) v.push_back(static_cast<char>(33 + rng() % 94));
    return new_attribute(st, v);
}

Outcome dedup_identity()
{
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    std::mt19937_64 rng(101);
    store::ArchiveStore shared, org_a, org_b;
    std::set<std::string> distinct;
    std::size_t n = 0;
    while (n < 10000) {
        // Both organisations derive the instance from the same observed values
        // with their own construction calls.
        const bool object = rng() % 4 == 0;
        std::mt19937_64 fork = rng;
        auto build = [&](std::mt19937_64& r) {
            if (!object) return std::vector<Instance>{random_leaf(r)};
            std::vector<Instance> kids;
            for (int k = 1 + static_cast<int>(r() % 3); k > 0; --k) kids.push_back(random_leaf(r));
            auto obj = tahoe::new_object("bundle", kids);
            kids.push_back(obj);
            return kids;
        };
        const auto a = build(rng);
        const auto b = build(fork);
        if (a.back().hash != b.back().hash) o.check(false, "hash differs between organisations");
        if (a.back().hash != oracle::reference_sha256_hex(tahoe::canonicalize(tahoe::hash_body(a.back()))))
            o.check(false, "hash differs from reference SHA-256");
        org_a.insert(a);
        org_b.insert(b);
        shared.insert(a);
        shared.insert(b);
        for (const auto& i : a) distinct.insert(i.hash);
        auto back = shared.get(a.back().hash);
        if (!back || *back != a.back()) o.check(false, "get after insert");
        ++n;
    }
    // Exchange: B's archive merged into A's adds nothing.
    std::stringstream wire;
    org_b.export_ndjson(wire);
    const auto before = org_a.stats().instance_count;
    const auto rec = org_a.import_ndjson(wire);
    o.check(rec.inserted == 0 && org_a.stats().instance_count == before, "exchange between orgs introduced instances");
    o.check(shared.stats().instance_count == distinct.size(), "shared store holds one copy per distinct hash");
    o.check(shared.stats().duplicate_hits >= n, "second org's copy counted as duplicate");
    const double secs = seconds_since(t0);
    o.check(secs < 10.0, "runtime under 10 s");
    o.detail << n << " instances x 2 orgs, " << distinct.size() << " stored, " << fixed(secs, 2) << " s";
    return o;
}

// ---------------------------------------------------------------------------

Outcome intrinsic_correlation()
{
    Outcome o;
    {
        store::ArchiveStore s;
        const auto ip = new_attribute("ip", std::string("1.1.1.1"));
        const Instance p1[] = {ip, new_attribute("filename", std::string("virus.exe"))};
        const Instance p2[] = {ip, new_attribute("port", std::int64_t{445})};
        const auto e1 = tahoe::new_event("file_download", p1, 1'600'000'000, "org1");
        const auto e2 = tahoe::new_event("firewall_log", p2, 1'600'000'100, "org2");
        s.insert(e1.instances);
        s.insert(e2.instances);
        const std::string term[] = {ip.hash};
        std::set<std::string> got;
        for (const auto& e : s.events_referencing(term)) got.insert(e.hash);
        o.check(got == std::set<std::string>{e1.event.hash, e2.event.hash}, "two-event fixture");
    }
    std::mt19937_64 rng(202);
    std::size_t lookups = 0;
    for (int store_no = 0; store_no < 1000; ++store_no) {
        store::ArchiveStore s;
        auto c = oracle::random_corpus(rng, 1 + static_cast<int>(rng() % 25), 2 + static_cast<int>(rng() % 20));
        for (const auto& eb : c.events) s.insert(eb.instances);
        const auto events = s.scan(tahoe::InstanceKind::event);
        for (const auto& a : c.attributes) {
            std::set<std::string> want;
            for (const auto& e : events)
                if (std::find(e.ref.begin(), e.ref.end(), a.hash) != e.ref.end()) want.insert(e.hash);
            const std::string term[] = {a.hash};
            std::set<std::string> got;
            for (const auto& e : s.events_referencing(term)) got.insert(e.hash);
            if (got != want) {
                o.check(false, "store " + std::to_string(store_no) + " disagrees with scan");
                break;
            }
            ++lookups;
        }
    }
    o.detail << "fixture + 1000 random stores, " << lookups << " lookups vs brute-force scan";
    return o;
}

// ---------------------------------------------------------------------------

Outcome threat_rank()
{
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    using namespace threatrank;

    {
        store::ArchiveStore s;
        oracle::KillChain kc(s);
        MalKnowledge mal;
        mal.mark(kc.email[0].hash);
        const auto sc = compute_scores(s, mal, {kc.t0 + 30 * 86400});
        const double e1 = sc.at(kc.email[0].hash), e2 = sc.at(kc.email[1].hash), e3 = sc.at(kc.email[2].hash),
                     e4 = sc.at(kc.email[3].hash);
        o.check(e1 == -1.0, "TR(email1) = -1");
        o.check(e2 < e3 && e3 < 0.0, "TR(email2) < TR(email3) < 0");
        o.check(e4 == 0.0, "TR(email4) = 0");
        o.detail << "kill chain " << fixed(e1, 4) << " / " << fixed(e2, 6) << " / " << fixed(e3, 6) << " / "
                 << fixed(e4, 1) << "; ";
    }

    // Single-path graphs: the source reaches the target over one shared
    // attribute; extra attributes vary the degrees.
    const double year = std::pow(0.998, 365);
    double worst = 0;
    std::mt19937_64 rng(303);
    for (int trial = 0; trial < 200; ++trial) {
        store::ArchiveStore s;
        const auto link = new_attribute("ip", "10.0.0." + std::to_string(trial));
        std::vector<Instance> src{link}, dst{link};
        for (int k = static_cast<int>(rng() % 4); k > 0; --k) src.push_back(new_attribute("comment", "s" + std::to_string(rng())));
        for (int k = static_cast<int>(rng() % 4); k > 0; --k) dst.push_back(new_attribute("comment", "d" + std::to_string(rng())));
        const std::int64_t ts = 1'600'000'000 - static_cast<std::int64_t>(rng() % 400) * 86400;
        const auto a = tahoe::new_event("sample", src, ts, "org1");
        const auto b = tahoe::new_event("sample", dst, ts + 3600, "org1");
        s.insert(a.instances);
        s.insert(b.instances);
        MalKnowledge mal;
        mal.mark(a.event.hash);
        const std::int64_t as_of = 1'600'000'000 + static_cast<std::int64_t>(rng() % 100) * 86400;
        const double now = threatrank::threat_rank(b.event.hash, s, mal, {as_of}).value;
        const double later = threatrank::threat_rank(b.event.hash, s, mal, {as_of + 365 * 86400}).value;
        worst = std::max(worst, std::abs(later / now - year));
    }
    o.check(worst <= 1e-6, "year ratio equals 0.998^365 within 1e-6");
    o.detail << "year factor " << fixed(year, 7) << " (4 d.p. " << fixed(year, 4) << "), max deviation "
             << worst << "; ";

    std::size_t graphs = 0;
    double max_err = 0;
    const std::int64_t as_of = 1'600'000'000;
    for (int n = 2; n <= 8; ++n)
        oracle::for_each_small_graph(n, [&](oracle::SmallGraph& g) {
            store::ArchiveStore s;
            const auto built = oracle::build_small_graph(g, s);
            MalKnowledge mal;
            for (int m : g.malicious) mal.mark(built.event_hash[m]);
            const auto got = compute_scores(s, mal, {as_of});
            const auto want = oracle::reference_scores(g, as_of);
            for (int i = 0; i < g.events; ++i) max_err = std::max(max_err, std::abs(got.at(built.event_hash[i]) - want[i]));
            ++graphs;
        });
    o.check(max_err <= 1e-12, "exhaustive oracle agreement");
    const double secs = seconds_since(t0);
    o.check(secs < 60.0, "runtime under 60 s");
    o.detail << graphs << " graphs <= 8 nodes, max error " << max_err << ", " << fixed(secs, 1) << " s";
    return o;
}

// ---------------------------------------------------------------------------

Outcome privacy_protocol()
{
    Outcome o;
    using namespace privacy;

    {
        // Org 2 shares a private event, Org 1 a public one; Org 3 receives the key.
        Kms kms;
        store::ArchiveStore s;
        const auto ip = new_attribute("ip", std::string("1.1.1.1"));
        const auto key = kms.create_key("org2");
        AclPolicy acl;
        acl.make_private(ip.hash, key.key_id);
        const Instance pp[] = {ip, new_attribute("filename", std::string("loader.exe"))};
        const Instance pu[] = {ip, new_attribute("port", std::int64_t{443})};
        const auto priv = tahoe::new_event("file_download", pp, 1'600'000'000, "org2");
        const auto pub = tahoe::new_event("firewall_log", pu, 1'600'000'010, "org1");
        const EdgeSecret mine[] = {kms.get("org2", key.key_id)};
        s.insert(apply_acl(priv.instances, acl, mine));
        s.insert(pub.instances);
        const auto q = tdql::parse(R"(FETCH events WHERE attribute ip = "1.1.1.1")");
        auto ids = [&](std::span<const EdgeSecret> held) {
            std::set<std::string> out;
            for (const auto& e : tdql::execute(q, s, held).instances) out.insert(e.hash);
            return out;
        };
        o.check(ids({}) == std::set<std::string>{pub.event.hash}, "no key: only the public event");
        bool denied = false;
        try {
            kms.get("org3", key.key_id);
        } catch (const AccessDenied&) {
            denied = true;
        }
        o.check(denied, "org3 denied before sharing");
        kms.share(key.key_id, "org2", "org3");
        const EdgeSecret theirs[] = {kms.get("org3", key.key_id)};
        o.check(ids(theirs) == std::set<std::string>{pub.event.hash, priv.event.hash}, "shared key: private + public");
    }

    std::mt19937_64 rng(404);
    std::size_t queries = 0, shares_scanned = 0;
    for (int config = 0; config < 500; ++config) {
        Kms kms;
        std::vector<EdgeSecret> keys;
        for (int k = 0; k < 3; ++k) keys.push_back(kms.create_key("org" + std::to_string(k + 1)));
        const std::string querier = "org" + std::to_string(4 + rng() % 2);
        for (const auto& k : keys)
            if (rng() % 2) kms.share(k.key_id, k.owner, querier);

        auto c = oracle::random_corpus(rng, 4 + static_cast<int>(rng() % 12), 3 + static_cast<int>(rng() % 10), 3);
        store::ArchiveStore s, plain; // sealed archive and fully decrypted oracle
        std::map<std::pair<std::string, std::string>, std::string> edge_key; // (event, attribute) -> key id or ""
        std::set<std::string> private_attrs;
        for (const auto& eb : c.events) {
            AclPolicy acl;
            std::vector<EdgeSecret> owner_keys;
            for (const auto& r : eb.event.ref) {
                const int choice = static_cast<int>(rng() % 5);
                if (choice < 3) {
                    acl.make_private(r, keys[choice].key_id);
                    private_attrs.insert(r);
                }
                edge_key[{eb.event.hash, r}] = choice < 3 ? keys[choice].key_id : "";
            }
            for (const auto& k : keys) owner_keys.push_back(kms.get(k.owner, k.key_id));
            const auto shared = apply_acl(eb.instances, acl, owner_keys);
            std::string wire;
            for (const auto& i : shared) wire += tahoe::to_json(i).dump() + "\n";
            for (const auto& [h, kid] : acl.entries()) {
                if (wire.find(h) != std::string::npos) o.check(false, "plaintext hash in serialized share");
                for (const auto& a : c.attributes)
                    if (a.hash == h && wire.find("\"data\":\"" + tahoe::scalar_to_string(a.data) + "\"") != std::string::npos)
                        o.check(false, "private value in serialized share");
            }
            ++shares_scanned;
            s.insert(shared);
            plain.insert(eb.instances);
        }

        std::vector<EdgeSecret> held;
        std::set<std::string> held_ids{""};
        for (const auto& k : keys)
            if (kms.has_access(querier, k.key_id)) {
                held.push_back(kms.get(querier, k.key_id));
                held_ids.insert(k.key_id);
            }
        for (const auto& a : c.attributes) {
            const auto q = tdql::parse("FETCH events WHERE attribute " + a.sub_type + " = \"" +
                                       tahoe::scalar_to_string(a.data) + "\"");
            std::set<std::string> want;
            for (const auto& e : plain.scan(tahoe::InstanceKind::event))
                if (std::find(e.ref.begin(), e.ref.end(), a.hash) != e.ref.end() &&
                    held_ids.contains(edge_key.at({e.hash, a.hash})))
                    want.insert(e.hash);
            std::set<std::string> got;
            for (const auto& e : tdql::execute(q, s, held).instances) got.insert(e.hash);
            if (got != want) {
                o.check(false, "config " + std::to_string(config) + " disagrees with decrypted oracle");
                break;
            }
            ++queries;
        }
    }
    o.detail << "KMS scenario + 500 configurations, " << queries << " queries vs decrypted oracle, "
             << shares_scanned << " shares scanned";
    return o;
}

// ---------------------------------------------------------------------------

Outcome linearity()
{
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    const auto workdir = std::filesystem::temp_directory_path() / ("cybexp_accept_" + std::to_string(::getpid()));
    // Median of three rounds per size; rounds interleave sizes so slow
    // stretches of disk writeback hit every size alike.
    const std::vector<std::size_t> sizes{10000, 20000, 40000, 80000};
    std::vector<std::vector<double>> runs(sizes.size());
    for (int round = 0; round < 3; ++round)
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            const auto t = bench::time_ingest(sizes[i], 7, workdir);
            o.check(t.events == sizes[i], "every line yields an event");
            runs[i].push_back(t.seconds);
        }
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        auto r = runs[i];
        std::sort(r.begin(), r.end());
        xs.push_back(static_cast<double>(sizes[i]));
        ys.push_back(r[1]);
        o.detail << sizes[i] << ":" << fixed(r[1], 2) << "s [" << fixed(r[0], 1) << "-" << fixed(r[2], 1) << "] ";
    }
    const auto f = bench::fit_line(xs, ys);
    o.check(f.r2 >= 0.98, "R^2 >= 0.98");
    const double secs = seconds_since(t0);
    o.check(secs < 600.0, "runtime under 10 min");
    o.detail << "R^2 " << fixed(f.r2, 5) << ", " << fixed(f.slope * 1e6, 1) << " us/line, " << fixed(secs, 0) << " s";
    return o;
}

// ---------------------------------------------------------------------------

Outcome compression()
{
    Outcome o;
    double prev_gain = -1e300, prev_dup = -1;
    double first_positive = -1;
    std::vector<std::string> not_positive;
    for (int i = 0; i <= 10; ++i) {
        const double ratio = i / 10.0;
        oracle::Footprint fp;
        const auto p = bench::compression_point(ratio, 3000, 1, [&](const store::ArchiveStore& s) { fp = oracle::footprint(s); });
        o.check(p.stats.raw_input_bytes == fp.raw && p.stats.stored_bytes == fp.stored &&
                    p.stats.instance_count == fp.instances,
                "counters equal recomputed footprint at ratio " + fixed(ratio, 1));
        o.check(p.gain == oracle::gain_percent(static_cast<double>(fp.raw), static_cast<double>(fp.stored)),
                "gain formula at ratio " + fixed(ratio, 1));
        o.check(p.duplicate_ratio > prev_dup && p.gain > prev_gain, "monotone at ratio " + fixed(ratio, 1));
        if (p.duplicate_ratio > 0.5 && p.gain <= 0) not_positive.push_back(fixed(p.duplicate_ratio, 3));
        if (first_positive < 0 && p.gain > 0) first_positive = p.duplicate_ratio;
        prev_gain = p.gain;
        prev_dup = p.duplicate_ratio;
        o.detail << fixed(p.duplicate_ratio, 2) << ":" << fixed(p.gain, 1) << "% ";
    }
    for (const auto& d : not_positive) o.check(false, "gain not positive at duplication " + d);
    o.detail << "(first positive at duplication " << fixed(first_positive, 2) << ")";
    return o;
}

// ---------------------------------------------------------------------------

Outcome tdql_language()
{
    Outcome o;
    std::mt19937_64 rng(505);
    int round_trips = 0;
    for (int i = 0; i < 10000; ++i) {
        const auto ast = oracle::random_ast(rng);
        const auto text = tdql::render(ast);
        if (!(tdql::parse(text) == ast) || tdql::render(tdql::parse(text)) != text) {
            o.check(false, "round trip: " + text);
            break;
        }
        ++round_trips;
    }
    int pairs = 0, nonempty = 0;
    for (int store_no = 0; store_no < 25 && o.pass; ++store_no) {
        store::ArchiveStore s;
        const auto pool = oracle::fill_random_store(rng, s);
        for (int q = 0; q < 20; ++q) {
            const auto ast = oracle::random_query(rng, pool);
            const auto got = tdql::execute(ast, s);
            const auto want = oracle::brute_force(ast, s);
            if (got.count != want.count || got.instances != want.instances) {
                o.check(false, "executor differs: " + tdql::render(ast));
                break;
            }
            nonempty += got.count.value_or(got.instances.size()) > 0;
            ++pairs;
        }
    }
    o.check(nonempty * 10 >= pairs, "random queries hit stored data");

    // Mail from and to one address, built through the email ingest path.
    store::ArchiveStore s;
    std::set<std::string> expected;
    for (int i = 0; i < 6; ++i) {
        ingest::EmailRecord m;
        const std::string peer = "peer" + std::to_string(i) + "@example.org";
        m.from = i % 2 ? "doe@example.com" : peer;
        m.to = {i % 2 ? peer : "doe@example.com"};
        m.subject = "msg " + std::to_string(i);
        m.body = "hello";
        const auto eb = ingest::email_event(ingest::parse_email(ingest::format_email(m)), 1'600'000'000 + i, "org1");
        s.insert(eb.instances);
        expected.insert(eb.event.hash);
    }
    ingest::EmailRecord other{"x@example.net", {"y@example.net"}, "unrelated", 1'600'000'100, "hi", {}};
    s.insert(ingest::email_event(other, 0, "org1").instances);
    const auto reads = s.attribute_reads();
    const auto r = tdql::execute(tdql::parse(R"(FETCH events WHERE attribute email_addr = "doe@example.com")"), s);
    std::set<std::string> got;
    for (const auto& e : r.instances) got.insert(e.hash);
    o.check(got == expected, "one query returns mail from and to the address");
    o.check(s.attribute_reads() == reads, "resolved without reading attribute payloads");
    o.detail << round_trips << " round trips, " << pairs << " executor/brute-force pairs (" << nonempty
             << " non-empty), to/from query returned " << got.size() << "/6";
    return o;
}

// ---------------------------------------------------------------------------

Outcome sop_classifier()
{
    Outcome o;
    using namespace analytics;
    // Dense separable stream: a hidden hyperplane with a margin band removed.
    std::mt19937_64 rng(606);
    std::normal_distribution<double> g(0, 1);
    constexpr std::size_t d = 20;
    std::vector<double> w(d);
    for (auto& wi : w) wi = g(rng);
    std::vector<std::pair<SparseVector, Label>> stream;
    while (stream.size() < 10000) {
        SparseVector x;
        double s = 0;
        for (std::uint32_t i = 0; i < d; ++i) {
            const double xi = g(rng);
            s += w[i] * xi;
            x.emplace_back(i, xi);
        }
        if (std::abs(s) < 0.5) continue;
        stream.emplace_back(std::move(x), s > 0 ? Label::phishing : Label::benign);
    }
    auto run = [&](SopModel& m) {
        std::size_t correct_tail = 0;
        for (std::size_t t = 0; t < stream.size(); ++t) {
            const bool right = m.predict(stream[t].first) == stream[t].second;
            if (t >= stream.size() - 1000) correct_tail += right;
            m.update(stream[t].first, stream[t].second);
        }
        return static_cast<double>(correct_tail) / 1000.0;
    };
    SopModel a, b;
    const double acc = run(a);
    run(b);
    const auto ja = a.to_json().dump(), jb = b.to_json().dump();
    o.check(acc >= 0.99, "last-1000 online accuracy >= 0.99");
    o.check(ja == jb, "replay byte-exact");
    o.check(SopModel::from_json(nlohmann::json::parse(ja)) == a, "reload equality");
    o.detail << "10000 samples, last-1000 accuracy " << fixed(acc, 4) << ", " << a.mistakes()
             << " mistakes, state " << ja.size() << " bytes identical on replay";
    return o;
}

} // namespace

int main(int argc, char** argv)
{
    // Optional arguments select criteria by name.
    const std::set<std::string> only(argv + 1, argv + argc);
    const std::vector<std::pair<std::string, Outcome (*)()>> criteria{
        {"dedup-identity", dedup_identity},       {"intrinsic-correlation", intrinsic_correlation},
        {"threatrank", threat_rank},              {"privacy-protocol", privacy_protocol},
        {"ingest-linearity", linearity},          {"compression", compression},
        {"tdql", tdql_language},                  {"sop-classifier", sop_classifier},
    };
    int failed = 0, ran = 0;
    for (const auto& [name, fn] : criteria) {
        if (!only.empty() && !only.contains(name)) continue;
        ++ran;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.pass = false;
            o.notes.push_back(std::string("exception: ") + e.what());
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail.str();
        for (const auto& n : o.notes) std::cout << "; " << n;
        std::cout << std::endl;
    }
    std::cout << (failed ? std::to_string(failed) + " of " + std::to_string(ran) + " criteria failed"
                         : "all criteria passed")
              << std::endl;
    return failed ? 1 : 0;
}

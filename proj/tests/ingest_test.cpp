#include "cybexp/ingest.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

using namespace cybexp;
using namespace cybexp::ingest;
using tahoe::Instance;
using tahoe::InstanceKind;

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir()
    {
        static std::atomic<int> n{0};
        path = fs::temp_directory_path() / ("cybexp_ingest_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::vector<Instance> children(const store::ArchiveStore& s, const Instance& ev)
{
    std::vector<Instance> out;
    for (const auto& h : ev.ref) out.push_back(*s.get(h));
    return out;
}

std::vector<Instance> attributes_of(const tahoe::EventBundle& b)
{
    std::vector<Instance> out;
    for (const auto& i : b.instances)
        if (i.is(InstanceKind::attribute)) out.push_back(i);
    return out;
}

std::string file_bytes(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Pipeline {
    TempDir tmp;
    privacy::ArchiveKeyPair key = privacy::ArchiveKeyPair::generate();
    OrgRegistry orgs;
    std::string token = orgs.register_org("org1");
    CacheLake cache{tmp.path / "cache"};

    PostReceipt post(const std::string& format, std::string payload, std::int64_t ts = 1'600'000'000)
    {
        return post_raw(cache, key.public_key, orgs, token, format, std::move(payload), ts);
    }
};

} // namespace

TEST(ParseIptables, ExtractsDocumentedFields)
{
    const auto r = parse_iptables(
        "2021-03-04T05:06:07Z fw01 kernel: [FW DROP] IN=eth0 OUT= SRC=1.1.1.1 DST=10.0.0.5 PROTO=TCP SPT=55321 DPT=22");
    EXPECT_EQ(r.src_ip, "1.1.1.1");
    EXPECT_EQ(r.dst_ip, "10.0.0.5");
    EXPECT_EQ(r.dst_port, 22);
    EXPECT_EQ(r.protocol, "TCP");
    EXPECT_EQ(r.timestamp, parse_iso8601("2021-03-04T05:06:07Z"));

    const auto bare = parse_iptables("fw01 kernel: SRC=1.1.1.1 DST=10.0.0.5 PROTO=TCP SPT=55321 DPT=22");
    EXPECT_FALSE(bare.timestamp);
    EXPECT_EQ(iptables_event(bare, 42, "org1").event.timestamp, 42);
}

TEST(ParseIptables, MissingKeysAreListed)
{
    try {
        parse_iptables("fw01 kernel: SRC=1.1.1.1 DST=10.0.0.5 PROTO=TCP SPT=55321");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_STREQ(e.what(), "missing DPT");
        EXPECT_EQ(e.fields(), std::vector<std::string>{"DPT"});
    }
    try {
        parse_iptables("kernel: PROTO=TCP");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.fields(), (std::vector<std::string>{"SRC", "DST", "DPT"}));
    }
    EXPECT_THROW(parse_iptables("SRC=1.1.1.1 DST=10.0.0.5 PROTO=TCP DPT=99999"), ParseError);
    EXPECT_THROW(parse_iptables("SRC=1.1.1.999 DST=10.0.0.5 PROTO=TCP DPT=22"), ParseError);
}

TEST(ParseIptables, GeneratorRoundTrip)
{
    Generator gen(11);
    for (int i = 0; i < 2000; ++i) {
        auto rec = gen.iptables(1'600'000'000 + i);
        if (i % 7 == 0) rec.timestamp.reset();
        EXPECT_EQ(parse_iptables(format_iptables(rec)), rec);
    }
}

TEST(ParseIptables, EventShape)
{
    const auto b = iptables_event(parse_iptables("SRC=1.1.1.1 DST=10.0.0.5 PROTO=TCP DPT=22"), 7, "org1");
    EXPECT_EQ(b.event.sub_type, "firewall_log");
    const auto attrs = attributes_of(b);
    ASSERT_EQ(attrs.size(), 4u);
    EXPECT_EQ(b.event.ref.size(), 6u); // 4 attributes + source/destination objects
    EXPECT_NE(std::find(b.event.ref.begin(), b.event.ref.end(), tahoe::new_attribute("ip", std::string("1.1.1.1")).hash),
              b.event.ref.end());
}

TEST(ParseCowrie, FixtureRecord)
{
    const auto rec = parse_cowrie(
        R"({"eventid":"cowrie.login.failed","src_ip":"203.0.113.9","username":"root","password":"123456","timestamp":"2021-01-01T10:00:00Z"})");
    EXPECT_EQ(rec.username, "root");
    const auto b = cowrie_event(rec, "org1");
    EXPECT_EQ(b.event.sub_type, "ssh_login");
    EXPECT_EQ(attributes_of(b).size(), 3u);
    EXPECT_EQ(b.event.timestamp, 1'609'495'200);

    Generator gen(4);
    for (int i = 0; i < 500; ++i) {
        const auto r = gen.cowrie(1'600'000'000 + i);
        EXPECT_EQ(parse_cowrie(format_cowrie(r)), r);
    }
}

TEST(ParseCowrie, SchemaViolationsNamePerField)
{
    try {
        parse_cowrie(R"({"src_ip":"not-an-ip","username":7,"timestamp":"yesterday"})");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.fields(), (std::vector<std::string>{"src_ip", "username", "password", "timestamp"}));
    }
    EXPECT_THROW(parse_cowrie("[1,2]"), ParseError);
    EXPECT_THROW(parse_cowrie("{"), ParseError);
}

TEST(ParseEmail, AddressesShareOneSubType)
{
    const auto rec = parse_email("From: Billing <Billing@Evil.example>\r\nTo: alice@corp.example\r\n"
                                 "Subject: Overdue invoice\r\nDate: Fri, 01 Jan 2021 12:00:00 +0100\r\n\r\nPay now.\r\n");
    EXPECT_EQ(rec.from, "billing@evil.example");
    EXPECT_EQ(rec.to, std::vector<std::string>{"alice@corp.example"});
    EXPECT_EQ(rec.timestamp, 1'609'498'800);
    const auto b = email_event(rec, 0, "org1");
    const auto attrs = attributes_of(b);
    ASSERT_EQ(attrs.size(), 3u);
    EXPECT_EQ(std::count_if(attrs.begin(), attrs.end(), [](const Instance& a) { return a.sub_type == "email_addr"; }), 2);
    EXPECT_EQ(std::count_if(attrs.begin(), attrs.end(), [](const Instance& a) { return a.sub_type == "subject"; }), 1);
}

TEST(ParseEmail, UrlsFoldedHeadersAndErrors)
{
    const auto rec = parse_email("From: a@x.example\nTo: b@y.example,\n c@y.example\nSubject: hi\n\n"
                                 "see http://evil.example/login. and (https://Other.example/a?b=1)\n");
    EXPECT_EQ(rec.to.size(), 2u);
    EXPECT_EQ(rec.urls, (std::vector<std::string>{"http://evil.example/login", "https://Other.example/a?b=1"}));
    EXPECT_EQ(url_host(rec.urls[1]), "other.example");
    try {
        parse_email("To: nobody\n\nbody");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.fields(), (std::vector<std::string>{"From", "To", "Subject"}));
    }
    Generator gen(5);
    for (int i = 0; i < 500; ++i) {
        const auto r = gen.email(1'600'000'000 + i);
        EXPECT_EQ(parse_email(format_email(r)), r);
    }
}

TEST(ParseUrlFeed, LabelCarried)
{
    const auto rec = parse_url_feed(R"({"url":"http://paypa1.example/login","label":"phishing","source":"phishtank"})");
    const auto b = url_feed_event(rec, 99, "org1");
    EXPECT_EQ(b.event.sub_type, "url");
    EXPECT_EQ(b.event.timestamp, 99);
    const auto label = tahoe::new_attribute("label", std::string("phishing"));
    EXPECT_NE(std::find(b.event.ref.begin(), b.event.ref.end(), label.hash), b.event.ref.end());
    try {
        parse_url_feed(R"({"url":"ftp://x","label":""})");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.fields(), (std::vector<std::string>{"url", "label", "source"}));
    }
    Generator gen(6);
    for (int i = 0; i < 300; ++i) {
        const auto r = gen.url_feed(1'600'000'000 + i);
        EXPECT_EQ(parse_url_feed(format_url_feed(r)), r);
    }
}

TEST(PostRaw, SealsIntoCacheInOrder)
{
    Pipeline p;
    const auto one = p.post("iptables", "SRC=1.1.1.1 DST=10.0.0.5 PROTO=TCP DPT=22");
    EXPECT_EQ(p.cache.pending(), std::vector<std::string>{one.entry});
    EXPECT_TRUE(one.known_format);
    EXPECT_EQ(one.orgid, "org1");

    for (int i = 0; i < 999; ++i) p.post("iptables", "SRC=1.1.1.1 DST=10.0.0.5 PROTO=TCP DPT=22", 1'600'000'001 + i);
    const auto entries = p.cache.pending();
    ASSERT_EQ(entries.size(), 1000u);
    EXPECT_EQ(entries.front(), one.entry);
    std::int64_t last = 0;
    for (const auto& e : entries) {
        const auto raw = tahoe::from_json(nlohmann::json::parse(privacy::envelope_open(p.cache.read(e), p.key)));
        EXPECT_GT(raw.timestamp, last);
        last = raw.timestamp;
    }
}

TEST(PostRaw, AuthAndUnknownFormat)
{
    Pipeline p;
    EXPECT_THROW(post_raw(p.cache, p.key.public_key, p.orgs, "bogus", "iptables", "x", 1), AuthError);
    EXPECT_EQ(p.cache.size(), 0u);
    const auto r = p.post("netflow_v9", "opaque");
    EXPECT_FALSE(r.known_format);
    EXPECT_EQ(p.cache.size(), 1u);
    store::ArchiveStore s;
    const auto rep = drain_cache(p.cache, p.key, FilterRegistry::standard(), s);
    EXPECT_EQ(rep.archived, 1u);
    EXPECT_EQ(rep.events, 0u);
    EXPECT_TRUE(s.contains(r.raw_hash));
}

TEST(PostRaw, NoPlaintextAtRest)
{
    Pipeline p;
    const std::string marker = "ZZ-MARKER-4f1d2c";
    p.post("email", "From: " + marker + "@x.example\nTo: b@y.example\nSubject: " + marker + "\n\n" + marker);
    p.post("cowrie", R"({"src_ip":"1.2.3.4","username":")" + marker + R"(","password":"p","timestamp":1})");
    for (const auto& de : fs::recursive_directory_iterator(p.tmp.path / "cache")) {
        if (!de.is_regular_file()) continue;
        const auto bytes = file_bytes(de.path());
        EXPECT_EQ(bytes.find(marker), std::string::npos) << de.path();
        EXPECT_EQ(bytes.find("org1"), std::string::npos) << de.path();
        EXPECT_EQ(bytes.find(base64_encode(marker).substr(0, 12)), std::string::npos) << de.path();
    }
    const auto other = privacy::ArchiveKeyPair::generate();
    for (const auto& e : p.cache.pending()) EXPECT_THROW(privacy::envelope_open(p.cache.read(e), other), privacy::PrivacyError);
}

TEST(RunFilters, ThreeFiltersOnOneRecord)
{
    store::ArchiveStore s;
    FilterRegistry reg;
    for (const char* id : {"F1", "F2", "F3"})
        reg.add({id, {"d0"}, [id](const Instance& raw, const store::ArchiveStore&) {
                     const Instance parts[] = {tahoe::new_attribute("comment", std::string(id) + ":" + raw.payload)};
                     return std::vector{tahoe::new_event("derived", parts, raw.timestamp, raw.orgid)};
                 }});
    const auto d0 = tahoe::new_raw("d0", "org1", 10, "payload");
    const Instance one[] = {d0};
    s.insert(one);
    const auto run = run_filters(d0, reg, s);
    EXPECT_EQ(run.derived.size(), 3u);
    EXPECT_EQ(run.applications, 3u);
    EXPECT_EQ(s.scan(InstanceKind::event).size(), 3u);
}

TEST(RunFilters, SharedOutputConnectsChains)
{
    store::ArchiveStore s;
    FilterRegistry reg;
    // D0 -> F1 -> D2 and D00 -> F1 -> D2'; both chain through F5 to the same D5.
    reg.add({"F1", {"d"}, [](const Instance& raw, const store::ArchiveStore&) {
                 const Instance parts[] = {tahoe::new_attribute("url", "http://" + raw.payload + "/x")};
                 return std::vector{tahoe::new_event("url", parts, raw.timestamp, raw.orgid)};
             }});
    reg.add({"F5", {"event:url"}, [](const Instance& ev, const store::ArchiveStore& st) {
                 const auto url = st.get(ev.ref.front());
                 const Instance parts[] = {*url, tahoe::new_attribute("domain", std::string("shared.example"))};
                 return std::vector{tahoe::new_event("url_host", parts, ev.timestamp, ev.orgid)};
             }});
    for (const auto& [payload, ts] : {std::pair{"a.example", 1}, std::pair{"b.example", 2}}) {
        const auto raw = tahoe::new_raw("d", "org1", ts, payload);
        const Instance one[] = {raw};
        s.insert(one);
        EXPECT_EQ(run_filters(raw, reg, s).derived.size(), 2u);
    }
    const auto d5 = tahoe::new_attribute("domain", std::string("shared.example"));
    EXPECT_EQ(s.scan(InstanceKind::attribute).size(), 3u);
    EXPECT_EQ(s.reference_count(d5.hash, InstanceKind::event), 2u);
}

TEST(RunFilters, CyclicRegistryTerminatesAndIsOrderIndependent)
{
    const auto make = [](bool reversed) {
        std::vector<Filter> fs;
        const auto relabel = [](const char* to) {
            return [to](const Instance& ev, const store::ArchiveStore& st) {
                return std::vector{tahoe::new_event(to, children(st, ev), ev.timestamp, ev.orgid)};
            };
        };
        fs.push_back({"Fa", {"event:a"}, relabel("b")});
        fs.push_back({"Fb", {"event:b"}, relabel("a")});
        fs.push_back({"Fself", {"event:a", "event:b"}, relabel("a")});
        fs.push_back({"Fraw", {"seed"}, [](const Instance& raw, const store::ArchiveStore&) {
                          const Instance parts[] = {tahoe::new_attribute("comment", raw.payload)};
                          return std::vector{tahoe::new_event("a", parts, raw.timestamp, raw.orgid)};
                      }});
        if (reversed) std::reverse(fs.begin(), fs.end());
        FilterRegistry reg;
        for (auto& f : fs) reg.add(std::move(f));
        return reg;
    };
    store::ArchiveStore s1, s2;
    const auto raw = tahoe::new_raw("seed", "org1", 5, "x");
    const Instance one[] = {raw};
    s1.insert(one);
    s2.insert(one);
    const auto r1 = run_filters(raw, make(false), s1);
    const auto r2 = run_filters(raw, make(true), s2);
    EXPECT_EQ(r1.derived.size(), 2u);
    EXPECT_EQ(s1.scan(), s2.scan());
}

TEST(RunFilters, StandardChainDerivesUrlHost)
{
    store::ArchiveStore s;
    const auto raw = tahoe::new_raw("email", "org1", 100,
                                    "From: a@x.example\nTo: b@corp.example\nSubject: s\n\nhttp://evil.example/p\n");
    const Instance one[] = {raw};
    s.insert(one);
    const auto run = run_filters(raw, FilterRegistry::standard(), s);
    ASSERT_EQ(run.derived.size(), 2u);
    EXPECT_EQ(s.get(run.derived[1])->sub_type, "url_host");
    EXPECT_TRUE(s.contains(tahoe::new_attribute("domain", std::string("evil.example")).hash));
}

TEST(DrainCache, MixedFormatsArchived)
{
    Pipeline p;
    Generator gen(1);
    p.post("iptables", gen.payload("iptables", 1'600'000'000));
    p.post("cowrie", gen.payload("cowrie", 1'600'000'001));
    p.post("url_feed", gen.payload("url_feed", 1'600'000'002));
    store::ArchiveStore s;
    const auto rep = drain_cache(p.cache, p.key, FilterRegistry::standard(), s);
    EXPECT_EQ(rep.opened, 3u);
    EXPECT_GE(s.scan(InstanceKind::event).size(), 3u);
    EXPECT_EQ(s.scan(InstanceKind::raw).size(), 3u);
    EXPECT_EQ(p.cache.size(), 0u);
}

TEST(DrainCache, ReplaySafe)
{
    Pipeline once, twice;
    Generator g1(9), g2(9);
    const char* formats[] = {"iptables", "cowrie", "email", "url_feed"};
    for (int i = 0; i < 60; ++i) {
        const std::string f = formats[i % 4];
        once.post(f, g1.payload(f, 1'600'000'000 + i), 1'600'000'000 + i);
        twice.post(f, g2.payload(f, 1'600'000'000 + i), 1'600'000'000 + i);
    }
    std::mt19937_64 rng(2);
    for (const auto& e : twice.cache.pending())
        if (rng() % 2) twice.cache.append(twice.cache.read(e));
    store::ArchiveStore a, b;
    drain_cache(once.cache, once.key, FilterRegistry::standard(), a);
    drain_cache(twice.cache, twice.key, FilterRegistry::standard(), b);
    EXPECT_EQ(a.scan(), b.scan());

    const auto before = b.scan();
    const auto raw = b.scan(InstanceKind::raw).front();
    twice.cache.append(privacy::envelope_seal(tahoe::to_json(raw).dump(), twice.key.public_key));
    drain_cache(twice.cache, twice.key, FilterRegistry::standard(), b);
    EXPECT_EQ(b.scan(), before);
}

TEST(DrainCache, PoisonEntriesQuarantined)
{
    Pipeline p;
    p.post("iptables", "SRC=1.1.1.1 DST=10.0.0.5 PROTO=TCP DPT=22");
    p.cache.append("garbage");
    const auto other = privacy::ArchiveKeyPair::generate();
    p.cache.append(privacy::envelope_seal("{}", other.public_key));
    p.cache.append(privacy::envelope_seal(tahoe::to_json(tahoe::new_attribute("ip", std::string("1.1.1.1"))).dump(),
                                          p.key.public_key));
    p.post("iptables", "SRC=1.1.1.1 DST=10.0.0.5 PROTO=TCP", 1'600'000'009);
    store::ArchiveStore s;
    const auto rep = drain_cache(p.cache, p.key, FilterRegistry::standard(), s);
    EXPECT_EQ(rep.quarantined, 3u);
    EXPECT_EQ(rep.archived, 2u);
    EXPECT_EQ(rep.events, 1u);
    ASSERT_EQ(rep.errors.size(), 1u);
    EXPECT_NE(rep.errors[0].find("missing DPT"), std::string::npos);
    EXPECT_EQ(p.cache.quarantined().size(), 3u);
    EXPECT_EQ(p.cache.size(), 0u);
    EXPECT_TRUE(fs::exists(p.cache.dir() / "quarantine" / (p.cache.quarantined()[0] + ".reason")));

    CacheLake reopened(p.cache.dir());
    const auto next = reopened.append("x");
    EXPECT_GT(next, p.cache.quarantined().back());
}

TEST(DrainCache, ConcurrentProducerAndConsumer)
{
    Pipeline p;
    store::ArchiveStore s;
    constexpr int n = 400;
    std::atomic<bool> done{false};
    std::thread producer([&] {
        Generator gen(3);
        for (int i = 0; i < n; ++i) p.post("iptables", gen.payload("iptables", 1'600'000'000 + i), 1'600'000'000 + i);
        done = true;
    });
    std::size_t archived = 0;
    while (!done || p.cache.size() > 0) archived += drain_cache(p.cache, p.key, FilterRegistry::standard(), s).archived;
    producer.join();
    archived += drain_cache(p.cache, p.key, FilterRegistry::standard(), s).archived;
    EXPECT_EQ(archived, static_cast<std::size_t>(n));
    EXPECT_EQ(s.scan(InstanceKind::raw).size(), static_cast<std::size_t>(n));
}

TEST(OrgRegistry, PersistsTokenDigestsOnly)
{
    TempDir t;
    std::string token;
    {
        OrgRegistry r(t.path / "orgs.json");
        token = r.register_org("org7");
        EXPECT_THROW(r.register_org("bad org"), IngestError);
    }
    EXPECT_EQ(file_bytes(t.path / "orgs.json").find(token), std::string::npos);
    OrgRegistry back(t.path / "orgs.json");
    EXPECT_EQ(back.authenticate(token), "org7");
    EXPECT_FALSE(back.authenticate(token + "0"));
}

#include "cybexp/tahoe.hpp"
#include "support/sha256_reference.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

using namespace cybexp;
using namespace cybexp::tahoe;
using nlohmann::json;

namespace {

// Frozen with Python hashlib over the canonical bytes below.
constexpr const char* kIp1111Canonical = R"({"data":"1.1.1.1","itype":"attribute","sub_type":"ip"})";
constexpr const char* kIp1111Hash = "8614a78531f100742b81aff4101af71e204e2c4f34e47d2f7e183519305f83a0";
constexpr const char* kIp1112Hash = "8b88bf844eb52e6128853768e4a556ce23778e17ee3ec9219801f9719b0e760e";

} // namespace

TEST(ReferenceSha256, KnownVectors)
{
    EXPECT_EQ(oracle::reference_sha256_hex(""),
              "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(oracle::reference_sha256_hex("abc"),
              "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Canonicalize, AttributeBytesAreFixed)
{
    json body = {{"itype", "attribute"}, {"sub_type", "ip"}, {"data", "1.1.1.1"}};
    const auto bytes = canonicalize(body);
    EXPECT_EQ(bytes, kIp1111Canonical);
    EXPECT_EQ(oracle::reference_sha256_hex(bytes), kIp1111Hash);
    EXPECT_EQ(hash_instance(body), kIp1111Hash);
}

TEST(Canonicalize, FieldOrderDoesNotMatter)
{
    json a = json::parse(R"({"sub_type":"ip","data":"1.1.1.1","itype":"attribute"})");
    json b = json::parse(R"({"itype":"attribute","data":"1.1.1.1","sub_type":"ip"})");
    EXPECT_EQ(canonicalize(a), canonicalize(b));
    EXPECT_EQ(canonicalize(a), canonicalize(a));
}

TEST(Canonicalize, RefSortedExceptSessions)
{
    json obj = {{"itype", "object"}, {"sub_type", "file"}, {"_ref", {"bb", "aa"}}};
    EXPECT_EQ(canonicalize(obj), R"({"_ref":["aa","bb"],"itype":"object","sub_type":"file"})");
    json ses = {{"itype", "session"}, {"sub_type", "login"}, {"criterion", "c"}, {"_ref", {"bb", "aa"}}};
    EXPECT_EQ(canonicalize(ses), R"({"_ref":["bb","aa"],"criterion":"c","itype":"session","sub_type":"login"})");
}

TEST(Canonicalize, NumbersUseShortestForm)
{
    EXPECT_EQ(canonicalize(json{{"x", 0.1}}), R"({"x":0.1})");
    EXPECT_EQ(canonicalize(json{{"x", 22}}), R"({"x":22})");
    EXPECT_EQ(canonicalize(json{{"x", -1.5e300}}), R"({"x":-1.5e+300})");
}

TEST(Canonicalize, RejectsUnsupportedValues)
{
    EXPECT_THROW(canonicalize(json{{"x", true}}), TahoeError);
    EXPECT_THROW(canonicalize(json{{"x", nullptr}}), TahoeError);
    EXPECT_THROW(canonicalize(json{{"x", json::object()}}), TahoeError);
    EXPECT_THROW(canonicalize(json{{"x", json::array({1})}}), TahoeError);
    EXPECT_THROW(canonicalize(json{{"x", std::nan("")}}), TahoeError);
    EXPECT_THROW(canonicalize(json{{"x", std::string("\xff\xfe")}}), TahoeError);
    EXPECT_THROW(canonicalize(json::array()), TahoeError);
}

TEST(HashInstance, ReproducibleAcrossOrganisations)
{
    // Two independent constructions, as two organizations would do.
    const auto org1 = new_attribute("ip", std::string("1.1.1.1"));
    const auto org2 = new_attribute("ip", std::string("1.1.1.1"));
    EXPECT_EQ(org1.hash, kIp1111Hash);
    EXPECT_EQ(org1, org2);
    EXPECT_EQ(new_attribute("ip", std::string("1.1.1.2")).hash, kIp1112Hash);
    EXPECT_NE(kIp1111Hash, std::string(kIp1112Hash));
}

TEST(HashInstance, MatchesReferenceOracleOnRandomBodies)
{
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> len(0, 40), ch(32, 126);
    for (int i = 0; i < 500; ++i) {
        std::string data;
        for (int n = len(rng); n > 0; --n) data.push_back(static_cast<char>(ch(rng)));
        const auto attr = new_attribute("comment", data);
        EXPECT_EQ(attr.hash, oracle::reference_sha256_hex(canonicalize(hash_body(attr))));
    }
}

TEST(NewObject, RefsHoldChildHashes)
{
    const auto fname = new_attribute("filename", std::string("virus.exe"));
    const auto fsize = new_attribute("filesize", std::int64_t{1024});
    const Instance kids[] = {fname, fsize};
    const auto file = new_object("file", kids);
    EXPECT_EQ(std::set<std::string>(file.ref.begin(), file.ref.end()),
              (std::set<std::string>{fname.hash, fsize.hash}));
    EXPECT_TRUE(validate(file).empty());
    EXPECT_THROW(new_object("file", std::span<const Instance>{}), TahoeError);
}

TEST(NewEvent, RefIsTransitiveClosure)
{
    const auto fname = new_attribute("filename", std::string("virus.exe"));
    const auto fsize = new_attribute("filesize", std::int64_t{1024});
    const Instance kids[] = {fname, fsize};
    const auto file = new_object("file", kids);
    const Instance parts[] = {file, fname, fsize};
    const auto eb = new_event("file_download", parts, 1'600'000'000, "org1");
    EXPECT_EQ(std::set<std::string>(eb.event.ref.begin(), eb.event.ref.end()),
              (std::set<std::string>{file.hash, fname.hash, fsize.hash}));
    EXPECT_EQ(eb.event.ref.size(), 3u);
    ASSERT_EQ(eb.instances.size(), 4u);
    EXPECT_EQ(eb.instances.back(), eb.event);
}

TEST(NewEvent, Errors)
{
    EXPECT_THROW(new_event("email", std::span<const Instance>{}, 1, "org1"), TahoeError);
    const auto a = new_attribute("ip", std::string("1.1.1.1"));
    const Instance kids[] = {a};
    const auto obj = new_object("source", kids);
    const Instance only_obj[] = {obj};
    EXPECT_THROW(new_event("x", only_obj, 1, "org1"), TahoeError); // descendant missing
}

TEST(NewEvent, TimestampChangesHash)
{
    const Instance parts[] = {new_attribute("ip", std::string("1.1.1.1"))};
    const auto e1 = new_event("firewall_log", parts, 100, "org1");
    const auto e2 = new_event("firewall_log", parts, 101, "org1");
    const auto e3 = new_event("firewall_log", parts, 100, "org2");
    EXPECT_NE(e1.event.hash, e2.event.hash);
    EXPECT_NE(e1.event.hash, e3.event.hash);
}

TEST(NewEvent, DeepNestingClosureAndDeterminism)
{
    // Object chain of depth 6 over a single leaf.
    Bundle parts{new_attribute("comment", std::string("leaf"))};
    for (int depth = 0; depth < 6; ++depth) {
        const Instance child[] = {parts.back()};
        parts.push_back(new_object("wrapper", child));
    }
    const auto e1 = new_event("nested", parts, 5, "org1");
    std::reverse(parts.begin(), parts.end());
    const auto e2 = new_event("nested", parts, 5, "org1");
    EXPECT_EQ(e1.event.hash, e2.event.hash);
    EXPECT_EQ(e1.event.ref.size(), 7u);
}

TEST(NewSession, KeepsInsertionOrder)
{
    std::vector<Instance> events;
    for (int i = 0; i < 3; ++i) {
        const Instance parts[] = {new_attribute("username", std::string("user1"))};
        events.push_back(new_event("ssh_login", parts, 1000 + i, "org1").event);
    }
    const auto s = new_session("login_session", "user1 logged in", events);
    ASSERT_EQ(s.ref.size(), 3u);
    EXPECT_EQ(s.ref[0], events[0].hash);
    EXPECT_EQ(s.ref[2], events[2].hash);
    std::vector<Instance> reversed(events.rbegin(), events.rend());
    EXPECT_NE(new_session("login_session", "user1 logged in", reversed).hash, s.hash);
}

TEST(NewRaw, PayloadRoundTripsBitExact)
{
    std::string payload;
    for (int i = 0; i < 256; ++i) payload.push_back(static_cast<char>(i));
    const auto raw = new_raw("iptables", "org1", 42, payload);
    const auto back = from_json(json::parse(to_json(raw).dump()));
    EXPECT_EQ(back.payload, payload);
    EXPECT_EQ(back, raw);
    EXPECT_TRUE(validate(back).empty());
}

TEST(Validate, DetectsViolations)
{
    const auto a = new_attribute("ip", std::string("1.1.1.1"));
    EXPECT_TRUE(validate(a).empty());

    const auto b = new_attribute("ip", std::string("2.2.2.2"));
    const Instance parts[] = {a, b};
    auto ev = new_event("firewall_log", parts, 1, "org1").event;
    EXPECT_TRUE(validate(ev).empty());

    auto tampered = ev;
    tampered.timestamp += 1;
    ASSERT_FALSE(validate(tampered).empty());
    EXPECT_EQ(validate(tampered).front(), "hash mismatch");

    auto mal = ev;
    mal.mal_ref.push_back(std::string(64, 'f'));
    EXPECT_EQ(validate(mal).front(), "_mal_ref not a subset of _ref");

    auto attr_with_ref = a;
    attr_with_ref.ref.push_back(b.hash);
    EXPECT_FALSE(validate(attr_with_ref).empty());
}

TEST(WireForm, RoundTripsEveryKind)
{
    const auto a = new_attribute("filesize", 2.5);
    const Instance kids[] = {a};
    const auto o = new_object("file", kids);
    const Instance parts[] = {o, a};
    auto ev = new_event("file_download", parts, 7, "org1").event;
    ev.malicious_score = -0.25;
    ev.mal_ref = {a.hash};
    const Instance evs[] = {ev};
    const auto s = new_session("grp", "why", evs);
    for (const auto& inst : {a, o, ev, s}) {
        EXPECT_EQ(from_json(json::parse(to_json(inst).dump())), inst);
    }
    EXPECT_TRUE(to_json(ev).contains("_hash"));
    EXPECT_THROW(from_json(json{{"itype", "bogus"}, {"_hash", "x"}}), TahoeError);
}

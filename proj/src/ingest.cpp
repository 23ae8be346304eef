#include "cybexp/ingest.hpp"

#include <arpa/inet.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <ctime>
#include <deque>
#include <fstream>
#include <iomanip>
#include <regex>
#include <set>
#include <sstream>
#include <unordered_set>

namespace cybexp::ingest {

namespace fs = std::filesystem;
using nlohmann::json;
using tahoe::new_attribute;
using tahoe::new_event;
using tahoe::new_object;

ParseError::ParseError(std::string message, std::vector<std::string> fields)
    : IngestError(std::move(message)), fields_(std::move(fields))
{
}

namespace {

std::string lower(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string join(const std::vector<std::string>& v, std::string_view sep)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += sep;
        out += v[i];
    }
    return out;
}

bool valid_ip(const std::string& s)
{
    unsigned char buf[16];
    return inet_pton(AF_INET, s.c_str(), buf) == 1 || inet_pton(AF_INET6, s.c_str(), buf) == 1;
}

std::optional<std::int64_t> parse_int(std::string_view s)
{
    std::int64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
    return v;
}

void write_file_atomic(const fs::path& file, std::string_view bytes)
{
    const auto tmp = file.parent_path() / ("." + file.filename().string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IngestError("cannot write " + tmp.string());
    }
    fs::rename(tmp, file);
}

json parse_object(std::string_view text, const char* format)
{
    json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
        throw ParseError(std::string(format) + " record is not a JSON object", {"record"});
    return doc;
}

// Field checks accumulate every problem before throwing.
struct FieldErrors {
    std::vector<std::string> fields;
    std::vector<std::string> messages;

    void add(const std::string& field, const std::string& msg)
    {
        fields.push_back(field);
        messages.push_back(field + ": " + msg);
    }
    void raise(const char* format) const
    {
        if (!fields.empty()) throw ParseError(std::string(format) + " record invalid (" + join(messages, "; ") + ")", fields);
    }
};

std::string required_string(const json& doc, const char* key, FieldErrors& errs)
{
    if (!doc.contains(key)) {
        errs.add(key, "missing");
        return {};
    }
    if (!doc[key].is_string() || doc[key].get<std::string>().empty()) {
        errs.add(key, "expected a non-empty string");
        return {};
    }
    return doc[key].get<std::string>();
}

std::optional<std::int64_t> time_field(const json& doc, const char* key, bool required, FieldErrors& errs)
{
    if (!doc.contains(key)) {
        if (required) errs.add(key, "missing");
        return std::nullopt;
    }
    const auto& v = doc[key];
    if (v.is_number_integer()) return v.get<std::int64_t>();
    if (v.is_string())
        if (auto t = parse_iso8601(v.get<std::string>())) return t;
    errs.add(key, "expected ISO-8601 text or epoch seconds");
    return std::nullopt;
}

} // namespace

// ---------------------------------------------------------------------------

OrgRegistry::OrgRegistry(fs::path file) : file_(std::move(file))
{
    if (!fs::exists(*file_)) return;
    std::ifstream in(*file_);
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.contains("tokens")) throw IngestError("malformed org registry " + file_->string());
    for (const auto& [digest, org] : doc["tokens"].items()) by_token_[digest] = org.get<std::string>();
}

std::string OrgRegistry::register_org(const std::string& orgid)
{
    if (!tahoe::is_token(orgid)) throw IngestError("invalid orgid '" + orgid + "'");
    const auto raw = random_bytes(24);
    const std::string token = hex_encode(raw);
    std::lock_guard lock(mutex_);
    by_token_[sha256_hex(token)] = orgid;
    save();
    return token;
}

std::optional<std::string> OrgRegistry::authenticate(std::string_view token) const
{
    std::lock_guard lock(mutex_);
    if (auto it = by_token_.find(sha256_hex(token)); it != by_token_.end()) return it->second;
    return std::nullopt;
}

std::vector<std::string> OrgRegistry::orgs() const
{
    std::lock_guard lock(mutex_);
    std::set<std::string> s;
    for (const auto& [d, o] : by_token_) s.insert(o);
    return {s.begin(), s.end()};
}

void OrgRegistry::save() const
{
    if (!file_) return;
    json doc{{"tokens", json::object()}};
    for (const auto& [d, o] : by_token_) doc["tokens"][d] = o;
    write_file_atomic(*file_, doc.dump(2) + "\n");
    fs::permissions(*file_, fs::perms::owner_read | fs::perms::owner_write);
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kEntrySuffix = ".cxe";

std::optional<std::uint64_t> entry_seq(const std::string& name)
{
    if (name.size() != 16 + kEntrySuffix.size() || !name.ends_with(kEntrySuffix)) return std::nullopt;
    auto v = parse_int(std::string_view(name).substr(0, 16));
    if (!v || *v < 0) return std::nullopt;
    return static_cast<std::uint64_t>(*v);
}

std::vector<std::string> list_entries(const fs::path& dir)
{
    std::vector<std::string> out;
    if (!fs::exists(dir)) return out;
    for (const auto& de : fs::directory_iterator(dir)) {
        if (!de.is_regular_file()) continue;
        auto name = de.path().filename().string();
        if (entry_seq(name)) out.push_back(std::move(name));
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

CacheLake::CacheLake(fs::path dir) : dir_(std::move(dir))
{
    fs::create_directories(dir_ / "quarantine");
    for (const auto& d : {dir_, dir_ / "quarantine"})
        for (const auto& name : list_entries(d)) next_seq_ = std::max(next_seq_, *entry_seq(name) + 1);
}

std::string CacheLake::append(std::string_view sealed)
{
    std::lock_guard lock(mutex_);
    char name[32];
    std::snprintf(name, sizeof name, "%016llu", static_cast<unsigned long long>(next_seq_++));
    const std::string entry = std::string(name) + std::string(kEntrySuffix);
    write_file_atomic(dir_ / entry, sealed);
    return entry;
}

std::vector<std::string> CacheLake::pending() const { return list_entries(dir_); }

std::string CacheLake::read(const std::string& entry) const
{
    std::ifstream in(dir_ / entry, std::ios::binary);
    if (!in) throw IngestError("no cache entry " + entry);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void CacheLake::acknowledge(const std::string& entry)
{
    std::lock_guard lock(mutex_);
    fs::remove(dir_ / entry);
}

void CacheLake::quarantine(const std::string& entry, const std::string& reason)
{
    std::lock_guard lock(mutex_);
    fs::rename(dir_ / entry, dir_ / "quarantine" / entry);
    write_file_atomic(dir_ / "quarantine" / (entry + ".reason"), reason + "\n");
}

std::vector<std::string> CacheLake::quarantined() const { return list_entries(dir_ / "quarantine"); }

PostReceipt post_raw(CacheLake& cache, const privacy::Key256& archive_public, const OrgRegistry& orgs,
                     std::string_view token, const std::string& format_tag, std::string payload,
                     std::int64_t timestamp)
{
    const auto org = orgs.authenticate(token);
    if (!org) throw AuthError("unknown org token");
    if (!tahoe::is_token(format_tag)) throw IngestError("invalid format tag '" + format_tag + "'");
    const auto raw = tahoe::new_raw(format_tag, *org, timestamp, std::move(payload));
    PostReceipt r;
    r.raw_hash = raw.hash;
    r.orgid = *org;
    r.known_format = std::find(known_formats().begin(), known_formats().end(), format_tag) != known_formats().end();
    r.entry = cache.append(privacy::envelope_seal(tahoe::to_json(raw).dump(), archive_public));
    return r;
}

// ---------------------------------------------------------------------------
// iptables: "[<ISO-8601>] <host> kernel: [prefix] KEY=VALUE ... flags"

IptablesRecord parse_iptables(std::string_view line)
{
    std::istringstream in{std::string(line)};
    std::map<std::string, std::string> kv;
    IptablesRecord rec;
    std::string word;
    bool first = true;
    while (in >> word) {
        if (first) {
            first = false;
            if (auto t = parse_iso8601(word)) {
                rec.timestamp = t;
                continue;
            }
        }
        const auto eq = word.find('=');
        if (eq == std::string::npos || eq == 0) continue;
        kv.emplace(word.substr(0, eq), word.substr(eq + 1));
    }
    std::vector<std::string> missing;
    for (const char* k : {"SRC", "DST", "PROTO", "DPT"})
        if (!kv.contains(k) || kv[k].empty()) missing.push_back(k);
    if (!missing.empty()) throw ParseError("missing " + join(missing, ", "), missing);

    std::vector<std::string> bad;
    rec.src_ip = kv["SRC"];
    rec.dst_ip = kv["DST"];
    if (!valid_ip(rec.src_ip)) bad.push_back("SRC");
    if (!valid_ip(rec.dst_ip)) bad.push_back("DST");
    const auto port = parse_int(kv["DPT"]);
    if (!port || *port < 0 || *port > 65535) bad.push_back("DPT");
    else rec.dst_port = *port;
    rec.protocol = kv["PROTO"];
    if (rec.protocol.find_first_not_of("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_") != std::string::npos)
        bad.push_back("PROTO");
    if (!bad.empty()) throw ParseError("invalid " + join(bad, ", "), bad);
    return rec;
}

std::string format_iptables(const IptablesRecord& rec, std::string_view host)
{
    std::ostringstream out;
    if (rec.timestamp) out << format_iso8601(*rec.timestamp) << ' ';
    out << host << " kernel: [FW DROP] IN=eth0 OUT= SRC=" << rec.src_ip << " DST=" << rec.dst_ip
        << " LEN=60 TOS=0x00 PREC=0x00 TTL=52 ID=54321 DF PROTO=" << rec.protocol << " SPT="
        << 32768 + (rec.dst_port * 7919) % 28000 << " DPT=" << rec.dst_port << " WINDOW=29200 RES=0x00 SYN URGP=0";
    return out.str();
}

EventBundle iptables_event(const IptablesRecord& rec, std::int64_t fallback_ts, const std::string& orgid)
{
    const auto src = new_attribute("ip", rec.src_ip);
    const auto dst = new_attribute("ip", rec.dst_ip);
    const auto port = new_attribute("port", rec.dst_port);
    const auto proto = new_attribute("protocol", rec.protocol);
    const Instance src_children[] = {src};
    const Instance dst_children[] = {dst, port};
    const auto source = new_object("source", src_children);
    const auto destination = new_object("destination", dst_children);
    const Instance parts[] = {src, source, dst, port, destination, proto};
    return new_event("firewall_log", parts, rec.timestamp.value_or(fallback_ts), orgid);
}

// ---------------------------------------------------------------------------

CowrieRecord parse_cowrie(std::string_view json_text)
{
    const json doc = parse_object(json_text, "cowrie");
    FieldErrors errs;
    CowrieRecord rec;
    rec.src_ip = required_string(doc, "src_ip", errs);
    if (!rec.src_ip.empty() && !valid_ip(rec.src_ip)) errs.add("src_ip", "not an IP address");
    rec.username = required_string(doc, "username", errs);
    if (!doc.contains("password") || !doc["password"].is_string()) errs.add("password", doc.contains("password") ? "expected a string" : "missing");
    else rec.password = doc["password"].get<std::string>();
    rec.timestamp = time_field(doc, "timestamp", true, errs).value_or(0);
    errs.raise("cowrie");
    return rec;
}

std::string format_cowrie(const CowrieRecord& rec)
{
    // Layout of a Cowrie "cowrie.login.failed" JSON log line.
    const auto digest = sha256_hex(rec.src_ip + "|" + rec.username + "|" + std::to_string(rec.timestamp));
    const auto src_port = 1024 + std::stoul(digest.substr(0, 4), nullptr, 16) % 64000;
    return json{{"eventid", "cowrie.login.failed"},
                {"username", rec.username},
                {"password", rec.password},
                {"message", "login attempt [" + rec.username + "/" + rec.password + "] failed"},
                {"sensor", "hp01"},
                {"timestamp", format_iso8601(rec.timestamp)},
                {"src_ip", rec.src_ip},
                {"src_port", src_port},
                {"dst_ip", "10.0.0.2"},
                {"dst_port", 22},
                {"protocol", "ssh"},
                {"session", digest.substr(4, 12)}}
        .dump();
}

EventBundle cowrie_event(const CowrieRecord& rec, const std::string& orgid)
{
    const Instance parts[] = {new_attribute("ip", rec.src_ip), new_attribute("username", rec.username),
                              new_attribute("password", rec.password)};
    return new_event("ssh_login", parts, rec.timestamp, orgid);
}

// ---------------------------------------------------------------------------

namespace {

std::string address_of(std::string_view field)
{
    const auto lt = field.find('<');
    const auto gt = field.rfind('>');
    if (lt != std::string_view::npos && gt != std::string_view::npos && gt > lt) field = field.substr(lt + 1, gt - lt - 1);
    return lower(trim(field));
}

bool plausible_address(std::string_view a)
{
    const auto at = a.find('@');
    return at != std::string_view::npos && at > 0 && at + 1 < a.size() && a.find_first_of(" \t,<>") == std::string_view::npos;
}

std::optional<std::int64_t> parse_email_date(const std::string& text)
{
    if (auto t = parse_iso8601(text)) return t;
    std::tm tm{};
    std::istringstream in(text);
    in >> std::get_time(&tm, "%a, %d %b %Y %H:%M:%S");
    if (in.fail()) return std::nullopt;
    std::string zone;
    in >> zone;
    std::int64_t off = 0;
    if (zone.size() == 5 && (zone[0] == '+' || zone[0] == '-')) {
        const auto hh = parse_int(zone.substr(1, 2));
        const auto mm = parse_int(zone.substr(3, 2));
        if (!hh || !mm) return std::nullopt;
        off = (*hh * 3600 + *mm * 60) * (zone[0] == '-' ? -1 : 1);
    }
    return static_cast<std::int64_t>(timegm(&tm)) - off;
}

std::vector<std::string> find_urls(const std::string& body)
{
    static const std::regex re(R"(https?://[^\s<>"']+)", std::regex::icase);
    std::vector<std::string> out;
    for (auto it = std::sregex_iterator(body.begin(), body.end(), re); it != std::sregex_iterator(); ++it) {
        std::string u = it->str();
        while (!u.empty() && std::string_view(".,;:!?)]").find(u.back()) != std::string_view::npos) u.pop_back();
        if (std::find(out.begin(), out.end(), u) == out.end()) out.push_back(u);
    }
    return out;
}

} // namespace

EmailRecord parse_email(std::string_view text)
{
    std::string norm(text);
    norm.erase(std::remove(norm.begin(), norm.end(), '\r'), norm.end());
    const auto split = norm.find("\n\n");
    const std::string head = norm.substr(0, split);
    EmailRecord rec;
    if (split != std::string::npos) rec.body = norm.substr(split + 2);

    std::map<std::string, std::string> headers;
    std::string last;
    std::istringstream in(head);
    for (std::string line; std::getline(in, line);) {
        if (!line.empty() && (line[0] == ' ' || line[0] == '\t') && !last.empty()) {
            headers[last] += " " + trim(line);
            continue;
        }
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        last = lower(trim(line.substr(0, colon)));
        headers.emplace(last, trim(line.substr(colon + 1)));
    }

    FieldErrors errs;
    if (!headers.contains("from")) errs.add("From", "missing");
    else {
        rec.from = address_of(headers["from"]);
        if (!plausible_address(rec.from)) errs.add("From", "not an address");
    }
    if (!headers.contains("to")) errs.add("To", "missing");
    else {
        std::istringstream list(headers["to"]);
        for (std::string item; std::getline(list, item, ',');) {
            if (trim(item).empty()) continue;
            auto a = address_of(item);
            if (!plausible_address(a)) errs.add("To", "not an address: " + trim(item));
            else if (std::find(rec.to.begin(), rec.to.end(), a) == rec.to.end()) rec.to.push_back(std::move(a));
        }
        if (rec.to.empty() && std::find(errs.fields.begin(), errs.fields.end(), "To") == errs.fields.end())
            errs.add("To", "no recipients");
    }
    if (!headers.contains("subject")) errs.add("Subject", "missing");
    else rec.subject = headers["subject"];
    if (headers.contains("date")) {
        rec.timestamp = parse_email_date(headers["date"]);
        if (!rec.timestamp) errs.add("Date", "unrecognised date");
    }
    errs.raise("email");
    rec.urls = find_urls(rec.body);
    return rec;
}

std::string format_email(const EmailRecord& rec)
{
    std::string out = "From: " + rec.from + "\nTo: " + join(rec.to, ", ") + "\nSubject: " + rec.subject + "\n";
    if (rec.timestamp) out += "Date: " + format_iso8601(*rec.timestamp) + "\n";
    out += "\n" + rec.body;
    return out;
}

EventBundle email_event(const EmailRecord& rec, std::int64_t fallback_ts, const std::string& orgid)
{
    std::vector<Instance> parts{new_attribute("email_addr", rec.from)};
    for (const auto& t : rec.to) parts.push_back(new_attribute("email_addr", t));
    parts.push_back(new_attribute("subject", rec.subject));
    for (const auto& u : rec.urls) parts.push_back(new_attribute("url", u));
    return new_event("email", parts, rec.timestamp.value_or(fallback_ts), orgid);
}

// ---------------------------------------------------------------------------

UrlFeedRecord parse_url_feed(std::string_view json_text)
{
    const json doc = parse_object(json_text, "url_feed");
    FieldErrors errs;
    UrlFeedRecord rec;
    rec.url = required_string(doc, "url", errs);
    if (!rec.url.empty() && url_host(rec.url).empty()) errs.add("url", "not an http(s) URL");
    rec.label = required_string(doc, "label", errs);
    rec.source = required_string(doc, "source", errs);
    rec.timestamp = time_field(doc, "timestamp", false, errs);
    errs.raise("url_feed");
    return rec;
}

std::string format_url_feed(const UrlFeedRecord& rec)
{
    json doc{{"url", rec.url}, {"label", rec.label}, {"source", rec.source}};
    if (rec.timestamp) doc["timestamp"] = format_iso8601(*rec.timestamp);
    return doc.dump();
}

EventBundle url_feed_event(const UrlFeedRecord& rec, std::int64_t fallback_ts, const std::string& orgid)
{
    const Instance parts[] = {new_attribute("url", rec.url), new_attribute("label", rec.label),
                              new_attribute("feed", rec.source)};
    return new_event("url", parts, rec.timestamp.value_or(fallback_ts), orgid);
}

std::string url_host(std::string_view url)
{
    static const std::regex re(R"(^https?://(?:[^@/?#]*@)?(\[[^\]]+\]|[^:/?#]+))", std::regex::icase);
    std::match_results<std::string_view::const_iterator> m;
    if (!std::regex_search(url.begin(), url.end(), m, re)) return {};
    return lower(m[1].str());
}

// ---------------------------------------------------------------------------

Generator::Generator(std::uint64_t seed, std::size_t pool) : rng_(seed), pool_(std::max<std::size_t>(pool, 1)) {}

std::string Generator::ip()
{
    const auto i = rng_() % pool_;
    return "198." + std::to_string(18 + (i >> 16) % 2) + "." + std::to_string((i >> 8) & 255) + "." + std::to_string(i & 255);
}

std::string Generator::word()
{
    static const char* words[] = {"invoice", "account", "update", "secure", "login", "payment", "notice",
                                  "verify",  "report",  "urgent", "reset",  "billing", "ticket", "delivery"};
    return words[rng_() % std::size(words)];
}

IptablesRecord Generator::iptables(std::int64_t ts)
{
    static const std::int64_t ports[] = {22, 23, 80, 443, 445, 3389, 8080};
    IptablesRecord r;
    r.src_ip = ip();
    r.dst_ip = "10.0.0." + std::to_string(1 + rng_() % 20);
    r.dst_port = ports[rng_() % std::size(ports)];
    r.protocol = rng_() % 5 == 0 ? "UDP" : "TCP";
    r.timestamp = ts;
    return r;
}

CowrieRecord Generator::cowrie(std::int64_t ts)
{
    static const char* users[] = {"root", "admin", "user", "test", "ubuntu", "pi", "oracle", "guest"};
    CowrieRecord r;
    r.src_ip = ip();
    r.username = users[rng_() % std::size(users)];
    r.password = word() + std::to_string(rng_() % 100);
    r.timestamp = ts;
    return r;
}

EmailRecord Generator::email(std::int64_t ts)
{
    const auto domain = [&] { return word() + "-" + std::to_string(rng_() % (pool_ / 8 + 1)) + ".example"; };
    EmailRecord r;
    r.from = word() + "@" + domain();
    const int n_to = 1 + static_cast<int>(rng_() % 2);
    for (int i = 0; i < n_to; ++i) {
        auto a = "staff" + std::to_string(rng_() % pool_) + "@corp.example";
        if (std::find(r.to.begin(), r.to.end(), a) == r.to.end()) r.to.push_back(std::move(a));
    }
    r.subject = word() + " " + word();
    r.timestamp = ts;
    r.body = "Please review the " + word() + " notice.\n";
    if (rng_() % 2) {
        const auto u = "http://" + domain() + "/" + word();
        r.body += "Visit " + u + " today.\n";
        r.urls.push_back(u);
    }
    return r;
}

UrlFeedRecord Generator::url_feed(std::int64_t ts)
{
    UrlFeedRecord r;
    r.url = "http://" + word() + "-" + std::to_string(rng_() % pool_) + ".example/" + word();
    r.label = rng_() % 3 ? "phishing" : "benign";
    r.source = rng_() % 2 ? "phishtank" : "openphish";
    r.timestamp = ts;
    return r;
}

std::string Generator::payload(const std::string& format, std::int64_t ts)
{
    if (format == "iptables") return format_iptables(iptables(ts));
    if (format == "cowrie") return format_cowrie(cowrie(ts));
    if (format == "email") return format_email(email(ts));
    if (format == "url_feed") return format_url_feed(url_feed(ts));
    throw IngestError("no generator for format '" + format + "'");
}

// ---------------------------------------------------------------------------

std::string input_key(const Instance& inst)
{
    if (inst.is(tahoe::InstanceKind::raw)) return inst.format_tag;
    if (inst.is(tahoe::InstanceKind::event)) return "event:" + inst.sub_type;
    return std::string(tahoe::to_string(inst.kind));
}

void FilterRegistry::add(Filter f)
{
    for (const auto& g : filters_)
        if (g.id == f.id) throw IngestError("duplicate filter id " + f.id);
    filters_.push_back(std::move(f));
}

std::vector<const Filter*> FilterRegistry::applicable(const Instance& inst) const
{
    const auto key = input_key(inst);
    std::vector<const Filter*> out;
    for (const auto& f : filters_)
        if (std::find(f.inputs.begin(), f.inputs.end(), key) != f.inputs.end()) out.push_back(&f);
    return out;
}

FilterRegistry FilterRegistry::standard()
{
    FilterRegistry r;
    r.add({"F1", {"iptables"}, [](const Instance& raw, const store::ArchiveStore&) {
               return std::vector{iptables_event(parse_iptables(raw.payload), raw.timestamp, raw.orgid)};
           }});
    r.add({"F2", {"cowrie"}, [](const Instance& raw, const store::ArchiveStore&) {
               return std::vector{cowrie_event(parse_cowrie(raw.payload), raw.orgid)};
           }});
    r.add({"F3", {"email"}, [](const Instance& raw, const store::ArchiveStore&) {
               return std::vector{email_event(parse_email(raw.payload), raw.timestamp, raw.orgid)};
           }});
    r.add({"F4", {"url_feed"}, [](const Instance& raw, const store::ArchiveStore&) {
               return std::vector{url_feed_event(parse_url_feed(raw.payload), raw.timestamp, raw.orgid)};
           }});
    r.add({"F5", {"event:email", "event:url"}, [](const Instance& ev, const store::ArchiveStore& s) {
               std::vector<EventBundle> out;
               for (const auto& h : ev.ref) {
                   if (!tahoe::is_plain_edge(h) || s.kind_of(h) != tahoe::InstanceKind::attribute) continue;
                   const auto attr = s.get(h);
                   if (attr->sub_type != "url") continue;
                   const auto host = url_host(std::get<std::string>(attr->data));
                   if (host.empty()) continue;
                   const Instance parts[] = {*attr, new_attribute("domain", host)};
                   out.push_back(new_event("url_host", parts, ev.timestamp, ev.orgid));
               }
               return out;
           }});
    return r;
}

FilterRun run_filters(const Instance& input, const FilterRegistry& registry, store::ArchiveStore& store)
{
    FilterRun run;
    std::unordered_set<std::string> seen{input.hash};
    std::deque<Instance> queue{input};
    while (!queue.empty()) {
        const Instance cur = std::move(queue.front());
        queue.pop_front();
        for (const Filter* f : registry.applicable(cur)) {
            ++run.applications;
            std::vector<EventBundle> outputs;
            try {
                outputs = f->apply(cur, store);
            } catch (const std::exception& e) {
                run.errors.push_back(f->id + ": " + e.what());
                continue;
            }
            for (auto& b : outputs) {
                store.insert(b.instances);
                if (!seen.insert(b.event.hash).second) continue;
                run.derived.push_back(b.event.hash);
                queue.push_back(std::move(b.event));
            }
        }
    }
    return run;
}

json DrainReport::to_json() const
{
    return {{"opened", opened}, {"archived", archived}, {"events", events}, {"quarantined", quarantined}, {"errors", errors}};
}

DrainReport drain_cache(CacheLake& cache, const privacy::ArchiveKeyPair& archive_key, const FilterRegistry& registry,
                        store::ArchiveStore& store)
{
    DrainReport rep;
    for (const auto& entry : cache.pending()) {
        Instance raw;
        try {
            const auto plain = privacy::envelope_open(cache.read(entry), archive_key);
            raw = tahoe::from_json(json::parse(plain));
            if (!raw.is(tahoe::InstanceKind::raw)) throw IngestError("entry does not hold a raw instance");
        } catch (const std::exception& e) {
            cache.quarantine(entry, e.what());
            ++rep.quarantined;
            continue;
        }
        ++rep.opened;
        const Instance one[] = {raw};
        store.insert(one);
        ++rep.archived;
        auto run = run_filters(raw, registry, store);
        rep.events += run.derived.size();
        for (auto& e : run.errors) rep.errors.push_back(entry + " " + e);
        cache.acknowledge(entry);
    }
    return rep;
}

} // namespace cybexp::ingest

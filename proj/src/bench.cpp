#include "cybexp/bench.hpp"

#include "cybexp/ingest.hpp"

#include <chrono>
#include <unistd.h>
#include <random>
#include <set>
#include <sstream>

namespace cybexp::bench {

namespace fs = std::filesystem;

LinearFit fit_line(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size() || x.size() < 2) throw Error("fit_line needs two or more paired samples");
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0) throw Error("fit_line needs distinct x values");
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss_res = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double e = y[i] - (f.slope * x[i] + f.intercept);
        ss_res += e * e;
    }
    f.r2 = syy == 0 ? 1.0 : 1.0 - ss_res / syy;
    return f;
}

IngestTiming time_ingest(std::size_t n, std::uint64_t seed, const fs::path& workdir)
{
    using clock = std::chrono::steady_clock;
    fs::remove_all(workdir);
    ingest::CacheLake cache(workdir / "cache");
    ingest::OrgRegistry orgs;
    const auto token = orgs.register_org("bench");
    const auto key = privacy::ArchiveKeyPair::generate();
    ingest::Generator gen(seed, 4096);
    const std::int64_t t0 = 1'600'000'000;
    std::vector<std::string> lines;
    lines.reserve(n);
    for (std::size_t i = 0; i < n; ++i) lines.push_back(ingest::format_iptables(gen.iptables(t0 + static_cast<std::int64_t>(i))));

    // Start from clean page cache so earlier runs' writeback is not billed here.
    ::sync();

    IngestTiming t;
    t.n = n;
    const auto a = clock::now();
    for (std::size_t i = 0; i < n; ++i)
        ingest::post_raw(cache, key.public_key, orgs, token, "iptables", std::move(lines[i]), t0 + static_cast<std::int64_t>(i));
    const auto b = clock::now();
    store::ArchiveStore store;
    const auto rep = ingest::drain_cache(cache, key, ingest::FilterRegistry::standard(), store);
    const auto c = clock::now();
    t.post_seconds = std::chrono::duration<double>(b - a).count();
    t.drain_seconds = std::chrono::duration<double>(c - b).count();
    t.seconds = t.post_seconds + t.drain_seconds;
    t.events = rep.events;
    fs::remove_all(workdir);
    return t;
}

CompressionPoint compression_point(double ratio, std::size_t records, std::uint64_t seed,
                                   const std::function<void(const store::ArchiveStore&)>& inspect)
{
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution repeat(ratio);
    static const char* users[] = {"root", "admin", "test", "oracle"};
    static const char* passwords[] = {"123456", "password", "admin", "qwerty"};
    static const char* ips[] = {"203.0.113.7", "198.51.100.23", "192.0.2.200", "203.0.113.99"};

    store::ArchiveStore store;
    const auto registry = ingest::FilterRegistry::standard();
    std::uint64_t occurrences = 0, repeats = 0;
    std::set<std::string> seen_attrs;
    for (std::size_t i = 0; i < records; ++i) {
        ingest::CowrieRecord rec;
        const auto u = std::to_string(i);
        rec.src_ip = repeat(rng) ? ips[rng() % 4]
                                 : "10." + std::to_string((i >> 16) & 255) + "." + std::to_string((i >> 8) & 255) + "." +
                                       std::to_string(i & 255);
        rec.username = repeat(rng) ? users[rng() % 4] : "user" + u;
        rec.password = repeat(rng) ? passwords[rng() % 4] : "pw" + u;
        rec.timestamp = 1'600'000'000 + static_cast<std::int64_t>(i);
        const auto raw = tahoe::new_raw("cowrie", "org1", rec.timestamp, ingest::format_cowrie(rec));
        const tahoe::Instance one[] = {raw};
        store.insert(one);
        ingest::run_filters(raw, registry, store);
        for (const auto& [sub, v] : {std::pair{"ip", rec.src_ip}, {"username", rec.username}, {"password", rec.password}}) {
            ++occurrences;
            if (!seen_attrs.insert(std::string(sub) + "\n" + v).second) ++repeats;
        }
    }
    CompressionPoint p;
    p.target_ratio = ratio;
    p.duplicate_ratio = occurrences ? static_cast<double>(repeats) / static_cast<double>(occurrences) : 0;
    p.stats = store.stats();
    p.gain = p.stats.compression_gain_percent();
    if (inspect) inspect(store);
    return p;
}

std::string ingest_csv(const std::vector<IngestTiming>& rows)
{
    std::ostringstream out;
    out << "n,seconds,post_seconds,drain_seconds,events\n";
    for (const auto& r : rows)
        out << r.n << ',' << format_double(r.seconds) << ',' << format_double(r.post_seconds) << ','
            << format_double(r.drain_seconds) << ',' << r.events << '\n';
    return out.str();
}

std::string compression_csv(const std::vector<CompressionPoint>& rows)
{
    std::ostringstream out;
    out << "target_ratio,duplicate_ratio,raw_input_bytes,stored_bytes,instances,duplicate_hits,gain_percent\n";
    for (const auto& r : rows)
        out << format_double(r.target_ratio) << ',' << format_double(r.duplicate_ratio) << ',' << r.stats.raw_input_bytes
            << ',' << r.stats.stored_bytes << ',' << r.stats.instance_count << ',' << r.stats.duplicate_hits << ','
            << format_double(r.gain) << '\n';
    return out.str();
}

} // namespace cybexp::bench

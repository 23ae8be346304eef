#include "cybexp/bench.hpp"
#include "cybexp/ingest.hpp"
#include "support/footprint.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace cybexp;
using nlohmann::json;

TEST(FitLine, ExactLineHasUnitR2)
{
    const std::vector<double> x{1, 2, 3, 4}, y{3, 5, 7, 9};
    const auto f = bench::fit_line(x, y);
    EXPECT_DOUBLE_EQ(f.slope, 2.0);
    EXPECT_DOUBLE_EQ(f.intercept, 1.0);
    EXPECT_DOUBLE_EQ(f.r2, 1.0);
}

TEST(FitLine, MatchesClosedFormOnNoisyData)
{
    std::mt19937_64 rng(4);
    std::normal_distribution<double> noise(0, 0.5);
    std::vector<double> x, y;
    for (int i = 0; i < 50; ++i) {
        x.push_back(i);
        y.push_back(0.3 * i + 2 + noise(rng));
    }
    const auto f = bench::fit_line(x, y);
    // Normal equations solved directly.
    double n = 50, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i < 50; ++i) {
        sx += x[i], sy += y[i], sxx += x[i] * x[i], sxy += x[i] * y[i];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    EXPECT_NEAR(f.slope, slope, 1e-12);
    EXPECT_NEAR(f.intercept, (sy - slope * sx) / n, 1e-10);
    double ss_tot = 0, ss_res = 0;
    for (int i = 0; i < 50; ++i) {
        ss_tot += (y[i] - sy / n) * (y[i] - sy / n);
        ss_res += std::pow(y[i] - f.slope * x[i] - f.intercept, 2);
    }
    EXPECT_NEAR(f.r2, 1 - ss_res / ss_tot, 1e-12);
    EXPECT_GT(f.r2, 0.9);
    EXPECT_THROW(bench::fit_line(std::vector<double>{1}, std::vector<double>{1}), Error);
    EXPECT_THROW(bench::fit_line(std::vector<double>{2, 2}, std::vector<double>{1, 3}), Error);
}

TEST(Compression, CountersMatchHandFormula)
{
    store::ArchiveStore s;
    const auto reg = ingest::FilterRegistry::standard();
    ingest::Generator gen(3, 32);
    for (int i = 0; i < 200; ++i) {
        const std::string fmt = ingest::known_formats()[i % 4];
        const auto raw = tahoe::new_raw(fmt, "org1", 1'600'000'000 + i, gen.payload(fmt, 1'600'000'000 + i));
        const tahoe::Instance one[] = {raw};
        s.insert(one);
        ingest::run_filters(raw, reg, s);
    }
    const auto st = s.stats();
    const auto t = oracle::footprint(s);
    EXPECT_EQ(st.raw_input_bytes, t.raw);
    EXPECT_EQ(st.stored_bytes, t.stored);
    EXPECT_EQ(st.instance_count, t.instances);
    const auto gain = oracle::gain_percent;
    EXPECT_DOUBLE_EQ(st.compression_gain_percent(), gain(t.raw, t.stored));

    for (double ratio : {0.0, 0.35, 0.8, 1.0}) {
        const auto p = bench::compression_point(ratio, 400, 11);
        EXPECT_DOUBLE_EQ(p.gain, gain(p.stats.raw_input_bytes, p.stats.stored_bytes));
    }
}

TEST(Compression, GainRisesWithDuplication)
{
    double prev_gain = -1e9, prev_dup = -1;
    for (int i = 0; i <= 10; ++i) {
        const auto p = bench::compression_point(i / 10.0, 1500, 2);
        EXPECT_GT(p.duplicate_ratio, prev_dup);
        EXPECT_GT(p.gain, prev_gain) << "ratio " << i / 10.0;
        prev_gain = p.gain;
        prev_dup = p.duplicate_ratio;
    }
    EXPECT_GT(prev_gain, 0.0);
}

TEST(Compression, SameSeedSameBytes)
{
    const auto a = bench::compression_point(0.6, 500, 9);
    const auto b = bench::compression_point(0.6, 500, 9);
    EXPECT_EQ(a.stats.stored_bytes, b.stats.stored_bytes);
    EXPECT_EQ(a.stats.raw_input_bytes, b.stats.raw_input_bytes);
    EXPECT_EQ(bench::compression_csv({a}), bench::compression_csv({b}));
}

TEST(IngestTiming, CountsEveryLine)
{
    const auto dir = std::filesystem::temp_directory_path() / ("cybexp_bench_" + std::to_string(::getpid()));
    const auto t = bench::time_ingest(300, 1, dir);
    EXPECT_EQ(t.n, 300u);
    EXPECT_EQ(t.events, 300u);
    EXPECT_GT(t.seconds, 0.0);
    EXPECT_DOUBLE_EQ(t.seconds, t.post_seconds + t.drain_seconds);
    EXPECT_FALSE(std::filesystem::exists(dir));
    const auto csv = bench::ingest_csv({t});
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "n,seconds,post_seconds,drain_seconds,events");
}

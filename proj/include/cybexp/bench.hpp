#pragma once

// Measurement harnesses for ingest scaling and storage compression.

#include "cybexp/store.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace cybexp::bench {

struct LinearFit {
    double slope = 0;
    double intercept = 0;
    double r2 = 0;
};

/// Ordinary least squares y = slope * x + intercept.
LinearFit fit_line(std::span<const double> x, std::span<const double> y);

struct IngestTiming {
    std::size_t n = 0;
    double seconds = 0;      // post + drain
    double post_seconds = 0;
    double drain_seconds = 0;
    std::size_t events = 0;
};

/// Generates `n` synthetic iptables lines, posts each through the sealed
/// cache under `workdir` and drains it into a fresh in-memory store.
/// Only posting and draining are timed.
IngestTiming time_ingest(std::size_t n, std::uint64_t seed, const std::filesystem::path& workdir);

struct CompressionPoint {
    double target_ratio = 0;   // probability an attribute value repeats a pooled one
    double duplicate_ratio = 0; // attribute occurrences already stored / all occurrences
    store::StoreStats stats;
    double gain = 0;
};

/// Archives `records` Cowrie login records whose attribute values repeat
/// with probability `ratio` and reports the resulting compression.
/// `inspect`, when set, sees the store before it is discarded.
CompressionPoint compression_point(double ratio, std::size_t records, std::uint64_t seed,
                                   const std::function<void(const store::ArchiveStore&)>& inspect = {});

std::string ingest_csv(const std::vector<IngestTiming>& rows);
std::string compression_csv(const std::vector<CompressionPoint>& rows);

} // namespace cybexp::bench

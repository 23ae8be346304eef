#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cybexp {

using Bytes = std::vector<std::uint8_t>;
using Digest256 = std::array<std::uint8_t, 32>;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string hex_encode(std::span<const std::uint8_t> bytes);
std::optional<Bytes> hex_decode(std::string_view text);

std::string base64_encode(std::string_view bytes);
std::optional<std::string> base64_decode(std::string_view text);

Digest256 sha256(std::span<const std::uint8_t> bytes);
Digest256 sha256(std::string_view bytes);
std::string sha256_hex(std::string_view bytes);

/// 64 lowercase hex characters.
bool is_digest_hex(std::string_view text);

Bytes random_bytes(std::size_t n);

inline std::span<const std::uint8_t> as_bytes(std::string_view s)
{
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline std::string to_string(std::span<const std::uint8_t> b)
{
    return {reinterpret_cast<const char*>(b.data()), b.size()};
}

/// Seconds since epoch (UTC) to "YYYY-MM-DDTHH:MM:SSZ".
std::string format_iso8601(std::int64_t epoch_seconds);

/// Accepts "YYYY-MM-DD", "YYYY-MM-DDTHH:MM:SS", with optional fractional
/// seconds and a trailing "Z". Years 1970..9999.
std::optional<std::int64_t> parse_iso8601(std::string_view text);

/// Shortest decimal form that round-trips to the same double.
std::string format_double(double value);

} // namespace cybexp

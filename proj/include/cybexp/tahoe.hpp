#pragma once

// TAHOE instance model: five content-addressed node kinds whose `_ref`
// arrays form the threat graph. Every instance is identified by the
// SHA-256 of the canonical serialization of its identity fields.

#include "cybexp/encoding.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace cybexp::tahoe {

enum class InstanceKind { raw, attribute, object, event, session };

std::string_view to_string(InstanceKind kind);
std::optional<InstanceKind> kind_from_string(std::string_view text);

using Scalar = std::variant<std::string, std::int64_t, double>;

std::string scalar_to_string(const Scalar& value);

class TahoeError : public Error {
public:
    using Error::Error;
};

/// One TAHOE node. Which members are meaningful depends on `kind`;
/// validate() enforces the per-kind discipline.
struct Instance {
    InstanceKind kind = InstanceKind::attribute;
    std::string sub_type;                 // attribute, object, event, session
    Scalar data;                          // attribute
    std::vector<std::string> ref;         // object, event, session
    std::vector<std::string> mal_ref;     // event
    std::optional<double> malicious_score; // event
    std::int64_t timestamp = 0;           // event, raw
    std::string orgid;                    // event, raw
    std::string criterion;                // session
    std::string format_tag;               // raw
    std::string payload;                  // raw, opaque bytes
    std::string hash;

    bool is(InstanceKind k) const { return kind == k; }
    bool operator==(const Instance&) const = default;
};

using Bundle = std::vector<Instance>;

/// Edge references that were replaced by a deterministic ciphertext carry
/// this prefix; plaintext edges are bare 64-hex digests.
inline constexpr std::string_view kSealedEdgePrefix = "enc1.";

inline bool is_sealed_edge(std::string_view ref) { return ref.starts_with(kSealedEdgePrefix); }
inline bool is_plain_edge(std::string_view ref) { return is_digest_hex(ref); }

/// Deterministic bytes for a hash body: keys sorted, compact, UTF-8,
/// shortest round-trip numbers, `_ref`/`_mal_ref` sorted unless the body is
/// a session. Only strings, finite numbers and arrays of strings are
/// accepted.
std::string canonicalize(const nlohmann::json& body);

/// Lowercase hex SHA-256 of canonicalize(body).
std::string hash_instance(const nlohmann::json& body);

/// The identity fields of an instance (everything its `_hash` covers).
nlohmann::json hash_body(const Instance& inst);

/// Recomputes the hash from the identity fields.
std::string compute_hash(const Instance& inst);

nlohmann::json to_json(const Instance& inst);
Instance from_json(const nlohmann::json& doc);

Instance new_attribute(std::string sub_type, Scalar data);
Instance new_object(std::string sub_type, std::span<const Instance> children);
Instance new_session(std::string sub_type, std::string criterion, std::span<const Instance> events);
Instance new_raw(std::string format_tag, std::string orgid, std::int64_t timestamp, std::string payload);

struct EventBundle {
    Instance event;
    /// Complete representation: every descendant once, event last.
    Bundle instances;
};

/// `parts` holds the event's children together with all of their
/// descendants. The event's `_ref` is the deduplicated closure.
EventBundle new_event(std::string sub_type, std::span<const Instance> parts,
                      std::int64_t timestamp, std::string orgid);

/// Empty result means the instance is well formed. Instances whose `_ref`
/// holds sealed edges cannot have their hash recomputed without the key;
/// that check is skipped for them.
std::vector<std::string> validate(const Instance& inst);

bool is_token(std::string_view text);

} // namespace cybexp::tahoe

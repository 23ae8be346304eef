#pragma once

// Attribute-level privacy. Private attribute hashes inside `_ref` arrays are
// replaced by deterministic ciphertexts, so a holder of the key can still
// find the event with a single index lookup while everyone else sees an
// opaque token.

#include "cybexp/tahoe.hpp"

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cybexp::privacy {

using tahoe::Bundle;
using tahoe::Instance;

class PrivacyError : public Error {
public:
    using Error::Error;
};

/// Raised when an authorization check fails (KMS grants, org tokens).
class AccessDenied : public PrivacyError {
public:
    using PrivacyError::PrivacyError;
};

using Key256 = std::array<std::uint8_t, 32>;

struct EdgeSecret {
    std::string key_id; // 16 lowercase hex
    Key256 key{};
    std::string owner;

    static EdgeSecret generate(std::string owner);
};

/// "enc1.<key_id>.<96 hex>": 16-byte synthetic IV followed by the 32-byte
/// AES-256-CTR ciphertext of the digest. The IV is an HMAC over the
/// plaintext, which makes the token deterministic and authenticated.
std::string det_encrypt(std::string_view hash_hex, const EdgeSecret& secret);

/// Inverse of det_encrypt. Throws PrivacyError on a malformed token, a
/// foreign key id, or a failed authenticity check.
std::string det_decrypt(std::string_view token, const EdgeSecret& secret);

/// Key id embedded in a sealed edge, if the token is well formed.
std::optional<std::string> sealed_key_id(std::string_view token);

/// Which attribute hashes are private and under which key.
class AclPolicy {
public:
    void make_private(std::string attribute_hash, std::string key_id);
    bool is_private(std::string_view attribute_hash) const;
    std::optional<std::string> key_for(std::string_view attribute_hash) const;
    bool all_public() const { return private_.empty(); }
    const std::map<std::string, std::string, std::less<>>& entries() const { return private_; }

private:
    std::map<std::string, std::string, std::less<>> private_;
};

/// Produces the shareable form of a bundle: private attribute edges sealed
/// in every `_ref`/`_mal_ref`, private attribute documents dropped. Hashes
/// are left as computed on the plaintext.
Bundle apply_acl(std::span<const Instance> bundle, const AclPolicy& acl,
                 std::span<const EdgeSecret> secrets);

/// Plaintext hash of the attribute plus its sealed form under every secret.
std::vector<std::string> query_terms(std::string_view sub_type, const tahoe::Scalar& value,
                                     std::span<const EdgeSecret> secrets);

/// Same, starting from an attribute hash.
std::vector<std::string> query_terms_for_hash(std::string_view hash_hex,
                                              std::span<const EdgeSecret> secrets);

// ---------------------------------------------------------------------------

struct AuditEntry {
    std::uint64_t seq = 0;
    std::string action; // put | share | get
    std::string key_id;
    std::string actor;
    std::string subject; // recipient org for share
    bool allowed = false;

    nlohmann::json to_json() const;
};

/// Minimal key management: key records, an org-level grant table and an
/// append-only audit log. With a backing file, key material is wrapped by a
/// passphrase-derived master key before it touches disk.
class Kms {
public:
    Kms() = default;
    Kms(std::filesystem::path file, std::string passphrase);

    Kms(const Kms&) = delete;
    Kms& operator=(const Kms&) = delete;

    EdgeSecret create_key(const std::string& owner);
    void put(const EdgeSecret& secret);

    /// `from_org` must own or have been granted the key.
    void share(const std::string& key_id, const std::string& from_org, const std::string& to_org);

    /// Throws AccessDenied unless `org` owns or was granted the key.
    EdgeSecret get(const std::string& org, const std::string& key_id);

    bool has_access(const std::string& org, const std::string& key_id) const;
    std::vector<std::string> keys_for(const std::string& org) const;
    std::vector<AuditEntry> audit_log() const;
    void export_audit_jsonl(std::ostream& out) const;

private:
    struct Record {
        EdgeSecret secret;
        std::set<std::string> grantees;
    };

    void audit_locked(std::string action, std::string key_id, std::string actor, std::string subject,
                      bool allowed);
    void save_locked() const;
    void load();

    mutable std::mutex mutex_;
    std::map<std::string, Record> records_;
    std::vector<AuditEntry> audit_;
    std::optional<std::filesystem::path> file_;
    std::string passphrase_;
    Bytes salt_;
    Key256 master_{};
};

// ---------------------------------------------------------------------------

struct ArchiveKeyPair {
    Key256 public_key{};
    Key256 private_key{};

    static ArchiveKeyPair generate();
    static ArchiveKeyPair from_private(const Key256& private_key);

    /// First 8 bytes of SHA-256(public_key), hex.
    std::string key_id() const;
};

std::string public_key_id(const Key256& public_key);

/// Hybrid envelope: X25519 ephemeral agreement and HKDF-SHA256 yield a key
/// that wraps a random data key; the payload is sealed with AES-256-GCM
/// under the data key.
std::string envelope_seal(std::string_view payload, const Key256& recipient_public);

/// Throws PrivacyError on corruption, truncation or the wrong key.
std::string envelope_open(std::string_view envelope, const ArchiveKeyPair& recipient);

/// AES-256-GCM under a PBKDF2-SHA256 key derived from `passphrase`; used
/// for key material at rest.
std::string passphrase_seal(std::string_view secret, std::string_view passphrase);
std::string passphrase_open(std::string_view sealed, std::string_view passphrase);

} // namespace cybexp::privacy

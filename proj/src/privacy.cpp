#include "cybexp/privacy.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/kdf.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <memory>
#include <ostream>
#include <unordered_map>

namespace cybexp::privacy {

using nlohmann::json;

namespace {

constexpr std::size_t kSivLen = 16;
constexpr std::size_t kGcmNonce = 12;
constexpr std::size_t kGcmTag = 16;
constexpr int kPbkdf2Iterations = 100'000;
constexpr std::string_view kEnvelopeMagic = "CXE1";

struct CipherCtxFree {
    void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
};
struct PkeyFree {
    void operator()(EVP_PKEY* k) const { EVP_PKEY_free(k); }
};
struct PkeyCtxFree {
    void operator()(EVP_PKEY_CTX* c) const { EVP_PKEY_CTX_free(c); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxFree>;
using Pkey = std::unique_ptr<EVP_PKEY, PkeyFree>;
using PkeyCtx = std::unique_ptr<EVP_PKEY_CTX, PkeyCtxFree>;

[[noreturn]] void crypto_fail(const char* what) { throw PrivacyError(std::string("crypto: ") + what); }

Key256 hmac256(std::span<const std::uint8_t> key, std::span<const std::uint8_t> msg)
{
    Key256 out{};
    unsigned int len = 0;
    if (!HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), msg.data(), msg.size(), out.data(), &len))
        crypto_fail("hmac");
    return out;
}

Bytes aes_ctr(const Key256& key, std::span<const std::uint8_t> iv, std::span<const std::uint8_t> in)
{
    CipherCtx ctx(EVP_CIPHER_CTX_new());
    Bytes out(in.size());
    int n = 0;
    if (!ctx || !EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_ctr(), nullptr, key.data(), iv.data()) ||
        !EVP_EncryptUpdate(ctx.get(), out.data(), &n, in.data(), static_cast<int>(in.size())))
        crypto_fail("aes-ctr");
    return out;
}

// nonce || ciphertext || tag
std::string gcm_seal(const Key256& key, std::string_view plaintext, std::string_view aad)
{
    const Bytes nonce = random_bytes(kGcmNonce);
    CipherCtx ctx(EVP_CIPHER_CTX_new());
    std::string out(kGcmNonce + plaintext.size() + kGcmTag, '\0');
    std::memcpy(out.data(), nonce.data(), kGcmNonce);
    auto* ct = reinterpret_cast<unsigned char*>(out.data() + kGcmNonce);
    int n = 0, fin = 0;
    if (!ctx || !EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) ||
        !EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, kGcmNonce, nullptr) ||
        !EVP_EncryptInit_ex(ctx.get(), nullptr, nullptr, key.data(), nonce.data()))
        crypto_fail("gcm init");
    if (!aad.empty() &&
        !EVP_EncryptUpdate(ctx.get(), nullptr, &n, reinterpret_cast<const unsigned char*>(aad.data()),
                           static_cast<int>(aad.size())))
        crypto_fail("gcm aad");
    // Large payloads go through in bounded slices.
    std::size_t done = 0;
    while (done < plaintext.size()) {
        const int chunk = static_cast<int>(std::min<std::size_t>(plaintext.size() - done, 1 << 20));
        if (!EVP_EncryptUpdate(ctx.get(), ct + done, &n,
                               reinterpret_cast<const unsigned char*>(plaintext.data() + done), chunk))
            crypto_fail("gcm update");
        done += static_cast<std::size_t>(n);
    }
    if (!EVP_EncryptFinal_ex(ctx.get(), ct + done, &fin) ||
        !EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kGcmTag, ct + plaintext.size()))
        crypto_fail("gcm final");
    return out;
}

std::string gcm_open(const Key256& key, std::string_view sealed, std::string_view aad)
{
    if (sealed.size() < kGcmNonce + kGcmTag) throw PrivacyError("sealed data truncated");
    const std::size_t body = sealed.size() - kGcmNonce - kGcmTag;
    const auto* nonce = reinterpret_cast<const unsigned char*>(sealed.data());
    const auto* ct = nonce + kGcmNonce;
    std::string out(body, '\0');
    auto* pt = reinterpret_cast<unsigned char*>(out.data());
    CipherCtx ctx(EVP_CIPHER_CTX_new());
    int n = 0, fin = 0;
    if (!ctx || !EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) ||
        !EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, kGcmNonce, nullptr) ||
        !EVP_DecryptInit_ex(ctx.get(), nullptr, nullptr, key.data(), nonce))
        crypto_fail("gcm init");
    if (!aad.empty() &&
        !EVP_DecryptUpdate(ctx.get(), nullptr, &n, reinterpret_cast<const unsigned char*>(aad.data()),
                           static_cast<int>(aad.size())))
        crypto_fail("gcm aad");
    std::size_t done = 0;
    while (done < body) {
        const int chunk = static_cast<int>(std::min<std::size_t>(body - done, 1 << 20));
        if (!EVP_DecryptUpdate(ctx.get(), pt + done, &n, ct + done, chunk)) crypto_fail("gcm update");
        done += static_cast<std::size_t>(n);
    }
    unsigned char tag[kGcmTag];
    std::memcpy(tag, ct + body, kGcmTag);
    if (!EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kGcmTag, tag) ||
        EVP_DecryptFinal_ex(ctx.get(), pt + done, &fin) <= 0)
        throw PrivacyError("authentication failed");
    return out;
}

Key256 pbkdf2(std::string_view passphrase, std::span<const std::uint8_t> salt)
{
    Key256 out{};
    if (!PKCS5_PBKDF2_HMAC(passphrase.data(), static_cast<int>(passphrase.size()), salt.data(),
                           static_cast<int>(salt.size()), kPbkdf2Iterations, EVP_sha256(),
                           static_cast<int>(out.size()), out.data()))
        crypto_fail("pbkdf2");
    return out;
}

Key256 hkdf_sha256(std::span<const std::uint8_t> ikm, std::span<const std::uint8_t> salt, std::string_view info)
{
    PkeyCtx ctx(EVP_PKEY_CTX_new_id(EVP_PKEY_HKDF, nullptr));
    Key256 out{};
    std::size_t len = out.size();
    if (!ctx || EVP_PKEY_derive_init(ctx.get()) <= 0 || EVP_PKEY_CTX_set_hkdf_md(ctx.get(), EVP_sha256()) <= 0 ||
        EVP_PKEY_CTX_set1_hkdf_salt(ctx.get(), salt.data(), static_cast<int>(salt.size())) <= 0 ||
        EVP_PKEY_CTX_set1_hkdf_key(ctx.get(), ikm.data(), static_cast<int>(ikm.size())) <= 0 ||
        EVP_PKEY_CTX_add1_hkdf_info(ctx.get(), reinterpret_cast<const unsigned char*>(info.data()),
                                    static_cast<int>(info.size())) <= 0 ||
        EVP_PKEY_derive(ctx.get(), out.data(), &len) <= 0)
        crypto_fail("hkdf");
    return out;
}

Pkey x25519_private(const Key256& priv)
{
    Pkey k(EVP_PKEY_new_raw_private_key(EVP_PKEY_X25519, nullptr, priv.data(), priv.size()));
    if (!k) crypto_fail("x25519 private key");
    return k;
}

Key256 x25519_agree(const Key256& priv, const Key256& peer_pub)
{
    Pkey mine = x25519_private(priv);
    Pkey peer(EVP_PKEY_new_raw_public_key(EVP_PKEY_X25519, nullptr, peer_pub.data(), peer_pub.size()));
    if (!peer) crypto_fail("x25519 public key");
    PkeyCtx ctx(EVP_PKEY_CTX_new(mine.get(), nullptr));
    Key256 out{};
    std::size_t len = out.size();
    if (!ctx || EVP_PKEY_derive_init(ctx.get()) <= 0 || EVP_PKEY_derive_set_peer(ctx.get(), peer.get()) <= 0 ||
        EVP_PKEY_derive(ctx.get(), out.data(), &len) <= 0)
        crypto_fail("x25519 derive");
    return out;
}

Key256 to_key(std::span<const std::uint8_t> b)
{
    if (b.size() != 32) throw PrivacyError("expected a 256-bit key");
    Key256 k{};
    std::copy(b.begin(), b.end(), k.begin());
    return k;
}

struct EdgeKeys {
    Key256 mac;
    Key256 enc;
};

EdgeKeys edge_keys(const EdgeSecret& s)
{
    return {hmac256(s.key, as_bytes("cybexp/edge/mac")), hmac256(s.key, as_bytes("cybexp/edge/enc"))};
}

std::array<std::uint8_t, kSivLen> synthetic_iv(const EdgeKeys& k, std::string_view key_id,
                                               std::span<const std::uint8_t> pt)
{
    Bytes msg(key_id.begin(), key_id.end());
    msg.push_back(0);
    msg.insert(msg.end(), pt.begin(), pt.end());
    const auto full = hmac256(k.mac, msg);
    std::array<std::uint8_t, kSivLen> iv{};
    std::copy_n(full.begin(), kSivLen, iv.begin());
    return iv;
}

bool is_key_id(std::string_view s)
{
    return s.size() == 16 &&
           std::all_of(s.begin(), s.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

const EdgeSecret* find_secret(std::span<const EdgeSecret> secrets, std::string_view key_id)
{
    for (const auto& s : secrets)
        if (s.key_id == key_id) return &s;
    return nullptr;
}

} // namespace

EdgeSecret EdgeSecret::generate(std::string owner)
{
    EdgeSecret s;
    s.key_id = hex_encode(random_bytes(8));
    s.key = to_key(random_bytes(32));
    s.owner = std::move(owner);
    return s;
}

std::string det_encrypt(std::string_view hash_hex, const EdgeSecret& secret)
{
    if (!is_digest_hex(hash_hex)) throw PrivacyError("det_encrypt: not a 64-hex digest");
    if (!is_key_id(secret.key_id)) throw PrivacyError("det_encrypt: malformed key id");
    const Bytes pt = *hex_decode(hash_hex);
    const auto keys = edge_keys(secret);
    const auto iv = synthetic_iv(keys, secret.key_id, pt);
    const Bytes ct = aes_ctr(keys.enc, iv, pt);
    Bytes body(iv.begin(), iv.end());
    body.insert(body.end(), ct.begin(), ct.end());
    return std::string(tahoe::kSealedEdgePrefix) + secret.key_id + "." + hex_encode(body);
}

std::optional<std::string> sealed_key_id(std::string_view token)
{
    if (!tahoe::is_sealed_edge(token)) return std::nullopt;
    token.remove_prefix(tahoe::kSealedEdgePrefix.size());
    if (token.size() != 16 + 1 + 96 || token[16] != '.') return std::nullopt;
    const auto id = token.substr(0, 16);
    if (!is_key_id(id) || !hex_decode(token.substr(17))) return std::nullopt;
    return std::string(id);
}

std::string det_decrypt(std::string_view token, const EdgeSecret& secret)
{
    const auto id = sealed_key_id(token);
    if (!id) throw PrivacyError("det_decrypt: malformed sealed edge");
    if (*id != secret.key_id) throw PrivacyError("det_decrypt: edge sealed under key " + *id);
    const Bytes body = *hex_decode(token.substr(tahoe::kSealedEdgePrefix.size() + 17));
    const std::span<const std::uint8_t> iv(body.data(), kSivLen);
    const std::span<const std::uint8_t> ct(body.data() + kSivLen, body.size() - kSivLen);
    const auto keys = edge_keys(secret);
    const Bytes pt = aes_ctr(keys.enc, iv, ct);
    const auto expect = synthetic_iv(keys, secret.key_id, pt);
    if (CRYPTO_memcmp(expect.data(), iv.data(), kSivLen) != 0)
        throw PrivacyError("det_decrypt: authentication failed");
    return hex_encode(pt);
}

// ---------------------------------------------------------------------------

void AclPolicy::make_private(std::string attribute_hash, std::string key_id)
{
    if (!is_digest_hex(attribute_hash)) throw PrivacyError("acl: not a digest: " + attribute_hash);
    private_[std::move(attribute_hash)] = std::move(key_id);
}

bool AclPolicy::is_private(std::string_view attribute_hash) const { return private_.find(attribute_hash) != private_.end(); }

std::optional<std::string> AclPolicy::key_for(std::string_view attribute_hash) const
{
    auto it = private_.find(attribute_hash);
    if (it == private_.end()) return std::nullopt;
    return it->second;
}

Bundle apply_acl(std::span<const Instance> bundle, const AclPolicy& acl, std::span<const EdgeSecret> secrets)
{
    std::unordered_map<std::string, std::string> sealed;
    for (const auto& [hash, key_id] : acl.entries()) {
        const EdgeSecret* s = find_secret(secrets, key_id);
        if (!s) throw PrivacyError("acl names key " + key_id + " which is not held");
        sealed.emplace(hash, det_encrypt(hash, *s));
    }
    const auto seal_all = [&](std::vector<std::string>& refs) {
        for (auto& r : refs)
            if (auto it = sealed.find(r); it != sealed.end()) r = it->second;
    };

    Bundle out;
    out.reserve(bundle.size());
    for (const auto& inst : bundle) {
        if (inst.is(tahoe::InstanceKind::attribute) && sealed.contains(inst.hash)) continue;
        Instance copy = inst;
        seal_all(copy.ref);
        seal_all(copy.mal_ref);
        out.push_back(std::move(copy));
    }
    return out;
}

std::vector<std::string> query_terms_for_hash(std::string_view hash_hex, std::span<const EdgeSecret> secrets)
{
    std::vector<std::string> terms{std::string(hash_hex)};
    for (const auto& s : secrets) terms.push_back(det_encrypt(hash_hex, s));
    std::sort(terms.begin() + 1, terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    return terms;
}

std::vector<std::string> query_terms(std::string_view sub_type, const tahoe::Scalar& value,
                                     std::span<const EdgeSecret> secrets)
{
    return query_terms_for_hash(tahoe::new_attribute(std::string(sub_type), value).hash, secrets);
}

// ---------------------------------------------------------------------------

json AuditEntry::to_json() const
{
    return {{"seq", seq}, {"action", action}, {"key_id", key_id}, {"actor", actor},
            {"subject", subject}, {"allowed", allowed}};
}

Kms::Kms(std::filesystem::path file, std::string passphrase)
    : file_(std::move(file)), passphrase_(std::move(passphrase))
{
    if (passphrase_.empty()) throw PrivacyError("kms: empty passphrase");
    if (std::filesystem::exists(*file_))
        load();
    else
        salt_ = random_bytes(16);
    master_ = pbkdf2(passphrase_, salt_);
}

EdgeSecret Kms::create_key(const std::string& owner)
{
    auto s = EdgeSecret::generate(owner);
    put(s);
    return s;
}

void Kms::put(const EdgeSecret& secret)
{
    std::lock_guard lock(mutex_);
    if (records_.contains(secret.key_id)) {
        audit_locked("put", secret.key_id, secret.owner, "", false);
        save_locked();
        throw PrivacyError("kms: key id already registered: " + secret.key_id);
    }
    records_[secret.key_id] = Record{secret, {}};
    audit_locked("put", secret.key_id, secret.owner, "", true);
    save_locked();
}

bool Kms::has_access(const std::string& org, const std::string& key_id) const
{
    std::lock_guard lock(mutex_);
    auto it = records_.find(key_id);
    return it != records_.end() && (it->second.secret.owner == org || it->second.grantees.contains(org));
}

void Kms::share(const std::string& key_id, const std::string& from_org, const std::string& to_org)
{
    std::lock_guard lock(mutex_);
    auto it = records_.find(key_id);
    const bool ok = it != records_.end() &&
                    (it->second.secret.owner == from_org || it->second.grantees.contains(from_org));
    audit_locked("share", key_id, from_org, to_org, ok);
    if (ok && to_org != it->second.secret.owner) it->second.grantees.insert(to_org);
    save_locked();
    if (!ok) throw AccessDenied("kms: " + from_org + " may not share key " + key_id);
}

EdgeSecret Kms::get(const std::string& org, const std::string& key_id)
{
    std::lock_guard lock(mutex_);
    auto it = records_.find(key_id);
    const bool ok =
        it != records_.end() && (it->second.secret.owner == org || it->second.grantees.contains(org));
    audit_locked("get", key_id, org, "", ok);
    save_locked();
    if (!ok) throw AccessDenied("kms: " + org + " holds no grant for key " + key_id);
    return it->second.secret;
}

std::vector<std::string> Kms::keys_for(const std::string& org) const
{
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, rec] : records_)
        if (rec.secret.owner == org || rec.grantees.contains(org)) out.push_back(id);
    return out;
}

std::vector<AuditEntry> Kms::audit_log() const
{
    std::lock_guard lock(mutex_);
    return audit_;
}

void Kms::export_audit_jsonl(std::ostream& out) const
{
    for (const auto& e : audit_log()) out << e.to_json().dump() << '\n';
}

void Kms::audit_locked(std::string action, std::string key_id, std::string actor, std::string subject, bool allowed)
{
    audit_.push_back({audit_.size() + 1, std::move(action), std::move(key_id), std::move(actor), std::move(subject),
                      allowed});
}

void Kms::save_locked() const
{
    if (!file_) return;
    json doc;
    doc["version"] = 1;
    doc["salt"] = hex_encode(salt_);
    doc["keys"] = json::array();
    for (const auto& [id, rec] : records_) {
        const std::string wrapped = gcm_seal(master_, to_string(rec.secret.key), id);
        doc["keys"].push_back({{"key_id", id},
                               {"owner", rec.secret.owner},
                               {"wrapped", base64_encode(wrapped)},
                               {"grantees", rec.grantees}});
    }
    doc["audit"] = json::array();
    for (const auto& e : audit_) doc["audit"].push_back(e.to_json());
    const auto tmp = file_->string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << doc.dump(2) << '\n';
        if (!out) throw PrivacyError("kms: cannot write " + tmp);
    }
    std::filesystem::permissions(tmp, std::filesystem::perms::owner_read | std::filesystem::perms::owner_write);
    std::filesystem::rename(tmp, *file_);
}

void Kms::load()
{
    std::ifstream in(*file_, std::ios::binary);
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw PrivacyError("kms: unreadable key file");
    auto salt = hex_decode(doc.value("salt", ""));
    if (!salt) throw PrivacyError("kms: bad salt");
    salt_ = *salt;
    master_ = pbkdf2(passphrase_, salt_);
    for (const auto& k : doc.at("keys")) {
        Record rec;
        rec.secret.key_id = k.at("key_id").get<std::string>();
        rec.secret.owner = k.at("owner").get<std::string>();
        auto wrapped = base64_decode(k.at("wrapped").get<std::string>());
        if (!wrapped) throw PrivacyError("kms: bad wrapped key");
        std::string raw;
        try {
            raw = gcm_open(master_, *wrapped, rec.secret.key_id);
        } catch (const PrivacyError&) {
            throw PrivacyError("kms: wrong passphrase or corrupted key file");
        }
        rec.secret.key = to_key(as_bytes(raw));
        for (const auto& g : k.at("grantees")) rec.grantees.insert(g.get<std::string>());
        records_.emplace(rec.secret.key_id, std::move(rec));
    }
    for (const auto& a : doc.at("audit"))
        audit_.push_back({a.at("seq").get<std::uint64_t>(), a.at("action").get<std::string>(),
                          a.at("key_id").get<std::string>(), a.at("actor").get<std::string>(),
                          a.at("subject").get<std::string>(), a.at("allowed").get<bool>()});
}

// ---------------------------------------------------------------------------

ArchiveKeyPair ArchiveKeyPair::generate() { return from_private(to_key(random_bytes(32))); }

ArchiveKeyPair ArchiveKeyPair::from_private(const Key256& private_key)
{
    Pkey k = x25519_private(private_key);
    ArchiveKeyPair kp;
    kp.private_key = private_key;
    std::size_t len = kp.public_key.size();
    if (EVP_PKEY_get_raw_public_key(k.get(), kp.public_key.data(), &len) <= 0) crypto_fail("x25519 public");
    return kp;
}

std::string public_key_id(const Key256& public_key)
{
    const auto d = sha256(std::span<const std::uint8_t>(public_key));
    return hex_encode(std::span<const std::uint8_t>(d.data(), 8));
}

std::string ArchiveKeyPair::key_id() const { return public_key_id(public_key); }

// Layout: magic(4) | recipient id(8) | ephemeral pub(32) | wrapped data key
// (12 + 32 + 16) | sealed payload (12 + n + 16). The header up to and
// including the wrapped key is authenticated with the payload.
std::string envelope_seal(std::string_view payload, const Key256& recipient_public)
{
    const ArchiveKeyPair eph = ArchiveKeyPair::generate();
    const Key256 shared = x25519_agree(eph.private_key, recipient_public);
    Bytes salt(eph.public_key.begin(), eph.public_key.end());
    salt.insert(salt.end(), recipient_public.begin(), recipient_public.end());
    const Key256 kek = hkdf_sha256(shared, salt, "cybexp/envelope/kek");
    const Key256 data_key = to_key(random_bytes(32));

    std::string header(kEnvelopeMagic);
    const auto rid = hex_decode(public_key_id(recipient_public));
    header.append(to_string(*rid));
    header.append(to_string(eph.public_key));
    header.append(gcm_seal(kek, to_string(data_key), header));
    return header + gcm_seal(data_key, payload, header);
}

std::string envelope_open(std::string_view envelope, const ArchiveKeyPair& recipient)
{
    constexpr std::size_t kWrapped = kGcmNonce + 32 + kGcmTag;
    constexpr std::size_t kHeader = 4 + 8 + 32 + kWrapped;
    if (envelope.size() < kHeader + kGcmNonce + kGcmTag) throw PrivacyError("envelope truncated");
    if (envelope.substr(0, 4) != kEnvelopeMagic) throw PrivacyError("envelope: bad magic");
    const auto rid = hex_decode(recipient.key_id());
    if (envelope.substr(4, 8) != to_string(*rid)) throw PrivacyError("envelope: sealed to a different key");
    const Key256 eph_pub = to_key(as_bytes(envelope.substr(12, 32)));
    const Key256 shared = x25519_agree(recipient.private_key, eph_pub);
    Bytes salt(eph_pub.begin(), eph_pub.end());
    salt.insert(salt.end(), recipient.public_key.begin(), recipient.public_key.end());
    const Key256 kek = hkdf_sha256(shared, salt, "cybexp/envelope/kek");
    const std::string_view pre_wrap = envelope.substr(0, 44);
    const std::string data_key = gcm_open(kek, envelope.substr(44, kWrapped), pre_wrap);
    return gcm_open(to_key(as_bytes(data_key)), envelope.substr(kHeader), envelope.substr(0, kHeader));
}

std::string passphrase_seal(std::string_view secret, std::string_view passphrase)
{
    const Bytes salt = random_bytes(16);
    return to_string(salt) + gcm_seal(pbkdf2(passphrase, salt), secret, "cybexp/keyfile");
}

std::string passphrase_open(std::string_view sealed, std::string_view passphrase)
{
    if (sealed.size() < 16) throw PrivacyError("key file truncated");
    const auto salt = as_bytes(sealed.substr(0, 16));
    try {
        return gcm_open(pbkdf2(passphrase, salt), sealed.substr(16), "cybexp/keyfile");
    } catch (const PrivacyError&) {
        throw PrivacyError("wrong passphrase or corrupted key file");
    }
}

} // namespace cybexp::privacy

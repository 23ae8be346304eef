#include "cybexp/tahoe.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace cybexp::tahoe {

using nlohmann::json;

namespace {

json scalar_json(const Scalar& v)
{
    return std::visit([](const auto& x) { return json(x); }, v);
}

Scalar scalar_from_json(const json& v, std::string_view field)
{
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return v.get<std::int64_t>();
    if (v.is_number_float()) return v.get<double>();
    throw TahoeError("field '" + std::string(field) + "' must be a string or number");
}

void check_canonical_value(const std::string& key, const json& v)
{
    switch (v.type()) {
    case json::value_t::string:
    case json::value_t::number_integer:
    case json::value_t::number_unsigned:
        return;
    case json::value_t::number_float:
        if (!std::isfinite(v.get<double>()))
            throw TahoeError("canonicalize: non-finite number in '" + key + "'");
        return;
    case json::value_t::array:
        for (const auto& item : v)
            if (!item.is_string())
                throw TahoeError("canonicalize: array '" + key + "' may only hold strings");
        return;
    default:
        throw TahoeError("canonicalize: unsupported value type in '" + key + "'");
    }
}

std::vector<std::string> string_array(const json& doc, const char* key, bool required)
{
    auto it = doc.find(key);
    if (it == doc.end()) {
        if (required) throw TahoeError(std::string("missing field '") + key + "'");
        return {};
    }
    if (!it->is_array()) throw TahoeError(std::string("field '") + key + "' must be an array");
    std::vector<std::string> out;
    out.reserve(it->size());
    for (const auto& v : *it) {
        if (!v.is_string()) throw TahoeError(std::string("field '") + key + "' must hold strings");
        out.push_back(v.get<std::string>());
    }
    return out;
}

std::string string_field(const json& doc, const char* key)
{
    auto it = doc.find(key);
    if (it == doc.end()) throw TahoeError(std::string("missing field '") + key + "'");
    if (!it->is_string()) throw TahoeError(std::string("field '") + key + "' must be a string");
    return it->get<std::string>();
}

std::int64_t int_field(const json& doc, const char* key)
{
    auto it = doc.find(key);
    if (it == doc.end()) throw TahoeError(std::string("missing field '") + key + "'");
    if (!it->is_number_integer()) throw TahoeError(std::string("field '") + key + "' must be an integer");
    return it->get<std::int64_t>();
}

void require_token(std::string_view what, std::string_view value)
{
    if (!is_token(value))
        throw TahoeError(std::string(what) + " must be a lowercase token, got '" + std::string(value) + "'");
}

void throw_if_invalid(const Instance& inst)
{
    auto problems = validate(inst);
    if (!problems.empty()) {
        std::string msg = "invalid " + std::string(to_string(inst.kind)) + ":";
        for (const auto& p : problems) msg += " " + p + ";";
        throw TahoeError(msg);
    }
}

} // namespace

std::string_view to_string(InstanceKind kind)
{
    switch (kind) {
    case InstanceKind::raw: return "raw";
    case InstanceKind::attribute: return "attribute";
    case InstanceKind::object: return "object";
    case InstanceKind::event: return "event";
    case InstanceKind::session: return "session";
    }
    return "unknown";
}

std::optional<InstanceKind> kind_from_string(std::string_view text)
{
    if (text == "raw") return InstanceKind::raw;
    if (text == "attribute") return InstanceKind::attribute;
    if (text == "object") return InstanceKind::object;
    if (text == "event") return InstanceKind::event;
    if (text == "session") return InstanceKind::session;
    return std::nullopt;
}

std::string scalar_to_string(const Scalar& value)
{
    if (auto s = std::get_if<std::string>(&value)) return *s;
    if (auto i = std::get_if<std::int64_t>(&value)) return std::to_string(*i);
    return format_double(std::get<double>(value));
}

bool is_token(std::string_view text)
{
    if (text.empty() || text.front() < 'a' || text.front() > 'z') return false;
    return std::all_of(text.begin(), text.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
    });
}

std::string canonicalize(const json& body)
{
    if (!body.is_object()) throw TahoeError("canonicalize: body must be an object");
    const bool keep_order = body.contains("itype") && body["itype"] == "session";
    json normalized = json::object();
    for (const auto& [key, value] : body.items()) {
        check_canonical_value(key, value);
        if ((key == "_ref" || key == "_mal_ref") && !keep_order) {
            auto sorted = value.get<std::vector<std::string>>();
            std::sort(sorted.begin(), sorted.end());
            normalized[key] = sorted;
        } else {
            normalized[key] = value;
        }
    }
    try {
        // std::map-backed objects serialize in byte-lexicographic key order.
        return normalized.dump(-1, ' ', false, json::error_handler_t::strict);
    } catch (const json::type_error& e) {
        throw TahoeError(std::string("canonicalize: ") + e.what());
    }
}

std::string hash_instance(const json& body) { return sha256_hex(canonicalize(body)); }

json hash_body(const Instance& inst)
{
    json body;
    body["itype"] = std::string(to_string(inst.kind));
    switch (inst.kind) {
    case InstanceKind::attribute:
        body["sub_type"] = inst.sub_type;
        body["data"] = scalar_json(inst.data);
        break;
    case InstanceKind::object:
        body["sub_type"] = inst.sub_type;
        body["_ref"] = inst.ref;
        break;
    case InstanceKind::event:
        body["sub_type"] = inst.sub_type;
        body["orgid"] = inst.orgid;
        body["timestamp"] = inst.timestamp;
        body["_ref"] = inst.ref;
        break;
    case InstanceKind::session:
        body["sub_type"] = inst.sub_type;
        body["criterion"] = inst.criterion;
        body["_ref"] = inst.ref;
        break;
    case InstanceKind::raw:
        body["format_tag"] = inst.format_tag;
        body["orgid"] = inst.orgid;
        body["timestamp"] = inst.timestamp;
        body["payload"] = base64_encode(inst.payload);
        break;
    }
    return body;
}

std::string compute_hash(const Instance& inst) { return hash_instance(hash_body(inst)); }

json to_json(const Instance& inst)
{
    json doc = hash_body(inst);
    doc["_hash"] = inst.hash;
    if (inst.kind == InstanceKind::event) {
        doc["_mal_ref"] = inst.mal_ref;
        if (inst.malicious_score) doc["_malicious_score"] = *inst.malicious_score;
    }
    return doc;
}

Instance from_json(const json& doc)
{
    if (!doc.is_object()) throw TahoeError("instance document must be a JSON object");
    auto kind = kind_from_string(string_field(doc, "itype"));
    if (!kind) throw TahoeError("unknown itype '" + doc["itype"].get<std::string>() + "'");

    Instance inst;
    inst.kind = *kind;
    inst.hash = string_field(doc, "_hash");
    switch (inst.kind) {
    case InstanceKind::attribute:
        inst.sub_type = string_field(doc, "sub_type");
        if (!doc.contains("data")) throw TahoeError("missing field 'data'");
        inst.data = scalar_from_json(doc["data"], "data");
        if (doc.contains("_ref")) throw TahoeError("attribute must not carry '_ref'");
        break;
    case InstanceKind::object:
        inst.sub_type = string_field(doc, "sub_type");
        inst.ref = string_array(doc, "_ref", true);
        break;
    case InstanceKind::event:
        inst.sub_type = string_field(doc, "sub_type");
        inst.orgid = string_field(doc, "orgid");
        inst.timestamp = int_field(doc, "timestamp");
        inst.ref = string_array(doc, "_ref", true);
        inst.mal_ref = string_array(doc, "_mal_ref", false);
        if (auto it = doc.find("_malicious_score"); it != doc.end() && !it->is_null()) {
            if (!it->is_number()) throw TahoeError("field '_malicious_score' must be a number");
            inst.malicious_score = it->get<double>();
        }
        break;
    case InstanceKind::session:
        inst.sub_type = string_field(doc, "sub_type");
        inst.criterion = string_field(doc, "criterion");
        inst.ref = string_array(doc, "_ref", true);
        break;
    case InstanceKind::raw: {
        inst.format_tag = string_field(doc, "format_tag");
        inst.orgid = string_field(doc, "orgid");
        inst.timestamp = int_field(doc, "timestamp");
        auto payload = base64_decode(string_field(doc, "payload"));
        if (!payload) throw TahoeError("field 'payload' is not valid base64");
        inst.payload = std::move(*payload);
        break;
    }
    }
    return inst;
}

Instance new_attribute(std::string sub_type, Scalar data)
{
    require_token("attribute sub_type", sub_type);
    Instance inst;
    inst.kind = InstanceKind::attribute;
    inst.sub_type = std::move(sub_type);
    inst.data = std::move(data);
    inst.hash = compute_hash(inst);
    throw_if_invalid(inst);
    return inst;
}

Instance new_object(std::string sub_type, std::span<const Instance> children)
{
    require_token("object sub_type", sub_type);
    if (children.empty()) throw TahoeError("object needs at least one child");
    std::set<std::string> refs;
    for (const auto& c : children) {
        if (!c.is(InstanceKind::attribute) && !c.is(InstanceKind::object))
            throw TahoeError("object children must be attributes or objects");
        refs.insert(c.hash);
    }
    Instance inst;
    inst.kind = InstanceKind::object;
    inst.sub_type = std::move(sub_type);
    inst.ref.assign(refs.begin(), refs.end());
    inst.hash = compute_hash(inst);
    throw_if_invalid(inst);
    return inst;
}

Instance new_session(std::string sub_type, std::string criterion, std::span<const Instance> events)
{
    require_token("session sub_type", sub_type);
    if (events.empty()) throw TahoeError("session needs at least one event");
    Instance inst;
    inst.kind = InstanceKind::session;
    inst.sub_type = std::move(sub_type);
    inst.criterion = std::move(criterion);
    std::unordered_set<std::string> seen;
    for (const auto& e : events) {
        if (!e.is(InstanceKind::event)) throw TahoeError("session members must be events");
        if (seen.insert(e.hash).second) inst.ref.push_back(e.hash);
    }
    inst.hash = compute_hash(inst);
    throw_if_invalid(inst);
    return inst;
}

Instance new_raw(std::string format_tag, std::string orgid, std::int64_t timestamp, std::string payload)
{
    require_token("raw format_tag", format_tag);
    Instance inst;
    inst.kind = InstanceKind::raw;
    inst.format_tag = std::move(format_tag);
    inst.orgid = std::move(orgid);
    inst.timestamp = timestamp;
    inst.payload = std::move(payload);
    inst.hash = compute_hash(inst);
    return inst;
}

EventBundle new_event(std::string sub_type, std::span<const Instance> parts,
                      std::int64_t timestamp, std::string orgid)
{
    require_token("event sub_type", sub_type);
    if (parts.empty()) throw TahoeError("event needs at least one child");

    std::unordered_map<std::string, const Instance*> by_hash;
    Bundle unique;
    for (const auto& p : parts) {
        if (!p.is(InstanceKind::attribute) && !p.is(InstanceKind::object))
            throw TahoeError("event children must be attributes or objects");
        throw_if_invalid(p);
        if (by_hash.emplace(p.hash, &p).second) unique.push_back(p);
    }
    for (const auto& p : unique)
        for (const auto& r : p.ref)
            if (!by_hash.contains(r))
                throw TahoeError("dangling child reference " + r + " in object " + p.hash);

    EventBundle out;
    Instance& ev = out.event;
    ev.kind = InstanceKind::event;
    ev.sub_type = std::move(sub_type);
    ev.timestamp = timestamp;
    ev.orgid = std::move(orgid);
    for (const auto& [h, _] : by_hash) ev.ref.push_back(h);
    std::sort(ev.ref.begin(), ev.ref.end());
    ev.hash = compute_hash(ev);
    throw_if_invalid(ev);

    out.instances = std::move(unique);
    out.instances.push_back(ev);
    return out;
}

std::vector<std::string> validate(const Instance& inst)
{
    std::vector<std::string> v;
    const bool event = inst.is(InstanceKind::event);
    const bool raw = inst.is(InstanceKind::raw);
    const bool has_ref_kind = inst.is(InstanceKind::object) || event || inst.is(InstanceKind::session);

    if (!is_digest_hex(inst.hash)) v.push_back("malformed _hash");

    if (raw) {
        if (!is_token(inst.format_tag)) v.push_back("format_tag is not a lowercase token");
        if (!inst.sub_type.empty()) v.push_back("raw must not carry sub_type");
    } else {
        if (!is_token(inst.sub_type)) v.push_back("sub_type is not a lowercase token");
        if (!inst.format_tag.empty()) v.push_back("format_tag only allowed on raw");
        if (!inst.payload.empty()) v.push_back("payload only allowed on raw");
    }

    if (!has_ref_kind && !inst.ref.empty()) v.push_back("_ref not allowed on " + std::string(to_string(inst.kind)));
    if (has_ref_kind && inst.ref.empty()) v.push_back("_ref must not be empty");
    if (!event && (!inst.mal_ref.empty() || inst.malicious_score))
        v.push_back("_mal_ref/_malicious_score only allowed on events");
    if (!event && !raw && (inst.timestamp != 0 || !inst.orgid.empty()))
        v.push_back("timestamp/orgid only allowed on events and raw");
    if (!inst.is(InstanceKind::session) && !inst.criterion.empty())
        v.push_back("criterion only allowed on sessions");
    if (!inst.is(InstanceKind::attribute)) {
        auto s = std::get_if<std::string>(&inst.data);
        if (!s || !s->empty()) v.push_back("data only allowed on attributes");
    } else if (auto d = std::get_if<double>(&inst.data); d && !std::isfinite(*d)) {
        v.push_back("attribute data must be finite");
    }

    bool sealed = false;
    std::unordered_set<std::string> refs;
    for (const auto& r : inst.ref) {
        const bool plain = is_plain_edge(r);
        const bool enc = is_sealed_edge(r);
        sealed = sealed || enc;
        if (!plain && !enc) v.push_back("malformed edge reference '" + r + "'");
        if (inst.is(InstanceKind::session) && !plain) v.push_back("session _ref must hold event hashes");
        if (!refs.insert(r).second) v.push_back("duplicate edge reference " + r);
    }
    if (event) {
        for (const auto& m : inst.mal_ref)
            if (!refs.contains(m)) {
                v.push_back("_mal_ref not a subset of _ref");
                break;
            }
        if (inst.malicious_score && (!std::isfinite(*inst.malicious_score) || *inst.malicious_score > 0))
            v.push_back("_malicious_score must be finite and <= 0");
    }

    if (v.empty() && !sealed) {
        try {
            if (compute_hash(inst) != inst.hash) v.push_back("hash mismatch");
        } catch (const TahoeError& e) {
            v.push_back(e.what());
        }
    }
    return v;
}

} // namespace cybexp::tahoe

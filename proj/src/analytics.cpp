#include "cybexp/analytics.hpp"

#include "cybexp/tdql.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <ctime>

namespace cybexp::analytics {

using nlohmann::json;
using tahoe::Instance;
using tahoe::InstanceKind;

json DefensiveRule::to_json() const
{
    return {{"action", action}, {"sub_type", sub_type}, {"value", value},         {"score", score},
            {"events", events}, {"issued_at", issued_at}, {"issued_at_iso", format_iso8601(issued_at)}};
}

std::vector<DefensiveRule> gen_rules(const store::ArchiveStore& store, const RuleOptions& opts)
{
    std::map<std::string, DefensiveRule> by_attr;
    for (const auto& ev : store.scan(InstanceKind::event)) {
        if (!ev.malicious_score || *ev.malicious_score > opts.threshold || *ev.malicious_score >= 0) continue;
        const auto& edges = ev.mal_ref.empty() ? ev.ref : ev.mal_ref;
        for (const auto& h : edges) {
            if (!tahoe::is_plain_edge(h) || store.kind_of(h) != InstanceKind::attribute) continue;
            auto it = by_attr.find(h);
            if (it == by_attr.end()) {
                const auto attr = store.get(h);
                if (!opts.sub_types.contains(attr->sub_type)) continue;
                DefensiveRule r;
                r.sub_type = attr->sub_type;
                r.value = tahoe::scalar_to_string(attr->data);
                r.score = *ev.malicious_score;
                r.issued_at = opts.issued_at;
                it = by_attr.emplace(h, std::move(r)).first;
            }
            it->second.score = std::min(it->second.score, *ev.malicious_score);
            it->second.events.push_back(ev.hash);
        }
    }
    std::vector<DefensiveRule> out;
    for (auto& [h, r] : by_attr) {
        std::sort(r.events.begin(), r.events.end());
        r.events.erase(std::unique(r.events.begin(), r.events.end()), r.events.end());
        out.push_back(std::move(r));
    }
    std::sort(out.begin(), out.end(), [](const DefensiveRule& x, const DefensiveRule& y) {
        return std::tie(x.score, x.sub_type, x.value) < std::tie(y.score, y.sub_type, y.value);
    });
    return out;
}

std::string rules_text(const std::vector<DefensiveRule>& rules)
{
    std::string out;
    for (const auto& r : rules) {
        std::string value = r.value;
        for (auto& c : value)
            if (std::iscntrl(static_cast<unsigned char>(c)) || c == ' ') c = '_';
        out += "BLOCK " + r.sub_type + " " + value + " # score=" + format_double(r.score) + "\n";
    }
    return out;
}

json rules_json(const std::vector<DefensiveRule>& rules)
{
    json arr = json::array();
    for (const auto& r : rules) arr.push_back(r.to_json());
    return arr;
}

// ---------------------------------------------------------------------------

double dot(const SparseVector& a, const SparseVector& b)
{
    double s = 0;
    auto i = a.begin();
    auto j = b.begin();
    while (i != a.end() && j != b.end()) {
        if (i->first < j->first) ++i;
        else if (j->first < i->first) ++j;
        else s += (i++)->second * (j++)->second;
    }
    return s;
}

std::uint32_t fnv1a32(std::string_view bytes)
{
    std::uint32_t h = 2166136261u;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 16777619u;
    }
    return h;
}

std::uint32_t ngram_slot(std::string_view gram) { return kLexicalSlots + fnv1a32(gram) % kNgramSlots; }

UrlFeatures extract_features(std::string_view url)
{
    if (url.empty()) throw AnalyticsError("empty URL");
    UrlFeatures f;
    f.length = static_cast<std::uint32_t>(url.size());
    for (unsigned char c : url) {
        if (c == '.') ++f.dots;
        if (std::isdigit(c)) ++f.digits;
        if (!std::isalnum(c)) ++f.symbols;
    }
    std::size_t path_start;
    const auto scheme = url.find("://");
    if (scheme != std::string_view::npos && scheme < url.find_first_of("/?#")) {
        path_start = url.find_first_of("/?#", scheme + 3);
    } else {
        path_start = url.find_first_of("/?#");
    }
    if (path_start != std::string_view::npos && url[path_start] == '/') {
        auto path = url.substr(path_start);
        path = path.substr(0, path.find_first_of("?#"));
        std::size_t i = 0;
        while (i < path.size()) {
            const auto next = path.find('/', i);
            const auto seg = path.substr(i, next == std::string_view::npos ? std::string_view::npos : next - i);
            if (!seg.empty()) ++f.path_depth;
            if (next == std::string_view::npos) break;
            i = next + 1;
        }
    }

    std::map<std::uint32_t, double> acc;
    const std::uint32_t lexical[] = {f.length, f.dots, f.symbols, f.digits, f.path_depth};
    for (std::uint32_t k = 0; k < kLexicalSlots; ++k)
        if (lexical[k]) acc[k] = lexical[k];
    std::string low(url);
    std::transform(low.begin(), low.end(), low.begin(), [](unsigned char c) { return std::tolower(c); });
    for (std::size_t n = 3; n <= 5; ++n)
        for (std::size_t i = 0; i + n <= low.size(); ++i) acc[ngram_slot(std::string_view(low).substr(i, n))] += 1;
    f.vector.assign(acc.begin(), acc.end());
    return f;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Label l) { return l == Label::phishing ? "phishing" : "benign"; }

std::optional<Label> label_from_string(std::string_view text)
{
    if (text == "phishing") return Label::phishing;
    if (text == "benign") return Label::benign;
    return std::nullopt;
}

SopModel::SopModel(double a) : a_(a)
{
    if (!(a > 0) || !std::isfinite(a)) throw AnalyticsError("SOP parameter a must be positive");
}

SopModel::Probe SopModel::probe(const SparseVector& x) const
{
    const std::size_t k = xs_.size();
    std::vector<double> kx(k);
    for (std::size_t i = 0; i < k; ++i) kx[i] = dot(xs_[i], x);
    Probe p;
    p.mkx.assign(k, 0.0);
    double q = 0;
    for (std::size_t i = 0; i < k; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < k; ++j) s += minv_[i][j] * kx[j];
        p.mkx[i] = s;
        q += kx[i] * s;
    }
    p.schur = a_ + dot(x, x) - q;
    return p;
}

double SopModel::margin(const SparseVector& x) const
{
    for (const auto& [i, v] : x)
        if (!std::isfinite(v)) throw AnalyticsError("non-finite feature value");
    if (xs_.empty()) return 0.0;
    // With M = a I + S S' + x x', Woodbury gives v' M^-1 x = a (y' Minv k_x) / schur.
    const auto p = probe(x);
    double ym = 0;
    for (std::size_t i = 0; i < ys_.size(); ++i) ym += ys_[i] * p.mkx[i];
    return a_ * ym / p.schur;
}

Label SopModel::predict(const SparseVector& x) const { return margin(x) > 0 ? Label::phishing : Label::benign; }

void SopModel::store_example(const SparseVector& x, Label y, const Probe& p)
{
    const std::size_t k = xs_.size();
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) minv_[i][j] += p.mkx[i] * p.mkx[j] / p.schur;
        minv_[i].push_back(-p.mkx[i] / p.schur);
    }
    std::vector<double> last(k + 1);
    for (std::size_t j = 0; j < k; ++j) last[j] = -p.mkx[j] / p.schur;
    last[k] = 1.0 / p.schur;
    minv_.push_back(std::move(last));
    xs_.push_back(x);
    ys_.push_back(static_cast<double>(static_cast<int>(y)));
}

bool SopModel::update(const SparseVector& x, Label truth)
{
    ++seen_;
    if (predict(x) == truth) return false;
    store_example(x, truth, probe(x));
    return true;
}

json SopModel::to_json() const
{
    json ex = json::array();
    for (std::size_t i = 0; i < xs_.size(); ++i) {
        json v = json::array();
        for (const auto& [idx, val] : xs_[i]) v.push_back({idx, val});
        ex.push_back({{"y", ys_[i] > 0 ? 1 : -1}, {"x", v}});
    }
    return {{"a", a_}, {"seen", seen_}, {"examples", ex}};
}

SopModel SopModel::from_json(const json& doc)
{
    SopModel m(doc.at("a").get<double>());
    for (const auto& e : doc.at("examples")) {
        SparseVector x;
        for (const auto& p : e.at("x")) x.emplace_back(p.at(0).get<std::uint32_t>(), p.at(1).get<double>());
        m.store_example(x, e.at("y").get<int>() > 0 ? Label::phishing : Label::benign, m.probe(x));
    }
    m.seen_ = doc.value("seen", std::size_t{0});
    return m;
}

bool SopModel::operator==(const SopModel& o) const
{
    return a_ == o.a_ && xs_ == o.xs_ && ys_ == o.ys_ && minv_ == o.minv_ && seen_ == o.seen_;
}

// ---------------------------------------------------------------------------

json graph_json(const store::ArchiveStore& store, std::string_view root, int depth)
{
    if (!store.contains(root) && store.reference_count(root) == 0)
        throw AnalyticsError("unknown node " + std::string(root));
    const auto sub = store.neighbors(root, depth);
    json nodes = json::array();
    for (const auto& h : sub.nodes) {
        json n{{"hash", h}};
        const auto kind = store.kind_of(h);
        if (!kind) {
            n["kind"] = tahoe::is_sealed_edge(h) ? "sealed" : "missing";
            n["color"] = threatrank::to_string(threatrank::Color::blue);
        } else {
            const auto inst = store.get(h);
            n["kind"] = tahoe::to_string(*kind);
            n["sub_type"] = inst->sub_type;
            if (*kind == InstanceKind::attribute) n["value"] = tahoe::scalar_to_string(inst->data);
            if (*kind == InstanceKind::event) {
                n["timestamp"] = inst->timestamp;
                n["orgid"] = inst->orgid;
                if (inst->malicious_score) n["score"] = *inst->malicious_score;
                else n["score"] = nullptr;
                n["mal_ref"] = inst->mal_ref;
            }
            n["color"] = threatrank::to_string(threatrank::color_of(inst->malicious_score));
        }
        nodes.push_back(std::move(n));
    }
    json edges = json::array();
    for (const auto& [a, b] : sub.edges) edges.push_back({a, b});
    return {{"root", root}, {"depth", depth}, {"nodes", nodes}, {"edges", edges}};
}

// ---------------------------------------------------------------------------

std::string_view to_string(ReportKind k)
{
    switch (k) {
    case ReportKind::count: return "count";
    case ReportKind::related_graph: return "related_graph";
    case ReportKind::url_check: return "url_check";
    }
    return "count";
}

std::optional<ReportKind> report_kind_from_string(std::string_view text)
{
    if (text == "count") return ReportKind::count;
    if (text == "related_graph") return ReportKind::related_graph;
    if (text == "url_check") return ReportKind::url_check;
    return std::nullopt;
}

std::string_view to_string(ReportStatus s)
{
    switch (s) {
    case ReportStatus::pending: return "pending";
    case ReportStatus::running: return "running";
    case ReportStatus::done: return "done";
    case ReportStatus::failed: return "failed";
    }
    return "pending";
}

json ReportState::to_json() const
{
    json doc{{"kind", to_string(request.kind)},
             {"params", request.params},
             {"requester", request.requester},
             {"status", to_string(status)}};
    if (report) {
        doc["id"] = report->id;
        doc["payload"] = report->payload;
        doc["created_at"] = report->created_at;
    }
    if (!diagnostic.empty()) doc["diagnostic"] = diagnostic;
    return doc;
}

namespace {

void require(const json& params, const char* key, bool (json::*is)() const noexcept, const char* what)
{
    if (!params.contains(key) || !(params[key].*is)())
        throw AnalyticsError(std::string("parameter '") + key + "' must be " + what);
}

std::optional<std::int64_t> time_param(const json& params, const char* key)
{
    if (!params.contains(key) || params[key].is_null()) return std::nullopt;
    if (params[key].is_number_integer()) return params[key].get<std::int64_t>();
    if (params[key].is_string())
        if (auto t = parse_iso8601(params[key].get<std::string>())) return t;
    throw AnalyticsError(std::string("parameter '") + key + "' must be a timestamp");
}

void validate(const ReportRequest& req)
{
    if (!req.params.is_object()) throw AnalyticsError("params must be an object");
    const auto& p = req.params;
    switch (req.kind) {
    case ReportKind::count:
        if (p.contains("query")) {
            require(p, "query", &json::is_string, "a string");
            tdql::parse(p["query"].get<std::string>());
        } else {
            require(p, "sub_type", &json::is_string, "a string");
            if (!p.contains("value") || !(p["value"].is_string() || p["value"].is_number_integer()))
                throw AnalyticsError("parameter 'value' must be a string or integer");
            time_param(p, "since");
            time_param(p, "until");
        }
        break;
    case ReportKind::related_graph:
        require(p, "hash", &json::is_string, "a string");
        if (p.contains("depth") && (!p["depth"].is_number_integer() || p["depth"].get<int>() < 0 || p["depth"].get<int>() > 6))
            throw AnalyticsError("parameter 'depth' must be an integer in [0, 6]");
        break;
    case ReportKind::url_check:
        require(p, "url", &json::is_string, "a string");
        if (p["url"].get<std::string>().empty()) throw AnalyticsError("parameter 'url' is empty");
        break;
    }
}

} // namespace

void ReportService::set_model(const SopModel* model)
{
    std::lock_guard lock(mutex_);
    model_ = model;
}

std::string ReportService::submit(ReportRequest req)
{
    validate(req);
    std::lock_guard lock(mutex_);
    char buf[32];
    std::snprintf(buf, sizeof buf, "rep-%06zu", next_++);
    const std::string id = buf;
    states_[id] = ReportState{std::move(req), ReportStatus::pending, std::nullopt, {}};
    queue_.push_back(id);
    return id;
}

std::optional<std::pair<std::string, ReportRequest>> ReportService::claim()
{
    std::lock_guard lock(mutex_);
    while (!queue_.empty()) {
        const auto id = queue_.front();
        queue_.pop_front();
        auto& st = states_.at(id);
        if (st.status != ReportStatus::pending) continue;
        st.status = ReportStatus::running;
        return std::pair{id, st.request};
    }
    return std::nullopt;
}

json ReportService::run(const ReportRequest& req, const store::ArchiveStore& store) const
{
    validate(req);
    const auto& p = req.params;
    switch (req.kind) {
    case ReportKind::count: {
        tdql::QueryAst ast;
        if (p.contains("query")) {
            ast = tdql::parse(p["query"].get<std::string>());
        } else {
            ast.target = tdql::Target::count_events;
            tahoe::Scalar v = p["value"].is_string() ? tahoe::Scalar(p["value"].get<std::string>())
                                                     : tahoe::Scalar(p["value"].get<std::int64_t>());
            ast.conditions.push_back(tdql::AttributeCond{p["sub_type"].get<std::string>(), v});
            ast.since = time_param(p, "since");
            ast.until = time_param(p, "until");
        }
        return tdql::execute(ast, store).to_json();
    }
    case ReportKind::related_graph:
        return graph_json(store, p["hash"].get<std::string>(), p.value("depth", 1));
    case ReportKind::url_check: {
        const SopModel* model;
        {
            std::lock_guard lock(mutex_);
            model = model_;
        }
        if (!model) throw AnalyticsError("no URL model loaded");
        const auto url = p["url"].get<std::string>();
        const auto f = extract_features(url);
        const double m = model->margin(f.vector);
        return {{"url", url},
                {"label", to_string(m > 0 ? Label::phishing : Label::benign)},
                {"margin", m},
                {"features",
                 {{"length", f.length},
                  {"dots", f.dots},
                  {"symbols", f.symbols},
                  {"digits", f.digits},
                  {"path_depth", f.path_depth},
                  {"nonzero", f.vector.size()}}}};
    }
    }
    return nullptr;
}

std::size_t ReportService::process_pending(const store::ArchiveStore& store, std::size_t max)
{
    std::size_t n = 0;
    while (n < max) {
        auto job = claim();
        if (!job) break;
        ReportState result;
        try {
            result.report = Report{job->first, run(job->second, store), static_cast<std::int64_t>(std::time(nullptr))};
            result.status = ReportStatus::done;
        } catch (const std::exception& e) {
            result.status = ReportStatus::failed;
            result.diagnostic = e.what();
        }
        std::lock_guard lock(mutex_);
        auto& st = states_.at(job->first);
        st.status = result.status;
        st.report = std::move(result.report);
        st.diagnostic = std::move(result.diagnostic);
        ++n;
    }
    return n;
}

ReportState ReportService::fetch(const std::string& id) const
{
    std::lock_guard lock(mutex_);
    auto it = states_.find(id);
    if (it == states_.end()) throw AnalyticsError("unknown report id " + id);
    return it->second;
}

std::vector<std::string> ReportService::ids() const
{
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, st] : states_) out.push_back(id);
    return out;
}

} // namespace cybexp::analytics

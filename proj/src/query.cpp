#include "nfe/query.hpp"

#include "nfe/errors.hpp"
#include "nfe/pcap.hpp"
#include "nfe/protocols.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>
#include <tuple>
#include <unordered_map>
#include <unordered_set>

namespace nfe {

// GeoIP -----------------------------------------------------------------------

GeoIpTable GeoIpTable::load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read GeoIP table " + path.string());
    GeoIpTable t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto v = trim(line);
        if (v.empty() || v.front() == '#') continue;
        auto comma = v.find(',');
        if (comma == std::string_view::npos) {
            throw ConfigInvalid(path.string() + ":" + std::to_string(lineno) + ": expected cidr,label");
        }
        auto cidr = Cidr::parse(trim(v.substr(0, comma)));
        if (!cidr) throw ConfigInvalid(path.string() + ":" + std::to_string(lineno) + ": bad CIDR");
        auto label = trim(v.substr(comma + 1));
        if (label.size() >= 2 && label.front() == '"' && label.back() == '"') label = label.substr(1, label.size() - 2);
        t.add(*cidr, std::string(label));
    }
    return t;
}

void GeoIpTable::add(const Cidr& range, std::string label) { entries_.emplace_back(range, std::move(label)); }

std::optional<std::string> GeoIpTable::lookup(const IpAddress& ip) const {
    const std::pair<Cidr, std::string>* best = nullptr;
    for (const auto& e : entries_) {
        if (e.first.contains(ip) && (!best || e.first.prefix_len() > best->first.prefix_len())) best = &e;
    }
    if (!best) return std::nullopt;
    return best->second;
}

// Helpers ---------------------------------------------------------------------

namespace {

std::int64_t now_us() {
    return std::chrono::duration_cast<std::chrono::microseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    auto q = a / b;
    return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

std::vector<std::uint64_t> intersect(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
    std::vector<std::uint64_t> out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

bool contains_ci(ByteView hay, std::string_view needle) {
    if (needle.empty()) return true;
    auto text = as_chars(hay);
    auto it = std::search(text.begin(), text.end(), needle.begin(), needle.end(), [](char a, char b) {
        return std::tolower(static_cast<unsigned char>(a)) == std::tolower(static_cast<unsigned char>(b));
    });
    return it != text.end();
}

}  // namespace

std::optional<Session> session_from_payload(ByteView pcap_bytes) {
    PcapReader reader(Bytes(pcap_bytes.begin(), pcap_bytes.end()), "payload");
    AssemblerConfig cfg;
    // One stored blob is one session: never split it again.
    cfg.tcp_idle_timeout_us = INT64_MAX / 4;
    cfg.udp_idle_timeout_us = INT64_MAX / 4;
    cfg.close_linger_us = INT64_MAX / 4;
    cfg.keep_frames = false;
    std::vector<Session> out;
    SessionAssembler as(cfg, [&](Session&& s) { out.push_back(std::move(s)); });
    try {
        while (auto p = reader.next()) as.add(*p);
    } catch (const CorruptRecord&) {
        // Keep whatever was readable.
    }
    as.finish();
    if (out.empty()) return std::nullopt;
    return std::move(out.front());
}

// QueryEngine -----------------------------------------------------------------

QueryEngine::QueryEngine(const MetadataStore& store, const GeoIpTable* geo, QueryLimits limits)
    : store_(store), geo_(geo), limits_(limits) {}

void QueryEngine::validate(const Query& q) const {
    const auto& vocab = Vocabulary::instance();
    for (const auto& t : q.terms) vocab.require(t.field, "query term");
    for (const auto& f : q.facet_fields) vocab.require(f, "facet");
    if (!q.range.well_ordered()) throw MalformedRequest("time range ends before it starts", 0);
}

std::vector<std::string> QueryEngine::values_of(const MetadataRecord& r, std::string_view field) const {
    if (field == "geo.src" || field == "geo.dst") {
        if (!geo_) return {};
        auto label = geo_->lookup(field == "geo.src" ? r.initiator.ip : r.responder.ip);
        if (!label) return {};
        return {*label};
    }
    return r.field_values(field);
}

bool QueryEngine::matches_term(const MetadataRecord& r, const Term& t) const {
    const auto& spec = Vocabulary::instance().require(t.field);
    auto want = normalize_value(spec, t.value);
    for (const auto& v : values_of(r, t.field)) {
        if (normalize_value(spec, v) == want) return true;
    }
    return false;
}

std::vector<std::uint64_t> QueryEngine::matched_ids(const Query& q, ScanStats* stats,
                                                    std::uint64_t* unscanned) const {
    validate(q);
    const auto& vocab = Vocabulary::instance();
    const std::uint64_t visible = store_.record_count();
    ScanStats local;

    std::vector<const Term*> indexed, post;
    for (const auto& t : q.terms) {
        const auto& spec = vocab.require(t.field);
        (spec.indexed && !spec.query_time ? indexed : post).push_back(&t);
    }

    std::vector<std::uint64_t> ids;
    if (!indexed.empty()) {
        std::vector<std::vector<std::uint64_t>> lists;
        for (const auto* t : indexed) lists.push_back(store_.lookup(t->field, t->value, q.range, &local));
        std::sort(lists.begin(), lists.end(), [](const auto& a, const auto& b) { return a.size() < b.size(); });
        ids = lists.front();
        for (std::size_t i = 1; i < lists.size() && !ids.empty(); ++i) ids = intersect(ids, lists[i]);
    } else {
        store_.scan(q.range, [&](const MetadataRecord& r) { ids.push_back(r.record_id); }, &local);
    }
    std::erase_if(ids, [&](std::uint64_t id) { return id >= visible; });

    if (!post.empty()) {
        std::vector<std::uint64_t> kept;
        for (const auto& r : store_.get_many(ids)) {
            bool ok = std::all_of(post.begin(), post.end(), [&](const Term* t) { return matches_term(r, *t); });
            if (ok) kept.push_back(r.record_id);
        }
        ids = std::move(kept);
    }

    if (q.keyword) {
        std::vector<std::uint64_t> kept;
        std::unordered_map<std::uint64_t, bool> verdict;  // per session
        std::size_t scanned = 0;
        std::uint64_t skipped = 0;
        for (const auto& r : store_.get_many(ids)) {
            auto it = verdict.find(r.session_id);
            if (it == verdict.end()) {
                bool hit = false;
                if (scanned < limits_.keyword_scan_max_sessions) {
                    ++scanned;
                    try {
                        auto [bytes, form] = store_.fetch_payload(r.session_id);
                        if (form == StoredForm::full) {
                            if (auto s = session_from_payload(bytes)) {
                                hit = contains_ci(s->stream_fwd, *q.keyword) || contains_ci(s->stream_rev, *q.keyword);
                            }
                        }
                    } catch (const NotStored&) {
                    }
                } else {
                    ++skipped;
                }
                it = verdict.emplace(r.session_id, hit).first;
            }
            if (it->second) kept.push_back(r.record_id);
        }
        ids = std::move(kept);
        if (unscanned) *unscanned = skipped;
    }
    if (stats) *stats += local;
    return ids;
}

namespace {

// One record per session: the lowest record id stands for the session.
std::vector<MetadataRecord> one_per_session(std::vector<MetadataRecord> records) {
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.record_id < b.record_id; });
    std::unordered_set<std::uint64_t> seen;
    std::vector<MetadataRecord> out;
    for (auto& r : records) {
        if (seen.insert(r.session_id).second) out.push_back(std::move(r));
    }
    return out;
}

}  // namespace

ResultSet QueryEngine::run_query(const Query& q) const {
    auto t0 = now_us();
    ResultSet rs;
    rs.store_version = store_.version();
    auto ids = matched_ids(q, &rs.stats, &rs.keyword_unscanned);
    rs.matched = ids.size();
    {
        std::unordered_set<std::uint64_t> sessions;
        for (const auto& r : store_.get_many(ids)) sessions.insert(r.session_id);
        rs.matched_sessions = sessions.size();
    }

    if (!q.facet_fields.empty()) {
        // A session counts once per value even when several of its records
        // (DNS transactions) carry that value.
        std::map<std::string, std::map<std::string, FacetRow>> acc;
        std::set<std::tuple<std::string, std::string, std::uint64_t>> counted;
        for (const auto& f : q.facet_fields) acc[f];
        for (const auto& r : store_.get_many(ids)) {
            for (const auto& f : q.facet_fields) {
                for (auto& v : values_of(r, f)) {
                    if (!counted.emplace(f, v, r.session_id).second) continue;
                    auto& row = acc[f][v];
                    row.value = v;
                    row.session_count += 1;
                    row.packet_count += r.packets_total;
                    row.byte_count += r.bytes_total;
                }
            }
        }
        for (auto& [f, rows] : acc) {
            auto& out = rs.facets[f];
            for (auto& [v, row] : rows) out.push_back(row);
            std::stable_sort(out.begin(), out.end(),
                             [](const FacetRow& a, const FacetRow& b) { return a.session_count > b.session_count; });
        }
    }

    if (q.offset < ids.size() && q.limit > 0) {
        auto end = std::min(ids.size(), q.offset + q.limit);
        rs.records = store_.get_many(std::vector<std::uint64_t>(ids.begin() + static_cast<std::ptrdiff_t>(q.offset),
                                                                ids.begin() + static_cast<std::ptrdiff_t>(end)));
    }
    rs.elapsed_us = now_us() - t0;
    return rs;
}

Query QueryEngine::drill_down(Query q, std::string_view field, std::string_view value) const {
    Vocabulary::instance().require(field, "drill-down");
    Term t{std::string(field), std::string(value)};
    if (std::find(q.terms.begin(), q.terms.end(), t) == q.terms.end()) q.terms.push_back(std::move(t));
    q.offset = 0;
    return q;
}

std::vector<TimelineBucket> QueryEngine::timeline(const Query& q, std::int64_t g) const {
    if (g <= 0) throw InvalidGranularity("granularity must be positive, got " + std::to_string(g));
    auto records = one_per_session(store_.get_many(matched_ids(q)));
    std::int64_t start = 0, end = 0;
    if (q.range.from_us != INT64_MIN) {
        start = q.range.from_us;
    } else if (!records.empty()) {
        auto lo = std::min_element(records.begin(), records.end(),
                                   [](const auto& a, const auto& b) { return a.first_ts_us < b.first_ts_us; });
        start = floor_div(lo->first_ts_us, g) * g;
    } else {
        return {};
    }
    if (q.range.to_us != INT64_MAX) {
        end = q.range.to_us;
    } else if (!records.empty()) {
        end = std::max_element(records.begin(), records.end(), [](const auto& a, const auto& b) {
                  return a.first_ts_us < b.first_ts_us;
              })->first_ts_us;
    } else {
        end = start;
    }
    if (end < start) end = start;
    auto span = static_cast<long double>(end) - static_cast<long double>(start);
    if (span / g + 1 > static_cast<long double>(limits_.max_timeline_buckets)) {
        throw InvalidGranularity("granularity " + std::to_string(g) + " yields too many buckets");
    }
    auto n = static_cast<std::size_t>((end - start) / g + 1);
    std::vector<TimelineBucket> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i].bucket_start_us = start + static_cast<std::int64_t>(i) * g;
    for (const auto& r : records) {
        // A record that began before the range is still part of the match;
        // it lands in the first bucket so the totals stay conserved.
        std::int64_t idx = r.first_ts_us < start ? 0 : (r.first_ts_us - start) / g;
        idx = std::min<std::int64_t>(idx, static_cast<std::int64_t>(n) - 1);
        out[static_cast<std::size_t>(idx)].session_count += 1;
        out[static_cast<std::size_t>(idx)].byte_count += r.bytes_total;
    }
    return out;
}

RelationGraph QueryEngine::relation_graph(const Query& q) const {
    std::map<std::string, GraphNode> nodes;
    std::map<std::pair<std::string, std::string>, GraphEdge> edges;
    for (const auto& r : one_per_session(store_.get_many(matched_ids(q)))) {
        auto s = r.initiator.ip.to_string();
        auto d = r.responder.ip.to_string();
        auto& ns = nodes[s];
        ns.address = s;
        ns.as_source += 1;
        auto& nd = nodes[d];
        nd.address = d;
        nd.as_destination += 1;
        auto& e = edges[{s, d}];
        e.src = s;
        e.dst = d;
        e.session_count += 1;
        e.byte_count += r.bytes_total;
        e.protocols.insert(std::string(to_string(r.app_protocol)));
    }
    RelationGraph g;
    for (auto& [k, n] : nodes) g.nodes.push_back(n);
    for (auto& [k, e] : edges) g.edges.push_back(e);
    std::vector<GraphNode> by = g.nodes;
    std::stable_sort(by.begin(), by.end(), [](const auto& a, const auto& b) { return a.as_source > b.as_source; });
    for (const auto& n : by) {
        if (n.as_source > 0) g.top_sources.push_back(n.address);
    }
    by = g.nodes;
    std::stable_sort(by.begin(), by.end(),
                     [](const auto& a, const auto& b) { return a.as_destination > b.as_destination; });
    for (const auto& n : by) {
        if (n.as_destination > 0) g.top_destinations.push_back(n.address);
    }
    return g;
}

RenderedContent QueryEngine::reconstruct_content(std::uint64_t session_id) const {
    RenderedContent rc;
    rc.session_id = session_id;
    rc.records = store_.records_for_session(session_id);
    if (rc.records.empty()) throw UnknownSession("no session " + std::to_string(session_id));
    auto proto = rc.records.front().app_protocol;
    rc.kind = proto == AppProtocol::http ? "http" : proto == AppProtocol::smtp ? "smtp" : "dump";

    auto loc = store_.payload_locator(session_id);
    if (!loc) {
        rc.body_error = "NotStored: session kept as metadata only";
        return rc;
    }
    rc.stored_form = loc->form;
    if (loc->form == StoredForm::headers_only) {
        rc.body_error = "NotStored: session kept as headers only";
        return rc;
    }
    auto [bytes, form] = store_.fetch_payload(session_id);
    auto s = session_from_payload(bytes);
    if (!s) {
        rc.body_error = "NotStored: payload holds no flow packets";
        return rc;
    }
    auto text_part = [](std::string name, std::string_view text) {
        return ContentArtifact{std::move(name), "text/plain", Bytes(text.begin(), text.end())};
    };
    if (rc.kind == "http") {
        int n = 0;
        for (auto& ex : parse_http_exchanges(*s)) {
            ++n;
            if (!ex.response || ex.response->body.empty()) continue;
            auto ct = ex.response->header("Content-Type").value_or("application/octet-stream");
            auto q = ex.uri.find('?');
            auto path = ex.uri.substr(0, q);
            auto slash = path.rfind('/');
            std::string name = slash == std::string::npos ? path : path.substr(slash + 1);
            if (name.empty()) name = "response-" + std::to_string(n);
            rc.artifacts.push_back({name, ct, std::move(ex.response->body)});
        }
    } else if (rc.kind == "smtp") {
        int n = 0;
        for (auto& m : parse_smtp_messages(*s)) {
            ++n;
            rc.artifacts.push_back(text_part("message-" + std::to_string(n) + ".headers", m.raw_headers));
            int p = 0;
            for (auto& part : m.parts) {
                ++p;
                auto name = part.filename.value_or("message-" + std::to_string(n) + ".part-" + std::to_string(p));
                rc.artifacts.push_back({name, part.content_type, std::move(part.body)});
            }
        }
    }
    if (rc.artifacts.empty()) {
        rc.kind = "dump";
        rc.artifacts.push_back(text_part("initiator-to-responder.dump", hex_dump(s->stream_fwd)));
        rc.artifacts.push_back(text_part("responder-to-initiator.dump", hex_dump(s->stream_rev)));
    }
    return rc;
}

}  // namespace nfe

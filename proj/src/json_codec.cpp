#include "nfe/json_codec.hpp"

#include "nfe/errors.hpp"

#include <charconv>

namespace nfe {

json to_json(const Endpoint& e) { return {{"ip", e.ip.to_string()}, {"port", e.port}}; }

json to_json(const MetadataRecord& r) {
    json attrs = json::object();
    for (const auto& [k, v] : r.attributes) attrs[k].push_back(v);
    return {{"record_id", r.record_id},
            {"session_id", r.session_id},
            {"source_id", r.source_id},
            {"first_ts_us", r.first_ts_us},
            {"last_ts_us", r.last_ts_us},
            {"initiator", to_json(r.initiator)},
            {"responder", to_json(r.responder)},
            {"ip_proto", r.ip_proto},
            {"app_protocol", to_string(r.app_protocol)},
            {"bytes_total", r.bytes_total},
            {"packets_total", r.packets_total},
            {"size_kb", r.size_kb()},
            {"attributes", attrs}};
}

json to_json(const Alert& a) {
    return {{"alert_id", a.alert_id},
            {"kind", to_string(a.kind)},
            {"severity", to_string(a.severity)},
            {"ts_us", a.ts_us},
            {"entity", a.entity},
            {"message", a.message},
            {"session_ids", a.session_ids},
            {"evidence", a.evidence}};
}

Alert alert_from_json(const json& j) {
    Alert a;
    a.alert_id = j.at("alert_id");
    a.kind = parse_alert_kind(j.at("kind").get<std::string>()).value_or(AlertKind::rule);
    a.severity = parse_severity(j.at("severity").get<std::string>()).value_or(Severity::warn);
    a.ts_us = j.at("ts_us");
    a.entity = j.value("entity", "");
    a.message = j.value("message", "");
    a.session_ids = j.value("session_ids", std::vector<std::uint64_t>{});
    a.evidence = j.value("evidence", std::map<std::string, std::string>{});
    return a;
}

json to_json(const ScanStats& s) {
    return {{"segments_total", s.segments_total},
            {"segments_opened", s.segments_opened},
            {"records_examined", s.records_examined}};
}

json to_json(const SegmentInfo& s) {
    return {{"segment_id", s.segment_id},     {"first_record_id", s.first_record_id},
            {"record_count", s.record_count}, {"min_ts_us", s.min_ts_us},
            {"max_ts_us", s.max_ts_us},       {"sealed", s.sealed}};
}

std::int64_t json_int(const json& j, std::int64_t fallback) {
    if (j.is_number_integer()) return j.get<std::int64_t>();
    if (j.is_number()) return static_cast<std::int64_t>(j.get<double>());
    if (j.is_string()) {
        try {
            return std::stoll(j.get<std::string>());
        } catch (const std::exception&) {
            return fallback;
        }
    }
    return fallback;
}

namespace {

[[noreturn]] void bad_shape(const std::string& what) { throw MalformedRequest(what, 0); }

std::string text_of(const json& j, const char* what) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_number_integer() || j.is_number_unsigned()) return std::to_string(j.get<std::int64_t>());
    bad_shape(std::string(what) + " must be a string");
}

std::int64_t int_of(const json& j, const char* what) {
    if (j.is_number_integer() || j.is_number_unsigned()) return j.get<std::int64_t>();
    if (j.is_string()) {
        const auto& s = j.get_ref<const std::string&>();
        std::int64_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec == std::errc() && p == s.data() + s.size()) return v;
    }
    bad_shape(std::string(what) + " must be an integer");
}

}  // namespace

Query query_from_json(const json& j) {
    if (!j.is_object()) bad_shape("query must be a JSON object");
    Query q;
    if (j.contains("terms")) {
        if (!j["terms"].is_array()) bad_shape("terms must be an array");
        for (const auto& t : j["terms"]) {
            if (!t.is_object() || !t.contains("field") || !t.contains("value")) {
                bad_shape("each term needs field and value");
            }
            q.terms.push_back({text_of(t["field"], "field"), text_of(t["value"], "value")});
        }
    }
    if (j.contains("from_us") && !j["from_us"].is_null()) q.range.from_us = int_of(j["from_us"], "from_us");
    if (j.contains("to_us") && !j["to_us"].is_null()) q.range.to_us = int_of(j["to_us"], "to_us");
    if (j.contains("facets")) {
        if (!j["facets"].is_array()) bad_shape("facets must be an array");
        for (const auto& f : j["facets"]) q.facet_fields.push_back(text_of(f, "facet"));
    }
    if (j.contains("limit")) {
        auto v = int_of(j["limit"], "limit");
        if (v < 0) bad_shape("limit must be non-negative");
        q.limit = static_cast<std::size_t>(v);
    }
    if (j.contains("offset")) {
        auto v = int_of(j["offset"], "offset");
        if (v < 0) bad_shape("offset must be non-negative");
        q.offset = static_cast<std::size_t>(v);
    }
    if (j.contains("keyword") && !j["keyword"].is_null()) q.keyword = text_of(j["keyword"], "keyword");
    return q;
}

json to_json(const Query& q) {
    json j = {{"terms", json::array()}, {"facets", q.facet_fields}, {"limit", q.limit}, {"offset", q.offset}};
    for (const auto& t : q.terms) j["terms"].push_back({{"field", t.field}, {"value", t.value}});
    if (q.range.from_us != INT64_MIN) j["from_us"] = q.range.from_us;
    if (q.range.to_us != INT64_MAX) j["to_us"] = q.range.to_us;
    if (q.keyword) j["keyword"] = *q.keyword;
    return j;
}

json to_json(const ResultSet& rs) {
    json facets = json::object();
    for (const auto& [field, rows] : rs.facets) {
        json arr = json::array();
        for (const auto& r : rows) {
            arr.push_back({{"value", r.value},
                           {"session_count", r.session_count},
                           {"packet_count", r.packet_count},
                           {"byte_count", r.byte_count}});
        }
        facets[field] = std::move(arr);
    }
    json records = json::array();
    for (const auto& r : rs.records) records.push_back(to_json(r));
    return {{"matched", rs.matched},
            {"matched_sessions", rs.matched_sessions},
            {"facets", facets},
            {"records", records},
            {"store_version", rs.store_version},
            {"elapsed_us", rs.elapsed_us},
            {"scan", to_json(rs.stats)},
            {"keyword_unscanned", rs.keyword_unscanned}};
}

json to_json(const std::vector<TimelineBucket>& buckets) {
    json arr = json::array();
    for (const auto& b : buckets) {
        arr.push_back({{"bucket_start_us", b.bucket_start_us},
                       {"session_count", b.session_count},
                       {"byte_count", b.byte_count}});
    }
    return arr;
}

json to_json(const RelationGraph& g) {
    json nodes = json::array(), edges = json::array();
    for (const auto& n : g.nodes) {
        nodes.push_back({{"address", n.address}, {"as_source", n.as_source}, {"as_destination", n.as_destination}});
    }
    for (const auto& e : g.edges) {
        edges.push_back({{"src", e.src},
                         {"dst", e.dst},
                         {"session_count", e.session_count},
                         {"byte_count", e.byte_count},
                         {"protocols", e.protocols}});
    }
    return {{"nodes", nodes},
            {"edges", edges},
            {"top_sources", g.top_sources},
            {"top_destinations", g.top_destinations}};
}

json to_json(const RenderedContent& c) {
    json arts = json::array();
    for (const auto& a : c.artifacts) {
        json aj = {{"name", a.name},
                   {"content_type", a.content_type},
                   {"size", a.body.size()},
                   {"sha256", sha256_hex(a.body)},
                   {"body_base64", base64_encode(a.body)}};
        // Text bodies are also inlined so a console can show them directly.
        bool text = a.content_type.starts_with("text/") || a.content_type.find("json") != std::string::npos ||
                    a.content_type.find("xml") != std::string::npos;
        // Serialize with error_handler_t::replace: bodies need not be UTF-8.
        if (text) aj["body_text"] = std::string(as_chars(a.body));
        arts.push_back(std::move(aj));
    }
    json recs = json::array();
    for (const auto& r : c.records) recs.push_back(to_json(r));
    json j = {{"session_id", c.session_id}, {"kind", c.kind}, {"artifacts", arts}, {"records", recs}};
    if (c.stored_form) j["stored_form"] = *c.stored_form == StoredForm::full ? "full" : "headers_only";
    if (c.body_error) j["body_error"] = *c.body_error;
    return j;
}

json error_json(const std::exception& e) {
    json j = {{"message", e.what()}};
    if (const auto* ne = dynamic_cast<const Error*>(&e)) {
        j["error"] = ne->kind();
        if (const auto* uf = dynamic_cast<const UnknownField*>(&e)) j["field"] = uf->field();
        if (const auto* mr = dynamic_cast<const MalformedRequest*>(&e)) j["position"] = mr->position();
        if (const auto* se = dynamic_cast<const SyntaxError*>(&e)) {
            j["line"] = se->line();
            j["column"] = se->column();
        }
    } else {
        j["error"] = "InternalError";
    }
    return j;
}

}  // namespace nfe

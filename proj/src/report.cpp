#include "nfe/report.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <sstream>

namespace nfe {

namespace {

json facet_rows(const std::vector<FacetRow>& rows, std::size_t limit) {
    json arr = json::array();
    for (std::size_t i = 0; i < rows.size() && i < limit; ++i) {
        arr.push_back({{"value", rows[i].value},
                       {"session_count", rows[i].session_count},
                       {"packet_count", rows[i].packet_count},
                       {"byte_count", rows[i].byte_count}});
    }
    return arr;
}

json facet_section(const QueryEngine& engine, const Query& base, const std::string& field, std::size_t limit) {
    Query q = base;
    q.facet_fields = {field};
    q.limit = 0;
    q.offset = 0;
    auto rs = engine.run_query(q);
    return {{"query", to_json(q)}, {"matched", rs.matched}, {"rows", facet_rows(rs.facets[field], limit)}};
}

}  // namespace

json generate_report(const QueryEngine& engine, const AlertStore& alerts, const MalwareTriage* triage,
                     const Query& query, const ReportTemplate& tmpl) {
    engine.validate(query);
    json sections = json::object();

    Query base = query;
    base.facet_fields.clear();
    base.limit = 0;
    base.offset = 0;
    auto matched = engine.run_query(base).matched;

    sections["protocol_volume"] = facet_section(engine, base, "app.protocol", SIZE_MAX);
    sections["top_sources"] = facet_section(engine, base, "ip.src", tmpl.top_n);
    sections["top_destinations"] = facet_section(engine, base, "ip.dst", tmpl.top_n);

    // Timeline over the matched range, widening the granularity to stay
    // within the bucket budget.
    std::int64_t g = std::max<std::int64_t>(1, tmpl.granularity_us);
    std::vector<TimelineBucket> buckets;
    if (query.range.from_us != INT64_MIN && query.range.to_us != INT64_MAX && query.range.well_ordered()) {
        auto span = static_cast<long double>(query.range.to_us) - query.range.from_us;
        while (span / g + 1 > tmpl.max_timeline_buckets) g *= 2;
        buckets = engine.timeline(base, g);
    } else {
        std::int64_t lo = INT64_MAX, hi = INT64_MIN;
        for (const auto& r : engine.store().get_many(engine.matched_ids(base))) {
            lo = std::min(lo, r.first_ts_us);
            hi = std::max(hi, r.first_ts_us);
        }
        if (lo <= hi) {
            auto span = static_cast<long double>(hi) - lo;
            while (span / g + 2 > tmpl.max_timeline_buckets) g *= 2;
        }
        buckets = engine.timeline(base, g);
    }
    sections["timeline"] = {{"query", to_json(base)}, {"granularity_us", g}, {"buckets", to_json(buckets)}};

    json by_kind = json::object(), by_sev = json::object(), recent = json::array();
    std::uint64_t alert_total = 0;
    auto all_alerts = alerts.list();
    for (const auto& a : all_alerts) {
        if (!query.range.intersects(a.ts_us, a.ts_us)) continue;
        ++alert_total;
        by_kind[std::string(to_string(a.kind))] = by_kind.value(std::string(to_string(a.kind)), 0) + 1;
        by_sev[std::string(to_string(a.severity))] = by_sev.value(std::string(to_string(a.severity)), 0) + 1;
    }
    for (auto it = all_alerts.rbegin(); it != all_alerts.rend() && recent.size() < tmpl.top_n; ++it) {
        if (query.range.intersects(it->ts_us, it->ts_us)) recent.push_back(to_json(*it));
    }
    json alert_query = json::object();
    if (query.range.from_us != INT64_MIN) alert_query["from_us"] = query.range.from_us;
    if (query.range.to_us != INT64_MAX) alert_query["to_us"] = query.range.to_us;
    sections["alert_digest"] = {{"query", alert_query},
                                {"total", alert_total},
                                {"by_kind", by_kind},
                                {"by_severity", by_sev},
                                {"recent", recent}};

    json malware = {{"model_version", 0}, {"clusters", json::array()}, {"samples_by_status", json::object()},
                    {"samples", 0}, {"dynamic_invocations", 0}};
    if (triage) {
        auto m = triage->model();
        auto counts = triage->counts();
        malware["model_version"] = m.version;
        for (const auto& c : m.clusters) {
            malware["clusters"].push_back({{"cluster_id", c.cluster_id},
                                           {"members", c.members.size()},
                                           {"representative_features", c.representative.size()}});
        }
        malware["samples"] = counts.samples;
        malware["dynamic_invocations"] = counts.dynamic_invocations;
        malware["samples_by_status"] = counts.by_status;
    }
    malware["query"] = {{"source", "triage state"}};
    sections["malware_summary"] = malware;

    json body = {{"template", tmpl.name},
                 {"query", to_json(query)},
                 {"store_version", engine.store().version()},
                 {"matched", matched},
                 {"sections", sections}};
    auto id_text = body.dump(-1, ' ', false, json::error_handler_t::replace);
    body["report_id"] = sha256_hex(as_bytes(id_text)).substr(0, 16);
    body["generated_ts_us"] = std::chrono::duration_cast<std::chrono::microseconds>(
                                  std::chrono::system_clock::now().time_since_epoch())
                                  .count();
    return body;
}

std::string render_report_text(const json& r) {
    std::ostringstream o;
    o << "Report " << r.value("report_id", "") << " (" << r.value("template", "") << ")\n";
    o << "Store version " << r.value("store_version", 0) << ", matched sessions " << r.value("matched", 0) << "\n";
    o << "Query: " << r["query"].dump() << "\n\n";
    const auto& s = r["sections"];
    auto table = [&](const char* title, const json& sec) {
        o << title << "\n";
        o << "  " << std::left << std::setw(40) << "value" << std::right << std::setw(10) << "sessions"
          << std::setw(12) << "packets" << std::setw(14) << "bytes" << "\n";
        for (const auto& row : sec["rows"]) {
            o << "  " << std::left << std::setw(40) << row["value"].get<std::string>() << std::right << std::setw(10)
              << row["session_count"].get<std::uint64_t>() << std::setw(12) << row["packet_count"].get<std::uint64_t>()
              << std::setw(14) << row["byte_count"].get<std::uint64_t>() << "\n";
        }
        o << "\n";
    };
    table("Traffic volume by protocol", s["protocol_volume"]);
    table("Top sources", s["top_sources"]);
    table("Top destinations", s["top_destinations"]);
    o << "Timeline (granularity " << s["timeline"]["granularity_us"].get<std::int64_t>() / 1'000'000 << " s)\n";
    for (const auto& b : s["timeline"]["buckets"]) {
        if (b["session_count"].get<std::uint64_t>() == 0) continue;
        o << "  " << b["bucket_start_us"].get<std::int64_t>() << "  sessions " << b["session_count"].get<std::uint64_t>()
          << "  bytes " << b["byte_count"].get<std::uint64_t>() << "\n";
    }
    o << "\nAlerts: " << s["alert_digest"]["total"].get<std::uint64_t>() << " " << s["alert_digest"]["by_kind"].dump()
      << "\n";
    const auto& m = s["malware_summary"];
    o << "Malware: " << m["samples"].get<std::uint64_t>() << " samples, model v" << m["model_version"].get<std::uint64_t>()
      << ", " << m["clusters"].size() << " clusters, " << m["dynamic_invocations"].get<std::uint64_t>()
      << " sandbox runs\n";
    return o.str();
}

}  // namespace nfe

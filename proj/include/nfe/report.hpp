#pragma once

#include "nfe/alerts.hpp"
#include "nfe/json_codec.hpp"
#include "nfe/malware.hpp"
#include "nfe/query.hpp"

#include <string>

namespace nfe {

struct ReportTemplate {
    std::string name = "standard";
    /// Timeline granularity; widened when the range would need more than
    /// max_timeline_buckets buckets.
    std::int64_t granularity_us = 60'000'000;
    std::size_t max_timeline_buckets = 1000;
    std::size_t top_n = 10;
};

/// Builds a report whose every section embeds the query that produced it:
/// protocol volume, top talkers (sources and destinations), timeline,
/// alert digest and malware cluster summary. Throws UnknownField.
json generate_report(const QueryEngine& engine, const AlertStore& alerts, const MalwareTriage* triage,
                     const Query& query, const ReportTemplate& tmpl = {});

/// Plain-text rendering of a report document.
std::string render_report_text(const json& report);

}  // namespace nfe

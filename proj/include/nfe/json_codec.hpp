#pragma once

// JSON forms of the engine's types, shared by the HTTP API, the SOC wire
// protocol, reports and the CLI.

#include "nfe/alerts.hpp"
#include "nfe/metadata.hpp"
#include "nfe/query.hpp"
#include "nfe/store.hpp"

#include "json.hpp"

namespace nfe {

using json = nlohmann::json;

json to_json(const Endpoint& e);
json to_json(const MetadataRecord& r);
json to_json(const Alert& a);
Alert alert_from_json(const json& j);
json to_json(const ScanStats& s);
json to_json(const SegmentInfo& s);

/// Wire form of a query:
///   {"terms": [{"field", "value"}], "from_us", "to_us", "facets": [...],
///    "limit", "offset", "keyword"}
/// Throws MalformedRequest for a wrong shape.
Query query_from_json(const json& j);
json to_json(const Query& q);
json to_json(const ResultSet& rs);
json to_json(const std::vector<TimelineBucket>& buckets);
json to_json(const RelationGraph& g);
json to_json(const RenderedContent& c);
/// Error body used by the HTTP API and the SOC wire protocol.
json error_json(const std::exception& e);

/// Reads a number that may arrive as a JSON number or a decimal string.
std::int64_t json_int(const json& j, std::int64_t fallback = 0);

}  // namespace nfe

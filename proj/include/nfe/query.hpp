#pragma once

#include "nfe/store.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace nfe {

/// (cidr, label) ranges loaded from a user-supplied CSV; longest prefix wins.
class GeoIpTable {
public:
    GeoIpTable() = default;
    /// Lines: `cidr,label`. Blank lines and `#` comments are skipped.
    static GeoIpTable load_csv(const std::filesystem::path& path);
    void add(const Cidr& range, std::string label);
    std::optional<std::string> lookup(const IpAddress& ip) const;
    std::size_t size() const { return entries_.size(); }

private:
    std::vector<std::pair<Cidr, std::string>> entries_;
};

struct Term {
    std::string field;
    std::string value;
    bool operator==(const Term&) const = default;
};

struct Query {
    std::vector<Term> terms;
    TimeRange range;
    std::vector<std::string> facet_fields;
    std::size_t limit = 50;
    std::size_t offset = 0;
    /// Case-insensitive payload substring; scans stored payloads only.
    std::optional<std::string> keyword;
};

struct FacetRow {
    std::string value;
    std::uint64_t session_count = 0;
    std::uint64_t packet_count = 0;
    std::uint64_t byte_count = 0;
    bool operator==(const FacetRow&) const = default;
};

struct ResultSet {
    /// Matched records; a session contributes one record per DNS transaction.
    std::uint64_t matched = 0;
    std::uint64_t matched_sessions = 0;
    std::map<std::string, std::vector<FacetRow>> facets;
    std::vector<MetadataRecord> records;  // page [offset, offset+limit)
    std::uint64_t store_version = 0;
    std::int64_t elapsed_us = 0;
    ScanStats stats;
    /// Sessions whose payload was not scanned because of the keyword scan bound.
    std::uint64_t keyword_unscanned = 0;
};

struct TimelineBucket {
    std::int64_t bucket_start_us = 0;
    std::uint64_t session_count = 0;
    std::uint64_t byte_count = 0;
    bool operator==(const TimelineBucket&) const = default;
};

struct GraphNode {
    std::string address;
    std::uint64_t as_source = 0;
    std::uint64_t as_destination = 0;
};

struct GraphEdge {
    std::string src;
    std::string dst;
    std::uint64_t session_count = 0;
    std::uint64_t byte_count = 0;
    std::set<std::string> protocols;
};

struct RelationGraph {
    std::vector<GraphNode> nodes;         // sorted by address
    std::vector<GraphEdge> edges;         // sorted by (src, dst)
    std::vector<std::string> top_sources;       // by as_source desc
    std::vector<std::string> top_destinations;  // by as_destination desc
};

struct ContentArtifact {
    std::string name;
    std::string content_type;
    Bytes body;
};

/// A session rendered "as the user saw it".
struct RenderedContent {
    std::uint64_t session_id = 0;
    /// http, smtp, or dump.
    std::string kind;
    std::vector<ContentArtifact> artifacts;
    std::vector<MetadataRecord> records;  // the attribute sheet
    std::optional<StoredForm> stored_form;
    /// Set when no payload body is available ("NotStored: ...").
    std::optional<std::string> body_error;
};

struct QueryLimits {
    std::size_t max_timeline_buckets = 1'000'000;
    std::size_t keyword_scan_max_sessions = 10'000;
};

/// Read-only investigation engine over a store. Every call sees the records
/// visible when it starts.
class QueryEngine {
public:
    explicit QueryEngine(const MetadataStore& store, const GeoIpTable* geo = nullptr, QueryLimits limits = {});

    /// Validates fields and time range. Throws UnknownField.
    void validate(const Query& q) const;

    std::vector<std::uint64_t> matched_ids(const Query& q, ScanStats* stats = nullptr,
                                           std::uint64_t* unscanned = nullptr) const;
    ResultSet run_query(const Query& q) const;
    Query drill_down(Query q, std::string_view field, std::string_view value) const;
    /// Throws InvalidGranularity when granularity_us <= 0 or the bucket cap is exceeded.
    std::vector<TimelineBucket> timeline(const Query& q, std::int64_t granularity_us) const;
    RelationGraph relation_graph(const Query& q) const;
    /// Throws UnknownSession.
    RenderedContent reconstruct_content(std::uint64_t session_id) const;

    /// Values a record has for `field`, including query-time GeoIP fields.
    std::vector<std::string> values_of(const MetadataRecord& r, std::string_view field) const;

    const MetadataStore& store() const { return store_; }

private:
    bool matches_term(const MetadataRecord& r, const Term& t) const;

    const MetadataStore& store_;
    const GeoIpTable* geo_;
    QueryLimits limits_;
};

/// Rebuilds the session stored as a pcap payload blob.
std::optional<Session> session_from_payload(ByteView pcap_bytes);

}  // namespace nfe

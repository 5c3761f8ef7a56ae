#pragma once

#include "nfe/session.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nfe {

enum class AppProtocol : std::uint8_t { unknown = 0, http, smtp, dns, ftp, sip, ssl };

std::string_view to_string(AppProtocol p);
std::optional<AppProtocol> parse_app_protocol(std::string_view s);

/// Attributes extracted from one session (or one DNS transaction).
struct MetadataRecord {
    std::uint64_t record_id = 0;
    std::uint64_t session_id = 0;
    std::string source_id;
    std::int64_t first_ts_us = 0;
    std::int64_t last_ts_us = 0;
    Endpoint initiator;
    Endpoint responder;
    std::uint8_t ip_proto = 0;
    AppProtocol app_protocol = AppProtocol::unknown;
    /// Multimap of attribute key to value, kept sorted and duplicate-free.
    std::set<std::pair<std::string, std::string>> attributes;
    std::uint64_t bytes_total = 0;
    std::uint64_t packets_total = 0;

    FlowKey key() const { return make_flow_key(initiator, responder, ip_proto); }
    std::uint64_t size_kb() const { return (bytes_total + 1023) / 1024; }

    void add(std::string key, std::string value);
    std::vector<std::string> values(std::string_view key) const;
    std::optional<std::string> first(std::string_view key) const;
    bool has(std::string_view key) const;

    /// Values of any vocabulary field, including synthetic flow-level ones
    /// (ip.src, tp.dst, app.protocol, source_id, size_kb, ...).
    std::vector<std::string> field_values(std::string_view field) const;

    bool operator==(const MetadataRecord&) const = default;
};

/// Fills the flow-level part of a record from a session.
MetadataRecord record_skeleton(const Session& s);

enum class FieldKind : std::uint8_t { string, ip, port, integer, enumeration };

struct FieldSpec {
    std::string name;
    FieldKind kind = FieldKind::string;
    std::string description;
    /// False for high-cardinality numeric fields that are filtered after
    /// lookup instead of being inverted-indexed.
    bool indexed = true;
    /// Derived from the flow, not stored in the attribute multimap.
    bool synthetic = false;
    /// Joined in at query time (GeoIP); neither stored nor indexed.
    bool query_time = false;
};

/// The registered attribute-key vocabulary. Parsers register the keys they
/// emit; records never carry unregistered keys.
class Vocabulary {
public:
    static Vocabulary& instance();

    void register_field(FieldSpec spec);
    const FieldSpec* find(std::string_view name) const;
    bool contains(std::string_view name) const { return find(name) != nullptr; }
    bool is_indexed(std::string_view name) const;
    std::vector<FieldSpec> fields() const;

    /// Throws UnknownField.
    const FieldSpec& require(std::string_view name, const std::string& context = {}) const;

private:
    Vocabulary();
    std::map<std::string, FieldSpec, std::less<>> fields_;
};

std::string_view to_string(FieldKind k);

/// Canonical text for a value of the given field: addresses normalized,
/// ports and integers without leading zeros, protocols lowercased.
std::string normalize_value(const FieldSpec& field, std::string_view value);

}  // namespace nfe

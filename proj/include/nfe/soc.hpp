#pragma once

#include "nfe/alerts.hpp"
#include "nfe/json_codec.hpp"
#include "nfe/query.hpp"

#include <istream>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace nfe {

/// 5-tuple scope of an external alert; an empty field matches anything.
struct SocScope {
    std::optional<IpAddress> src;
    std::optional<IpAddress> dst;
    std::optional<std::uint16_t> sport;
    std::optional<std::uint16_t> dport;
    std::optional<std::uint8_t> proto;
    bool operator==(const SocScope&) const = default;
};

struct SocAlert {
    std::string soc_id;
    std::int64_t ts_us = 0;
    Severity severity = Severity::warn;
    std::string signature_id;
    SocScope scope;
    std::string message;
    /// The feed line exactly as received.
    std::string raw;
};

/// Parses one feed line. Fields: id, ts (ISO-8601 or epoch microseconds),
/// severity, sig, src, dst, sport, dport, proto, msg. On rejection returns
/// nullopt and sets `reason`.
std::optional<SocAlert> parse_soc_line(std::string_view line, std::string& reason);

/// ISO-8601 (`2024-05-01T12:00:00Z`, optional fraction and +hh:mm offset)
/// to microseconds since the epoch.
std::optional<std::int64_t> parse_iso8601_us(std::string_view text);
/// UTC `YYYY-MM-DDThh:mm:ss.ffffffZ`.
std::string format_iso8601_us(std::int64_t ts_us);

/// True if the record's 5-tuple satisfies the scope in either orientation.
bool scope_matches(const SocScope& scope, const MetadataRecord& r);

struct RejectedLine {
    std::size_t line = 0;
    std::string reason;
};

struct ImportResult {
    std::size_t accepted = 0;
    std::size_t duplicates = 0;
    std::vector<RejectedLine> rejected;
};

/// Imports SOC alerts, correlates them with stored sessions and answers
/// wire requests. Thread-safe for concurrent correlate/answer calls.
class SocBridge {
public:
    SocBridge(const QueryEngine& query, AlertStore& alerts, std::int64_t slack_us = 30'000'000);

    ImportResult import_alerts(std::istream& feed);
    ImportResult import_lines(const std::vector<std::string>& lines);

    /// Session ids whose 5-tuple matches the scope and whose time span
    /// meets [ts - slack, ts + slack]. Driven by index lookups.
    std::vector<std::uint64_t> correlate(const SocAlert& alert, std::optional<std::int64_t> slack_us = {},
                                         ScanStats* stats = nullptr) const;
    /// Correlates a stored SOC alert by engine alert id or SOC id.
    std::vector<std::uint64_t> correlate_stored(const std::string& id) const;

    /// Wire entry point. Request ops: "query" (default) and "correlate".
    /// Returns the response document; errors come back as error bodies.
    std::string answer_query(std::string_view request) const;
    json answer(const json& request) const;

    std::int64_t slack_us() const noexcept { return slack_us_; }

private:
    std::optional<SocAlert> stored(const std::string& id) const;

    const QueryEngine& query_;
    AlertStore& alerts_;
    std::int64_t slack_us_;
    mutable std::mutex mu_;
    std::set<std::string> known_ids_;
};

}  // namespace nfe

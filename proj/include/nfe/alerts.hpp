#pragma once

#include "nfe/session.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace nfe {

enum class AlertKind : std::uint8_t { anomaly, signature, rule, soc };
enum class Severity : std::uint8_t { info, warn, critical };

std::string_view to_string(AlertKind k);
std::string_view to_string(Severity s);
std::optional<AlertKind> parse_alert_kind(std::string_view s);
std::optional<Severity> parse_severity(std::string_view s);

struct Alert {
    std::uint64_t alert_id = 0;
    AlertKind kind = AlertKind::rule;
    Severity severity = Severity::warn;
    std::int64_t ts_us = 0;
    /// Host address, "aggregate", a flow key, or a sample hash.
    std::string entity;
    std::string message;
    std::vector<std::uint64_t> session_ids;
    /// Values needed to re-verify the trigger (metric, observed, mean,
    /// stddev, k, threshold, rule_id, sha256, ...). Numbers are written with
    /// round-trip precision.
    std::map<std::string, std::string> evidence;

    bool operator==(const Alert&) const = default;
};

/// Shortest text that parses back to the same double.
std::string format_double(double v);

/// Append-only alert log with in-memory index and change notification.
/// Thread-safe.
class AlertStore {
public:
    /// `path` empty keeps alerts in memory only. `mirror` is an optional
    /// second JSON-lines log (the --alert-log file).
    explicit AlertStore(std::filesystem::path path = {}, std::filesystem::path mirror = {});

    std::uint64_t raise(Alert alert);
    std::vector<Alert> list(std::optional<AlertKind> kind = std::nullopt, std::uint64_t after_id = 0,
                            std::size_t limit = SIZE_MAX) const;
    std::size_t size() const;
    std::uint64_t last_id() const;

    /// Blocks until an alert newer than `after_id` exists or the timeout
    /// passes; returns the newest id.
    std::uint64_t wait_for_newer(std::uint64_t after_id, std::chrono::milliseconds timeout) const;

private:
    std::filesystem::path path_;
    std::filesystem::path mirror_;
    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    std::vector<Alert> alerts_;
};

}  // namespace nfe

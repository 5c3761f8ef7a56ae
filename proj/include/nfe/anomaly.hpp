#pragma once

#include "nfe/alerts.hpp"
#include "nfe/metadata.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <list>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace nfe {

enum class Metric : std::uint8_t { bytes = 0, packets, flows, peers };
inline constexpr std::size_t kMetricCount = 4;
inline constexpr std::array<Metric, kMetricCount> kAllMetrics = {Metric::bytes, Metric::packets, Metric::flows,
                                                                 Metric::peers};

std::string_view to_string(Metric m);
std::optional<Metric> parse_metric(std::string_view s);

inline constexpr std::string_view kAggregateEntity = "aggregate";

/// Counters for one entity over one aligned window.
struct WindowStats {
    std::string entity;
    std::int64_t window_start_us = 0;
    std::int64_t window_us = 0;
    std::uint64_t bytes = 0;
    std::uint64_t packets = 0;
    std::uint64_t flows = 0;
    std::set<std::string> peers;
    std::vector<std::uint64_t> session_ids;

    std::uint64_t distinct_peers() const { return peers.size(); }
    double value(Metric m) const;
};

/// Numerically stable running mean and population variance.
class Welford {
public:
    void update(double x);
    std::uint64_t count() const noexcept { return n_; }
    double mean() const noexcept { return mean_; }
    double variance() const noexcept { return n_ == 0 ? 0.0 : m2_ / static_cast<double>(n_); }
    double stddev() const;

private:
    std::uint64_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

struct BaselineProfile {
    std::string entity;
    std::array<Welford, kMetricCount> metrics;
    std::uint64_t windows() const { return metrics[0].count(); }
    const Welford& of(Metric m) const { return metrics[static_cast<std::size_t>(m)]; }
};

struct AnomalyConfig {
    std::int64_t window_us = 60'000'000;
    double k_sigma = 3.0;
    std::uint64_t warmup_windows = 10;
    /// Deviation alerts on the bytes metric need at least this many bytes.
    double min_abs_floor_bytes = 10 * 1024;
    std::array<std::optional<double>, kMetricCount> capacity{};
    /// Track per-host windows in addition to the aggregate.
    bool track_hosts = true;
    /// Per-host profiles kept; least recently updated hosts are evicted.
    std::size_t max_entities = 100'000;
    /// A window closes once the watermark passes its end by this much, so
    /// sessions completing late still land in their window.
    std::int64_t lateness_us = 120'000'000;
};

/// Folds a completed window into a profile.
void update_baseline(BaselineProfile& profile, const WindowStats& window);

/// Deviation and capacity checks for one closed window against the profile
/// as it stood before the window.
std::vector<Alert> detect(const WindowStats& window, const BaselineProfile& profile, const AnomalyConfig& config);

struct AnomalyStats {
    std::uint64_t records = 0;
    std::uint64_t windows_closed = 0;
    std::uint64_t late_records = 0;
    std::uint64_t evictions = 0;
    std::uint64_t alerts = 0;
};

/// Windowed baselining over the record stream. Thread-safe; alerts are
/// handed to the sink in (window_start, entity) order within one close.
class AnomalyDetector {
public:
    using AlertSink = std::function<void(Alert&&)>;

    explicit AnomalyDetector(AnomalyConfig config, AlertSink sink = {});

    /// Counts a record into the windows of its first_ts (aggregate, and
    /// both endpoints when host tracking is on).
    void accumulate(const MetadataRecord& record);
    /// Closes every window that ended more than lateness before `watermark_us`.
    void advance(std::int64_t watermark_us);
    /// Closes every open window.
    void flush();

    std::optional<BaselineProfile> profile(const std::string& entity) const;
    /// Open (not yet closed) window for an entity, for inspection.
    std::optional<WindowStats> open_window(const std::string& entity, std::int64_t window_start_us) const;
    AnomalyStats stats() const;
    const AnomalyConfig& config() const noexcept { return config_; }

private:
    void count_into(const std::string& entity, const std::string& peer_a, const std::string& peer_b,
                    std::int64_t start, const MetadataRecord& r);
    void close_until(std::int64_t limit_start, bool all);
    BaselineProfile& profile_for(const std::string& entity);

    AnomalyConfig config_;
    AlertSink sink_;
    mutable std::mutex mu_;
    std::map<std::pair<std::int64_t, std::string>, WindowStats> open_;
    std::unordered_map<std::string, BaselineProfile> profiles_;
    std::list<std::string> lru_;  // front = most recent host
    std::unordered_map<std::string, std::list<std::string>::iterator> lru_pos_;
    std::int64_t closed_before_ = INT64_MIN;
    AnomalyStats stats_;
};

}  // namespace nfe

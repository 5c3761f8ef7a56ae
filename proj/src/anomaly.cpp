#include "nfe/anomaly.hpp"

#include "nfe/errors.hpp"

#include <cmath>
#include <iostream>

namespace nfe {

std::string_view to_string(Metric m) {
    switch (m) {
        case Metric::bytes: return "bytes";
        case Metric::packets: return "packets";
        case Metric::flows: return "flows";
        case Metric::peers: return "peers";
    }
    return "?";
}

std::optional<Metric> parse_metric(std::string_view s) {
    for (auto m : kAllMetrics) {
        if (to_string(m) == s) return m;
    }
    if (s == "distinct_peers") return Metric::peers;
    return std::nullopt;
}

double WindowStats::value(Metric m) const {
    switch (m) {
        case Metric::bytes: return static_cast<double>(bytes);
        case Metric::packets: return static_cast<double>(packets);
        case Metric::flows: return static_cast<double>(flows);
        case Metric::peers: return static_cast<double>(peers.size());
    }
    return 0;
}

void Welford::update(double x) {
    ++n_;
    double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
}

double Welford::stddev() const {
    // Rounding can leave m2 a hair below zero for constant input.
    return std::sqrt(std::max(0.0, variance()));
}

void update_baseline(BaselineProfile& profile, const WindowStats& window) {
    for (auto m : kAllMetrics) profile.metrics[static_cast<std::size_t>(m)].update(window.value(m));
}

std::vector<Alert> detect(const WindowStats& w, const BaselineProfile& profile, const AnomalyConfig& cfg) {
    std::vector<Alert> out;
    auto base_alert = [&](Metric m, double observed) {
        Alert a;
        a.kind = AlertKind::anomaly;
        a.ts_us = w.window_start_us;
        a.entity = w.entity;
        a.session_ids = w.session_ids;
        a.evidence["metric"] = std::string(to_string(m));
        a.evidence["observed"] = format_double(observed);
        a.evidence["window_start_us"] = std::to_string(w.window_start_us);
        a.evidence["window_us"] = std::to_string(w.window_us);
        return a;
    };
    for (auto m : kAllMetrics) {
        const double x = w.value(m);
        const auto& cap = cfg.capacity[static_cast<std::size_t>(m)];
        if (cap && x > *cap) {
            auto a = base_alert(m, x);
            a.severity = Severity::critical;
            a.message = std::string(to_string(m)) + " " + format_double(x) + " exceeds capacity " + format_double(*cap);
            a.evidence["check"] = "capacity";
            a.evidence["threshold"] = format_double(*cap);
            out.push_back(std::move(a));
        }
        const auto& st = profile.of(m);
        if (st.count() < cfg.warmup_windows) continue;
        const double mu = st.mean();
        const double sigma = st.stddev();
        const double threshold = mu + cfg.k_sigma * sigma;
        const double floor = m == Metric::bytes ? cfg.min_abs_floor_bytes : 0.0;
        if (x > threshold && x > floor) {
            auto a = base_alert(m, x);
            a.severity = Severity::warn;
            a.message = std::string(to_string(m)) + " " + format_double(x) + " above baseline " + format_double(mu) +
                        " + " + format_double(cfg.k_sigma) + " sigma";
            a.evidence["check"] = "deviation";
            a.evidence["mean"] = format_double(mu);
            a.evidence["stddev"] = format_double(sigma);
            a.evidence["k"] = format_double(cfg.k_sigma);
            a.evidence["threshold"] = format_double(threshold);
            a.evidence["floor"] = format_double(floor);
            a.evidence["windows"] = std::to_string(st.count());
            out.push_back(std::move(a));
        }
    }
    return out;
}

AnomalyDetector::AnomalyDetector(AnomalyConfig config, AlertSink sink) : config_(config), sink_(std::move(sink)) {
    if (config_.window_us <= 0) throw ConfigInvalid("anomaly window must be positive");
}

namespace {
std::int64_t align(std::int64_t ts, std::int64_t w) {
    auto q = ts / w;
    if (ts % w != 0 && ts < 0) --q;
    return q * w;
}
}  // namespace

void AnomalyDetector::count_into(const std::string& entity, const std::string& peer_a, const std::string& peer_b,
                                 std::int64_t start, const MetadataRecord& r) {
    auto& w = open_[{start, entity}];
    if (w.entity.empty()) {
        w.entity = entity;
        w.window_start_us = start;
        w.window_us = config_.window_us;
    }
    w.bytes += r.bytes_total;
    w.packets += r.packets_total;
    w.flows += 1;
    if (!peer_a.empty()) w.peers.insert(peer_a);
    if (!peer_b.empty()) w.peers.insert(peer_b);
    if (w.session_ids.size() < 256 &&
        (w.session_ids.empty() || w.session_ids.back() != r.session_id)) {
        w.session_ids.push_back(r.session_id);
    }
}

void AnomalyDetector::accumulate(const MetadataRecord& r) {
    std::lock_guard lock(mu_);
    ++stats_.records;
    const auto start = align(r.first_ts_us, config_.window_us);
    if (start < closed_before_) {
        // Window already judged; counting now would rewrite history.
        ++stats_.late_records;
        return;
    }
    const auto a = r.initiator.ip.to_string();
    const auto b = r.responder.ip.to_string();
    // Aggregate peers are the distinct hosts seen in the window.
    count_into(std::string(kAggregateEntity), a, b, start, r);
    if (config_.track_hosts) {
        count_into(a, b, {}, start, r);
        if (b != a) count_into(b, a, {}, start, r);
    }
}

BaselineProfile& AnomalyDetector::profile_for(const std::string& entity) {
    auto it = profiles_.find(entity);
    if (it == profiles_.end()) {
        it = profiles_.emplace(entity, BaselineProfile{}).first;
        it->second.entity = entity;
    }
    if (entity != kAggregateEntity) {
        if (auto p = lru_pos_.find(entity); p != lru_pos_.end()) lru_.erase(p->second);
        lru_.push_front(entity);
        lru_pos_[entity] = lru_.begin();
        while (lru_.size() > config_.max_entities) {
            auto victim = lru_.back();
            lru_.pop_back();
            lru_pos_.erase(victim);
            profiles_.erase(victim);
            ++stats_.evictions;
            std::clog << "anomaly: evicted baseline for " << victim << "\n";
        }
        it = profiles_.find(entity);
    }
    return it->second;
}

void AnomalyDetector::close_until(std::int64_t limit_start, bool all) {
    std::vector<Alert> raised;
    while (!open_.empty()) {
        auto it = open_.begin();
        if (!all && it->first.first >= limit_start) break;
        auto w = std::move(it->second);
        open_.erase(it);
        auto& prof = profile_for(w.entity);
        auto alerts = detect(w, prof, config_);
        update_baseline(prof, w);
        ++stats_.windows_closed;
        closed_before_ = std::max(closed_before_, w.window_start_us + config_.window_us);
        for (auto& a : alerts) raised.push_back(std::move(a));
    }
    stats_.alerts += raised.size();
    if (sink_) {
        for (auto& a : raised) sink_(std::move(a));
    }
}

void AnomalyDetector::advance(std::int64_t watermark_us) {
    std::lock_guard lock(mu_);
    if (watermark_us == INT64_MIN) return;
    // Windows whose end + lateness <= watermark are final.
    auto limit = watermark_us - config_.lateness_us - config_.window_us;
    if (limit < closed_before_ - config_.window_us) return;
    close_until(limit + 1, false);
}

void AnomalyDetector::flush() {
    std::lock_guard lock(mu_);
    close_until(0, true);
}

std::optional<BaselineProfile> AnomalyDetector::profile(const std::string& entity) const {
    std::lock_guard lock(mu_);
    auto it = profiles_.find(entity);
    if (it == profiles_.end()) return std::nullopt;
    return it->second;
}

std::optional<WindowStats> AnomalyDetector::open_window(const std::string& entity, std::int64_t start) const {
    std::lock_guard lock(mu_);
    auto it = open_.find({start, entity});
    if (it == open_.end()) return std::nullopt;
    return it->second;
}

AnomalyStats AnomalyDetector::stats() const {
    std::lock_guard lock(mu_);
    return stats_;
}

}  // namespace nfe

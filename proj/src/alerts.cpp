#include "nfe/alerts.hpp"

#include "nfe/errors.hpp"
#include "nfe/json_codec.hpp"

#include <charconv>
#include <fstream>

namespace nfe {

std::string_view to_string(AlertKind k) {
    switch (k) {
        case AlertKind::anomaly: return "anomaly";
        case AlertKind::signature: return "signature";
        case AlertKind::rule: return "rule";
        case AlertKind::soc: return "soc";
    }
    return "rule";
}

std::string_view to_string(Severity s) {
    switch (s) {
        case Severity::info: return "info";
        case Severity::warn: return "warn";
        case Severity::critical: return "critical";
    }
    return "warn";
}

std::optional<AlertKind> parse_alert_kind(std::string_view s) {
    for (auto k : {AlertKind::anomaly, AlertKind::signature, AlertKind::rule, AlertKind::soc}) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

std::optional<Severity> parse_severity(std::string_view s) {
    auto l = to_lower(s);
    for (auto v : {Severity::info, Severity::warn, Severity::critical}) {
        if (to_string(v) == l) return v;
    }
    if (l == "warning" || l == "medium") return Severity::warn;
    if (l == "high") return Severity::critical;
    if (l == "low") return Severity::info;
    return std::nullopt;
}

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

AlertStore::AlertStore(std::filesystem::path path, std::filesystem::path mirror)
    : path_(std::move(path)), mirror_(std::move(mirror)) {
    if (path_.empty() || !std::filesystem::exists(path_)) return;
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        try {
            alerts_.push_back(alert_from_json(json::parse(line)));
        } catch (const json::exception&) {
            break;  // torn last line after a crash
        }
    }
}

std::uint64_t AlertStore::raise(Alert alert) {
    std::lock_guard lock(mu_);
    alert.alert_id = alerts_.empty() ? 1 : alerts_.back().alert_id + 1;
    auto line = to_json(alert).dump() + "\n";
    for (const auto& p : {path_, mirror_}) {
        if (p.empty()) continue;
        std::ofstream out(p, std::ios::app);
        if (!out) throw IoError("cannot append to alert log " + p.string());
        out << line;
    }
    alerts_.push_back(std::move(alert));
    cv_.notify_all();
    return alerts_.back().alert_id;
}

std::vector<Alert> AlertStore::list(std::optional<AlertKind> kind, std::uint64_t after_id, std::size_t limit) const {
    std::lock_guard lock(mu_);
    std::vector<Alert> out;
    for (const auto& a : alerts_) {
        if (a.alert_id <= after_id || (kind && a.kind != *kind)) continue;
        out.push_back(a);
        if (out.size() >= limit) break;
    }
    return out;
}

std::size_t AlertStore::size() const {
    std::lock_guard lock(mu_);
    return alerts_.size();
}

std::uint64_t AlertStore::last_id() const {
    std::lock_guard lock(mu_);
    return alerts_.empty() ? 0 : alerts_.back().alert_id;
}

std::uint64_t AlertStore::wait_for_newer(std::uint64_t after_id, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return !alerts_.empty() && alerts_.back().alert_id > after_id; });
    return alerts_.empty() ? 0 : alerts_.back().alert_id;
}

}  // namespace nfe

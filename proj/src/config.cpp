#include "nfe/config.hpp"

#include "nfe/errors.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace nfe {

namespace {

struct Value {
    std::string text;
    bool quoted = false;
};

class Parser {
public:
    Parser(std::string_view text, std::filesystem::path base) : text_(text), base_(std::move(base)) {}

    EngineConfig run() {
        EngineConfig c;
        std::istringstream in{std::string(text_)};
        std::string raw;
        std::string section;
        std::set<std::string> seen;
        while (std::getline(in, raw)) {
            ++line_;
            auto v = trim(strip_comment(raw));
            if (v.empty()) continue;
            if (v.front() == '[') {
                if (v.back() != ']') fail("unterminated section header");
                section = std::string(trim(v.substr(1, v.size() - 2)));
                static const std::set<std::string> known = {"session", "index", "anomaly", "malware",
                                                            "geoip",   "soc",   "sources"};
                if (!known.count(section)) fail("unknown section [" + section + "]");
                continue;
            }
            auto eq = v.find('=');
            if (eq == std::string_view::npos) fail("expected key = value");
            std::string key(trim(v.substr(0, eq)));
            if (key.empty()) fail("empty key");
            Value val = parse_value(trim(v.substr(eq + 1)));
            auto full = section.empty() ? key : section + "." + key;
            if (!seen.insert(full).second) fail("duplicate key " + full);
            apply(c, section, key, val);
        }
        return c;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigInvalid("config line " + std::to_string(line_) + ": " + msg);
    }

    static std::string_view strip_comment(std::string_view s) {
        bool in_q = false;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '"') in_q = !in_q;
            else if (s[i] == '#' && !in_q) return s.substr(0, i);
        }
        return s;
    }

    Value parse_value(std::string_view v) const {
        if (v.empty()) fail("missing value");
        if (v.front() == '"') {
            if (v.size() < 2 || v.back() != '"') fail("unterminated string");
            std::string out;
            for (std::size_t i = 1; i + 1 < v.size(); ++i) {
                if (v[i] == '\\' && i + 2 < v.size()) {
                    char n = v[++i];
                    out.push_back(n == 'n' ? '\n' : n == 't' ? '\t' : n);
                } else {
                    out.push_back(v[i]);
                }
            }
            return {out, true};
        }
        return {std::string(v), false};
    }

    std::string str(const Value& v) const {
        if (!v.quoted) fail("expected a quoted string");
        return v.text;
    }
    std::filesystem::path path(const Value& v) const {
        std::filesystem::path p = str(v);
        if (p.empty() || p.is_absolute() || base_.empty()) return p;
        return base_ / p;
    }
    std::int64_t integer(const Value& v) const {
        std::int64_t out = 0;
        std::string_view t = v.text;
        auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
        if (v.quoted || ec != std::errc() || p != t.data() + t.size()) fail("expected an integer, got '" + v.text + "'");
        return out;
    }
    std::int64_t non_negative(const Value& v) const {
        auto n = integer(v);
        if (n < 0) fail("value must not be negative");
        return n;
    }
    double number(const Value& v) const {
        if (v.quoted) fail("expected a number");
        try {
            std::size_t used = 0;
            double d = std::stod(v.text, &used);
            if (used != v.text.size()) fail("expected a number, got '" + v.text + "'");
            return d;
        } catch (const std::logic_error&) {
            fail("expected a number, got '" + v.text + "'");
        }
    }
    bool boolean(const Value& v) const {
        if (!v.quoted && v.text == "true") return true;
        if (!v.quoted && v.text == "false") return false;
        fail("expected true or false");
    }

    void apply(EngineConfig& c, const std::string& sec, const std::string& key, const Value& v) {
        constexpr std::int64_t S = 1'000'000;
        auto unknown = [&] { fail("unknown key '" + key + "'" + (sec.empty() ? "" : " in [" + sec + "]")); };
        if (sec.empty()) {
            if (key == "store") c.store = path(v);
            else if (key == "rules") c.rules = path(v);
            else if (key == "default_action") {
                auto a = parse_action(str(v));
                if (!a) fail("unknown action '" + v.text + "'");
                c.default_action = *a;
            } else if (key == "api_bind") c.api_bind = str(v);
            else if (key == "alert_log") c.alert_log = path(v);
            else if (key == "ui_dir") c.ui_dir = path(v);
            else unknown();
        } else if (sec == "session") {
            if (key == "tcp_idle_timeout_s") c.session.tcp_idle_timeout_us = non_negative(v) * S;
            else if (key == "udp_idle_timeout_s") c.session.udp_idle_timeout_us = non_negative(v) * S;
            else if (key == "max_stream_bytes") c.session.max_stream_bytes = static_cast<std::uint64_t>(non_negative(v));
            else if (key == "max_sessions") c.session.max_sessions = static_cast<std::size_t>(non_negative(v));
            else if (key == "close_linger_ms") c.session.close_linger_us = non_negative(v) * 1000;
            else unknown();
        } else if (sec == "index") {
            if (key == "segment_max_records") c.index.segment_max_records = static_cast<std::uint64_t>(non_negative(v));
            else if (key == "segment_max_span_s") c.index.segment_max_span_us = non_negative(v) * S;
            else if (key == "max_bytes") c.index.max_bytes = static_cast<std::uint64_t>(non_negative(v));
            else if (key == "sync") c.index.sync = boolean(v);
            else unknown();
        } else if (sec == "anomaly") {
            auto& a = c.anomaly;
            if (key == "window_s") a.window_us = non_negative(v) * S;
            else if (key == "k_sigma") a.k_sigma = number(v);
            else if (key == "warmup_windows") a.warmup_windows = static_cast<std::uint64_t>(non_negative(v));
            else if (key == "min_abs_floor_bytes") a.min_abs_floor_bytes = number(v);
            else if (key == "track_hosts") a.track_hosts = boolean(v);
            else if (key == "max_entities") a.max_entities = static_cast<std::size_t>(non_negative(v));
            else if (key == "lateness_s") a.lateness_us = non_negative(v) * S;
            else if (key.starts_with("capacity_")) {
                auto m = parse_metric(key.substr(9));
                if (!m) unknown();
                a.capacity[static_cast<std::size_t>(*m)] = number(v);
            } else unknown();
        } else if (sec == "malware") {
            auto& m = c.malware;
            if (key == "signatures") m.signatures = path(v);
            else if (key == "sandbox_manifest") m.sandbox_manifest = path(v);
            else if (key == "tau_pred") m.tau_pred = number(v);
            else if (key == "tau_score") m.tau_score = number(v);
            else if (key == "t_cluster") m.t_cluster = number(v);
            else if (key == "weight_histogram") m.weights.histogram = number(v);
            else if (key == "weight_ngrams") m.weights.ngrams = number(v);
            else if (key == "ngram_cap") m.ngram_cap = static_cast<std::size_t>(non_negative(v));
            else if (key == "sandbox_budget_ms") m.sandbox_budget = std::chrono::milliseconds(non_negative(v));
            else if (key == "retry_max") m.retry_max = static_cast<std::uint32_t>(non_negative(v));
            else unknown();
        } else if (sec == "geoip") {
            if (key == "csv") c.geoip_csv = path(v);
            else unknown();
        } else if (sec == "soc") {
            if (key == "slack_s") c.soc_slack_us = non_negative(v) * S;
            else unknown();
        } else if (sec == "sources") {
            c.sources.push_back({key, path(v)});
        }
    }

    std::string_view text_;
    std::filesystem::path base_;
    std::size_t line_ = 0;
};

}  // namespace

void EngineConfig::validate() const {
    if (store.empty()) throw ConfigInvalid("store path is required");
    if (session.tcp_idle_timeout_us <= 0 || session.udp_idle_timeout_us <= 0) {
        throw ConfigInvalid("idle timeouts must be positive");
    }
    if (index.segment_max_records == 0 || index.segment_max_span_us <= 0) {
        throw ConfigInvalid("segment caps must be positive");
    }
    if (anomaly.window_us <= 0) throw ConfigInvalid("anomaly window_s must be positive");
    if (anomaly.k_sigma < 0) throw ConfigInvalid("k_sigma must not be negative");
    for (double t : {malware.tau_pred, malware.tau_score, malware.t_cluster}) {
        if (t < 0 || t > 1) throw ConfigInvalid("malware thresholds must lie in [0, 1]");
    }
    if (malware.weights.histogram < 0 || malware.weights.ngrams < 0 ||
        malware.weights.histogram + malware.weights.ngrams <= 0) {
        throw ConfigInvalid("similarity weights must be non-negative with a positive sum");
    }
    if (malware.retry_max == 0) throw ConfigInvalid("retry_max must be at least 1");
    std::set<std::string> ids;
    for (const auto& s : sources) {
        if (s.source_id.empty()) throw ConfigInvalid("source id must not be empty");
        if (!ids.insert(s.source_id).second) throw ConfigInvalid("duplicate source id " + s.source_id);
    }
    auto colon = api_bind.rfind(':');
    if (colon == std::string::npos || colon == 0) throw ConfigInvalid("api_bind must be host:port");
    int port = 0;
    auto ps = std::string_view(api_bind).substr(colon + 1);
    auto [p, ec] = std::from_chars(ps.data(), ps.data() + ps.size(), port);
    if (ec != std::errc() || p != ps.data() + ps.size() || port < 0 || port > 65535) {
        throw ConfigInvalid("api_bind port is invalid");
    }
}

EngineConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
    return Parser(text, base_dir).run();
}

EngineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigInvalid("cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    auto c = parse_config(ss.str(), path.parent_path());
    c.validate();
    return c;
}

}  // namespace nfe

#include "nfe/soc.hpp"

#include "nfe/errors.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <limits>

namespace nfe {

namespace {

bool all_digits(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

template <typename T>
bool parse_num(std::string_view s, T& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
}

std::int64_t sat_add(std::int64_t a, std::int64_t b) {
    std::int64_t r;
    if (__builtin_add_overflow(a, b, &r)) return b > 0 ? INT64_MAX : INT64_MIN;
    return r;
}

bool is_wildcard(const json& j) {
    return j.is_null() || (j.is_string() && (j.get_ref<const std::string&>().empty() || j.get_ref<const std::string&>() == "*"));
}

std::optional<std::string> scalar_text(const json& j) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_number_integer() || j.is_number_unsigned()) return std::to_string(j.get<std::int64_t>());
    return std::nullopt;
}

std::string scope_text(const SocScope& s) {
    auto ep = [](const std::optional<IpAddress>& ip, const std::optional<std::uint16_t>& port) {
        std::string t = ip ? ip->to_string() : "*";
        return t + ":" + (port ? std::to_string(*port) : "*");
    };
    return ep(s.src, s.sport) + " -> " + ep(s.dst, s.dport);
}

std::int64_t now_us() {
    return std::chrono::duration_cast<std::chrono::microseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

}  // namespace

std::string format_iso8601_us(std::int64_t ts_us) {
    auto secs = ts_us / 1'000'000;
    auto frac = ts_us % 1'000'000;
    if (frac < 0) {
        frac += 1'000'000;
        --secs;
    }
    std::time_t t = static_cast<std::time_t>(secs);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[48];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%06dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                  tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(frac));
    return buf;
}

std::optional<std::int64_t> parse_iso8601_us(std::string_view t) {
    // YYYY-MM-DDTHH:MM:SS[.ffffff](Z|+hh:mm|-hh:mm)
    if (t.size() < 19 || t[4] != '-' || t[7] != '-' || (t[10] != 'T' && t[10] != 't' && t[10] != ' ') ||
        t[13] != ':' || t[16] != ':') {
        return std::nullopt;
    }
    int y, mo, d, h, mi, s;
    if (!parse_num(t.substr(0, 4), y) || !parse_num(t.substr(5, 2), mo) || !parse_num(t.substr(8, 2), d) ||
        !parse_num(t.substr(11, 2), h) || !parse_num(t.substr(14, 2), mi) || !parse_num(t.substr(17, 2), s)) {
        return std::nullopt;
    }
    using namespace std::chrono;
    year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || s > 60) return std::nullopt;
    std::size_t pos = 19;
    std::int64_t frac_us = 0;
    if (pos < t.size() && t[pos] == '.') {
        ++pos;
        int digits = 0;
        while (pos < t.size() && t[pos] >= '0' && t[pos] <= '9') {
            if (digits < 6) frac_us = frac_us * 10 + (t[pos] - '0');
            ++digits;
            ++pos;
        }
        if (digits == 0) return std::nullopt;
        for (int i = std::min(digits, 6); i < 6; ++i) frac_us *= 10;
    }
    std::int64_t offset_s = 0;
    if (pos < t.size()) {
        if (t[pos] == 'Z' || t[pos] == 'z') {
            ++pos;
        } else if (t[pos] == '+' || t[pos] == '-') {
            int oh, om;
            if (t.size() != pos + 6 || t[pos + 3] != ':' || !parse_num(t.substr(pos + 1, 2), oh) ||
                !parse_num(t.substr(pos + 4, 2), om)) {
                return std::nullopt;
            }
            offset_s = (oh * 3600 + om * 60) * (t[pos] == '+' ? 1 : -1);
            pos += 6;
        } else {
            return std::nullopt;
        }
    }
    if (pos != t.size()) return std::nullopt;
    auto days = sys_days(ymd).time_since_epoch().count();
    std::int64_t secs = static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 + s - offset_s;
    return secs * 1'000'000 + frac_us;
}

std::optional<SocAlert> parse_soc_line(std::string_view line, std::string& reason) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        reason = "invalid JSON at byte " + std::to_string(e.byte);
        return std::nullopt;
    }
    if (!j.is_object()) {
        reason = "not a JSON object";
        return std::nullopt;
    }
    SocAlert a;
    a.raw = std::string(line);
    if (!j.contains("id") || !scalar_text(j["id"]) || scalar_text(j["id"])->empty()) {
        reason = "missing id";
        return std::nullopt;
    }
    a.soc_id = *scalar_text(j["id"]);
    if (!j.contains("ts") || j["ts"].is_null()) {
        reason = "missing ts";
        return std::nullopt;
    }
    const auto& ts = j["ts"];
    if (ts.is_number_integer() || ts.is_number_unsigned()) {
        a.ts_us = ts.get<std::int64_t>();
    } else if (ts.is_string() && all_digits(ts.get_ref<const std::string&>())) {
        if (!parse_num(ts.get_ref<const std::string&>(), a.ts_us)) {
            reason = "unparseable ts";
            return std::nullopt;
        }
    } else if (ts.is_string()) {
        auto v = parse_iso8601_us(ts.get_ref<const std::string&>());
        if (!v) {
            reason = "unparseable ts";
            return std::nullopt;
        }
        a.ts_us = *v;
    } else {
        reason = "unparseable ts";
        return std::nullopt;
    }
    if (j.contains("severity") && !j["severity"].is_null()) {
        auto sv = scalar_text(j["severity"]);
        auto parsed = sv ? parse_severity(to_lower(*sv)) : std::nullopt;
        if (!parsed) {
            reason = "unknown severity";
            return std::nullopt;
        }
        a.severity = *parsed;
    }
    if (j.contains("sig") && !j["sig"].is_null()) a.signature_id = scalar_text(j["sig"]).value_or(j["sig"].dump());
    if (j.contains("msg") && j["msg"].is_string()) a.message = j["msg"].get<std::string>();
    for (const char* key : {"src", "dst"}) {
        if (!j.contains(key) || is_wildcard(j[key])) continue;
        auto text = scalar_text(j[key]);
        auto ip = text ? IpAddress::parse(*text) : std::nullopt;
        if (!ip) {
            reason = std::string("bad ") + key + " address";
            return std::nullopt;
        }
        (std::string_view(key) == "src" ? a.scope.src : a.scope.dst) = *ip;
    }
    for (const char* key : {"sport", "dport"}) {
        if (!j.contains(key) || is_wildcard(j[key])) continue;
        auto text = scalar_text(j[key]);
        unsigned v = 0;
        if (!text || !parse_num(*text, v) || v > 65535) {
            reason = std::string("bad ") + key;
            return std::nullopt;
        }
        (std::string_view(key) == "sport" ? a.scope.sport : a.scope.dport) = static_cast<std::uint16_t>(v);
    }
    if (j.contains("proto") && !is_wildcard(j["proto"])) {
        auto text = scalar_text(j["proto"]);
        unsigned v = 0;
        if (text && iequals(*text, "tcp")) v = 6;
        else if (text && iequals(*text, "udp")) v = 17;
        else if (!text || !parse_num(*text, v) || v > 255) {
            reason = "bad proto";
            return std::nullopt;
        }
        a.scope.proto = static_cast<std::uint8_t>(v);
    }
    return a;
}

bool scope_matches(const SocScope& s, const MetadataRecord& r) {
    if (s.proto && *s.proto != r.ip_proto) return false;
    auto oriented = [&](const Endpoint& from, const Endpoint& to) {
        return (!s.src || *s.src == from.ip) && (!s.dst || *s.dst == to.ip) && (!s.sport || *s.sport == from.port) &&
               (!s.dport || *s.dport == to.port);
    };
    return oriented(r.initiator, r.responder) || oriented(r.responder, r.initiator);
}

SocBridge::SocBridge(const QueryEngine& query, AlertStore& alerts, std::int64_t slack_us)
    : query_(query), alerts_(alerts), slack_us_(slack_us) {
    for (const auto& a : alerts_.list(AlertKind::soc)) {
        if (auto it = a.evidence.find("soc_id"); it != a.evidence.end()) known_ids_.insert(it->second);
    }
}

ImportResult SocBridge::import_lines(const std::vector<std::string>& lines) {
    ImportResult res;
    std::lock_guard lock(mu_);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        std::string reason;
        auto sa = parse_soc_line(lines[i], reason);
        if (!sa) {
            res.rejected.push_back({i + 1, reason});
            continue;
        }
        if (known_ids_.count(sa->soc_id)) {
            ++res.duplicates;
            continue;
        }
        Alert a;
        a.kind = AlertKind::soc;
        a.severity = sa->severity;
        a.ts_us = sa->ts_us;
        a.entity = scope_text(sa->scope);
        a.message = sa->message;
        a.session_ids = correlate(*sa);
        a.evidence["soc_id"] = sa->soc_id;
        a.evidence["signature_id"] = sa->signature_id;
        a.evidence["slack_us"] = std::to_string(slack_us_);
        a.evidence["raw"] = sa->raw;
        alerts_.raise(std::move(a));
        known_ids_.insert(sa->soc_id);
        ++res.accepted;
    }
    return res;
}

ImportResult SocBridge::import_alerts(std::istream& feed) {
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(feed, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(std::move(line));
    }
    return import_lines(lines);
}

std::vector<std::uint64_t> SocBridge::correlate(const SocAlert& alert, std::optional<std::int64_t> slack,
                                                ScanStats* stats) const {
    const auto sl = slack.value_or(slack_us_);
    TimeRange range{sat_add(alert.ts_us, -sl), sat_add(alert.ts_us, sl)};
    const auto& store = query_.store();
    const auto& sc = alert.scope;

    auto both = [&](std::string_view f_a, std::string_view f_b, const std::string& v) {
        auto a = store.lookup(f_a, v, range, stats);
        auto b = store.lookup(f_b, v, range, stats);
        std::vector<std::uint64_t> u;
        std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(u));
        return u;
    };
    std::vector<MetadataRecord> candidates;
    if (sc.src || sc.dst) {
        candidates = store.get_many(both("ip.src", "ip.dst", (sc.src ? *sc.src : *sc.dst).to_string()));
    } else if (sc.sport || sc.dport) {
        candidates = store.get_many(both("tp.src", "tp.dst", std::to_string(sc.sport ? *sc.sport : *sc.dport)));
    } else if (sc.proto) {
        candidates = store.get_many(store.lookup("ip.proto", std::to_string(*sc.proto), range, stats));
    } else {
        // Nothing to look up: the time window alone bounds the scan.
        store.scan(range, [&](const MetadataRecord& r) { candidates.push_back(r); }, stats);
    }
    std::vector<std::uint64_t> out;
    for (const auto& r : candidates) {
        if (range.intersects(r.first_ts_us, r.last_ts_us) && scope_matches(sc, r)) out.push_back(r.session_id);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::optional<SocAlert> SocBridge::stored(const std::string& id) const {
    for (const auto& a : alerts_.list(AlertKind::soc)) {
        auto sid = a.evidence.find("soc_id");
        if (std::to_string(a.alert_id) == id || (sid != a.evidence.end() && sid->second == id)) {
            std::string reason;
            return parse_soc_line(a.evidence.at("raw"), reason);
        }
    }
    return std::nullopt;
}

std::vector<std::uint64_t> SocBridge::correlate_stored(const std::string& id) const {
    auto sa = stored(id);
    if (!sa) throw UnknownSession("no SOC alert " + id);
    return correlate(*sa);
}

json SocBridge::answer(const json& request) const {
    const auto t0 = now_us();
    if (!request.is_object()) throw MalformedRequest("request must be a JSON object", 0);
    const auto op = request.value("op", std::string("query"));
    json resp;
    if (op == "query") {
        auto q = query_from_json(request.contains("query") ? request["query"] : request);
        resp = to_json(query_.run_query(q));
    } else if (op == "correlate") {
        std::optional<SocAlert> sa;
        if (request.contains("alert_id")) {
            auto id = scalar_text(request["alert_id"]);
            if (!id) throw MalformedRequest("alert_id must be a string or integer", 0);
            sa = stored(*id);
            if (!sa) throw UnknownSession("no SOC alert " + *id);
        } else if (request.contains("alert")) {
            std::string reason;
            sa = parse_soc_line(request["alert"].dump(), reason);
            if (!sa) throw MalformedRequest("alert rejected: " + reason, 0);
        } else {
            throw MalformedRequest("correlate needs alert or alert_id", 0);
        }
        std::optional<std::int64_t> slack;
        if (request.contains("slack_us")) slack = json_int(request["slack_us"], slack_us_);
        ScanStats st;
        resp = {{"session_ids", correlate(*sa, slack, &st)}, {"scan", to_json(st)}};
        resp["store_version"] = query_.store().version();
    } else {
        throw MalformedRequest("unknown op '" + op + "'", 0);
    }
    resp["op"] = op;
    resp["elapsed_us"] = now_us() - t0;
    return resp;
}

std::string SocBridge::answer_query(std::string_view request) const {
    try {
        json req;
        try {
            req = json::parse(request);
        } catch (const json::parse_error& e) {
            throw MalformedRequest(std::string("malformed JSON: ") + e.what(), e.byte);
        }
        return answer(req).dump(-1, ' ', false, json::error_handler_t::replace);
    } catch (const std::exception& e) {
        auto err = error_json(e);
        err["store_version"] = query_.store().version();
        return err.dump(-1, ' ', false, json::error_handler_t::replace);
    }
}

}  // namespace nfe

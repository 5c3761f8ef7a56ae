#include "nfe/metadata.hpp"

#include "nfe/errors.hpp"
#include "nfe/protocols.hpp"

#include <charconv>
#include <mutex>

namespace nfe {

std::string_view to_string(AppProtocol p) {
    switch (p) {
        case AppProtocol::http: return "http";
        case AppProtocol::smtp: return "smtp";
        case AppProtocol::dns: return "dns";
        case AppProtocol::ftp: return "ftp";
        case AppProtocol::sip: return "sip";
        case AppProtocol::ssl: return "ssl";
        case AppProtocol::unknown: break;
    }
    return "unknown";
}

std::optional<AppProtocol> parse_app_protocol(std::string_view s) {
    for (auto p : {AppProtocol::unknown, AppProtocol::http, AppProtocol::smtp, AppProtocol::dns,
                   AppProtocol::ftp, AppProtocol::sip, AppProtocol::ssl}) {
        if (to_string(p) == s) return p;
    }
    return std::nullopt;
}

std::string_view to_string(FieldKind k) {
    switch (k) {
        case FieldKind::string: return "string";
        case FieldKind::ip: return "ip";
        case FieldKind::port: return "port";
        case FieldKind::integer: return "integer";
        case FieldKind::enumeration: return "enum";
    }
    return "string";
}

void MetadataRecord::add(std::string key, std::string value) {
    attributes.emplace(std::move(key), std::move(value));
}

std::vector<std::string> MetadataRecord::values(std::string_view key) const {
    std::vector<std::string> out;
    for (auto it = attributes.lower_bound({std::string(key), std::string()});
         it != attributes.end() && it->first == key; ++it) {
        out.push_back(it->second);
    }
    return out;
}

std::optional<std::string> MetadataRecord::first(std::string_view key) const {
    auto it = attributes.lower_bound({std::string(key), std::string()});
    if (it != attributes.end() && it->first == key) return it->second;
    return std::nullopt;
}

bool MetadataRecord::has(std::string_view key) const { return first(key).has_value(); }

std::vector<std::string> MetadataRecord::field_values(std::string_view field) const {
    if (field == "ip.src") return {initiator.ip.to_string()};
    if (field == "ip.dst") return {responder.ip.to_string()};
    if (field == "tp.src") return {std::to_string(initiator.port)};
    if (field == "tp.dst") return {std::to_string(responder.port)};
    if (field == "ip.proto") return {std::to_string(ip_proto)};
    if (field == "app.protocol") return {std::string(to_string(app_protocol))};
    if (field == "source_id") return {source_id};
    if (field == "session.id") return {std::to_string(session_id)};
    if (field == "size_kb") return {std::to_string(size_kb())};
    if (field == "bytes_total") return {std::to_string(bytes_total)};
    if (field == "packets_total") return {std::to_string(packets_total)};
    return values(field);
}

MetadataRecord record_skeleton(const Session& s) {
    MetadataRecord r;
    r.session_id = s.session_id;
    r.source_id = s.source_id;
    r.first_ts_us = s.first_ts_us;
    r.last_ts_us = s.last_ts_us;
    r.initiator = s.initiator;
    r.responder = s.responder;
    r.ip_proto = s.key.ip_proto;
    r.bytes_total = s.bytes_total();
    r.packets_total = s.packets_total();
    return r;
}

Vocabulary& Vocabulary::instance() {
    static Vocabulary v;
    return v;
}

Vocabulary::Vocabulary() {
    auto syn = [&](std::string name, FieldKind kind, std::string desc, bool indexed = true) {
        register_field({std::move(name), kind, std::move(desc), indexed, true, false});
    };
    syn("ip.src", FieldKind::ip, "Session initiator address");
    syn("ip.dst", FieldKind::ip, "Session responder address");
    syn("tp.src", FieldKind::port, "Initiator transport port");
    syn("tp.dst", FieldKind::port, "Responder transport port");
    syn("ip.proto", FieldKind::integer, "IP protocol number");
    syn("app.protocol", FieldKind::enumeration, "Detected application protocol");
    syn("source_id", FieldKind::string, "Capture source the session was ingested from");
    syn("session.id", FieldKind::integer, "Session identifier");
    syn("size_kb", FieldKind::integer, "Session payload size in KiB, rounded up", false);
    syn("bytes_total", FieldKind::integer, "Session payload bytes", false);
    syn("packets_total", FieldKind::integer, "Session packet count", false);

    register_field({"geo.src", FieldKind::string, "GeoIP label of the initiator (query-time join)", false,
                    true, true});
    register_field({"geo.dst", FieldKind::string, "GeoIP label of the responder (query-time join)", false,
                    true, true});

    auto attr = [&](std::string name, std::string desc, FieldKind kind = FieldKind::string) {
        register_field({std::move(name), kind, std::move(desc), true, false, false});
    };
    attr("file.sha256", "SHA-256 of an extracted file body");
    attr("file.magic", "File type from the leading magic bytes");
    attr("user.name", "Username seen in any protocol");
    register_builtin_fields(*this);
}

void Vocabulary::register_field(FieldSpec spec) {
    auto name = spec.name;
    fields_.insert_or_assign(std::move(name), std::move(spec));
}

const FieldSpec* Vocabulary::find(std::string_view name) const {
    auto it = fields_.find(name);
    return it == fields_.end() ? nullptr : &it->second;
}

bool Vocabulary::is_indexed(std::string_view name) const {
    auto* f = find(name);
    return f && f->indexed;
}

std::vector<FieldSpec> Vocabulary::fields() const {
    std::vector<FieldSpec> out;
    for (const auto& [name, spec] : fields_) out.push_back(spec);
    return out;
}

const FieldSpec& Vocabulary::require(std::string_view name, const std::string& context) const {
    auto* f = find(name);
    if (!f) throw UnknownField(std::string(name), context);
    return *f;
}

std::string normalize_value(const FieldSpec& field, std::string_view value) {
    switch (field.kind) {
        case FieldKind::ip:
            if (auto a = IpAddress::parse(value)) return a->to_string();
            return std::string(value);
        case FieldKind::port:
        case FieldKind::integer: {
            std::uint64_t v = 0;
            auto t = trim(value);
            auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
            if (ec == std::errc{} && ptr == t.data() + t.size()) return std::to_string(v);
            return std::string(value);
        }
        case FieldKind::enumeration:
            return to_lower(value);
        case FieldKind::string:
            break;
    }
    return std::string(value);
}

}  // namespace nfe

#include "nfe/protocols.hpp"

#include "parsers/common.hpp"

#include <algorithm>
#include <charconv>

namespace nfe {

std::string file_magic(ByteView d) {
    auto starts = [&](std::string_view sig) {
        return d.size() >= sig.size() && std::equal(sig.begin(), sig.end(), d.begin(),
                                                    [](char c, std::uint8_t b) { return static_cast<std::uint8_t>(c) == b; });
    };
    if (starts("MZ")) return "pe";
    if (starts("\x7f" "ELF")) return "elf";
    if (starts("%PDF")) return "pdf";
    if (starts("PK")) return "zip";
    return "octet-stream";
}

namespace parsers {

std::vector<std::unique_ptr<ProtocolParser>> make_all() {
    std::vector<std::unique_ptr<ProtocolParser>> v;
    v.push_back(make_http());
    v.push_back(make_smtp());
    v.push_back(make_dns());
    v.push_back(make_ftp());
    v.push_back(make_sip());
    v.push_back(make_ssl());
    return v;
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        auto end = nl == std::string_view::npos ? text.size() : nl;
        auto line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        out.push_back(line);
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    return out;
}

std::optional<std::string_view> read_line(std::string_view text, std::size_t& pos) {
    if (pos >= text.size()) return std::nullopt;
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) return std::nullopt;
    auto line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = nl + 1;
    return line;
}

std::pair<std::string_view, std::string_view> split_verb(std::string_view line) {
    line = trim(line);
    auto sp = line.find_first_of(" \t");
    if (sp == std::string_view::npos) return {line, {}};
    return {line.substr(0, sp), trim(line.substr(sp + 1))};
}

std::size_t header_end(std::string_view text, std::size_t from) {
    auto crlf = text.find("\r\n\r\n", from);
    auto lf = text.find("\n\n", from);
    if (crlf == std::string_view::npos && lf == std::string_view::npos) return std::string_view::npos;
    if (lf == std::string_view::npos || (crlf != std::string_view::npos && crlf < lf)) return crlf + 4;
    return lf + 2;
}

ExtractedFile make_file(std::string name_hint, Bytes data, AppProtocol proto) {
    ExtractedFile f;
    f.name_hint = std::move(name_hint);
    f.sha256 = sha256_hex(data);
    f.magic = file_magic(data);
    f.data = std::move(data);
    f.protocol = proto;
    return f;
}

}  // namespace parsers

namespace detail {

std::vector<std::pair<std::string, std::string>> parse_header_block(std::string_view block) {
    std::vector<std::pair<std::string, std::string>> out;
    for (auto line : parsers::split_lines(block)) {
        if (line.empty()) break;
        if ((line.front() == ' ' || line.front() == '\t') && !out.empty()) {
            out.back().second += ' ';
            out.back().second += trim(line);
            continue;
        }
        auto colon = line.find(':');
        if (colon == std::string_view::npos || colon == 0) continue;
        out.emplace_back(std::string(trim(line.substr(0, colon))), std::string(trim(line.substr(colon + 1))));
    }
    return out;
}

std::optional<std::string> header_param(std::string_view value, std::string_view param) {
    std::size_t pos = 0;
    while (pos < value.size()) {
        auto semi = value.find(';', pos);
        if (semi == std::string_view::npos) break;
        pos = semi + 1;
        // Parameter token up to '=', skipping leading whitespace.
        auto rest = value.substr(pos);
        auto eq = rest.find('=');
        if (eq == std::string_view::npos) break;
        auto name = trim(rest.substr(0, eq));
        std::string_view tail = rest.substr(eq + 1);
        std::size_t lead = 0;
        while (lead < tail.size() && (tail[lead] == ' ' || tail[lead] == '\t')) ++lead;
        tail.remove_prefix(lead);
        std::string v;
        std::size_t consumed = 0;
        if (!tail.empty() && tail.front() == '"') {
            std::size_t i = 1;
            for (; i < tail.size() && tail[i] != '"'; ++i) {
                if (tail[i] == '\\' && i + 1 < tail.size()) ++i;
                v += tail[i];
            }
            consumed = std::min(i + 1, tail.size());
        } else {
            auto end = tail.find(';');
            v = std::string(trim(tail.substr(0, end)));
            consumed = end == std::string_view::npos ? tail.size() : end;
        }
        if (iequals(name, param)) return v;
        pos += eq + 1 + lead + consumed;
    }
    return std::nullopt;
}

std::string strip_angle(std::string_view addr) {
    auto lt = addr.find('<');
    if (lt != std::string_view::npos) {
        auto gt = addr.find('>', lt);
        return std::string(trim(addr.substr(lt + 1, gt == std::string_view::npos ? std::string_view::npos : gt - lt - 1)));
    }
    auto t = trim(addr);
    auto sp = t.find(' ');  // drop ESMTP parameters such as SIZE=
    return std::string(t.substr(0, sp));
}

}  // namespace detail

// FtpCorrelator ------------------------------------------------------------

namespace {

std::optional<std::uint16_t> to_port(std::string_view s) {
    unsigned v = 0;
    auto t = trim(s);
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || p != t.data() + t.size() || v > 65535) return std::nullopt;
    return static_cast<std::uint16_t>(v);
}

/// "h1,h2,h3,h4,p1,p2" as used by PORT and the 227 reply.
std::optional<Endpoint> parse_hostport(std::string_view s) {
    unsigned n[6];
    std::size_t pos = 0;
    for (int i = 0; i < 6; ++i) {
        while (pos < s.size() && s[pos] == ' ') ++pos;
        auto [p, ec] = std::from_chars(s.data() + pos, s.data() + s.size(), n[i]);
        if (ec != std::errc{} || n[i] > 255) return std::nullopt;
        pos = static_cast<std::size_t>(p - s.data());
        if (i < 5) {
            if (pos >= s.size() || s[pos] != ',') return std::nullopt;
            ++pos;
        }
    }
    Endpoint e;
    e.ip = IpAddress::v4((n[0] << 24) | (n[1] << 16) | (n[2] << 8) | n[3]);
    e.port = static_cast<std::uint16_t>(n[4] * 256 + n[5]);
    return e;
}

}  // namespace

void FtpCorrelator::expire(std::int64_t now_us) {
    // Entries stay long enough for a data session to complete after its
    // idle timeout; the lookup window itself is ttl_us_.
    std::erase_if(pending_, [&](const auto& e) { return now_us - e.second.negotiated_ts_us > 4 * ttl_us_; });
}

void FtpCorrelator::observe(const DecodedPacket& p) {
    if (!p.is_tcp() || p.payload_len == 0 || !p.ip_src || !p.ip_dst) return;
    bool from_server = *p.tp_src == 21;
    bool to_server = *p.tp_dst == 21;
    if (!from_server && !to_server) return;
    auto text = as_chars(p.payload());
    Endpoint src{*p.ip_src, *p.tp_src};
    Endpoint dst{*p.ip_dst, *p.tp_dst};
    FlowKey control = make_flow_key(src, dst, ip_proto::tcp);

    std::lock_guard lock(mu_);
    expire(p.ts_us);
    for (auto line : parsers::split_lines(text)) {
        if (from_server) {
            if (line.starts_with("227")) {
                auto lp = line.find('(');
                auto rp = line.find(')', lp == std::string_view::npos ? 0 : lp);
                std::string_view inner;
                if (lp != std::string_view::npos && rp != std::string_view::npos) {
                    inner = line.substr(lp + 1, rp - lp - 1);
                } else {
                    auto first_digit = line.find_first_of("0123456789", 4);
                    if (first_digit != std::string_view::npos) inner = line.substr(first_digit);
                }
                if (auto ep = parse_hostport(inner)) {
                    pending_.push_back({control, Transfer{*ep, p.ts_us, std::nullopt, {}}});
                }
            } else if (line.starts_with("229")) {
                auto lp = line.find("(|||");
                if (lp == std::string_view::npos) continue;
                auto end = line.find('|', lp + 4);
                if (end == std::string_view::npos) continue;
                if (auto port = to_port(line.substr(lp + 4, end - lp - 4))) {
                    pending_.push_back({control, Transfer{Endpoint{src.ip, *port}, p.ts_us, std::nullopt, {}}});
                }
            }
        } else {
            auto [verb, arg] = parsers::split_verb(line);
            auto v = to_lower(verb);
            if (v == "port") {
                if (auto ep = parse_hostport(arg)) pending_.push_back({control, Transfer{*ep, p.ts_us, std::nullopt, {}}});
            } else if (v == "eprt" && arg.size() > 2) {
                // EPRT |af|addr|port|
                char d = arg.front();
                auto a1 = arg.find(d, 1);
                auto a2 = a1 == std::string_view::npos ? a1 : arg.find(d, a1 + 1);
                auto a3 = a2 == std::string_view::npos ? a2 : arg.find(d, a2 + 1);
                if (a3 == std::string_view::npos) continue;
                auto ip = IpAddress::parse(arg.substr(a1 + 1, a2 - a1 - 1));
                auto port = to_port(arg.substr(a2 + 1, a3 - a2 - 1));
                if (ip && port) pending_.push_back({control, Transfer{Endpoint{*ip, *port}, p.ts_us, std::nullopt, {}}});
            } else if (v == "retr" || v == "stor" || v == "appe" || v == "list" || v == "nlst") {
                // Attach the command to the latest unclaimed negotiation on this control flow.
                for (auto it = pending_.rbegin(); it != pending_.rend(); ++it) {
                    if (it->first == control && it->second.command.empty()) {
                        it->second.command = to_upper(verb);
                        if (!arg.empty() && v != "list" && v != "nlst") it->second.filename = std::string(arg);
                        break;
                    }
                }
            }
        }
    }
}

std::optional<FtpCorrelator::Transfer> FtpCorrelator::lookup(const Endpoint& responder,
                                                             std::int64_t opened_ts_us) const {
    std::lock_guard lock(mu_);
    const Transfer* best = nullptr;
    for (const auto& [key, t] : pending_) {
        if (t.data_endpoint != responder) continue;
        if (opened_ts_us < t.negotiated_ts_us || opened_ts_us - t.negotiated_ts_us > ttl_us_) continue;
        if (!best || t.negotiated_ts_us > best->negotiated_ts_us) best = &t;
    }
    if (!best) return std::nullopt;
    return *best;
}

std::size_t FtpCorrelator::size() const {
    std::lock_guard lock(mu_);
    return pending_.size();
}

// Registry -------------------------------------------------------------------

ProtocolRegistry::ProtocolRegistry() = default;

const ProtocolRegistry& ProtocolRegistry::builtin() {
    static const ProtocolRegistry reg = [] {
        ProtocolRegistry r;
        for (auto& p : parsers::make_all()) r.add(std::move(p));
        return r;
    }();
    return reg;
}

void ProtocolRegistry::add(std::unique_ptr<ProtocolParser> parser) {
    auto& vocab = Vocabulary::instance();
    for (auto& f : parser->fields()) {
        if (!vocab.contains(f.name)) vocab.register_field(f);
    }
    parsers_.push_back(std::move(parser));
}

Detection ProtocolRegistry::detect(const Session& s, const ParseContext& ctx) const {
    Detection best;
    if (!s.has_payload()) return best;
    for (const auto& p : parsers_) {
        double c = p->detect(s, ctx);
        if (c <= 0.0) continue;
        // Port hints only break ties between content signatures.
        auto hints = p->port_hints();
        if (std::find(hints.begin(), hints.end(), s.responder.port) != hints.end() ||
            std::find(hints.begin(), hints.end(), s.initiator.port) != hints.end()) {
            c = std::min(1.0, c + 0.05);
        }
        if (c > best.confidence) best = {p->protocol(), c};
    }
    if (best.confidence < kThreshold) return {AppProtocol::unknown, best.confidence};
    return best;
}

ParseResult ProtocolRegistry::parse_session(const Session& s, AppProtocol proto, const ParseContext& ctx) const {
    MetadataRecord base = record_skeleton(s);
    ParseResult result;
    const ProtocolParser* parser = nullptr;
    for (const auto& p : parsers_) {
        if (p->protocol() == proto) parser = p.get();
    }
    if (parser) {
        base.app_protocol = proto;
        try {
            result = parser->parse(s, base, ctx);
        } catch (const std::exception&) {
            // Tolerance contract: a parser failure degrades to flow-level metadata.
            result = {};
        }
    } else {
        base.app_protocol = AppProtocol::unknown;
    }
    if (result.records.empty()) result.records.push_back(base);

    const auto& vocab = Vocabulary::instance();
    for (auto& r : result.records) {
        r.app_protocol = parser ? proto : AppProtocol::unknown;
        std::erase_if(r.attributes, [&](const auto& kv) {
            auto* f = vocab.find(kv.first);
            return !f || f->synthetic || kv.second.empty();
        });
        std::set<std::pair<std::string, std::string>> normalized;
        for (const auto& [k, v] : r.attributes) normalized.emplace(k, normalize_value(*vocab.find(k), v));
        r.attributes = std::move(normalized);
    }
    for (auto& f : result.files) {
        if (f.sha256.empty()) f.sha256 = sha256_hex(f.data);
        if (f.magic.empty()) f.magic = file_magic(f.data);
        result.records.front().add("file.sha256", f.sha256);
        result.records.front().add("file.magic", f.magic);
    }
    return result;
}

ParseResult ProtocolRegistry::process(const Session& s, const ParseContext& ctx) const {
    return parse_session(s, detect(s, ctx).protocol, ctx);
}

void register_builtin_fields(Vocabulary& vocab) {
    for (auto& p : parsers::make_all()) {
        for (auto& f : p->fields()) vocab.register_field(f);
    }
}

std::optional<std::string> HttpMessage::header(std::string_view name) const {
    for (const auto& [k, v] : headers) {
        if (iequals(k, name)) return v;
    }
    return std::nullopt;
}

}  // namespace nfe

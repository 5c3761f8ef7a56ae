#include "common.hpp"

namespace nfe {

namespace {

constexpr std::string_view kMethods[] = {"INVITE", "ACK",    "BYE",    "CANCEL",  "REGISTER", "OPTIONS",
                                         "PRACK",  "UPDATE", "INFO",   "MESSAGE", "SUBSCRIBE", "NOTIFY",
                                         "REFER"};

bool is_sip_start(std::string_view line) {
    if (line.starts_with("SIP/2.0 ")) return true;
    auto [verb, rest] = parsers::split_verb(line);
    bool known = false;
    for (auto m : kMethods) known |= (m == verb);
    return known && rest.ends_with("SIP/2.0");
}

/// "Alice <sip:alice@example.com>;tag=1" -> "alice@example.com".
std::string sip_address(std::string_view value) {
    std::string uri;
    if (value.find('<') != std::string_view::npos) {
        uri = detail::strip_angle(value);
    } else {
        uri = std::string(trim(value.substr(0, value.find(';'))));
    }
    std::string_view u = uri;
    if (istarts_with(u, "sips:")) u.remove_prefix(5);
    else if (istarts_with(u, "sip:")) u.remove_prefix(4);
    u = u.substr(0, u.find(';'));
    return to_lower(u);
}

std::optional<std::string> compact_header(const std::vector<std::pair<std::string, std::string>>& h,
                                          std::string_view longname, std::string_view shortname) {
    for (const auto& [k, v] : h) {
        if (iequals(k, longname) || iequals(k, shortname)) return v;
    }
    return std::nullopt;
}

std::vector<std::string_view> sip_messages(const Session& s, Direction d) {
    std::vector<std::string_view> out;
    auto text = as_chars(s.stream(d));
    if (!s.is_tcp()) {
        for (const auto& dg : s.datagrams(d)) out.push_back(text.substr(dg.offset, dg.length));
        return out;
    }
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto hend = parsers::header_end(text, pos);
        if (hend == std::string_view::npos) {
            out.push_back(text.substr(pos));
            break;
        }
        auto headers = detail::parse_header_block(text.substr(pos, hend - pos));
        std::size_t body = 0;
        if (auto cl = compact_header(headers, "Content-Length", "l")) {
            body = static_cast<std::size_t>(std::strtoull(cl->c_str(), nullptr, 10));
        }
        auto end = std::min(text.size(), hend + body);
        out.push_back(text.substr(pos, end - pos));
        pos = end;
    }
    return out;
}

class SipParser final : public ProtocolParser {
public:
    AppProtocol protocol() const override { return AppProtocol::sip; }
    std::vector<std::uint16_t> port_hints() const override { return {5060, 5061}; }

    double detect(const Session& s, const ParseContext&) const override {
        for (auto d : {Direction::fwd, Direction::rev}) {
            auto msgs = sip_messages(s, d);
            if (msgs.empty()) continue;
            auto first = msgs.front().substr(0, msgs.front().find('\n'));
            if (first.ends_with('\r')) first.remove_suffix(1);
            return is_sip_start(first) ? 0.9 : 0.0;
        }
        return 0.0;
    }

    ParseResult parse(const Session& s, MetadataRecord rec, const ParseContext&) const override {
        for (auto d : {Direction::fwd, Direction::rev}) {
            for (auto msg : sip_messages(s, d)) {
                auto nl = msg.find('\n');
                auto first = trim(msg.substr(0, nl));
                if (!is_sip_start(first)) continue;
                if (first.starts_with("SIP/2.0 ")) {
                    rec.add("sip.status", std::string(parsers::split_verb(parsers::split_verb(first).second).first));
                } else {
                    rec.add("sip.method", std::string(parsers::split_verb(first).first));
                }
                if (nl == std::string_view::npos) continue;
                auto headers = detail::parse_header_block(msg.substr(nl + 1));
                if (auto f = compact_header(headers, "From", "f")) {
                    auto a = sip_address(*f);
                    rec.add("sip.from", a);
                    auto at = a.find('@');
                    if (at != std::string::npos && at > 0) rec.add("user.name", a.substr(0, at));
                }
                if (auto t = compact_header(headers, "To", "t")) rec.add("sip.to", sip_address(*t));
                if (auto c = compact_header(headers, "Call-ID", "i")) rec.add("sip.call_id", std::string(trim(*c)));
            }
        }
        ParseResult out;
        out.records.push_back(std::move(rec));
        return out;
    }

    std::vector<FieldSpec> fields() const override {
        using parsers::attr;
        return {attr("sip.method", "SIP request method"),
                attr("sip.status", "SIP response status code", FieldKind::integer),
                attr("sip.from", "SIP From address"),
                attr("sip.to", "SIP To address"),
                attr("sip.call_id", "SIP Call-ID")};
    }
};

}  // namespace

namespace parsers {
std::unique_ptr<ProtocolParser> make_sip() { return std::make_unique<SipParser>(); }
}  // namespace parsers

}  // namespace nfe

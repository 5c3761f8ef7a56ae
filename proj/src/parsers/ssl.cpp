#include "common.hpp"

namespace nfe {

namespace {

/// Server name from a TLS ClientHello record, if present.
std::optional<std::string> client_hello_sni(ByteView d) {
    // record header(5) + handshake header(4) + version(2) + random(32)
    if (d.size() < 43 || d[0] != 0x16 || d[5] != 0x01) return std::nullopt;
    std::size_t pos = 43;
    auto need = [&](std::size_t n) { return pos + n <= d.size(); };
    if (!need(1)) return std::nullopt;
    pos += 1 + d[pos];  // session id
    if (!need(2)) return std::nullopt;
    pos += 2 + load_be16(d.data() + pos);  // cipher suites
    if (!need(1)) return std::nullopt;
    pos += 1 + d[pos];  // compression methods
    if (!need(2)) return std::nullopt;
    std::size_t ext_end = std::min(d.size(), pos + 2 + load_be16(d.data() + pos));
    pos += 2;
    while (pos + 4 <= ext_end) {
        std::uint16_t type = load_be16(d.data() + pos);
        std::uint16_t len = load_be16(d.data() + pos + 2);
        pos += 4;
        if (pos + len > ext_end) break;
        if (type == 0 && len >= 5) {
            // server_name_list: u16 list len, u8 type, u16 name len, name
            std::uint16_t nlen = load_be16(d.data() + pos + 3);
            if (d[pos + 2] == 0 && 5u + nlen <= len) return to_lower(as_chars(d.subspan(pos + 5, nlen)));
        }
        pos += len;
    }
    return std::nullopt;
}

bool looks_like_tls(ByteView d) {
    return d.size() >= 6 && d[0] == 0x16 && d[1] == 0x03 && d[2] <= 0x04;
}

class SslParser final : public ProtocolParser {
public:
    AppProtocol protocol() const override { return AppProtocol::ssl; }
    std::vector<std::uint16_t> port_hints() const override { return {443, 465, 993, 995, 8443}; }

    double detect(const Session& s, const ParseContext&) const override {
        if (!s.is_tcp()) return 0.0;
        if (looks_like_tls(s.stream_fwd) && s.stream_fwd[5] == 0x01) return 0.9;
        if (looks_like_tls(s.stream_rev) && s.stream_rev[5] == 0x02) return 0.85;
        return 0.0;
    }

    ParseResult parse(const Session& s, MetadataRecord rec, const ParseContext&) const override {
        if (auto sni = client_hello_sni(s.stream_fwd)) rec.add("ssl.server_name", *sni);
        if (looks_like_tls(s.stream_fwd) && s.stream_fwd.size() >= 11) {
            rec.add("ssl.version", std::to_string(s.stream_fwd[9]) + "." + std::to_string(s.stream_fwd[10]));
        }
        ParseResult out;
        out.records.push_back(std::move(rec));
        return out;
    }

    std::vector<FieldSpec> fields() const override {
        using parsers::attr;
        return {attr("ssl.server_name", "TLS ClientHello server name"),
                attr("ssl.version", "ClientHello protocol version (major.minor)")};
    }
};

}  // namespace

namespace parsers {
std::unique_ptr<ProtocolParser> make_ssl() { return std::make_unique<SslParser>(); }
}  // namespace parsers

}  // namespace nfe

#include "common.hpp"

#include <algorithm>
#include <map>

namespace nfe {

namespace {

std::string qtype_name(std::uint16_t t) {
    switch (t) {
        case 1: return "A";
        case 2: return "NS";
        case 5: return "CNAME";
        case 6: return "SOA";
        case 12: return "PTR";
        case 15: return "MX";
        case 16: return "TXT";
        case 28: return "AAAA";
        case 33: return "SRV";
        case 255: return "ANY";
    }
    return "TYPE" + std::to_string(t);
}

/// Reads a possibly compressed name at `pos` within the whole message.
std::optional<std::string> read_name(ByteView msg, std::size_t& pos) {
    std::string name;
    std::size_t cursor = pos;
    bool jumped = false;
    int hops = 0;
    while (true) {
        if (cursor >= msg.size()) return std::nullopt;
        std::uint8_t len = msg[cursor];
        if ((len & 0xC0) == 0xC0) {
            if (cursor + 1 >= msg.size() || ++hops > 16) return std::nullopt;
            std::size_t target = ((len & 0x3F) << 8) | msg[cursor + 1];
            if (!jumped) pos = cursor + 2;
            jumped = true;
            cursor = target;
            continue;
        }
        if (len & 0xC0) return std::nullopt;
        if (len == 0) {
            if (!jumped) pos = cursor + 1;
            break;
        }
        if (cursor + 1 + len > msg.size()) return std::nullopt;
        if (!name.empty()) name += '.';
        name.append(as_chars(msg.subspan(cursor + 1, len)));
        cursor += 1 + len;
        if (name.size() > 255) return std::nullopt;
    }
    return name.empty() ? std::string(".") : to_lower(name);
}

struct DnsMessage {
    std::uint16_t id = 0;
    bool response = false;
    int rcode = 0;
    std::vector<std::pair<std::string, std::uint16_t>> questions;
    std::vector<std::string> answers;
};

std::optional<DnsMessage> parse_message(ByteView msg) {
    if (msg.size() < 12) return std::nullopt;
    DnsMessage m;
    m.id = load_be16(msg.data());
    std::uint16_t flags = load_be16(msg.data() + 2);
    m.response = flags & 0x8000;
    if (((flags >> 11) & 0xF) != 0) return std::nullopt;  // standard queries only
    m.rcode = flags & 0xF;
    std::uint16_t qd = load_be16(msg.data() + 4);
    std::uint16_t an = load_be16(msg.data() + 6);
    if (qd == 0 || qd > 8) return std::nullopt;
    std::size_t pos = 12;
    for (int i = 0; i < qd; ++i) {
        auto name = read_name(msg, pos);
        if (!name || pos + 4 > msg.size()) return std::nullopt;
        m.questions.emplace_back(*name, load_be16(msg.data() + pos));
        pos += 4;
    }
    for (int i = 0; i < an; ++i) {
        auto name = read_name(msg, pos);
        if (!name || pos + 10 > msg.size()) break;
        std::uint16_t type = load_be16(msg.data() + pos);
        std::uint16_t rdlen = load_be16(msg.data() + pos + 8);
        pos += 10;
        if (pos + rdlen > msg.size()) break;
        auto rdata = msg.subspan(pos, rdlen);
        std::size_t rpos = pos;
        switch (type) {
            case 1:
                if (rdlen == 4) m.answers.push_back(IpAddress::v4(rdata.data()).to_string());
                break;
            case 28:
                if (rdlen == 16) m.answers.push_back(IpAddress::v6(rdata.data()).to_string());
                break;
            case 2:
            case 5:
            case 12:
                if (auto n = read_name(msg, rpos)) m.answers.push_back(*n);
                break;
            case 15:
                if (rdlen > 2) {
                    rpos += 2;
                    if (auto n = read_name(msg, rpos)) m.answers.push_back(*n);
                }
                break;
            case 16:
                if (rdlen > 0) m.answers.emplace_back(as_chars(rdata.subspan(1, std::min<std::size_t>(rdata[0], rdlen - 1))));
                break;
            default:
                break;
        }
        pos += rdlen;
    }
    return m;
}

/// Splits a session into DNS messages with timestamps: UDP datagrams or
/// TCP length-prefixed messages.
std::vector<std::pair<std::int64_t, ByteView>> messages(const Session& s, Direction d) {
    std::vector<std::pair<std::int64_t, ByteView>> out;
    const Bytes& stream = s.stream(d);
    if (!s.is_tcp()) {
        for (const auto& dg : s.datagrams(d)) {
            out.emplace_back(dg.ts_us, ByteView(stream).subspan(dg.offset, dg.length));
        }
        return out;
    }
    std::size_t pos = 0;
    while (pos + 2 <= stream.size()) {
        std::size_t len = load_be16(stream.data() + pos);
        if (len == 0 || pos + 2 + len > stream.size()) break;
        out.emplace_back(d == Direction::fwd ? s.first_ts_us : s.last_ts_us, ByteView(stream).subspan(pos + 2, len));
        pos += 2 + len;
    }
    return out;
}

class DnsParser final : public ProtocolParser {
public:
    AppProtocol protocol() const override { return AppProtocol::dns; }
    std::vector<std::uint16_t> port_hints() const override { return {53, 5353}; }

    double detect(const Session& s, const ParseContext&) const override {
        for (auto d : {Direction::fwd, Direction::rev}) {
            auto msgs = messages(s, d);
            if (msgs.empty()) continue;
            auto m = parse_message(msgs.front().second);
            if (!m) return 0.0;
            // The initiator asks, the responder answers.
            if (m->response == (d == Direction::rev)) return 0.9;
            return 0.6;
        }
        return 0.0;
    }

    ParseResult parse(const Session& s, MetadataRecord base, const ParseContext&) const override {
        struct Txn {
            std::int64_t first = INT64_MAX, last = INT64_MIN;
            std::uint64_t bytes = 0, packets = 0;
            std::set<std::pair<std::string, std::string>> attrs;
        };
        std::map<std::uint16_t, Txn> txns;
        std::vector<std::uint16_t> order;

        for (auto d : {Direction::fwd, Direction::rev}) {
            for (auto [ts, bytes] : messages(s, d)) {
                auto m = parse_message(bytes);
                if (!m) continue;
                auto [it, fresh] = txns.try_emplace(m->id);
                if (fresh) order.push_back(m->id);
                auto& t = it->second;
                t.first = std::min(t.first, ts);
                t.last = std::max(t.last, ts);
                t.bytes += bytes.size();
                t.packets += 1;
                for (const auto& [q, type] : m->questions) {
                    t.attrs.emplace("dns.qname", q);
                    t.attrs.emplace("dns.qtype", qtype_name(type));
                }
                for (const auto& a : m->answers) t.attrs.emplace("dns.answers", a);
                if (m->response) t.attrs.emplace("dns.rcode", std::to_string(m->rcode));
            }
        }

        ParseResult out;
        // Transactions appear in the order their first message arrived.
        std::sort(order.begin(), order.end(), [&](auto a, auto b) {
            return std::pair(txns[a].first, a) < std::pair(txns[b].first, b);
        });
        for (auto id : order) {
            auto& t = txns[id];
            MetadataRecord r = base;
            r.first_ts_us = t.first;
            r.last_ts_us = t.last;
            r.bytes_total = t.bytes;
            r.packets_total = t.packets;
            r.attributes.insert(t.attrs.begin(), t.attrs.end());
            out.records.push_back(std::move(r));
        }
        if (out.records.empty()) return out;
        // Keep per-session totals conserved across the transaction records;
        // unparsed messages and TCP length prefixes land on the first one.
        std::uint64_t by = 0, pk = 0;
        for (auto& r : out.records) {
            by += r.bytes_total;
            pk += r.packets_total;
        }
        if (base.bytes_total > by) out.records.front().bytes_total += base.bytes_total - by;
        if (base.packets_total > pk) out.records.front().packets_total += base.packets_total - pk;
        return out;
    }

    std::vector<FieldSpec> fields() const override {
        using parsers::attr;
        return {attr("dns.qname", "Queried name, lowercased"),
                attr("dns.qtype", "Query type mnemonic"),
                attr("dns.answers", "Answer data (addresses and names)"),
                attr("dns.rcode", "Response code", FieldKind::integer)};
    }
};

}  // namespace

namespace parsers {
std::unique_ptr<ProtocolParser> make_dns() { return std::make_unique<DnsParser>(); }
}  // namespace parsers

}  // namespace nfe

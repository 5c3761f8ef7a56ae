#include "nfe/packet.hpp"

#include <algorithm>

namespace nfe {

std::string_view to_string(DecodeDepth d) {
    switch (d) {
        case DecodeDepth::none: return "none";
        case DecodeDepth::link: return "link";
        case DecodeDepth::network: return "network";
        case DecodeDepth::transport: return "transport";
    }
    return "none";
}

namespace {

constexpr std::uint16_t kEtherIpv4 = 0x0800;
constexpr std::uint16_t kEtherIpv6 = 0x86DD;
constexpr std::uint16_t kEtherVlan = 0x8100;

struct Window {
    std::uint32_t begin;
    std::uint32_t end;  // exclusive
    std::uint32_t size() const { return end - begin; }
};

void set_payload(DecodedPacket& p, std::uint32_t begin, std::uint32_t end) {
    p.payload_off = begin;
    p.payload_len = end > begin ? end - begin : 0;
}

// Parses TCP/UDP inside [w.begin, w.end). Leaves the packet at network depth
// when the transport header is truncated.
void decode_transport(DecodedPacket& p, Window w) {
    const auto* b = p.raw.data();
    if (p.ip_proto == ip_proto::tcp) {
        if (w.size() < 20) return;
        std::uint32_t hlen = (b[w.begin + 12] >> 4) * 4u;
        if (hlen < 20 || hlen > w.size()) return;
        p.tp_src = load_be16(b + w.begin);
        p.tp_dst = load_be16(b + w.begin + 2);
        p.tcp_seq = load_be32(b + w.begin + 4);
        p.tcp_ack = load_be32(b + w.begin + 8);
        p.tcp_flags = b[w.begin + 13];
        set_payload(p, w.begin + hlen, w.end);
        p.decode_depth = DecodeDepth::transport;
    } else if (p.ip_proto == ip_proto::udp) {
        if (w.size() < 8) return;
        std::uint32_t ulen = load_be16(b + w.begin + 4);
        std::uint32_t end = w.end;
        if (ulen >= 8) end = std::min(end, w.begin + ulen);
        p.tp_src = load_be16(b + w.begin);
        p.tp_dst = load_be16(b + w.begin + 2);
        set_payload(p, w.begin + 8, end);
        p.decode_depth = DecodeDepth::transport;
    }
}

void decode_ipv4(DecodedPacket& p, std::uint32_t off) {
    const auto* b = p.raw.data();
    const std::uint32_t cap = p.cap_len;
    if (cap < off + 20) return;
    if ((b[off] >> 4) != 4) return;
    std::uint32_t ihl = (b[off] & 0x0F) * 4u;
    if (ihl < 20 || off + ihl > cap) return;
    std::uint32_t total = load_be16(b + off + 2);
    if (total != 0 && total < ihl) return;
    std::uint32_t end = total == 0 ? cap : std::min(cap, off + total);

    p.ip_version = 4;
    p.ttl_or_hoplimit = b[off + 8];
    p.ip_proto = b[off + 9];
    p.ip_src = IpAddress::v4(b + off + 12);
    p.ip_dst = IpAddress::v4(b + off + 16);
    p.decode_depth = DecodeDepth::network;
    set_payload(p, off + ihl, end);

    std::uint16_t frag = load_be16(b + off + 6);
    if ((frag & 0x1FFF) != 0) {
        p.ip_later_fragment = true;
        return;
    }
    decode_transport(p, {off + ihl, end});
}

bool is_ipv6_extension(std::uint8_t nh) {
    return nh == 0 || nh == 43 || nh == 44 || nh == 60 || nh == 51;
}

void decode_ipv6(DecodedPacket& p, std::uint32_t off) {
    const auto* b = p.raw.data();
    const std::uint32_t cap = p.cap_len;
    if (cap < off + 40) return;
    if ((b[off] >> 4) != 6) return;
    std::uint32_t plen = load_be16(b + off + 4);
    std::uint32_t end = plen == 0 ? cap : std::min(cap, off + 40 + plen);

    p.ip_version = 6;
    p.ttl_or_hoplimit = b[off + 7];
    p.ip_src = IpAddress::v6(b + off + 8);
    p.ip_dst = IpAddress::v6(b + off + 24);
    p.decode_depth = DecodeDepth::network;

    std::uint8_t nh = b[off + 6];
    std::uint32_t cur = off + 40;
    for (int hops = 0; hops < 16 && is_ipv6_extension(nh); ++hops) {
        if (cur + 8 > end) {
            p.ip_proto = nh;
            set_payload(p, cur, end);
            return;
        }
        std::uint32_t len;
        if (nh == 44) {
            len = 8;
            if ((load_be16(b + cur + 2) >> 3) != 0) p.ip_later_fragment = true;
        } else if (nh == 51) {
            len = (b[cur + 1] + 2u) * 4u;
        } else {
            len = (b[cur + 1] + 1u) * 8u;
        }
        nh = b[cur];
        cur += len;
        if (cur > end) {
            p.ip_proto = nh;
            set_payload(p, end, end);
            return;
        }
    }
    p.ip_proto = nh;
    set_payload(p, cur, end);
    if (p.ip_later_fragment || is_ipv6_extension(nh)) return;
    decode_transport(p, {cur, end});
}

}  // namespace

DecodedPacket decode_frame(ByteView raw, LinkType link, std::int64_t ts_us,
                           std::uint64_t packet_id, std::uint32_t orig_len) {
    DecodedPacket p;
    p.packet_id = packet_id;
    p.ts_us = ts_us;
    p.raw.assign(raw.begin(), raw.end());
    p.cap_len = static_cast<std::uint32_t>(raw.size());
    p.orig_len = std::max(orig_len, p.cap_len);
    const auto* b = p.raw.data();
    const std::uint32_t cap = p.cap_len;

    if (link == LinkType::raw_ip) {
        if (cap == 0) return p;
        set_payload(p, 0, cap);
        int version = b[0] >> 4;
        if (version == 4) decode_ipv4(p, 0);
        else if (version == 6) decode_ipv6(p, 0);
        return p;
    }

    if (cap < 14) return p;
    p.eth_dst = MacAddress(b);
    p.eth_src = MacAddress(b + 6);
    std::uint16_t type = load_be16(b + 12);
    std::uint32_t off = 14;
    if (type == kEtherVlan) {
        if (cap < 18) {
            p.ethertype = type;
            p.decode_depth = DecodeDepth::link;
            set_payload(p, 14, cap);
            return p;
        }
        p.vlan_id = load_be16(b + 14) & 0x0FFF;
        type = load_be16(b + 16);
        off = 18;
    }
    p.ethertype = type;
    p.decode_depth = DecodeDepth::link;
    set_payload(p, off, cap);

    if (type == kEtherIpv4) decode_ipv4(p, off);
    else if (type == kEtherIpv6) decode_ipv6(p, off);
    return p;
}

}  // namespace nfe

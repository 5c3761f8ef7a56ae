#pragma once

#include "nfe/bytes.hpp"
#include "nfe/net.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace nfe {

enum class LinkType : std::uint32_t { ethernet = 1, raw_ip = 101 };

/// Deepest layer that parsed completely.
enum class DecodeDepth : std::uint8_t { none = 0, link = 1, network = 2, transport = 3 };

std::string_view to_string(DecodeDepth d);

namespace tcp_flag {
inline constexpr std::uint8_t fin = 0x01;
inline constexpr std::uint8_t syn = 0x02;
inline constexpr std::uint8_t rst = 0x04;
inline constexpr std::uint8_t psh = 0x08;
inline constexpr std::uint8_t ack = 0x10;
inline constexpr std::uint8_t urg = 0x20;
}  // namespace tcp_flag

namespace ip_proto {
inline constexpr std::uint8_t icmp = 1;
inline constexpr std::uint8_t tcp = 6;
inline constexpr std::uint8_t udp = 17;
inline constexpr std::uint8_t icmpv6 = 58;
}  // namespace ip_proto

/// One captured frame with its header fields. Optional fields are absent
/// when the corresponding layer did not parse.
struct DecodedPacket {
    std::uint64_t packet_id = 0;
    std::int64_t ts_us = 0;
    std::uint32_t cap_len = 0;
    std::uint32_t orig_len = 0;
    std::string source_id;

    std::optional<MacAddress> eth_src;
    std::optional<MacAddress> eth_dst;
    std::optional<std::uint16_t> ethertype;
    std::optional<std::uint16_t> vlan_id;

    std::optional<std::uint8_t> ip_version;
    std::optional<IpAddress> ip_src;
    std::optional<IpAddress> ip_dst;
    std::optional<std::uint8_t> ip_proto;
    std::optional<std::uint8_t> ttl_or_hoplimit;
    /// Set for IP fragments with a nonzero offset; they never carry ports.
    bool ip_later_fragment = false;

    std::optional<std::uint16_t> tp_src;
    std::optional<std::uint16_t> tp_dst;
    std::uint8_t tcp_flags = 0;
    std::uint32_t tcp_seq = 0;
    std::uint32_t tcp_ack = 0;

    std::uint32_t payload_off = 0;
    std::uint32_t payload_len = 0;
    DecodeDepth decode_depth = DecodeDepth::none;

    Bytes raw;

    ByteView payload() const { return ByteView(raw).subspan(payload_off, payload_len); }
    bool has_ports() const { return tp_src.has_value() && tp_dst.has_value(); }
    bool is_tcp() const { return ip_proto == ip_proto::tcp && has_ports(); }
    bool is_udp() const { return ip_proto == ip_proto::udp && has_ports(); }

    bool operator==(const DecodedPacket&) const = default;
};

/// Decode one frame. Never throws on malformed input: a layer that fails
/// to parse leaves deeper fields absent and caps `decode_depth`.
DecodedPacket decode_frame(ByteView raw, LinkType link, std::int64_t ts_us,
                           std::uint64_t packet_id, std::uint32_t orig_len = 0);

/// Length of the headers in front of the payload window, i.e. the bytes a
/// headers-only store keeps.
inline std::uint32_t header_length(const DecodedPacket& p) { return p.payload_off; }

}  // namespace nfe

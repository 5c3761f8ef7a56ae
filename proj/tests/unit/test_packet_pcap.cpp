#include "doctest.h"

#include "support.hpp"

#include "nfe/errors.hpp"
#include "nfe/pcap.hpp"

#include <random>

using namespace nfe;
using namespace nfe::corpus;

namespace {

// Raw pcap writer with selectable byte order.
struct Raw {
    bool big = false;
    Bytes b;
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) b.push_back(static_cast<std::uint8_t>(v >> (big ? 8 * (1 - i) : 8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (big ? 8 * (3 - i) : 8 * i)));
    }
    void header(std::uint32_t magic, std::uint32_t link = 1) {
        u32(magic);
        u16(2);
        u16(4);
        u32(0);
        u32(0);
        u32(65535);
        u32(link);
    }
};

Bytes global_header(std::uint32_t magic = 0xa1b2c3d4) {
    Raw r;
    r.header(magic);
    return r.b;
}

std::vector<DecodedPacket> read_all(Bytes image) {
    PcapReader r(std::move(image), "t");
    std::vector<DecodedPacket> out;
    while (auto p = r.next()) out.push_back(std::move(*p));
    return out;
}

}  // namespace

TEST_CASE("ten-frame HTTP GET decodes with ports and payload") {
    auto c = http_get_corpus();
    auto packets = test::decode_all(c);
    REQUIRE(packets.size() == 10);
    for (std::size_t i = 0; i < packets.size(); ++i) {
        CHECK(packets[i].packet_id == i);
        CHECK(packets[i].decode_depth == DecodeDepth::transport);
        CHECK(packets[i].ts_us == c.capture.frames()[i].ts_us);
    }
    // Frame 3 (0-based) is the client request.
    const auto& req = packets[3];
    CHECK(req.tp_dst == 80);
    CHECK(req.tp_src == 49152);
    CHECK(req.ip_src->to_string() == "10.0.0.10");
    CHECK(req.payload_len > 0);
    CHECK(as_chars(req.payload()).substr(0, 4) == "GET ");
    CHECK(packets[0].tcp_flags == tcp_flag::syn);
}

TEST_CASE("empty capture yields no packets") {
    auto packets = read_all(global_header());
    CHECK(packets.empty());
}

TEST_CASE("truncated record throws CorruptRecord after earlier packets") {
    auto c = http_get_corpus();
    Bytes image = c.capture.pcap();
    image.resize(image.size() - 5);
    PcapReader r(image, "t");
    std::size_t n = 0;
    bool threw = false;
    try {
        while (r.next()) ++n;
    } catch (const CorruptRecord& e) {
        threw = true;
        CHECK(e.packets_before() == 9);
    }
    CHECK(threw);
    CHECK(n == 9);
}

TEST_CASE("bad magic is UnsupportedFormat") {
    CHECK_THROWS_AS(read_all(global_header(0x0a0d0d0a)), UnsupportedFormat);
    CHECK_THROWS_AS(read_all(Bytes{1, 2, 3}), UnsupportedFormat);
}

TEST_CASE("nanosecond and byte-swapped captures") {
    auto frame = udp_frame(ep("10.0.0.1", 1000), ep("10.0.0.2", 53), as_bytes("hi"));
    for (bool nanos : {false, true}) {
        for (bool swapped : {false, true}) {
            Raw w{swapped, {}};
            w.header(nanos ? 0xa1b23c4d : 0xa1b2c3d4);
            w.u32(100);
            w.u32(nanos ? 250'000'000 : 250'000);
            w.u32(static_cast<std::uint32_t>(frame.size()));
            w.u32(static_cast<std::uint32_t>(frame.size()));
            w.b.insert(w.b.end(), frame.begin(), frame.end());
            auto packets = read_all(w.b);
            REQUIRE(packets.size() == 1);
            CHECK(packets[0].ts_us == 100'250'000);
            CHECK(packets[0].tp_dst == 53);
        }
    }
}

TEST_CASE("unknown ethertype stops at link layer") {
    Bytes f(60, 0);
    f[12] = 0x88;
    f[13] = 0xb5;
    auto p = decode_frame(f, LinkType::ethernet, 0, 0);
    CHECK(p.decode_depth == DecodeDepth::link);
    CHECK(p.ethertype == 0x88b5);
    CHECK_FALSE(p.ip_src.has_value());
    CHECK_FALSE(p.has_ports());
}

TEST_CASE("IPv4 header length beyond the frame") {
    auto f = udp_frame(ep("10.0.0.1", 1000), ep("10.0.0.2", 53), as_bytes("x"));
    f[14] = 0x4f;  // IHL 60 bytes, longer than what follows
    f.resize(14 + 40);
    auto p = decode_frame(f, LinkType::ethernet, 0, 0);
    CHECK(p.decode_depth == DecodeDepth::link);
    CHECK_FALSE(p.tp_src.has_value());
}

TEST_CASE("ICMP has network depth and no ports") {
    auto f = icmp_echo_frame(*IpAddress::parse("10.0.0.1"), *IpAddress::parse("10.0.0.2"));
    auto p = decode_frame(f, LinkType::ethernet, 0, 0);
    CHECK(p.ip_proto == ip_proto::icmp);
    CHECK_FALSE(p.has_ports());
    CHECK(p.decode_depth >= DecodeDepth::network);
}

TEST_CASE("decoding random bytes never throws and keeps windows in bounds") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 5000; ++i) {
        Bytes f(rng() % 120);
        for (auto& b : f) b = static_cast<std::uint8_t>(rng());
        if (f.size() > 14 && (i & 1)) {
            f[12] = 0x08;
            f[13] = 0x00;
            f[14] = 0x45;
        }
        DecodedPacket p;
        CHECK_NOTHROW(p = decode_frame(f, LinkType::ethernet, i, i));
        CHECK(p.payload_off + p.payload_len <= f.size());
        if (p.has_ports()) CHECK(p.decode_depth == DecodeDepth::transport);
        if (p.decode_depth < DecodeDepth::network) CHECK_FALSE(p.ip_src.has_value());
    }
}

TEST_CASE("writer and reader round trip") {
    auto c = protocol_corpus();
    auto original = test::decode_all(c);
    PcapWriter w;
    for (const auto& p : original) w.write(p);
    auto back = read_all(w.take());
    REQUIRE(back.size() == original.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        back[i].source_id = original[i].source_id;
        CHECK(back[i] == original[i]);
    }
}

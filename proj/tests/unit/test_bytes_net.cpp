#include "doctest.h"

#include "nfe/bytes.hpp"
#include "nfe/net.hpp"

#include <random>

using namespace nfe;

TEST_CASE("sha256 and crc32 known vectors") {
    CHECK(sha256_hex(as_bytes("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex(as_bytes("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(crc32(as_bytes("123456789")) == 0xCBF43926u);
}

TEST_CASE("hex and base64 round trips") {
    std::mt19937_64 rng(1);
    for (int n = 0; n < 64; ++n) {
        Bytes b(n);
        for (auto& x : b) x = static_cast<std::uint8_t>(rng());
        CHECK(from_hex(to_hex(b)) == b);
        CHECK(base64_decode(base64_encode(b)) == b);
    }
    CHECK(base64_encode(as_bytes("Man")) == "TWFu");
    CHECK(base64_encode(as_bytes("Ma")) == "TWE=");
    CHECK(base64_decode("TWF\r\nu") == Bytes{'M', 'a', 'n'});
    CHECK_FALSE(from_hex("abc").has_value());
    CHECK_FALSE(from_hex("zz").has_value());
}

TEST_CASE("gzip round trip") {
    std::string text;
    for (int i = 0; i < 500; ++i) text += "line " + std::to_string(i) + "\n";
    auto z = gzip_compress(as_bytes(text));
    CHECK(z.size() < text.size());
    auto back = inflate_gzip(z);
    REQUIRE(back.has_value());
    CHECK(as_chars(*back) == text);
    CHECK_FALSE(inflate_gzip(as_bytes("not gzip")).has_value());
}

TEST_CASE("ByteWriter and ByteReader varints") {
    ByteWriter w;
    for (std::uint64_t v : {0ull, 1ull, 127ull, 128ull, 300ull, 1ull << 40, ~0ull}) w.varint(v);
    w.str("hello");
    ByteReader r(w.data());
    for (std::uint64_t v : {0ull, 1ull, 127ull, 128ull, 300ull, 1ull << 40, ~0ull}) CHECK(r.varint() == v);
    CHECK(r.str() == "hello");
    CHECK_THROWS(r.u8());
}

TEST_CASE("addresses and prefixes") {
    auto a = IpAddress::parse("10.1.2.3");
    REQUIRE(a);
    CHECK(a->version() == 4);
    CHECK(a->to_string() == "10.1.2.3");
    auto v6 = IpAddress::parse("2001:db8::1");
    REQUIRE(v6);
    CHECK(v6->to_string() == "2001:db8::1");
    CHECK_FALSE(IpAddress::parse("10.1.2").has_value());
    CHECK_FALSE(IpAddress::parse("10.1.2.256").has_value());

    auto net = Cidr::parse("10.1.0.0/16");
    REQUIRE(net);
    CHECK(net->contains(*a));
    CHECK_FALSE(net->contains(*IpAddress::parse("10.2.0.1")));
    CHECK_FALSE(net->contains(*v6));
    CHECK(Cidr::parse("0.0.0.0/0")->contains(*a));
    CHECK_FALSE(Cidr::parse("10.0.0.0/33").has_value());

    auto mac = MacAddress::parse("02:00:00:00:00:01");
    REQUIRE(mac);
    CHECK(mac->to_string() == "02:00:00:00:00:01");
}

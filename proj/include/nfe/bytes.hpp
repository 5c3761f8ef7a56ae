#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nfe {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline ByteView as_bytes(std::string_view s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}
inline std::string_view as_chars(ByteView b) {
    return {reinterpret_cast<const char*>(b.data()), b.size()};
}

inline std::uint16_t load_be16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}
inline std::uint32_t load_be32(const std::uint8_t* p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
           (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

// Digests. SHA-256 comes from OpenSSL, CRC-32 from zlib.
std::array<std::uint8_t, 32> sha256(ByteView data);
std::string sha256_hex(ByteView data);
std::uint32_t crc32(ByteView data);

std::string to_hex(ByteView data);
std::optional<Bytes> from_hex(std::string_view hex);

/// Lenient RFC 4648 decoder: skips whitespace, stops at the first '='.
/// Returns nullopt on characters outside the alphabet.
std::optional<Bytes> base64_decode(std::string_view text);
std::string base64_encode(ByteView data);

/// Inflate a gzip or zlib stream. nullopt on corrupt input.
std::optional<Bytes> inflate_gzip(ByteView data);
/// Raw deflate or zlib-wrapped deflate (HTTP "deflate" is used both ways).
std::optional<Bytes> inflate_deflate(ByteView data);
Bytes gzip_compress(ByteView data);

/// Side-by-side hex/ascii dump, 16 bytes per line.
std::string hex_dump(ByteView data, std::size_t max_bytes = SIZE_MAX);

std::string to_lower(std::string_view s);
std::string to_upper(std::string_view s);
std::string_view trim(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
bool istarts_with(std::string_view s, std::string_view prefix);

/// Little-endian varint/field encoder used by the on-disk record formats.
class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void varint(std::uint64_t v);
    void str(std::string_view s);
    void bytes(ByteView b);
    void raw(ByteView b) { buf_.insert(buf_.end(), b.begin(), b.end()); }

    const Bytes& data() const noexcept { return buf_; }
    Bytes take() { return std::move(buf_); }

private:
    Bytes buf_;
};

/// Bounds-checked reader matching ByteWriter. Every accessor throws
/// IoError on overrun so corrupt files never read out of bounds.
class ByteReader {
public:
    explicit ByteReader(ByteView data) : data_(data) {}

    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    std::uint64_t varint();
    std::string str();
    Bytes bytes();

    bool done() const noexcept { return pos_ == data_.size(); }
    std::size_t position() const noexcept { return pos_; }

private:
    void need(std::size_t n) const;
    ByteView data_;
    std::size_t pos_ = 0;
};

}  // namespace nfe

#include "nfe/net.hpp"

#include <arpa/inet.h>

#include <charconv>
#include <cstdio>
#include <cstring>

namespace nfe {

IpAddress IpAddress::v4(const std::uint8_t* p) {
    IpAddress a;
    a.version_ = 4;
    std::memcpy(a.bytes_.data(), p, 4);
    return a;
}

IpAddress IpAddress::v4(std::uint32_t host_order) {
    std::uint8_t b[4] = {static_cast<std::uint8_t>(host_order >> 24),
                         static_cast<std::uint8_t>(host_order >> 16),
                         static_cast<std::uint8_t>(host_order >> 8),
                         static_cast<std::uint8_t>(host_order)};
    return v4(b);
}

IpAddress IpAddress::v6(const std::uint8_t* p) {
    IpAddress a;
    a.version_ = 6;
    std::memcpy(a.bytes_.data(), p, 16);
    return a;
}

std::optional<IpAddress> IpAddress::parse(std::string_view text) {
    std::string s(text);
    std::uint8_t buf[16];
    if (inet_pton(AF_INET, s.c_str(), buf) == 1) return v4(buf);
    if (inet_pton(AF_INET6, s.c_str(), buf) == 1) return v6(buf);
    return std::nullopt;
}

std::string IpAddress::to_string() const {
    char buf[INET6_ADDRSTRLEN] = {};
    if (version_ == 4) {
        inet_ntop(AF_INET, bytes_.data(), buf, sizeof buf);
    } else if (version_ == 6) {
        inet_ntop(AF_INET6, bytes_.data(), buf, sizeof buf);
    } else {
        return "-";
    }
    return buf;
}

MacAddress::MacAddress(const std::uint8_t* p) { std::memcpy(bytes_.data(), p, 6); }

std::optional<MacAddress> MacAddress::parse(std::string_view text) {
    if (text.size() != 17) return std::nullopt;
    std::uint8_t b[6];
    for (int i = 0; i < 6; ++i) {
        auto part = text.substr(i * 3, 2);
        if (i < 5 && text[i * 3 + 2] != ':' && text[i * 3 + 2] != '-') return std::nullopt;
        unsigned v = 0;
        auto [ptr, ec] = std::from_chars(part.data(), part.data() + 2, v, 16);
        if (ec != std::errc{} || ptr != part.data() + 2) return std::nullopt;
        b[i] = static_cast<std::uint8_t>(v);
    }
    return MacAddress(b);
}

std::string MacAddress::to_string() const {
    char buf[18];
    std::snprintf(buf, sizeof buf, "%02x:%02x:%02x:%02x:%02x:%02x", bytes_[0], bytes_[1],
                  bytes_[2], bytes_[3], bytes_[4], bytes_[5]);
    return buf;
}

std::optional<Cidr> Cidr::parse(std::string_view text) {
    auto slash = text.find('/');
    auto addr = IpAddress::parse(text.substr(0, slash));
    if (!addr) return std::nullopt;
    int max_len = addr->version() == 4 ? 32 : 128;
    int len = max_len;
    if (slash != std::string_view::npos) {
        auto part = text.substr(slash + 1);
        auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), len);
        if (ec != std::errc{} || ptr != part.data() + part.size() || len < 0 || len > max_len)
            return std::nullopt;
    }
    Cidr c;
    auto bytes = addr->bytes();
    for (int bit = len; bit < max_len; ++bit) bytes[bit / 8] &= static_cast<std::uint8_t>(~(0x80 >> (bit % 8)));
    c.network_ = addr->version() == 4 ? IpAddress::v4(bytes.data()) : IpAddress::v6(bytes.data());
    c.prefix_len_ = len;
    return c;
}

bool Cidr::contains(const IpAddress& addr) const noexcept {
    if (addr.version() != network_.version()) return false;
    const auto& a = addr.bytes();
    const auto& n = network_.bytes();
    int full = prefix_len_ / 8;
    for (int i = 0; i < full; ++i)
        if (a[i] != n[i]) return false;
    int rem = prefix_len_ % 8;
    if (rem == 0) return true;
    auto mask = static_cast<std::uint8_t>(0xFF << (8 - rem));
    return (a[full] & mask) == (n[full] & mask);
}

std::string Cidr::to_string() const {
    return network_.to_string() + "/" + std::to_string(prefix_len_);
}

}  // namespace nfe

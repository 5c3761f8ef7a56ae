#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace nfe {

/// IPv4 or IPv6 address. IPv4 occupies the first four bytes; the rest are
/// zero. Ordering is (version, bytes), which keeps IPv4 before IPv6.
class IpAddress {
public:
    IpAddress() = default;
    static IpAddress v4(const std::uint8_t* p);
    static IpAddress v4(std::uint32_t host_order);
    static IpAddress v6(const std::uint8_t* p);
    static std::optional<IpAddress> parse(std::string_view text);

    int version() const noexcept { return version_; }
    const std::array<std::uint8_t, 16>& bytes() const noexcept { return bytes_; }
    std::size_t size() const noexcept { return version_ == 6 ? 16 : 4; }
    std::string to_string() const;

    auto operator<=>(const IpAddress&) const = default;

private:
    std::uint8_t version_ = 0;
    std::array<std::uint8_t, 16> bytes_{};
};

class MacAddress {
public:
    MacAddress() = default;
    explicit MacAddress(const std::uint8_t* p);
    static std::optional<MacAddress> parse(std::string_view text);
    const std::array<std::uint8_t, 6>& bytes() const noexcept { return bytes_; }
    std::string to_string() const;
    auto operator<=>(const MacAddress&) const = default;

private:
    std::array<std::uint8_t, 6> bytes_{};
};

/// Address prefix, e.g. 10.0.0.0/8 or 2001:db8::/32. A bare address parses
/// as a host prefix.
class Cidr {
public:
    static std::optional<Cidr> parse(std::string_view text);
    bool contains(const IpAddress& addr) const noexcept;
    const IpAddress& network() const noexcept { return network_; }
    int prefix_len() const noexcept { return prefix_len_; }
    std::string to_string() const;

private:
    IpAddress network_;
    int prefix_len_ = 0;
};

}  // namespace nfe

template <>
struct std::hash<nfe::IpAddress> {
    std::size_t operator()(const nfe::IpAddress& a) const noexcept {
        std::uint64_t h = 1469598103934665603ull ^ static_cast<std::uint64_t>(a.version());
        for (auto b : a.bytes()) h = (h ^ b) * 1099511628211ull;
        return static_cast<std::size_t>(h);
    }
};

#pragma once

#include "nfe/packet.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace nfe {

struct Endpoint {
    IpAddress ip;
    std::uint16_t port = 0;
    auto operator<=>(const Endpoint&) const = default;
    std::string to_string() const;
};

/// Direction-free 5-tuple. The endpoint that sorts lower (address, then
/// port) is `lo`, so both directions of a conversation share one key.
struct FlowKey {
    IpAddress ip_lo;
    IpAddress ip_hi;
    std::uint16_t port_lo = 0;
    std::uint16_t port_hi = 0;
    std::uint8_t ip_proto = 0;

    auto operator<=>(const FlowKey&) const = default;
    std::string to_string() const;
};

struct FlowKeyHash {
    std::size_t operator()(const FlowKey& k) const noexcept;
};

FlowKey make_flow_key(const Endpoint& a, const Endpoint& b, std::uint8_t proto);

/// Throws NotAFlowPacket for packets without transport ports.
FlowKey flow_key(const DecodedPacket& packet);

enum class Direction : std::uint8_t { fwd = 0, rev = 1 };
enum class CloseReason : std::uint8_t { fin, rst, idle_timeout, capture_end };

std::string_view to_string(CloseReason r);
std::string_view to_string(Direction d);

struct StreamGap {
    Direction direction = Direction::fwd;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
    bool operator==(const StreamGap&) const = default;
};

/// One UDP payload inside a concatenated direction stream.
struct Datagram {
    std::int64_t ts_us = 0;
    std::uint32_t offset = 0;
    std::uint32_t length = 0;
};

/// A captured frame retained with its session so it can be written to the
/// payload store after filtering decides how much of it to keep.
struct SessionFrame {
    std::int64_t ts_us = 0;
    std::uint32_t orig_len = 0;
    std::uint32_t header_len = 0;
    Bytes raw;
};

struct Session {
    std::uint64_t session_id = 0;
    FlowKey key;
    Endpoint initiator;
    Endpoint responder;
    std::string source_id;
    std::int64_t first_ts_us = 0;
    std::int64_t last_ts_us = 0;
    std::uint64_t packets_fwd = 0;
    std::uint64_t packets_rev = 0;
    std::uint64_t bytes_fwd = 0;
    std::uint64_t bytes_rev = 0;
    Bytes stream_fwd;
    Bytes stream_rev;
    std::vector<Datagram> datagrams_fwd;
    std::vector<Datagram> datagrams_rev;
    CloseReason close_reason = CloseReason::capture_end;
    std::vector<StreamGap> gaps;
    bool truncated = false;
    std::uint64_t overlap_conflicts = 0;
    /// Highest admission tag among member packets (see SessionAssembler::add).
    std::uint8_t admission_tag = 0;
    std::vector<SessionFrame> frames;

    bool is_tcp() const { return key.ip_proto == ip_proto::tcp; }
    const Bytes& stream(Direction d) const { return d == Direction::fwd ? stream_fwd : stream_rev; }
    const std::vector<Datagram>& datagrams(Direction d) const {
        return d == Direction::fwd ? datagrams_fwd : datagrams_rev;
    }
    std::uint64_t packets_total() const { return packets_fwd + packets_rev; }
    std::uint64_t bytes_total() const { return bytes_fwd + bytes_rev; }
    bool has_payload() const { return !stream_fwd.empty() || !stream_rev.empty(); }
};

struct AssemblerConfig {
    std::int64_t tcp_idle_timeout_us = 60'000'000;
    std::int64_t udp_idle_timeout_us = 30'000'000;
    /// Per-direction cap on reassembled bytes; beyond it the stream is cut
    /// and the session flagged `truncated`.
    std::uint64_t max_stream_bytes = 64ull * 1024 * 1024;
    /// Cap on concurrently open flows; the least recently active flow is
    /// completed early when exceeded.
    std::size_t max_sessions = 1'000'000;
    /// After FIN/FIN or RST, trailing pure ACKs within this interval stay in
    /// the closed session instead of opening a new one.
    std::int64_t close_linger_us = 2'000'000;
    bool keep_frames = true;
};

struct AssemblerStats {
    std::uint64_t packets_in = 0;
    std::uint64_t packets_not_flow = 0;
    std::uint64_t sessions_emitted = 0;
    std::uint64_t evictions = 0;
};

/// Groups packets into bidirectional sessions and reassembles TCP byte
/// streams. Input must be in capture order. Completed sessions are handed to
/// the sink in completion order; nothing is retained after emission.
class SessionAssembler {
public:
    using Sink = std::function<void(Session&&)>;
    using IdAllocator = std::function<std::uint64_t()>;

    SessionAssembler(AssemblerConfig config, Sink sink, IdAllocator ids = {});
    ~SessionAssembler();
    SessionAssembler(const SessionAssembler&) = delete;
    SessionAssembler& operator=(const SessionAssembler&) = delete;

    /// Returns false (and ignores the packet) if it has no ports. `tag` is
    /// max-merged into Session::admission_tag.
    bool add(const DecodedPacket& packet, std::uint8_t tag = 0);
    /// Completes every open session (end of capture).
    void finish();

    const AssemblerStats& stats() const noexcept { return stats_; }
    std::size_t open_sessions() const noexcept;

private:
    struct Flow;
    void emit(Flow& flow, CloseReason reason);
    void sweep(std::int64_t now_us, bool final);

    AssemblerConfig config_;
    Sink sink_;
    IdAllocator ids_;
    std::uint64_t next_local_id_ = 1;
    std::unordered_map<FlowKey, std::unique_ptr<Flow>, FlowKeyHash> flows_;
    std::int64_t last_sweep_us_ = INT64_MIN;
    std::int64_t last_seen_us_ = INT64_MIN;
    std::uint64_t arrival_ = 0;
    AssemblerStats stats_;
};

/// Convenience: assemble a whole packet sequence.
std::vector<Session> assemble(std::span<const DecodedPacket> packets, const AssemblerConfig& config = {});

}  // namespace nfe

#pragma once

// Synthetic capture corpora with embedded ground truth. Everything here is
// built from the bytes we intend to send, never from the engine's own
// decoding, so tests can use the truth as an independent oracle.

#include "nfe/bytes.hpp"
#include "nfe/malware.hpp"
#include "nfe/session.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

namespace nfe::corpus {

using json = nlohmann::json;

Endpoint ep(std::string_view ip, std::uint16_t port);

Bytes tcp_frame(const Endpoint& src, const Endpoint& dst, std::uint32_t seq, std::uint32_t ack, std::uint8_t flags,
                ByteView payload);
Bytes udp_frame(const Endpoint& src, const Endpoint& dst, ByteView payload);
Bytes icmp_echo_frame(const IpAddress& src, const IpAddress& dst);

struct Frame {
    std::int64_t ts_us = 0;
    Bytes raw;
};

/// Frames in capture order with a monotonically advancing clock.
class Capture {
public:
    explicit Capture(std::int64_t start_us = 1'700'000'000'000'000) : clock_us_(start_us) {}

    /// Appends a frame `gap_us` after the previous one.
    void add(Bytes raw, std::int64_t gap_us = 1000);
    void advance(std::int64_t us) { clock_us_ += us; }
    void set_clock(std::int64_t us) { clock_us_ = us; }
    std::int64_t clock() const { return clock_us_; }

    const std::vector<Frame>& frames() const { return frames_; }
    Bytes pcap() const;
    void save(const std::filesystem::path& path) const;

private:
    std::vector<Frame> frames_;
    std::int64_t clock_us_;
};

/// What a session must look like after assembly and parsing.
struct SessionTruth {
    std::string name;
    Endpoint client;
    Endpoint server;
    std::uint8_t ip_proto = 6;
    std::string app_protocol = "unknown";
    std::uint64_t packets = 0;
    /// In-order payload the client and server sent.
    Bytes stream_fwd;
    Bytes stream_rev;
    std::int64_t first_ts_us = 0;
    std::int64_t last_ts_us = 0;
    /// Attributes the parsers must report (subset check).
    std::multimap<std::string, std::string> attrs;
    /// SHA-256 of every file the session carries.
    std::vector<std::string> file_sha256;
    std::uint64_t payload_bytes() const { return stream_fwd.size() + stream_rev.size(); }
};

/// A TCP connection written into a capture, tracking its own truth.
class TcpConversation {
public:
    TcpConversation(Capture& cap, std::string name, Endpoint client, Endpoint server, std::uint32_t isn_c = 1000,
                    std::uint32_t isn_s = 50000);

    void open();
    /// Sends `data` in mss-sized segments, in order.
    void send(Direction d, ByteView data, std::size_t mss = 1460);
    void send(Direction d, std::string_view text, std::size_t mss = 1460) { send(d, as_bytes(text), mss); }
    /// Sends `data` in mss-sized segments emitted in `order` (segment indices;
    /// a repeated index is a retransmission).
    void send_ordered(Direction d, ByteView data, std::size_t mss, const std::vector<std::size_t>& order);
    void close();
    void reset();

    SessionTruth& truth() { return truth_; }

private:
    void emit(Direction d, std::uint32_t seq, std::uint8_t flags, ByteView payload);

    Capture& cap_;
    SessionTruth truth_;
    std::uint32_t seq_c_;
    std::uint32_t seq_s_;
};

/// A UDP exchange: each datagram is one frame.
class UdpExchange {
public:
    UdpExchange(Capture& cap, std::string name, Endpoint client, Endpoint server);
    void send(Direction d, ByteView payload, std::int64_t gap_us = 1000);
    void send(Direction d, std::string_view text, std::int64_t gap_us = 1000) { send(d, as_bytes(text), gap_us); }
    SessionTruth& truth() { return truth_; }

private:
    Capture& cap_;
    SessionTruth truth_;
};

struct Corpus {
    Capture capture;
    std::vector<SessionTruth> sessions;
    /// Frames without transport ports.
    std::uint64_t non_flow_packets = 0;

    const SessionTruth& session(std::string_view name) const;
    json truth_json() const;
};

/// Minimal but structurally valid executables.
Bytes make_pe(ByteView body);
Bytes make_elf(ByteView body);

/// DNS wire messages.
Bytes dns_query(std::uint16_t id, std::string_view qname, std::uint16_t qtype = 1);
Bytes dns_response_a(std::uint16_t id, std::string_view qname, const std::vector<std::string>& addresses);

/// HTTP GET (10 frames), download of a PE, out-of-order and retransmitted
/// responses, SMTP with a base64 PE attachment, DNS, FTP with a passive data
/// transfer, SIP INVITE, a 1-to-10 scan star and one ICMP packet.
Corpus protocol_corpus();

/// Just the 10-frame HTTP GET connection.
Corpus http_get_corpus();

/// Exactly 12 sessions: 5 HTTP, 4 DNS, 2 SMTP, 1 FTP control connection.
Corpus facet_corpus();

/// Random mix of HTTP and DNS sessions until at least `min_packets` frames.
Corpus throughput_corpus(std::size_t min_packets, std::uint64_t seed);

struct AnomalyCorpusSpec {
    std::size_t windows = 20;
    std::size_t sessions_per_window = 60;
    std::int64_t window_us = 60'000'000;
    std::size_t payload_bytes = 300;
    /// Window index whose datagrams are `burst_factor` times larger; -1 for none.
    int burst_window = -1;
    std::size_t burst_factor = 5;
};

/// One UDP datagram session per second at a constant rate.
Corpus anomaly_corpus(const AnomalyCorpusSpec& spec);

/// A feed line plus the sessions (by truth name) it must correlate with.
struct SocCase {
    std::string line;
    std::vector<std::string> expected_sessions;
};

/// SOC feed over the protocol corpus with ground-truth session sets
/// computed by a direct predicate over the corpus truth.
std::vector<SocCase> soc_feed(const Corpus& corpus, std::int64_t slack_us = 30'000'000);

std::string iso8601(std::int64_t ts_us);

struct LabeledSample {
    Bytes bytes;
    int family = 0;
};

/// `families` executable templates over disjoint byte palettes (drawn from
/// `seed`), each instantiated `per_family` times with `mutation` fraction of
/// bytes altered (drawn from `instance_seed`).
std::vector<LabeledSample> static_family_corpus(int families, int per_family, double mutation, std::uint64_t seed,
                                                std::uint64_t instance_seed, std::size_t size = 16 * 1024);

struct LabeledProfile {
    BehavioralProfile profile;
    int family = 0;
};

/// `templates` disjoint sets of `triples_per_template` triples, each
/// instance keeping every triple with probability 1 - noise and adding
/// noise * size random extra triples.
std::vector<LabeledProfile> behavior_corpus(int templates, int per_template, int triples_per_template, double noise,
                                            std::uint64_t seed);

}  // namespace nfe::corpus

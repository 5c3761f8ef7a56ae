#include "nfe/session.hpp"

#include "nfe/errors.hpp"

#include <algorithm>
#include <limits>

namespace nfe {

std::string Endpoint::to_string() const {
    if (ip.version() == 6) return "[" + ip.to_string() + "]:" + std::to_string(port);
    return ip.to_string() + ":" + std::to_string(port);
}

std::string FlowKey::to_string() const {
    std::string proto = ip_proto == ip_proto::tcp ? "tcp" : ip_proto == ip_proto::udp ? "udp"
                                                                                      : std::to_string(ip_proto);
    return proto + " " + Endpoint{ip_lo, port_lo}.to_string() + " <-> " +
           Endpoint{ip_hi, port_hi}.to_string();
}

std::size_t FlowKeyHash::operator()(const FlowKey& k) const noexcept {
    std::hash<IpAddress> h;
    std::size_t v = h(k.ip_lo);
    v ^= h(k.ip_hi) + 0x9e3779b97f4a7c15ull + (v << 6) + (v >> 2);
    v ^= (std::size_t{k.port_lo} << 24) ^ (std::size_t{k.port_hi} << 8) ^ k.ip_proto;
    return v * 0x9E3779B97F4A7C15ull;
}

FlowKey make_flow_key(const Endpoint& a, const Endpoint& b, std::uint8_t proto) {
    FlowKey k;
    k.ip_proto = proto;
    const bool a_first = a <= b;
    const Endpoint& lo = a_first ? a : b;
    const Endpoint& hi = a_first ? b : a;
    k.ip_lo = lo.ip;
    k.port_lo = lo.port;
    k.ip_hi = hi.ip;
    k.port_hi = hi.port;
    return k;
}

FlowKey flow_key(const DecodedPacket& p) {
    if (!p.has_ports() || !p.ip_src || !p.ip_dst || !p.ip_proto ||
        (*p.ip_proto != ip_proto::tcp && *p.ip_proto != ip_proto::udp)) {
        throw NotAFlowPacket("packet " + std::to_string(p.packet_id) + " has no transport ports");
    }
    return make_flow_key({*p.ip_src, *p.tp_src}, {*p.ip_dst, *p.tp_dst}, *p.ip_proto);
}

std::string_view to_string(CloseReason r) {
    switch (r) {
        case CloseReason::fin: return "fin";
        case CloseReason::rst: return "rst";
        case CloseReason::idle_timeout: return "idle_timeout";
        case CloseReason::capture_end: return "capture_end";
    }
    return "capture_end";
}

std::string_view to_string(Direction d) { return d == Direction::fwd ? "fwd" : "rev"; }

namespace {

struct Segment {
    std::int64_t rel;  // data offset relative to the direction's reference seq
    Bytes data;
};

// Per-direction TCP state. Sequence numbers are unwrapped against the most
// recently seen value so streams may cross the 2^32 boundary.
struct TcpDirection {
    bool have_ref = false;
    std::uint32_t last_seq = 0;
    std::int64_t last_rel = 0;
    bool syn_seen = false;
    std::int64_t syn_rel = 0;
    bool fin_seen = false;
    std::uint64_t buffered = 0;
    std::vector<Segment> segments;

    std::int64_t unwrap(std::uint32_t seq) {
        if (!have_ref) {
            have_ref = true;
            last_seq = seq;
            last_rel = 0;
            return 0;
        }
        auto diff = static_cast<std::int32_t>(seq - last_seq);
        std::int64_t rel = last_rel + diff;
        if (diff > 0) {
            last_seq = seq;
            last_rel = rel;
        }
        return rel;
    }
};

// Lays segments down in arrival order: the first bytes to arrive for an
// offset win; later differing bytes count as conflicting overlaps.
Bytes reassemble(TcpDirection& dir, Direction which, std::uint64_t cap, Session& s) {
    if (dir.segments.empty()) return {};
    std::int64_t base = std::numeric_limits<std::int64_t>::max();
    if (dir.syn_seen) {
        base = dir.syn_rel + 1;
    } else {
        for (const auto& seg : dir.segments) base = std::min(base, seg.rel);
    }
    std::int64_t end = base;
    for (const auto& seg : dir.segments)
        end = std::max(end, seg.rel + static_cast<std::int64_t>(seg.data.size()));
    std::uint64_t length = static_cast<std::uint64_t>(end - base);
    if (length > cap) {
        length = cap;
        s.truncated = true;
    }
    Bytes out(length, 0);
    std::vector<std::uint8_t> covered(length, 0);
    for (const auto& seg : dir.segments) {
        std::int64_t start = seg.rel - base;
        for (std::size_t i = 0; i < seg.data.size(); ++i) {
            std::int64_t pos = start + static_cast<std::int64_t>(i);
            if (pos < 0) continue;
            if (static_cast<std::uint64_t>(pos) >= length) break;
            if (!covered[pos]) {
                covered[pos] = 1;
                out[pos] = seg.data[i];
            } else if (out[pos] != seg.data[i]) {
                ++s.overlap_conflicts;
            }
        }
    }
    std::uint64_t i = 0;
    while (i < length) {
        if (covered[i]) {
            ++i;
            continue;
        }
        std::uint64_t j = i;
        while (j < length && !covered[j]) ++j;
        s.gaps.push_back({which, i, j - i});
        i = j;
    }
    return out;
}

}  // namespace

struct SessionAssembler::Flow {
    Session session;
    TcpDirection tcp[2];
    bool closed = false;
    std::int64_t close_ts = 0;
    CloseReason close_reason = CloseReason::capture_end;
    std::uint64_t order = 0;
};

SessionAssembler::SessionAssembler(AssemblerConfig config, Sink sink, IdAllocator ids)
    : config_(config), sink_(std::move(sink)), ids_(std::move(ids)) {}

SessionAssembler::~SessionAssembler() = default;

std::size_t SessionAssembler::open_sessions() const noexcept { return flows_.size(); }

void SessionAssembler::emit(Flow& flow, CloseReason reason) {
    Session& s = flow.session;
    s.close_reason = reason;
    if (s.is_tcp()) {
        s.stream_fwd = reassemble(flow.tcp[0], Direction::fwd, config_.max_stream_bytes, s);
        s.stream_rev = reassemble(flow.tcp[1], Direction::rev, config_.max_stream_bytes, s);
    }
    ++stats_.sessions_emitted;
    sink_(std::move(s));
}

void SessionAssembler::sweep(std::int64_t now_us, bool final) {
    struct Due {
        std::int64_t at;
        std::uint64_t id;
        FlowKey key;
        CloseReason reason;
    };
    std::vector<Due> due;
    for (auto& [key, flow] : flows_) {
        const auto& s = flow->session;
        std::int64_t timeout = s.is_tcp() ? config_.tcp_idle_timeout_us : config_.udp_idle_timeout_us;
        if (flow->closed) {
            if (final || now_us - flow->close_ts > config_.close_linger_us)
                due.push_back({flow->close_ts, s.session_id, key, flow->close_reason});
        } else if (now_us - s.last_ts_us > timeout) {
            due.push_back({s.last_ts_us + timeout, s.session_id, key, CloseReason::idle_timeout});
        } else if (final) {
            due.push_back({now_us, s.session_id, key, CloseReason::capture_end});
        }
    }
    std::sort(due.begin(), due.end(), [](const Due& a, const Due& b) {
        return a.at != b.at ? a.at < b.at : a.id < b.id;
    });
    for (auto& d : due) {
        auto it = flows_.find(d.key);
        emit(*it->second, d.reason);
        flows_.erase(it);
    }
}

bool SessionAssembler::add(const DecodedPacket& p, std::uint8_t tag) {
    ++stats_.packets_in;
    if (!p.has_ports() || !p.ip_src || !p.ip_dst ||
        (p.ip_proto != ip_proto::tcp && p.ip_proto != ip_proto::udp)) {
        ++stats_.packets_not_flow;
        return false;
    }

    last_seen_us_ = std::max(last_seen_us_, p.ts_us);
    // Periodic idle sweep, at most once per second of capture time.
    if (last_sweep_us_ == INT64_MIN) {
        last_sweep_us_ = p.ts_us;
    } else if (p.ts_us - last_sweep_us_ >= 1'000'000) {
        sweep(p.ts_us, false);
        last_sweep_us_ = p.ts_us;
    }

    Endpoint src{*p.ip_src, *p.tp_src};
    Endpoint dst{*p.ip_dst, *p.tp_dst};
    FlowKey key = make_flow_key(src, dst, *p.ip_proto);
    const bool tcp = *p.ip_proto == ip_proto::tcp;
    const bool pure_control = tcp && p.payload_len == 0 && !(p.tcp_flags & tcp_flag::syn);

    auto it = flows_.find(key);
    if (it != flows_.end()) {
        Flow& f = *it->second;
        std::int64_t timeout = tcp ? config_.tcp_idle_timeout_us : config_.udp_idle_timeout_us;
        bool split = false;
        CloseReason reason = CloseReason::idle_timeout;
        if (f.closed) {
            if (!(pure_control && p.ts_us - f.close_ts <= config_.close_linger_us)) {
                split = true;
                reason = f.close_reason;
            }
        } else if (p.ts_us - f.session.last_ts_us > timeout) {
            split = true;
        }
        if (split) {
            emit(f, reason);
            flows_.erase(it);
            it = flows_.end();
        }
    }

    if (it == flows_.end()) {
        if (flows_.size() >= config_.max_sessions) {
            auto victim = std::min_element(flows_.begin(), flows_.end(), [](const auto& a, const auto& b) {
                return a.second->session.last_ts_us != b.second->session.last_ts_us
                           ? a.second->session.last_ts_us < b.second->session.last_ts_us
                           : a.second->order < b.second->order;
            });
            ++stats_.evictions;
            emit(*victim->second, CloseReason::idle_timeout);
            flows_.erase(victim);
        }
        auto flow = std::make_unique<Flow>();
        Session& s = flow->session;
        s.session_id = ids_ ? ids_() : next_local_id_++;
        s.key = key;
        s.source_id = p.source_id;
        const bool synack = tcp && (p.tcp_flags & tcp_flag::syn) && (p.tcp_flags & tcp_flag::ack);
        s.initiator = synack ? dst : src;
        s.responder = synack ? src : dst;
        s.first_ts_us = p.ts_us;
        s.last_ts_us = p.ts_us;
        flow->order = arrival_++;
        it = flows_.emplace(key, std::move(flow)).first;
    }

    Flow& f = *it->second;
    Session& s = f.session;
    const Direction dir = src == s.initiator ? Direction::fwd : Direction::rev;
    const int d = static_cast<int>(dir);
    s.last_ts_us = std::max(s.last_ts_us, p.ts_us);
    s.admission_tag = std::max(s.admission_tag, tag);
    (dir == Direction::fwd ? s.packets_fwd : s.packets_rev) += 1;
    (dir == Direction::fwd ? s.bytes_fwd : s.bytes_rev) += p.payload_len;
    if (config_.keep_frames) s.frames.push_back({p.ts_us, p.orig_len, header_length(p), p.raw});

    auto payload = p.payload();
    if (tcp) {
        TcpDirection& td = f.tcp[d];
        std::int64_t rel = td.unwrap(p.tcp_seq);
        if (p.tcp_flags & tcp_flag::syn) {
            td.syn_seen = true;
            td.syn_rel = rel;
            rel += 1;  // SYN consumes one sequence number
        }
        if (!payload.empty()) {
            std::size_t keep = payload.size();
            if (td.buffered + keep > config_.max_stream_bytes) {
                keep = td.buffered >= config_.max_stream_bytes ? 0 : config_.max_stream_bytes - td.buffered;
                s.truncated = true;
            }
            if (keep > 0) {
                td.segments.push_back({rel, Bytes(payload.begin(), payload.begin() + keep)});
                td.buffered += keep;
            }
        }
        if (p.tcp_flags & tcp_flag::rst) {
            if (!f.closed) {
                f.closed = true;
                f.close_ts = p.ts_us;
                f.close_reason = CloseReason::rst;
            }
        } else if (p.tcp_flags & tcp_flag::fin) {
            td.fin_seen = true;
            if (f.tcp[0].fin_seen && f.tcp[1].fin_seen && !f.closed) {
                f.closed = true;
                f.close_ts = p.ts_us;
                f.close_reason = CloseReason::fin;
            }
        }
    } else {
        Bytes& stream = dir == Direction::fwd ? s.stream_fwd : s.stream_rev;
        auto& dgrams = dir == Direction::fwd ? s.datagrams_fwd : s.datagrams_rev;
        std::size_t keep = payload.size();
        if (stream.size() + keep > config_.max_stream_bytes) {
            keep = stream.size() >= config_.max_stream_bytes ? 0 : config_.max_stream_bytes - stream.size();
            s.truncated = true;
        }
        dgrams.push_back({p.ts_us, static_cast<std::uint32_t>(stream.size()), static_cast<std::uint32_t>(keep)});
        stream.insert(stream.end(), payload.begin(), payload.begin() + keep);
    }
    return true;
}

void SessionAssembler::finish() {
    sweep(last_seen_us_, true);
}

std::vector<Session> assemble(std::span<const DecodedPacket> packets, const AssemblerConfig& config) {
    std::vector<Session> out;
    SessionAssembler a(config, [&](Session&& s) { out.push_back(std::move(s)); });
    for (const auto& p : packets) a.add(p);
    a.finish();
    return out;
}

}  // namespace nfe

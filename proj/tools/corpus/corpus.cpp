#include "corpus.hpp"

#include "nfe/pcap.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <functional>
#include <set>
#include <stdexcept>

namespace nfe::corpus {

namespace {

constexpr std::uint8_t kMacA[6] = {0x02, 0, 0, 0, 0, 0x01};
constexpr std::uint8_t kMacB[6] = {0x02, 0, 0, 0, 0, 0x02};

void put16(Bytes& b, std::size_t at, std::uint16_t v) {
    b[at] = static_cast<std::uint8_t>(v >> 8);
    b[at + 1] = static_cast<std::uint8_t>(v);
}

void put32(Bytes& b, std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b[at + i] = static_cast<std::uint8_t>(v >> (24 - 8 * i));
}

std::uint32_t sum16(const std::uint8_t* p, std::size_t n, std::uint32_t acc = 0) {
    for (std::size_t i = 0; i + 1 < n; i += 2) acc += static_cast<std::uint32_t>((p[i] << 8) | p[i + 1]);
    if (n & 1) acc += static_cast<std::uint32_t>(p[n - 1] << 8);
    return acc;
}

std::uint16_t fold(std::uint32_t acc) {
    while (acc >> 16) acc = (acc & 0xffff) + (acc >> 16);
    return static_cast<std::uint16_t>(~acc);
}

const std::uint8_t* v4_bytes(const IpAddress& a) { return a.bytes().data(); }

// Ethernet + IPv4 around a transport segment. `checksum_at` is the offset of
// the transport checksum inside `transport`, or npos for none.
Bytes ipv4_frame(const IpAddress& src, const IpAddress& dst, std::uint8_t proto, Bytes transport,
                 std::size_t checksum_at) {
    static std::uint16_t ip_id = 1;
    if (checksum_at != std::string::npos) {
        std::uint8_t pseudo[12] = {};
        std::copy_n(v4_bytes(src), 4, pseudo);
        std::copy_n(v4_bytes(dst), 4, pseudo + 4);
        pseudo[9] = proto;
        pseudo[10] = static_cast<std::uint8_t>(transport.size() >> 8);
        pseudo[11] = static_cast<std::uint8_t>(transport.size());
        auto c = fold(sum16(transport.data(), transport.size(), sum16(pseudo, 12)));
        if (proto == 17 && c == 0) c = 0xffff;
        put16(transport, checksum_at, c);
    }
    Bytes f(14 + 20 + transport.size());
    std::copy(std::begin(kMacB), std::end(kMacB), f.begin());
    std::copy(std::begin(kMacA), std::end(kMacA), f.begin() + 6);
    put16(f, 12, 0x0800);
    f[14] = 0x45;
    put16(f, 16, static_cast<std::uint16_t>(20 + transport.size()));
    put16(f, 18, ip_id++);
    f[20] = 0x40;  // don't fragment
    f[22] = 64;
    f[23] = proto;
    std::copy_n(v4_bytes(src), 4, f.begin() + 26);
    std::copy_n(v4_bytes(dst), 4, f.begin() + 30);
    put16(f, 24, fold(sum16(f.data() + 14, 20)));
    std::copy(transport.begin(), transport.end(), f.begin() + 34);
    return f;
}

Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

void append(Bytes& b, std::string_view s) { b.insert(b.end(), s.begin(), s.end()); }

std::string sha(ByteView b) { return sha256_hex(b); }

std::string wrap76(const std::string& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); i += 76) out += s.substr(i, 76) + "\r\n";
    return out;
}

Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
    Bytes b(n);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    return b;
}

std::string html_page(std::string_view title, std::size_t approx) {
    std::string s = "<html><head><title>" + std::string(title) + "</title></head><body>\n";
    int i = 0;
    while (s.size() < approx) s += "<p>paragraph " + std::to_string(i++) + " of " + std::string(title) + "</p>\n";
    return s + "</body></html>\n";
}

void add_http_exchange(TcpConversation& c, const std::string& host, const std::string& uri, const Bytes& body,
                       const std::string& content_type, std::size_t mss = 1460,
                       const std::function<std::vector<std::size_t>(std::size_t)>& order = {},
                       const std::string& encoding = {}) {
    std::string req = "GET " + uri + " HTTP/1.1\r\nHost: " + host + "\r\nUser-Agent: corpus/1.0\r\n\r\n";
    c.send(Direction::fwd, req);
    Bytes wire = encoding == "gzip" ? gzip_compress(body) : body;
    std::string head = "HTTP/1.1 200 OK\r\nContent-Type: " + content_type + "\r\nContent-Length: " +
                       std::to_string(wire.size()) + "\r\n";
    if (!encoding.empty()) head += "Content-Encoding: " + encoding + "\r\n";
    head += "\r\n";
    Bytes resp = to_bytes(head);
    resp.insert(resp.end(), wire.begin(), wire.end());
    if (order) {
        c.send_ordered(Direction::rev, resp, mss, order((resp.size() + mss - 1) / mss));
    } else {
        c.send(Direction::rev, resp, mss);
    }
    auto& t = c.truth();
    t.app_protocol = "http";
    t.attrs.emplace("http.method", "GET");
    t.attrs.emplace("http.uri", uri);
    t.attrs.emplace("http.host", host);
    t.attrs.emplace("http.status", "200");
    t.attrs.emplace("http.content_type", content_type);
    t.file_sha256.push_back(sha(body));
}

}  // namespace

Endpoint ep(std::string_view ip, std::uint16_t port) {
    auto a = IpAddress::parse(ip);
    if (!a) throw std::invalid_argument("bad address " + std::string(ip));
    return Endpoint{*a, port};
}

Bytes tcp_frame(const Endpoint& src, const Endpoint& dst, std::uint32_t seq, std::uint32_t ack, std::uint8_t flags,
                ByteView payload) {
    Bytes t(20 + payload.size());
    put16(t, 0, src.port);
    put16(t, 2, dst.port);
    put32(t, 4, seq);
    put32(t, 8, ack);
    t[12] = 5 << 4;
    t[13] = flags;
    put16(t, 14, 65535);
    std::copy(payload.begin(), payload.end(), t.begin() + 20);
    return ipv4_frame(src.ip, dst.ip, 6, std::move(t), 16);
}

Bytes udp_frame(const Endpoint& src, const Endpoint& dst, ByteView payload) {
    Bytes u(8 + payload.size());
    put16(u, 0, src.port);
    put16(u, 2, dst.port);
    put16(u, 4, static_cast<std::uint16_t>(u.size()));
    std::copy(payload.begin(), payload.end(), u.begin() + 8);
    return ipv4_frame(src.ip, dst.ip, 17, std::move(u), 6);
}

Bytes icmp_echo_frame(const IpAddress& src, const IpAddress& dst) {
    Bytes m(8 + 16, 0x61);
    m[0] = 8;
    m[1] = 0;
    m[2] = m[3] = 0;
    put16(m, 4, 1);
    put16(m, 6, 1);
    put16(m, 2, fold(sum16(m.data(), m.size())));
    return ipv4_frame(src, dst, 1, std::move(m), std::string::npos);
}

void Capture::add(Bytes raw, std::int64_t gap_us) {
    clock_us_ += gap_us;
    frames_.push_back({clock_us_, std::move(raw)});
}

Bytes Capture::pcap() const {
    PcapWriter w(LinkType::ethernet);
    for (const auto& f : frames_) w.write(f.ts_us, f.raw);
    return w.image();
}

void Capture::save(const std::filesystem::path& path) const {
    PcapWriter w(LinkType::ethernet);
    for (const auto& f : frames_) w.write(f.ts_us, f.raw);
    w.save(path);
}

TcpConversation::TcpConversation(Capture& cap, std::string name, Endpoint client, Endpoint server,
                                 std::uint32_t isn_c, std::uint32_t isn_s)
    : cap_(cap), seq_c_(isn_c), seq_s_(isn_s) {
    truth_.name = std::move(name);
    truth_.client = client;
    truth_.server = server;
    truth_.ip_proto = 6;
}

void TcpConversation::emit(Direction d, std::uint32_t seq, std::uint8_t flags, ByteView payload) {
    const bool fwd = d == Direction::fwd;
    const auto& src = fwd ? truth_.client : truth_.server;
    const auto& dst = fwd ? truth_.server : truth_.client;
    const std::uint32_t ack = fwd ? seq_s_ : seq_c_;
    cap_.add(tcp_frame(src, dst, seq, (flags & tcp_flag::ack) ? ack : 0, flags, payload));
    if (truth_.packets == 0) truth_.first_ts_us = cap_.clock();
    truth_.last_ts_us = cap_.clock();
    ++truth_.packets;
}

void TcpConversation::open() {
    emit(Direction::fwd, seq_c_++, tcp_flag::syn, {});
    emit(Direction::rev, seq_s_++, tcp_flag::syn | tcp_flag::ack, {});
    emit(Direction::fwd, seq_c_, tcp_flag::ack, {});
}

void TcpConversation::send(Direction d, ByteView data, std::size_t mss) {
    std::vector<std::size_t> order((data.size() + mss - 1) / mss);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    send_ordered(d, data, mss, order);
}

void TcpConversation::send_ordered(Direction d, ByteView data, std::size_t mss, const std::vector<std::size_t>& order) {
    auto& seq = d == Direction::fwd ? seq_c_ : seq_s_;
    const std::uint32_t base = seq;
    // Acknowledgements reflect everything the other side has sent so far.
    for (auto i : order) {
        auto off = i * mss;
        if (off >= data.size()) throw std::out_of_range("segment index beyond data");
        auto len = std::min(mss, data.size() - off);
        emit(d, base + static_cast<std::uint32_t>(off), tcp_flag::ack | tcp_flag::psh, data.subspan(off, len));
    }
    seq = base + static_cast<std::uint32_t>(data.size());
    auto& stream = d == Direction::fwd ? truth_.stream_fwd : truth_.stream_rev;
    stream.insert(stream.end(), data.begin(), data.end());
}

void TcpConversation::close() {
    emit(Direction::fwd, seq_c_++, tcp_flag::fin | tcp_flag::ack, {});
    emit(Direction::rev, seq_s_++, tcp_flag::fin | tcp_flag::ack, {});
    emit(Direction::fwd, seq_c_, tcp_flag::ack, {});
}

void TcpConversation::reset() { emit(Direction::rev, seq_s_, tcp_flag::rst | tcp_flag::ack, {}); }

UdpExchange::UdpExchange(Capture& cap, std::string name, Endpoint client, Endpoint server) : cap_(cap) {
    truth_.name = std::move(name);
    truth_.client = client;
    truth_.server = server;
    truth_.ip_proto = 17;
}

void UdpExchange::send(Direction d, ByteView payload, std::int64_t gap_us) {
    const bool fwd = d == Direction::fwd;
    cap_.add(fwd ? udp_frame(truth_.client, truth_.server, payload) : udp_frame(truth_.server, truth_.client, payload),
             gap_us);
    if (truth_.packets == 0) truth_.first_ts_us = cap_.clock();
    truth_.last_ts_us = cap_.clock();
    ++truth_.packets;
    auto& stream = fwd ? truth_.stream_fwd : truth_.stream_rev;
    stream.insert(stream.end(), payload.begin(), payload.end());
}

const SessionTruth& Corpus::session(std::string_view name) const {
    for (const auto& s : sessions) {
        if (s.name == name) return s;
    }
    throw std::out_of_range("no corpus session " + std::string(name));
}

json Corpus::truth_json() const {
    json out = {{"packets", capture.frames().size()}, {"non_flow_packets", non_flow_packets}, {"sessions", json::array()}};
    for (const auto& s : sessions) {
        json attrs = json::object();
        for (const auto& [k, v] : s.attrs) attrs[k].push_back(v);
        out["sessions"].push_back({{"name", s.name},
                                   {"client", s.client.to_string()},
                                   {"server", s.server.to_string()},
                                   {"ip_proto", s.ip_proto},
                                   {"app_protocol", s.app_protocol},
                                   {"packets", s.packets},
                                   {"stream_fwd_sha256", sha(s.stream_fwd)},
                                   {"stream_rev_sha256", sha(s.stream_rev)},
                                   {"stream_fwd_len", s.stream_fwd.size()},
                                   {"stream_rev_len", s.stream_rev.size()},
                                   {"first_ts_us", s.first_ts_us},
                                   {"last_ts_us", s.last_ts_us},
                                   {"attrs", attrs},
                                   {"files", s.file_sha256}});
    }
    return out;
}

Bytes make_pe(ByteView body) {
    Bytes b(0x80 + 24, 0);
    b[0] = 'M';
    b[1] = 'Z';
    b[0x3C] = 0x80;
    b[0x80] = 'P';
    b[0x81] = 'E';
    b[0x84] = 0x4c;  // i386
    b[0x85] = 0x01;
    b.insert(b.end(), body.begin(), body.end());
    return b;
}

Bytes make_elf(ByteView body) {
    Bytes b(64, 0);
    b[0] = 0x7f;
    b[1] = 'E';
    b[2] = 'L';
    b[3] = 'F';
    b[4] = 2;  // 64-bit
    b[5] = 1;  // little endian
    b[6] = 1;
    b[16] = 2;  // ET_EXEC
    b[18] = 0x3e;
    b.insert(b.end(), body.begin(), body.end());
    return b;
}

namespace {

void put_qname(Bytes& b, std::string_view name) {
    std::size_t start = 0;
    while (start < name.size()) {
        auto dot = name.find('.', start);
        if (dot == std::string_view::npos) dot = name.size();
        b.push_back(static_cast<std::uint8_t>(dot - start));
        append(b, name.substr(start, dot - start));
        start = dot + 1;
    }
    b.push_back(0);
}

Bytes dns_header(std::uint16_t id, std::uint16_t flags, std::uint16_t qd, std::uint16_t an) {
    Bytes b(12, 0);
    put16(b, 0, id);
    put16(b, 2, flags);
    put16(b, 4, qd);
    put16(b, 6, an);
    return b;
}

}  // namespace

Bytes dns_query(std::uint16_t id, std::string_view qname, std::uint16_t qtype) {
    Bytes b = dns_header(id, 0x0100, 1, 0);
    put_qname(b, qname);
    b.push_back(static_cast<std::uint8_t>(qtype >> 8));
    b.push_back(static_cast<std::uint8_t>(qtype));
    b.push_back(0);
    b.push_back(1);
    return b;
}

Bytes dns_response_a(std::uint16_t id, std::string_view qname, const std::vector<std::string>& addresses) {
    Bytes b = dns_header(id, 0x8180, 1, static_cast<std::uint16_t>(addresses.size()));
    put_qname(b, qname);
    for (std::uint8_t x : {0, 1, 0, 1}) b.push_back(x);
    for (const auto& a : addresses) {
        auto ip = IpAddress::parse(a);
        if (!ip) throw std::invalid_argument("bad address " + a);
        for (std::uint8_t x : {0xc0, 0x0c, 0, 1, 0, 1, 0, 0, 0x0e, 0x10, 0, 4}) b.push_back(x);
        b.insert(b.end(), v4_bytes(*ip), v4_bytes(*ip) + 4);
    }
    return b;
}

namespace {

SessionTruth http_get(Capture& cap, const Endpoint& client, const Endpoint& server) {
    TcpConversation c(cap, "http_get", client, server, 1000, 70000);
    c.open();
    auto body = to_bytes(html_page("index", 3600));
    add_http_exchange(c, "www.example.com", "/index.html", body, "text/html");
    c.close();
    return c.truth();
}

SessionTruth dns_exchange(Capture& cap, std::string name, const Endpoint& client, const Endpoint& server,
                          std::uint16_t id, const std::string& qname, const std::string& answer) {
    UdpExchange u(cap, std::move(name), client, server);
    u.send(Direction::fwd, dns_query(id, qname));
    u.send(Direction::rev, dns_response_a(id, qname, {answer}));
    auto& t = u.truth();
    t.app_protocol = "dns";
    t.attrs.emplace("dns.qname", qname);
    t.attrs.emplace("dns.qtype", "A");
    t.attrs.emplace("dns.answers", answer);
    t.attrs.emplace("dns.rcode", "0");
    return t;
}

SessionTruth smtp_session(Capture& cap, std::string name, const Endpoint& client, const Endpoint& server,
                          const std::string& from, const std::string& to, const std::string& subject,
                          const std::optional<std::pair<std::string, Bytes>>& attachment) {
    TcpConversation c(cap, std::move(name), client, server, 5000, 90000);
    c.open();
    c.send(Direction::rev, "220 mail.example.com ESMTP ready\r\n");
    c.send(Direction::fwd, "EHLO client.example.com\r\n");
    c.send(Direction::rev, "250-mail.example.com\r\n250 8BITMIME\r\n");
    c.send(Direction::fwd, "MAIL FROM:<" + from + ">\r\n");
    c.send(Direction::rev, "250 OK\r\n");
    c.send(Direction::fwd, "RCPT TO:<" + to + ">\r\n");
    c.send(Direction::rev, "250 OK\r\n");
    c.send(Direction::fwd, "DATA\r\n");
    c.send(Direction::rev, "354 End data with <CR><LF>.<CR><LF>\r\n");
    std::string msg = "From: <" + from + ">\r\nTo: <" + to + ">\r\nSubject: " + subject + "\r\nMIME-Version: 1.0\r\n";
    if (attachment) {
        msg += "Content-Type: multipart/mixed; boundary=\"BOUNDARY\"\r\n\r\n";
        msg += "--BOUNDARY\r\nContent-Type: text/plain\r\n\r\nPlease see the attached file.\r\n";
        msg += "--BOUNDARY\r\nContent-Type: application/octet-stream; name=\"" + attachment->first +
               "\"\r\nContent-Transfer-Encoding: base64\r\nContent-Disposition: attachment; filename=\"" +
               attachment->first + "\"\r\n\r\n";
        msg += wrap76(base64_encode(attachment->second));
        msg += "--BOUNDARY--\r\n";
    } else {
        msg += "Content-Type: text/plain\r\n\r\nQuarterly numbers attached inline.\r\n";
    }
    msg += ".\r\n";
    c.send(Direction::fwd, msg);
    c.send(Direction::rev, "250 OK queued\r\n");
    c.send(Direction::fwd, "QUIT\r\n");
    c.send(Direction::rev, "221 Bye\r\n");
    c.close();
    auto& t = c.truth();
    t.app_protocol = "smtp";
    t.attrs.emplace("mail.from", from);
    t.attrs.emplace("mail.to", to);
    t.attrs.emplace("mail.subject", subject);
    if (attachment) {
        t.attrs.emplace("mail.attachment_name", attachment->first);
        t.file_sha256.push_back(sha(attachment->second));
    }
    return t;
}

// Control connection only, or control plus a passive-mode RETR.
std::vector<SessionTruth> ftp_session(Capture& cap, const Endpoint& client, const Endpoint& server,
                                      const std::optional<std::pair<std::string, Bytes>>& file,
                                      std::string name = "ftp_control") {
    std::vector<SessionTruth> out;
    TcpConversation c(cap, std::move(name), client, server, 7000, 110000);
    c.open();
    c.send(Direction::rev, "220 ProFTPD FTP server ready\r\n");
    c.send(Direction::fwd, "USER alice\r\n");
    c.send(Direction::rev, "331 Password required\r\n");
    c.send(Direction::fwd, "PASS s3cret\r\n");
    c.send(Direction::rev, "230 Logged in\r\n");
    c.truth().attrs.emplace("ftp.user", "alice");
    c.truth().attrs.emplace("ftp.command", "USER");
    if (file) {
        const std::uint16_t data_port = 50000;
        const auto b = server.ip.bytes();
        c.send(Direction::fwd, "PASV\r\n");
        c.send(Direction::rev, "227 Entering Passive Mode (" + std::to_string(b[0]) + "," + std::to_string(b[1]) +
                                   "," + std::to_string(b[2]) + "," + std::to_string(b[3]) + "," +
                                   std::to_string(data_port / 256) + "," + std::to_string(data_port % 256) + ")\r\n");
        c.send(Direction::fwd, "RETR " + file->first + "\r\n");
        c.send(Direction::rev, "150 Opening BINARY mode data connection\r\n");
        TcpConversation d(cap, "ftp_data", Endpoint{client.ip, static_cast<std::uint16_t>(client.port + 1)},
                          Endpoint{server.ip, data_port}, 9000, 130000);
        d.open();
        d.send(Direction::rev, file->second);
        d.close();
        d.truth().app_protocol = "ftp";
        d.truth().attrs.emplace("ftp.command", "RETR");
        d.truth().attrs.emplace("ftp.filename", file->first);
        d.truth().file_sha256.push_back(sha(file->second));
        out.push_back(d.truth());
        c.send(Direction::rev, "226 Transfer complete\r\n");
        c.truth().attrs.emplace("ftp.command", "RETR");
        c.truth().attrs.emplace("ftp.filename", file->first);
    }
    c.send(Direction::fwd, "QUIT\r\n");
    c.send(Direction::rev, "221 Goodbye\r\n");
    c.close();
    c.truth().app_protocol = "ftp";
    out.insert(out.begin(), c.truth());
    return out;
}

SessionTruth sip_invite(Capture& cap, const Endpoint& client, const Endpoint& server) {
    UdpExchange u(cap, "sip_invite", client, server);
    const std::string call_id = "a84b4c76e66710@pc33.example.com";
    std::string invite =
        "INVITE sip:bob@example.com SIP/2.0\r\n"
        "Via: SIP/2.0/UDP pc33.example.com;branch=z9hG4bK776asdhds\r\n"
        "Max-Forwards: 70\r\n"
        "To: Bob <sip:bob@example.com>\r\n"
        "From: Alice <sip:alice@example.com>;tag=1928301774\r\n"
        "Call-ID: " + call_id + "\r\n"
        "CSeq: 314159 INVITE\r\n"
        "Contact: <sip:alice@pc33.example.com>\r\n"
        "Content-Length: 0\r\n\r\n";
    std::string ok =
        "SIP/2.0 200 OK\r\n"
        "Via: SIP/2.0/UDP pc33.example.com;branch=z9hG4bK776asdhds\r\n"
        "To: Bob <sip:bob@example.com>;tag=a6c85cf\r\n"
        "From: Alice <sip:alice@example.com>;tag=1928301774\r\n"
        "Call-ID: " + call_id + "\r\n"
        "CSeq: 314159 INVITE\r\n"
        "Content-Length: 0\r\n\r\n";
    u.send(Direction::fwd, invite);
    u.send(Direction::rev, ok);
    auto& t = u.truth();
    t.app_protocol = "sip";
    t.attrs.emplace("sip.method", "INVITE");
    t.attrs.emplace("sip.call_id", call_id);
    t.attrs.emplace("sip.from", "alice@example.com");
    t.attrs.emplace("sip.to", "bob@example.com");
    return t;
}

Bytes sample_body(std::uint64_t seed, std::size_t n) {
    std::mt19937_64 rng(seed);
    return random_bytes(rng, n);
}

}  // namespace

Corpus http_get_corpus() {
    Corpus c;
    c.sessions.push_back(http_get(c.capture, ep("10.0.0.10", 49152), ep("93.184.216.34", 80)));
    return c;
}

Corpus protocol_corpus() {
    Corpus c;
    auto& cap = c.capture;
    const std::int64_t step = 1'000'000;

    c.sessions.push_back(http_get(cap, ep("10.0.0.10", 49152), ep("93.184.216.34", 80)));
    cap.advance(step);

    {
        TcpConversation t(cap, "http_download", ep("10.0.0.11", 49200), ep("198.51.100.7", 80), 2000, 80000);
        t.open();
        add_http_exchange(t, "downloads.example.net", "/files/tool.exe", make_pe(sample_body(11, 8000)),
                          "application/octet-stream");
        t.close();
        c.sessions.push_back(t.truth());
    }
    cap.advance(step);

    {
        // Response segments captured out of order.
        TcpConversation t(cap, "http_out_of_order", ep("10.0.0.12", 49300), ep("198.51.100.8", 80), 3000, 81000);
        t.open();
        // Swap every adjacent pair of segments.
        auto swapped = [](std::size_t n) {
            std::vector<std::size_t> o;
            for (std::size_t i = 0; i < n; i += 2) {
                if (i + 1 < n) o.push_back(i + 1);
                o.push_back(i);
            }
            return o;
        };
        add_http_exchange(t, "news.example.org", "/story.html", to_bytes(html_page("story", 2200)), "text/html",
                          536, swapped);
        t.close();
        c.sessions.push_back(t.truth());
    }
    cap.advance(step);

    {
        // One response segment retransmitted, compressed body.
        TcpConversation t(cap, "http_retransmit", ep("10.0.0.13", 49400), ep("198.51.100.9", 80), 4000, 82000);
        t.open();
        std::string text;
        for (int i = 0; text.size() < 9000; ++i) text += "line " + std::to_string(i * 7919 % 10007) + " of data\n";
        // Segment 1 is sent twice.
        auto retransmit = [](std::size_t n) {
            std::vector<std::size_t> o;
            for (std::size_t i = 0; i < n; ++i) {
                o.push_back(i);
                if (i == 1) o.push_back(i);
            }
            return o;
        };
        add_http_exchange(t, "api.example.org", "/data.txt", to_bytes(text), "text/plain", 400, retransmit, "gzip");
        t.close();
        c.sessions.push_back(t.truth());
    }
    cap.advance(step);

    c.sessions.push_back(smtp_session(cap, "smtp_attachment", ep("10.0.0.14", 50100), ep("192.0.2.25", 25),
                                      "mallory@example.com", "bob@example.org", "Invoice 4471",
                                      std::make_pair(std::string("a.exe"), make_pe(sample_body(12, 6000)))));
    cap.advance(step);

    c.sessions.push_back(dns_exchange(cap, "dns_lookup", ep("10.0.0.15", 53001), ep("192.0.2.53", 53), 0x1234,
                                      "www.example.com", "93.184.216.34"));
    cap.advance(step);

    {
        Bytes pdf = to_bytes("%PDF-1.4\n");
        auto tail = sample_body(13, 5000);
        pdf.insert(pdf.end(), tail.begin(), tail.end());
        auto ftp = ftp_session(cap, ep("10.0.0.16", 50200), ep("192.0.2.21", 21), std::make_pair("report.pdf", pdf));
        c.sessions.insert(c.sessions.end(), ftp.begin(), ftp.end());
    }
    cap.advance(step);

    c.sessions.push_back(sip_invite(cap, ep("10.0.0.17", 5060), ep("192.0.2.60", 5060)));
    cap.advance(step);

    // Scan star: one host probing ten.
    for (int i = 1; i <= 10; ++i) {
        TcpConversation t(cap, "scan_" + std::to_string(i), ep("10.0.0.66", static_cast<std::uint16_t>(40000 + i)),
                          ep("10.0.1." + std::to_string(i), 22), 100u * i, 0);
        // Handshake, then RST from the target.
        t.open();
        t.reset();
        c.sessions.push_back(t.truth());
        cap.advance(100'000);
    }
    cap.advance(step);

    cap.add(icmp_echo_frame(*IpAddress::parse("10.0.0.18"), *IpAddress::parse("192.0.2.1")));
    c.non_flow_packets = 1;
    return c;
}

Corpus facet_corpus() {
    Corpus c;
    auto& cap = c.capture;
    const char* hosts[] = {"www.example.com", "cdn.example.com", "www.example.com", "mail.example.com", "cdn.example.com"};
    for (int i = 0; i < 5; ++i) {
        auto client = ep("10.2.0." + std::to_string(1 + i % 3), static_cast<std::uint16_t>(51000 + i));
        auto server = ep(i % 2 ? "203.0.113.80" : "203.0.113.81", 80);
        TcpConversation t(cap, "http_" + std::to_string(i), client, server, 100u + i, 900u + i);
        t.open();
        add_http_exchange(t, hosts[i], "/page" + std::to_string(i) + ".html",
                          to_bytes(html_page("page" + std::to_string(i), 400 + 300 * i)), "text/html");
        t.close();
        c.sessions.push_back(t.truth());
        cap.advance(500'000);
    }
    for (int i = 0; i < 4; ++i) {
        c.sessions.push_back(dns_exchange(cap, "dns_" + std::to_string(i),
                                          ep("10.2.0." + std::to_string(1 + i % 2), static_cast<std::uint16_t>(53100 + i)),
                                          ep("203.0.113.53", 53), static_cast<std::uint16_t>(0x100 + i),
                                          "host" + std::to_string(i) + ".example.com",
                                          "198.51.100." + std::to_string(10 + i)));
        cap.advance(500'000);
    }
    for (int i = 0; i < 2; ++i) {
        c.sessions.push_back(smtp_session(cap, "smtp_" + std::to_string(i), ep("10.2.0.4", static_cast<std::uint16_t>(52000 + i)),
                                          ep("203.0.113.25", 25), "user" + std::to_string(i) + "@example.com",
                                          "dest@example.org", "Note " + std::to_string(i), std::nullopt));
        cap.advance(500'000);
    }
    auto ftp = ftp_session(cap, ep("10.2.0.5", 52100), ep("203.0.113.21", 21), std::nullopt, "ftp_0");
    c.sessions.insert(c.sessions.end(), ftp.begin(), ftp.end());
    return c;
}

Corpus throughput_corpus(std::size_t min_packets, std::uint64_t seed) {
    Corpus c;
    std::mt19937_64 rng(seed);
    auto& cap = c.capture;
    std::uint32_t n = 0;
    while (cap.frames().size() < min_packets) {
        auto client = ep("10.8." + std::to_string(rng() % 4) + "." + std::to_string(1 + rng() % 50),
                         static_cast<std::uint16_t>(20000 + (n % 40000)));
        auto name = "t" + std::to_string(n);
        if (rng() % 4 == 0) {
            auto server = ep("10.9.0." + std::to_string(1 + rng() % 4), 53);
            c.sessions.push_back(dns_exchange(cap, name, client, server, static_cast<std::uint16_t>(n),
                                              "h" + std::to_string(rng() % 500) + ".example.com",
                                              "198.18." + std::to_string(rng() % 256) + "." + std::to_string(rng() % 256)));
        } else {
            auto server = ep("10.9.1." + std::to_string(1 + rng() % 20), 80);
            TcpConversation t(cap, name, client, server, static_cast<std::uint32_t>(rng()), static_cast<std::uint32_t>(rng()));
            t.open();
            auto size = 200 + rng() % 12000;
            add_http_exchange(t, "site" + std::to_string(rng() % 30) + ".example.com", "/obj/" + std::to_string(n),
                              random_bytes(rng, size), "application/octet-stream");
            t.close();
            c.sessions.push_back(t.truth());
        }
        cap.advance(static_cast<std::int64_t>(rng() % 20'000));
        ++n;
    }
    return c;
}

Corpus anomaly_corpus(const AnomalyCorpusSpec& spec) {
    Corpus c;
    // Align the first session with a window boundary.
    const std::int64_t start = 1'700'000'040'000'000 / spec.window_us * spec.window_us;
    const std::int64_t spacing = spec.window_us / static_cast<std::int64_t>(spec.sessions_per_window);
    std::uint32_t n = 0;
    for (std::size_t w = 0; w < spec.windows; ++w) {
        const bool burst = static_cast<int>(w) == spec.burst_window;
        for (std::size_t i = 0; i < spec.sessions_per_window; ++i, ++n) {
            c.capture.set_clock(start + static_cast<std::int64_t>(w) * spec.window_us +
                                static_cast<std::int64_t>(i) * spacing + 1000 - 1);
            // Distinct hosts per slot keep every host's window under the
            // byte floor, so only the aggregate can trip.
            UdpExchange u(c.capture, "a" + std::to_string(n),
                          ep("10.3." + std::to_string(i / 250) + "." + std::to_string(1 + i % 250),
                             static_cast<std::uint16_t>(10000 + n % 50000)),
                          ep("10.4." + std::to_string(i / 250) + "." + std::to_string(1 + i % 250), 9999));
            Bytes payload(spec.payload_bytes * (burst ? spec.burst_factor : 1), static_cast<std::uint8_t>('a' + w % 26));
            u.send(Direction::fwd, payload, 1);
            c.sessions.push_back(u.truth());
        }
    }
    return c;
}

std::string iso8601(std::int64_t ts_us) {
    std::time_t secs = static_cast<std::time_t>(ts_us / 1'000'000);
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%06dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                  tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ts_us % 1'000'000));
    return buf;
}

namespace {

struct Scope {
    std::optional<IpAddress> src, dst;
    std::optional<std::uint16_t> sport, dport;
    std::optional<std::uint8_t> proto;
};

bool oriented(const Scope& s, const Endpoint& a, const Endpoint& b) {
    return (!s.src || *s.src == a.ip) && (!s.dst || *s.dst == b.ip) && (!s.sport || *s.sport == a.port) &&
           (!s.dport || *s.dport == b.port);
}

SocCase make_case(const Corpus& corpus, const std::string& id, std::int64_t ts, const Scope& s,
                  std::int64_t slack_us) {
    json line = {{"id", id}, {"ts", iso8601(ts)}, {"severity", "warn"}, {"sig", "SIG-" + id},
                 {"msg", "feed alert " + id}};
    line["src"] = s.src ? json(s.src->to_string()) : json(nullptr);
    line["dst"] = s.dst ? json(s.dst->to_string()) : json("*");
    if (s.sport) line["sport"] = *s.sport;
    if (s.dport) line["dport"] = *s.dport;
    if (s.proto) line["proto"] = *s.proto;
    SocCase out{line.dump(), {}};
    for (const auto& t : corpus.sessions) {
        if (s.proto && *s.proto != t.ip_proto) continue;
        if (!oriented(s, t.client, t.server) && !oriented(s, t.server, t.client)) continue;
        if (t.last_ts_us < ts - slack_us || t.first_ts_us > ts + slack_us) continue;
        out.expected_sessions.push_back(t.name);
    }
    return out;
}

}  // namespace

std::vector<SocCase> soc_feed(const Corpus& corpus, std::int64_t slack_us) {
    std::vector<SocCase> out;
    const auto& get = corpus.session("http_get");
    const auto& dl = corpus.session("http_download");
    const auto& dns = corpus.session("dns_lookup");
    const auto& scan = corpus.session("scan_5");
    out.push_back(make_case(corpus, "soc-1", get.first_ts_us, {get.client.ip, get.server.ip, {}, 80, 6}, slack_us));
    // Reported in the opposite orientation.
    out.push_back(make_case(corpus, "soc-2", dl.first_ts_us + 500, {dl.server.ip, dl.client.ip, 80, {}, {}}, slack_us));
    out.push_back(make_case(corpus, "soc-3", dns.first_ts_us, {{}, {}, {}, 53, 17}, slack_us));
    out.push_back(make_case(corpus, "soc-4", scan.first_ts_us, {scan.client.ip, {}, {}, {}, {}}, slack_us));
    // Nothing in the capture talks to this address.
    out.push_back(make_case(corpus, "soc-5", get.first_ts_us, {*IpAddress::parse("203.0.113.250"), {}, {}, {}, {}},
                            slack_us));
    // Right host, outside the time slack.
    out.push_back(make_case(corpus, "soc-6", get.first_ts_us + 10 * slack_us, {get.client.ip, {}, {}, {}, {}}, slack_us));
    return out;
}

std::vector<LabeledSample> static_family_corpus(int families, int per_family, double mutation, std::uint64_t seed,
                                                std::uint64_t instance_seed, std::size_t size) {
    // Templates depend on `seed` only, so corpora with different instance
    // seeds or sizes share their families.
    std::mt19937_64 trng(seed);
    std::mt19937_64 irng(instance_seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<LabeledSample> out;
    const int palette = 256 / std::max(1, families);
    std::vector<Bytes> templates;
    for (int f = 0; f < families; ++f) {
        Bytes body(size);
        for (auto& b : body) b = static_cast<std::uint8_t>(f * palette + trng() % palette);
        templates.push_back(std::move(body));
    }
    for (int f = 0; f < families; ++f) {
        for (int i = 0; i < per_family; ++i) {
            Bytes copy = templates[f];
            auto flips = static_cast<std::size_t>(mutation * static_cast<double>(size));
            for (std::size_t k = 0; k < flips; ++k) {
                copy[irng() % size] = static_cast<std::uint8_t>(f * palette + irng() % palette);
            }
            out.push_back({make_pe(copy), f});
        }
    }
    return out;
}

std::vector<LabeledProfile> behavior_corpus(int templates, int per_template, int triples_per_template, double noise,
                                            std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    static const char* types[] = {"file", "registry", "process", "network", "mutex"};
    static const char* ops[] = {"create", "write", "read", "delete", "connect", "open"};
    std::vector<std::vector<Triple>> tmpl(templates);
    for (int t = 0; t < templates; ++t) {
        for (int i = 0; i < triples_per_template; ++i) {
            tmpl[t].push_back(canonical_triple(
                {types[i % 5], "family" + std::to_string(t) + "-object" + std::to_string(i), ops[(i + t) % 6]}));
        }
    }
    std::vector<LabeledProfile> out;
    std::uniform_real_distribution<double> u(0, 1);
    int extra_id = 0;
    for (int t = 0; t < templates; ++t) {
        for (int k = 0; k < per_template; ++k) {
            LabeledProfile p;
            p.family = t;
            p.profile.sha256 = sha256_hex(as_bytes("profile-" + std::to_string(t) + "-" + std::to_string(k)));
            for (const auto& tr : tmpl[t]) {
                if (u(rng) >= noise) p.profile.features.insert(tr);
            }
            auto extras = static_cast<int>(noise * triples_per_template);
            for (int e = 0; e < extras; ++e) {
                p.profile.features.insert(canonical_triple({"file", "noise-" + std::to_string(extra_id++), "write"}));
            }
            out.push_back(std::move(p));
        }
    }
    return out;
}

}  // namespace nfe::corpus

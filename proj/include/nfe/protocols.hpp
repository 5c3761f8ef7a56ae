#pragma once

#include "nfe/metadata.hpp"
#include "nfe/session.hpp"

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace nfe {

/// A file body recovered from a session (HTTP body, MIME attachment, FTP
/// data transfer).
struct ExtractedFile {
    std::string name_hint;
    Bytes data;
    std::string sha256;
    std::string magic;
    AppProtocol protocol = AppProtocol::unknown;
};

/// "pe", "elf", "pdf", "zip" or "octet-stream".
std::string file_magic(ByteView data);

struct ParseResult {
    /// One record per session; DNS yields one per transaction.
    std::vector<MetadataRecord> records;
    std::vector<ExtractedFile> files;
};

struct Detection {
    AppProtocol protocol = AppProtocol::unknown;
    double confidence = 0.0;
};

/// Tracks FTP PORT/PASV negotiations seen on control channels so the data
/// connection that follows can be attributed to its transfer.
class FtpCorrelator {
public:
    struct Transfer {
        Endpoint data_endpoint;
        std::int64_t negotiated_ts_us = 0;
        std::optional<std::string> filename;
        std::string command;
    };

    explicit FtpCorrelator(std::int64_t ttl_us = 300'000'000) : ttl_us_(ttl_us) {}

    /// Feed every TCP packet in capture order.
    void observe(const DecodedPacket& packet);
    /// Transfer negotiated for a data connection whose responder is
    /// `responder`, opened at `opened_ts_us`.
    std::optional<Transfer> lookup(const Endpoint& responder, std::int64_t opened_ts_us) const;
    std::size_t size() const;

private:
    void expire(std::int64_t now_us);

    std::int64_t ttl_us_;
    mutable std::mutex mu_;
    std::vector<std::pair<FlowKey, Transfer>> pending_;
};

struct ParseContext {
    const FtpCorrelator* ftp = nullptr;
};

class ProtocolParser {
public:
    virtual ~ProtocolParser() = default;
    virtual AppProtocol protocol() const = 0;
    virtual std::vector<std::uint16_t> port_hints() const = 0;
    /// Content-signature confidence in [0,1]; pure.
    virtual double detect(const Session& s, const ParseContext& ctx) const = 0;
    /// Fills `base` (already carrying flow-level fields) and returns records
    /// plus files. Must tolerate malformed input.
    virtual ParseResult parse(const Session& s, MetadataRecord base, const ParseContext& ctx) const = 0;
    /// Attribute keys this parser may emit.
    virtual std::vector<FieldSpec> fields() const = 0;
};

/// Registered parsers. Exactly one parser claims a session: the highest
/// confidence at or above 0.5, port hints breaking ties.
class ProtocolRegistry {
public:
    static constexpr double kThreshold = 0.5;

    ProtocolRegistry();
    static const ProtocolRegistry& builtin();

    void add(std::unique_ptr<ProtocolParser> parser);
    Detection detect(const Session& s, const ParseContext& ctx = {}) const;
    ParseResult parse_session(const Session& s, AppProtocol proto, const ParseContext& ctx = {}) const;
    /// detect + parse.
    ParseResult process(const Session& s, const ParseContext& ctx = {}) const;

private:
    std::vector<std::unique_ptr<ProtocolParser>> parsers_;
};

/// Registers every built-in parser's keys with the vocabulary.
void register_builtin_fields(Vocabulary& vocab);

// Structured views used to render sessions back to the analyst.

struct HttpMessage {
    std::string start_line;
    std::vector<std::pair<std::string, std::string>> headers;
    Bytes body;          // after transfer and content decoding
    bool body_decoded = true;
    std::optional<std::string> header(std::string_view name) const;
};

struct HttpExchange {
    HttpMessage request;
    std::optional<HttpMessage> response;
    std::string method, uri, host;
    int status = 0;
};

std::vector<HttpExchange> parse_http_exchanges(const Session& s);

struct MimePart {
    std::vector<std::pair<std::string, std::string>> headers;
    std::string content_type;
    std::optional<std::string> filename;
    bool attachment = false;
    Bytes body;  // transfer-decoded
};

struct MailMessage {
    std::string envelope_from;
    std::vector<std::string> envelope_to;
    std::vector<std::pair<std::string, std::string>> headers;
    std::vector<MimePart> parts;
    std::string raw_headers;
};

std::vector<MailMessage> parse_smtp_messages(const Session& s);

namespace detail {
std::vector<std::pair<std::string, std::string>> parse_header_block(std::string_view block);
std::optional<std::string> header_param(std::string_view value, std::string_view param);
std::string strip_angle(std::string_view addr);
}  // namespace detail

}  // namespace nfe

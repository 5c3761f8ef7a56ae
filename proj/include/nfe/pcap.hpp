#pragma once

#include "nfe/packet.hpp"

#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace nfe {

/// An ingestion point: one file, one link type, one source tag.
struct CaptureSource {
    std::string source_id;
    LinkType link_type = LinkType::ethernet;
    std::string origin;
};

/// Streaming reader for classic pcap files (both byte orders, microsecond
/// and nanosecond magics). Frames come back decoded, numbered from 0.
class PcapReader {
public:
    PcapReader(const std::filesystem::path& path, std::string source_id);
    /// Read from an in-memory capture (used by the payload store).
    PcapReader(Bytes image, std::string source_id);
    ~PcapReader();
    PcapReader(const PcapReader&) = delete;
    PcapReader& operator=(const PcapReader&) = delete;

    /// Next packet, or nullopt at a clean end of file. Throws CorruptRecord
    /// when a record header runs past the end of the data; every earlier
    /// packet has been returned by then.
    std::optional<DecodedPacket> next();

    const CaptureSource& source() const noexcept { return source_; }
    bool nanosecond() const noexcept { return nanos_; }
    std::uint32_t snaplen() const noexcept { return snaplen_; }
    std::uint64_t packets_read() const noexcept { return next_id_; }

private:
    void read_global_header();
    std::size_t read_bytes(std::uint8_t* dst, std::size_t n);
    std::uint32_t fix(std::uint32_t v) const noexcept;

    std::FILE* file_ = nullptr;
    Bytes image_;
    std::size_t image_pos_ = 0;
    CaptureSource source_;
    bool swapped_ = false;
    bool nanos_ = false;
    std::uint32_t snaplen_ = 0;
    std::uint64_t next_id_ = 0;
    std::uint64_t offset_ = 0;
};

/// Result of reading a whole capture: packets plus the error that stopped
/// the read, if any.
struct CaptureContents {
    std::vector<DecodedPacket> packets;
    std::optional<std::string> error;
};

CaptureContents read_capture(const std::filesystem::path& path, const std::string& source_id);

/// Writes little-endian microsecond pcap.
class PcapWriter {
public:
    explicit PcapWriter(LinkType link = LinkType::ethernet, std::uint32_t snaplen = 262144);
    void write(std::int64_t ts_us, ByteView frame, std::uint32_t orig_len = 0);
    void write(const DecodedPacket& p) { write(p.ts_us, p.raw, p.orig_len); }
    const Bytes& image() const noexcept { return buf_.data(); }
    Bytes take() { return buf_.take(); }
    void save(const std::filesystem::path& path) const;

private:
    ByteWriter buf_;
};

}  // namespace nfe

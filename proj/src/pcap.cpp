#include "nfe/pcap.hpp"

#include "nfe/errors.hpp"

#include <cstring>
#include <fstream>

namespace nfe {

namespace {

constexpr std::uint32_t kMagicMicro = 0xA1B2C3D4;
constexpr std::uint32_t kMagicNano = 0xA1B23C4D;

std::uint32_t bswap(std::uint32_t v) {
    return (v >> 24) | ((v >> 8) & 0xFF00) | ((v << 8) & 0xFF0000) | (v << 24);
}

std::uint32_t load_le32(const std::uint8_t* p) {
    return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
           (std::uint32_t{p[3]} << 24);
}

}  // namespace

PcapReader::PcapReader(const std::filesystem::path& path, std::string source_id) {
    source_.source_id = std::move(source_id);
    source_.origin = path.string();
    file_ = std::fopen(path.c_str(), "rb");
    if (!file_) throw IoError("cannot open capture " + path.string());
    try {
        read_global_header();
    } catch (...) {
        std::fclose(file_);
        file_ = nullptr;
        throw;
    }
}

PcapReader::PcapReader(Bytes image, std::string source_id) : image_(std::move(image)) {
    source_.source_id = std::move(source_id);
    source_.origin = "memory";
    read_global_header();
}

PcapReader::~PcapReader() {
    if (file_) std::fclose(file_);
}

std::size_t PcapReader::read_bytes(std::uint8_t* dst, std::size_t n) {
    std::size_t got;
    if (file_) {
        got = std::fread(dst, 1, n, file_);
    } else {
        got = std::min(n, image_.size() - image_pos_);
        std::memcpy(dst, image_.data() + image_pos_, got);
        image_pos_ += got;
    }
    offset_ += got;
    return got;
}

std::uint32_t PcapReader::fix(std::uint32_t v) const noexcept { return swapped_ ? bswap(v) : v; }

void PcapReader::read_global_header() {
    std::uint8_t hdr[24];
    if (read_bytes(hdr, 24) != 24) throw UnsupportedFormat("file shorter than a pcap global header");
    std::uint32_t magic = load_le32(hdr);
    if (magic == kMagicMicro || magic == kMagicNano) {
        swapped_ = false;
    } else if (bswap(magic) == kMagicMicro || bswap(magic) == kMagicNano) {
        swapped_ = true;
        magic = bswap(magic);
    } else {
        char buf[64];
        std::snprintf(buf, sizeof buf, "unrecognized capture magic 0x%08x", magic);
        throw UnsupportedFormat(buf);
    }
    nanos_ = magic == kMagicNano;
    snaplen_ = fix(load_le32(hdr + 16));
    std::uint32_t link = fix(load_le32(hdr + 20));
    if (link == 1) source_.link_type = LinkType::ethernet;
    else if (link == 101) source_.link_type = LinkType::raw_ip;
    else throw UnsupportedFormat("unsupported link type " + std::to_string(link));
}

std::optional<DecodedPacket> PcapReader::next() {
    std::uint8_t rec[16];
    std::uint64_t record_start = offset_;
    std::size_t got = read_bytes(rec, 16);
    if (got == 0) return std::nullopt;
    if (got < 16) {
        throw CorruptRecord("truncated record header at offset " + std::to_string(record_start),
                            next_id_);
    }
    std::uint32_t ts_sec = fix(load_le32(rec));
    std::uint32_t ts_frac = fix(load_le32(rec + 4));
    std::uint32_t incl = fix(load_le32(rec + 8));
    std::uint32_t orig = fix(load_le32(rec + 12));

    // A record can never be larger than the largest sane frame; reject before
    // allocating so a corrupt length cannot exhaust memory.
    constexpr std::uint32_t kMaxRecord = 256u * 1024u * 1024u;
    if (incl > kMaxRecord) {
        throw CorruptRecord("record at offset " + std::to_string(record_start) + " claims " +
                                std::to_string(incl) + " bytes",
                            next_id_);
    }
    Bytes frame(incl);
    std::size_t body = read_bytes(frame.data(), incl);
    if (body != incl) {
        throw CorruptRecord("record at offset " + std::to_string(record_start) + " declares " +
                                std::to_string(incl) + " bytes but only " + std::to_string(body) +
                                " remain",
                            next_id_);
    }
    std::int64_t us = nanos_ ? ts_frac / 1000 : ts_frac;
    std::int64_t ts_us = static_cast<std::int64_t>(ts_sec) * 1000000 + us;
    auto p = decode_frame(frame, source_.link_type, ts_us, next_id_++, orig);
    p.source_id = source_.source_id;
    return p;
}

CaptureContents read_capture(const std::filesystem::path& path, const std::string& source_id) {
    CaptureContents out;
    PcapReader reader(path, source_id);
    try {
        while (auto p = reader.next()) out.packets.push_back(std::move(*p));
    } catch (const CorruptRecord& e) {
        out.error = e.what();
    }
    return out;
}

PcapWriter::PcapWriter(LinkType link, std::uint32_t snaplen) {
    buf_.u32(kMagicMicro);
    buf_.u8(2);
    buf_.u8(0);
    buf_.u8(4);
    buf_.u8(0);
    buf_.u32(0);
    buf_.u32(0);
    buf_.u32(snaplen);
    buf_.u32(static_cast<std::uint32_t>(link));
}

void PcapWriter::write(std::int64_t ts_us, ByteView frame, std::uint32_t orig_len) {
    buf_.u32(static_cast<std::uint32_t>(ts_us / 1000000));
    buf_.u32(static_cast<std::uint32_t>(ts_us % 1000000));
    buf_.u32(static_cast<std::uint32_t>(frame.size()));
    buf_.u32(std::max<std::uint32_t>(orig_len, static_cast<std::uint32_t>(frame.size())));
    buf_.raw(frame);
}

void PcapWriter::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    const auto& d = buf_.data();
    out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size()));
    if (!out) throw IoError("short write to " + path.string());
}

}  // namespace nfe

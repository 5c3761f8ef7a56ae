#include "nfe/store.hpp"

#include "nfe/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <fstream>
#include <sys/stat.h>
#include <unistd.h>

namespace nfe {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string_view to_string(StoredForm f) { return f == StoredForm::full ? "full" : "headers_only"; }

namespace {

constexpr std::uint8_t kRecordTag = 1;
constexpr std::string_view kPostingsMagic = "NFEP";
constexpr std::size_t kPayloadIdxEntry = 8 + 8 + 8 + 1 + 32;

void write_all(int fd, ByteView data, const std::string& what) {
    std::size_t done = 0;
    while (done < data.size()) {
        auto n = ::write(fd, data.data() + done, data.size() - done);
        if (n < 0) {
            if (errno == EINTR) continue;
            if (errno == ENOSPC || errno == EDQUOT) throw StorageFull(what + ": no space left on device");
            throw IoError(what + ": " + std::strerror(errno));
        }
        done += static_cast<std::size_t>(n);
    }
}

void pwrite_all(int fd, ByteView data, std::uint64_t offset, const std::string& what) {
    std::size_t done = 0;
    while (done < data.size()) {
        auto n = ::pwrite(fd, data.data() + done, data.size() - done, static_cast<off_t>(offset + done));
        if (n < 0) {
            if (errno == EINTR) continue;
            if (errno == ENOSPC || errno == EDQUOT) throw StorageFull(what + ": no space left on device");
            throw IoError(what + ": " + std::strerror(errno));
        }
        done += static_cast<std::size_t>(n);
    }
}

Bytes read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& p, ByteView data, bool sync) {
    int fd = ::open(p.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw IoError("cannot create " + p.string() + ": " + std::strerror(errno));
    try {
        write_all(fd, data, p.string());
        if (sync) ::fsync(fd);
    } catch (...) {
        ::close(fd);
        throw;
    }
    ::close(fd);
}

void write_text_atomic(const fs::path& p, const std::string& text, bool sync) {
    auto tmp = p;
    tmp += ".tmp";
    write_file(tmp, as_bytes(text), sync);
    fs::rename(tmp, p);
}

int open_rw(const fs::path& p, bool append) {
    int flags = O_RDWR | O_CREAT | O_CLOEXEC | (append ? O_APPEND : 0);
    int fd = ::open(p.c_str(), flags, 0644);
    if (fd < 0) throw IoError("cannot open " + p.string() + ": " + std::strerror(errno));
    return fd;
}

std::uint64_t file_size(int fd) {
    struct stat st {};
    if (::fstat(fd, &st) != 0) throw IoError(std::string("fstat: ") + std::strerror(errno));
    return static_cast<std::uint64_t>(st.st_size);
}

/// Frame = u32 length, u32 crc32(payload), payload.
Bytes frame(ByteView payload) {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(payload.size()));
    w.u32(crc32(payload));
    w.raw(payload);
    return w.take();
}

/// Splits framed data; stops at the first incomplete or corrupt frame and
/// reports the valid prefix length.
std::vector<ByteView> unframe(ByteView data, std::size_t& valid) {
    std::vector<ByteView> out;
    std::size_t pos = 0;
    while (data.size() - pos >= 8) {
        ByteReader r(data.subspan(pos, 8));
        auto len = r.u32();
        auto crc = r.u32();
        if (data.size() - pos - 8 < len) break;
        auto payload = data.subspan(pos + 8, len);
        if (crc32(payload) != crc) break;
        out.push_back(payload);
        pos += 8 + len;
    }
    valid = pos;
    return out;
}

void put_endpoint(ByteWriter& w, const Endpoint& e) {
    w.u8(static_cast<std::uint8_t>(e.ip.version()));
    w.raw(ByteView(e.ip.bytes()).first(e.ip.size()));
    w.varint(e.port);
}

Endpoint get_endpoint(ByteReader& r) {
    Endpoint e;
    auto ver = r.u8();
    if (ver == 4 || ver == 0) {
        std::uint8_t b[4];
        for (auto& x : b) x = r.u8();
        if (ver == 4) e.ip = IpAddress::v4(b);
    } else if (ver == 6) {
        std::uint8_t b[16];
        for (auto& x : b) x = r.u8();
        e.ip = IpAddress::v6(b);
    } else {
        throw IoError("bad address family in record");
    }
    e.port = static_cast<std::uint16_t>(r.varint());
    return e;
}

std::string segment_name(std::uint64_t id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "seg-%06llu", static_cast<unsigned long long>(id));
    return buf;
}

}  // namespace

// Codecs ----------------------------------------------------------------------

Bytes encode_record(const MetadataRecord& r) {
    ByteWriter w;
    w.u8(kRecordTag);
    w.varint(r.record_id);
    w.varint(r.session_id);
    w.str(r.source_id);
    w.i64(r.first_ts_us);
    w.i64(r.last_ts_us);
    put_endpoint(w, r.initiator);
    put_endpoint(w, r.responder);
    w.u8(r.ip_proto);
    w.u8(static_cast<std::uint8_t>(r.app_protocol));
    w.varint(r.bytes_total);
    w.varint(r.packets_total);
    w.varint(r.attributes.size());
    for (const auto& [k, v] : r.attributes) {
        w.str(k);
        w.str(v);
    }
    return w.take();
}

MetadataRecord decode_record(ByteView data) {
    ByteReader rd(data);
    if (rd.u8() != kRecordTag) throw IoError("unknown record tag");
    MetadataRecord r;
    r.record_id = rd.varint();
    r.session_id = rd.varint();
    r.source_id = rd.str();
    r.first_ts_us = rd.i64();
    r.last_ts_us = rd.i64();
    r.initiator = get_endpoint(rd);
    r.responder = get_endpoint(rd);
    r.ip_proto = rd.u8();
    r.app_protocol = static_cast<AppProtocol>(rd.u8());
    r.bytes_total = rd.varint();
    r.packets_total = rd.varint();
    auto n = rd.varint();
    for (std::uint64_t i = 0; i < n; ++i) {
        auto k = rd.str();
        auto v = rd.str();
        r.attributes.emplace(std::move(k), std::move(v));
    }
    return r;
}

std::vector<PostingKey> indexed_terms(const MetadataRecord& r) {
    static const char* kSynthetic[] = {"ip.src", "ip.dst",    "tp.src",    "tp.dst",
                                       "ip.proto", "app.protocol", "source_id", "session.id"};
    std::vector<PostingKey> out;
    for (const char* f : kSynthetic) {
        for (auto& v : r.field_values(f)) out.emplace_back(f, std::move(v));
    }
    const auto& vocab = Vocabulary::instance();
    for (const auto& [k, v] : r.attributes) {
        auto* spec = vocab.find(k);
        if (spec && spec->indexed && !spec->synthetic) out.emplace_back(k, v);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

Postings build_postings(const std::vector<MetadataRecord>& records) {
    Postings p;
    for (const auto& r : records) {
        for (auto& t : indexed_terms(r)) p[t].push_back(r.record_id);
    }
    for (auto& [k, ids] : p) std::sort(ids.begin(), ids.end());
    return p;
}

Bytes encode_postings(const Postings& p) {
    ByteWriter w;
    w.raw(as_bytes(kPostingsMagic));
    w.u32(MetadataStore::kFormatVersion);
    w.varint(p.size());
    for (const auto& [key, ids] : p) {
        w.str(key.first);
        w.str(key.second);
        w.varint(ids.size());
        std::uint64_t prev = 0;
        for (auto id : ids) {
            w.varint(id - prev);
            prev = id;
        }
    }
    return w.take();
}

Postings decode_postings(ByteView data) {
    if (data.size() < 8 || as_chars(data.first(4)) != kPostingsMagic) throw IoError("bad postings magic");
    ByteReader r(data.subspan(4));
    if (r.u32() != MetadataStore::kFormatVersion) throw IoError("unsupported postings version");
    Postings p;
    auto terms = r.varint();
    for (std::uint64_t t = 0; t < terms; ++t) {
        auto f = r.str();
        auto v = r.str();
        auto n = r.varint();
        std::vector<std::uint64_t> ids;
        ids.reserve(n);
        std::uint64_t prev = 0;
        for (std::uint64_t i = 0; i < n; ++i) {
            prev += r.varint();
            ids.push_back(prev);
        }
        p.emplace(PostingKey{std::move(f), std::move(v)}, std::move(ids));
    }
    return p;
}

// Segment ---------------------------------------------------------------------

struct MetadataStore::Segment {
    SegmentInfo info;
    std::vector<MetadataRecord> records;
    Postings postings;

    void add(MetadataRecord r) {
        if (records.empty()) {
            info.first_record_id = r.record_id;
            info.min_ts_us = r.first_ts_us;
            info.max_ts_us = r.last_ts_us;
        } else {
            info.min_ts_us = std::min(info.min_ts_us, r.first_ts_us);
            info.max_ts_us = std::max(info.max_ts_us, r.last_ts_us);
        }
        for (auto& t : indexed_terms(r)) postings[t].push_back(r.record_id);
        records.push_back(std::move(r));
        info.record_count = records.size();
    }

    const MetadataRecord* find(std::uint64_t id) const {
        if (records.empty() || id < info.first_record_id) return nullptr;
        auto idx = id - info.first_record_id;
        return idx < records.size() ? &records[idx] : nullptr;
    }
};

// Store -----------------------------------------------------------------------

MetadataStore::MetadataStore(fs::path root, StoreConfig config)
    : root_(std::move(root)), config_(config), open_(std::make_unique<Segment>()) {
    if (config_.segment_max_records == 0) throw ConfigInvalid("segment_max_records must be positive");
    fs::create_directories(root_ / "segments");
    recover();
}

MetadataStore::~MetadataStore() {
    try {
        close();
    } catch (...) {
        // Journal still holds every acknowledged record.
    }
    for (int fd : {journal_fd_, payload_dat_fd_, payload_idx_fd_}) {
        if (fd >= 0) ::close(fd);
    }
}

fs::path MetadataStore::segment_dir(std::uint64_t id) const { return root_ / "segments" / segment_name(id); }

void MetadataStore::recover() {
    std::uint64_t max_session = 0;
    auto manifest_path = root_ / "STORE";
    if (fs::exists(manifest_path)) {
        auto text = read_file(manifest_path);
        json m;
        try {
            m = json::parse(text.begin(), text.end());
        } catch (const json::exception& e) {
            throw IntegrityFailure("store manifest unreadable: " + std::string(e.what()));
        }
        if (m.value("format", "") != "nfe-store" || m.value("version", 0u) != kFormatVersion) {
            throw UnsupportedFormat("not a v1 store: " + root_.string());
        }
        next_record_id_ = m.at("next_record_id");
        next_segment_id_ = m.at("next_segment_id");
        max_session = m.value("next_session_id", std::uint64_t{1});
        for (const auto& s : m.at("segments")) {
            SegmentInfo info;
            info.segment_id = s.at("segment_id");
            info.first_record_id = s.at("first_record_id");
            info.record_count = s.at("record_count");
            info.min_ts_us = s.at("min_ts_us");
            info.max_ts_us = s.at("max_ts_us");
            info.sealed = true;
            sealed_.push_back(info);
        }
    }
    // Segment directories the manifest does not list come from an
    // interrupted seal; their records are still in the journal.
    for (const auto& entry : fs::directory_iterator(root_ / "segments")) {
        auto name = entry.path().filename().string();
        bool listed = std::any_of(sealed_.begin(), sealed_.end(),
                                  [&](const SegmentInfo& s) { return segment_name(s.segment_id) == name; });
        if (!listed) fs::remove_all(entry.path());
    }
    std::error_code ec;
    fs::remove(root_ / "STORE.tmp", ec);

    journal_fd_ = open_rw(root_ / "journal.wal", true);
    {
        auto data = read_file(root_ / "journal.wal");
        std::size_t valid = 0;
        for (auto payload : unframe(data, valid)) {
            auto r = decode_record(payload);
            if (r.record_id < next_record_id_) continue;  // sealed before the journal was reset
            if (r.record_id != next_record_id_) break;
            if (open_->records.empty()) open_->info.segment_id = next_segment_id_;
            max_session = std::max(max_session, r.session_id + 1);
            ++next_record_id_;
            open_->add(std::move(r));
        }
        if (valid != data.size() && ::ftruncate(journal_fd_, static_cast<off_t>(valid)) != 0) {
            throw IoError("cannot trim journal tail");
        }
    }

    payload_dat_fd_ = open_rw(root_ / "payloads.dat", false);
    payload_idx_fd_ = open_rw(root_ / "payloads.idx", true);
    payload_dat_size_ = file_size(payload_dat_fd_);
    {
        auto data = read_file(root_ / "payloads.idx");
        std::size_t valid = 0;
        std::size_t accepted = 0;
        for (auto payload : unframe(data, valid)) {
            if (payload.size() != kPayloadIdxEntry) break;
            ByteReader r(payload);
            PayloadLocator loc;
            loc.session_id = r.u64();
            loc.offset = r.u64();
            loc.length = r.u64();
            loc.form = static_cast<StoredForm>(r.u8());
            for (auto& b : loc.sha256) b = r.u8();
            if (loc.offset + loc.length > payload_dat_size_) break;
            payload_index_[loc.session_id] = loc;
            max_session = std::max(max_session, loc.session_id + 1);
            accepted += 8 + payload.size();
        }
        if (accepted != data.size() && ::ftruncate(payload_idx_fd_, static_cast<off_t>(accepted)) != 0) {
            throw IoError("cannot trim payload index tail");
        }
    }
    next_session_id_ = std::max<std::uint64_t>(max_session, 1);

    bytes_written_ = 0;
    for (const auto& e : fs::recursive_directory_iterator(root_)) {
        if (e.is_regular_file()) bytes_written_ += e.file_size();
    }
    if (!fs::exists(manifest_path)) write_manifest();
}

void MetadataStore::write_manifest() {
    json m;
    m["format"] = "nfe-store";
    m["version"] = kFormatVersion;
    m["next_record_id"] = next_record_id_ - open_->records.size();
    m["next_segment_id"] = next_segment_id_;
    m["next_session_id"] = next_session_id_.load();
    m["segments"] = json::array();
    for (const auto& s : sealed_) {
        m["segments"].push_back({{"segment_id", s.segment_id},
                                 {"dir", "segments/" + segment_name(s.segment_id)},
                                 {"first_record_id", s.first_record_id},
                                 {"record_count", s.record_count},
                                 {"min_ts_us", s.min_ts_us},
                                 {"max_ts_us", s.max_ts_us}});
    }
    write_text_atomic(root_ / "STORE", m.dump(2) + "\n", config_.sync);
}

void MetadataStore::check_capacity(std::uint64_t extra) {
    if (config_.max_bytes != 0 && bytes_written_ + extra > config_.max_bytes) {
        throw StorageFull("store byte cap of " + std::to_string(config_.max_bytes) + " reached");
    }
}

void MetadataStore::journal_append(const Bytes& payload) {
    auto f = frame(payload);
    check_capacity(f.size());
    write_all(journal_fd_, f, "journal");
    if (config_.sync) ::fdatasync(journal_fd_);
    bytes_written_ += f.size();
}

std::uint64_t MetadataStore::append_record(MetadataRecord record) {
    std::unique_lock lock(mu_);
    closed_ = false;
    if (!open_->records.empty()) {
        auto lo = std::min(open_->info.min_ts_us, record.first_ts_us);
        auto hi = std::max(open_->info.max_ts_us, record.last_ts_us);
        if (hi - lo >= config_.segment_max_span_us) seal_locked();
    }
    if (open_->records.empty()) open_->info.segment_id = next_segment_id_;
    record.record_id = next_record_id_;
    journal_append(encode_record(record));
    ++next_record_id_;
    auto id = record.record_id;
    auto sid = record.session_id;
    if (sid + 1 > next_session_id_) next_session_id_ = sid + 1;
    open_->add(std::move(record));
    if (open_->records.size() >= config_.segment_max_records) seal_locked();
    return id;
}

std::optional<SegmentInfo> MetadataStore::seal_segment() {
    std::unique_lock lock(mu_);
    if (open_->records.empty()) return std::nullopt;
    seal_locked();
    return sealed_.back();
}

void MetadataStore::seal_locked() {
    if (open_->records.empty()) return;
    auto& seg = *open_;
    seg.info.segment_id = next_segment_id_;
    seg.info.sealed = true;

    ByteWriter log;
    for (const auto& r : seg.records) log.raw(frame(encode_record(r)));
    auto log_bytes = log.take();
    auto post_bytes = encode_postings(seg.postings);
    check_capacity(log_bytes.size() + post_bytes.size());

    auto final_dir = segment_dir(seg.info.segment_id);
    auto tmp_dir = final_dir;
    tmp_dir += ".tmp";
    fs::remove_all(tmp_dir);
    fs::create_directories(tmp_dir);
    write_file(tmp_dir / "records.log", log_bytes, config_.sync);
    write_file(tmp_dir / "postings.idx", post_bytes, config_.sync);
    json m = {{"format", "nfe-segment"},
              {"version", kFormatVersion},
              {"segment_id", seg.info.segment_id},
              {"first_record_id", seg.info.first_record_id},
              {"record_count", seg.info.record_count},
              {"min_ts_us", seg.info.min_ts_us},
              {"max_ts_us", seg.info.max_ts_us},
              {"records_sha256", sha256_hex(log_bytes)},
              {"postings_sha256", sha256_hex(post_bytes)}};
    auto mtext = m.dump(2) + "\n";
    write_file(tmp_dir / "manifest.json", as_bytes(mtext), config_.sync);
    fs::rename(tmp_dir, final_dir);
    bytes_written_ += log_bytes.size() + post_bytes.size() + mtext.size();

    sealed_.push_back(seg.info);
    ++next_segment_id_;
    std::shared_ptr<const Segment> done(std::move(open_));
    open_ = std::make_unique<Segment>();
    write_manifest();
    // The manifest now covers these records; the journal can restart.
    if (::ftruncate(journal_fd_, 0) != 0) throw IoError("cannot reset journal");
    std::lock_guard cl(cache_mu_);
    cache_[done->info.segment_id] = std::move(done);
}

void MetadataStore::close() {
    std::unique_lock lock(mu_);
    if (closed_) return;
    seal_locked();
    write_manifest();
    closed_ = true;
}

std::shared_ptr<const MetadataStore::Segment> MetadataStore::load_segment(const SegmentInfo& info) const {
    {
        std::lock_guard cl(cache_mu_);
        if (auto it = cache_.find(info.segment_id); it != cache_.end()) return it->second;
    }
    auto dir = segment_dir(info.segment_id);
    auto mtext = read_file(dir / "manifest.json");
    json m = json::parse(mtext.begin(), mtext.end());
    auto log = read_file(dir / "records.log");
    auto post = read_file(dir / "postings.idx");
    if (sha256_hex(log) != m.at("records_sha256").get<std::string>() ||
        sha256_hex(post) != m.at("postings_sha256").get<std::string>()) {
        throw IntegrityFailure("segment " + std::to_string(info.segment_id) + " digest mismatch");
    }
    auto seg = std::make_shared<Segment>();
    seg->info = info;
    std::size_t valid = 0;
    for (auto payload : unframe(log, valid)) seg->records.push_back(decode_record(payload));
    if (valid != log.size() || seg->records.size() != info.record_count) {
        throw IntegrityFailure("segment " + std::to_string(info.segment_id) + " record log damaged");
    }
    seg->postings = decode_postings(post);
    std::lock_guard cl(cache_mu_);
    // Bound the cache; sealed segments reload from disk on demand.
    if (cache_.size() >= 256) cache_.erase(cache_.begin());
    cache_[info.segment_id] = seg;
    return seg;
}

void MetadataStore::visit_segments(const TimeRange& range, ScanStats* stats,
                                   const std::function<void(const Segment&, std::uint64_t)>& fn) const {
    std::vector<SegmentInfo> snapshot;
    std::uint64_t visible = 0;
    {
        std::shared_lock lock(mu_);
        snapshot = sealed_;
        visible = next_record_id_;
    }
    ScanStats local;
    auto consider = [&](const SegmentInfo& info) {
        ++local.segments_total;
        if (info.record_count == 0 || !range.intersects(info.min_ts_us, info.max_ts_us)) return false;
        ++local.segments_opened;
        return true;
    };
    // Sealed segments are immutable, so they are read without the lock.
    for (const auto& info : snapshot) {
        if (consider(info)) fn(*load_segment(info), visible);
    }
    {
        std::shared_lock lock(mu_);
        // Segments sealed after the snapshot, then the open one.
        for (std::size_t i = snapshot.size(); i < sealed_.size(); ++i) {
            if (sealed_[i].first_record_id >= visible) break;
            if (consider(sealed_[i])) fn(*load_segment(sealed_[i]), visible);
        }
        if (!open_->records.empty() && open_->info.first_record_id < visible && consider(open_->info)) {
            fn(*open_, visible);
        }
    }
    if (stats) *stats += local;
}

std::vector<std::uint64_t> MetadataStore::lookup(std::string_view field, std::string_view value,
                                                 const TimeRange& range, ScanStats* stats) const {
    const auto& spec = Vocabulary::instance().require(field, "lookup");
    if (spec.query_time) return {};
    auto canonical = normalize_value(spec, value);
    std::vector<std::uint64_t> out;
    ScanStats local;
    if (spec.indexed) {
        PostingKey key{std::string(field), canonical};
        visit_segments(range, &local, [&](const Segment& seg, std::uint64_t limit) {
            auto it = seg.postings.find(key);
            if (it == seg.postings.end()) return;
            for (auto id : it->second) {
                if (id >= limit) break;
                ++local.records_examined;
                const auto* r = seg.find(id);
                if (r && range.intersects(r->first_ts_us, r->last_ts_us)) out.push_back(id);
            }
        });
    } else {
        // Unindexed numeric fields are filtered by scanning.
        visit_segments(range, &local, [&](const Segment& seg, std::uint64_t limit) {
            for (const auto& r : seg.records) {
                if (r.record_id >= limit) break;
                ++local.records_examined;
                if (!range.intersects(r.first_ts_us, r.last_ts_us)) continue;
                for (const auto& v : r.field_values(field)) {
                    if (v == canonical) {
                        out.push_back(r.record_id);
                        break;
                    }
                }
            }
        });
    }
    if (stats) *stats += local;
    return out;
}

void MetadataStore::scan(const TimeRange& range, const std::function<void(const MetadataRecord&)>& fn,
                         ScanStats* stats) const {
    ScanStats local;
    visit_segments(range, &local, [&](const Segment& seg, std::uint64_t limit) {
        for (const auto& r : seg.records) {
            if (r.record_id >= limit) break;
            ++local.records_examined;
            if (range.intersects(r.first_ts_us, r.last_ts_us)) fn(r);
        }
    });
    if (stats) *stats += local;
}

std::optional<MetadataRecord> MetadataStore::get(std::uint64_t id) const {
    SegmentInfo target;
    {
        std::shared_lock lock(mu_);
        if (id >= next_record_id_) return std::nullopt;
        if (const auto* r = open_->find(id)) return *r;
        auto it = std::upper_bound(sealed_.begin(), sealed_.end(), id,
                                   [](std::uint64_t v, const SegmentInfo& s) { return v < s.first_record_id; });
        if (it == sealed_.begin()) return std::nullopt;
        target = *std::prev(it);
    }
    auto seg = load_segment(target);
    if (const auto* r = seg->find(id)) return *r;
    return std::nullopt;
}

std::vector<MetadataRecord> MetadataStore::get_many(const std::vector<std::uint64_t>& ids) const {
    std::vector<MetadataRecord> out;
    out.reserve(ids.size());
    for (auto id : ids) {
        if (auto r = get(id)) out.push_back(std::move(*r));
    }
    return out;
}

std::vector<MetadataRecord> MetadataStore::records_for_session(std::uint64_t session_id) const {
    return get_many(lookup("session.id", std::to_string(session_id)));
}

std::uint64_t MetadataStore::record_count() const {
    std::shared_lock lock(mu_);
    return next_record_id_;
}

std::vector<SegmentInfo> MetadataStore::segments() const {
    std::shared_lock lock(mu_);
    auto out = sealed_;
    if (!open_->records.empty()) out.push_back(open_->info);
    return out;
}

std::uint64_t MetadataStore::allocate_session_id() { return next_session_id_.fetch_add(1); }
std::uint64_t MetadataStore::peek_next_session_id() const { return next_session_id_.load(); }

PayloadLocator MetadataStore::store_payload(std::uint64_t session_id, ByteView bytes, StoredForm form) {
    std::unique_lock lock(payload_mu_);
    PayloadLocator loc;
    loc.session_id = session_id;
    loc.offset = payload_dat_size_;
    loc.length = bytes.size();
    loc.form = form;
    loc.sha256 = sha256(bytes);

    ByteWriter entry;
    entry.u64(loc.session_id);
    entry.u64(loc.offset);
    entry.u64(loc.length);
    entry.u8(static_cast<std::uint8_t>(loc.form));
    entry.raw(loc.sha256);
    auto idx = frame(entry.data());
    {
        std::unique_lock cap(mu_);
        check_capacity(bytes.size() + idx.size());
        bytes_written_ += bytes.size() + idx.size();
    }
    // Extent first, then the index entry that makes it visible.
    pwrite_all(payload_dat_fd_, bytes, loc.offset, "payloads.dat");
    if (config_.sync) ::fdatasync(payload_dat_fd_);
    write_all(payload_idx_fd_, idx, "payloads.idx");
    if (config_.sync) ::fdatasync(payload_idx_fd_);
    payload_dat_size_ += bytes.size();
    payload_index_[session_id] = loc;
    return loc;
}

std::optional<PayloadLocator> MetadataStore::payload_locator(std::uint64_t session_id) const {
    std::shared_lock lock(payload_mu_);
    auto it = payload_index_.find(session_id);
    if (it == payload_index_.end()) return std::nullopt;
    return it->second;
}

std::vector<PayloadLocator> MetadataStore::payloads() const {
    std::shared_lock lock(payload_mu_);
    std::vector<PayloadLocator> out;
    for (const auto& [id, loc] : payload_index_) out.push_back(loc);
    return out;
}

std::pair<Bytes, StoredForm> MetadataStore::fetch_payload(std::uint64_t session_id) const {
    auto loc = payload_locator(session_id);
    if (!loc) throw NotStored("no payload stored for session " + std::to_string(session_id));
    Bytes data(loc->length);
    std::size_t done = 0;
    while (done < data.size()) {
        auto n = ::pread(payload_dat_fd_, data.data() + done, data.size() - done,
                         static_cast<off_t>(loc->offset + done));
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) throw IntegrityFailure("payload extent for session " + std::to_string(session_id) + " is short");
        done += static_cast<std::size_t>(n);
    }
    if (sha256(data) != loc->sha256) {
        throw IntegrityFailure("payload digest mismatch for session " + std::to_string(session_id));
    }
    return {std::move(data), loc->form};
}

Bytes MetadataStore::sealed_postings_bytes(std::uint64_t segment_id) const {
    return read_file(segment_dir(segment_id) / "postings.idx");
}

std::vector<MetadataRecord> MetadataStore::segment_records(std::uint64_t segment_id) const {
    {
        std::shared_lock lock(mu_);
        if (!open_->records.empty() && open_->info.segment_id == segment_id && !open_->info.sealed) {
            return open_->records;
        }
        for (const auto& s : sealed_) {
            if (s.segment_id == segment_id) {
                auto info = s;
                lock.unlock();
                return load_segment(info)->records;
            }
        }
    }
    return {};
}

}  // namespace nfe

#pragma once

#include "nfe/bytes.hpp"
#include "nfe/metadata.hpp"

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace nfe {

struct TimeRange {
    std::int64_t from_us = INT64_MIN;
    std::int64_t to_us = INT64_MAX;  // inclusive

    bool bounded() const { return from_us != INT64_MIN || to_us != INT64_MAX; }
    bool intersects(std::int64_t first, std::int64_t last) const { return first <= to_us && last >= from_us; }
    bool well_ordered() const { return from_us <= to_us; }
};

/// Work counters for one lookup or scan; the pruning and "touched
/// records" measurements are read from here.
struct ScanStats {
    std::uint64_t segments_total = 0;
    std::uint64_t segments_opened = 0;
    std::uint64_t records_examined = 0;

    ScanStats& operator+=(const ScanStats& o) {
        segments_total += o.segments_total;
        segments_opened += o.segments_opened;
        records_examined += o.records_examined;
        return *this;
    }
};

enum class StoredForm : std::uint8_t { full = 0, headers_only = 1 };
std::string_view to_string(StoredForm f);

struct PayloadLocator {
    std::uint64_t session_id = 0;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
    StoredForm form = StoredForm::full;
    std::array<std::uint8_t, 32> sha256{};
};

struct StoreConfig {
    std::size_t segment_max_records = 100'000;
    std::int64_t segment_max_span_us = 600'000'000;
    /// 0 = unlimited. Checked against bytes written by this store.
    std::uint64_t max_bytes = 0;
    /// fsync journal appends. Without it an acknowledged append survives a
    /// process kill but not a power loss.
    bool sync = false;
};

struct SegmentInfo {
    std::uint64_t segment_id = 0;
    std::uint64_t first_record_id = 0;
    std::uint64_t record_count = 0;
    std::int64_t min_ts_us = 0;
    std::int64_t max_ts_us = 0;
    bool sealed = false;
};

using PostingKey = std::pair<std::string, std::string>;  // (field, value)
using Postings = std::map<PostingKey, std::vector<std::uint64_t>>;

/// The fields indexed for a record, with their canonical values.
std::vector<PostingKey> indexed_terms(const MetadataRecord& r);
/// Postings built from scratch over the given records.
Postings build_postings(const std::vector<MetadataRecord>& records);
/// Canonical on-disk postings form (see docs/format.md).
Bytes encode_postings(const Postings& p);
Postings decode_postings(ByteView data);

Bytes encode_record(const MetadataRecord& r);
MetadataRecord decode_record(ByteView data);

/// Time-partitioned metadata store with inverted indices, plus the
/// digest-checked payload store. One writer, any number of readers.
class MetadataStore {
public:
    static constexpr std::uint32_t kFormatVersion = 1;

    explicit MetadataStore(std::filesystem::path root, StoreConfig config = {});
    ~MetadataStore();
    MetadataStore(const MetadataStore&) = delete;
    MetadataStore& operator=(const MetadataStore&) = delete;

    const std::filesystem::path& root() const noexcept { return root_; }
    const StoreConfig& config() const noexcept { return config_; }

    /// Durable once it returns (journaled). Assigns record_id.
    std::uint64_t append_record(MetadataRecord record);
    /// Seals the open segment if it holds any record.
    std::optional<SegmentInfo> seal_segment();
    /// Seals and writes the manifest. Further appends reopen a segment.
    void close();

    /// Ids of records with field == value whose span intersects `range`,
    /// ascending. Throws UnknownField.
    std::vector<std::uint64_t> lookup(std::string_view field, std::string_view value,
                                      const TimeRange& range = {}, ScanStats* stats = nullptr) const;
    /// Full scan in record_id order over segments intersecting `range`.
    void scan(const TimeRange& range, const std::function<void(const MetadataRecord&)>& fn,
              ScanStats* stats = nullptr) const;
    std::optional<MetadataRecord> get(std::uint64_t record_id) const;
    std::vector<MetadataRecord> get_many(const std::vector<std::uint64_t>& ids) const;
    std::vector<MetadataRecord> records_for_session(std::uint64_t session_id) const;

    /// Records visible right now; a query captures this at start.
    std::uint64_t record_count() const;
    std::uint64_t version() const { return record_count(); }
    std::vector<SegmentInfo> segments() const;

    std::uint64_t allocate_session_id();
    std::uint64_t peek_next_session_id() const;

    PayloadLocator store_payload(std::uint64_t session_id, ByteView bytes, StoredForm form);
    /// Throws NotStored or IntegrityFailure.
    std::pair<Bytes, StoredForm> fetch_payload(std::uint64_t session_id) const;
    std::optional<PayloadLocator> payload_locator(std::uint64_t session_id) const;
    std::vector<PayloadLocator> payloads() const;

    /// Posting list bytes of a sealed segment as stored on disk.
    Bytes sealed_postings_bytes(std::uint64_t segment_id) const;
    /// Records of one segment, in id order.
    std::vector<MetadataRecord> segment_records(std::uint64_t segment_id) const;

private:
    struct Segment;
    std::shared_ptr<const Segment> load_segment(const SegmentInfo& info) const;
    void recover();
    void write_manifest();
    void journal_append(const Bytes& payload);
    void check_capacity(std::uint64_t extra);
    void seal_locked();
    std::filesystem::path segment_dir(std::uint64_t id) const;
    void visit_segments(const TimeRange& range, ScanStats* stats,
                        const std::function<void(const Segment&, std::uint64_t limit)>& fn) const;

    std::filesystem::path root_;
    StoreConfig config_;

    mutable std::shared_mutex mu_;
    std::vector<SegmentInfo> sealed_;
    std::unique_ptr<Segment> open_;
    std::uint64_t next_record_id_ = 0;
    std::uint64_t next_segment_id_ = 1;
    std::atomic<std::uint64_t> next_session_id_{1};
    std::uint64_t bytes_written_ = 0;
    int journal_fd_ = -1;

    mutable std::mutex cache_mu_;
    mutable std::map<std::uint64_t, std::shared_ptr<const Segment>> cache_;

    mutable std::shared_mutex payload_mu_;
    std::map<std::uint64_t, PayloadLocator> payload_index_;
    int payload_dat_fd_ = -1;
    int payload_idx_fd_ = -1;
    std::uint64_t payload_dat_size_ = 0;
    bool closed_ = false;
};

}  // namespace nfe

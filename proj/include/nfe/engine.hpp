#pragma once

#include "nfe/alerts.hpp"
#include "nfe/anomaly.hpp"
#include "nfe/config.hpp"
#include "nfe/filter.hpp"
#include "nfe/malware.hpp"
#include "nfe/protocols.hpp"
#include "nfe/query.hpp"
#include "nfe/soc.hpp"
#include "nfe/store.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace nfe {

struct IngestSummary {
    std::string source_id;
    std::string origin;
    std::uint64_t packets_read = 0;
    /// Packets a network rule dropped before assembly.
    std::uint64_t packets_dropped = 0;
    /// Packets without transport ports (not part of any session).
    std::uint64_t packets_not_flow = 0;
    std::uint64_t sessions = 0;
    /// Completed sessions whose final action was drop.
    std::uint64_t sessions_dropped = 0;
    std::uint64_t records = 0;
    std::uint64_t payloads_stored = 0;
    /// Distinct executables seen in this ingest, and how many were new.
    std::uint64_t samples = 0;
    std::uint64_t samples_new = 0;
    std::uint64_t alerts = 0;
    std::int64_t duration_us = 0;
    /// Set when the capture ended in a corrupt record; packets before it
    /// were ingested.
    std::optional<std::string> error;
};

/// The whole pipeline over one store: decode, network filter, assembly,
/// parsing, application filter, indexing, anomaly windows and malware
/// intake. Ingests may run concurrently with each other and with reads.
class Engine {
public:
    explicit Engine(EngineConfig config);
    ~Engine();
    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    /// Ingests one capture file, or every *.pcap in a directory in name
    /// order. `rules` overrides the engine rule set for this call.
    IngestSummary ingest(const std::string& source_id, const std::filesystem::path& capture,
                         std::shared_ptr<const RuleSet> rules = nullptr);
    /// Ingests every configured source, one thread per source.
    std::vector<IngestSummary> ingest_sources();

    /// Swaps the rule set between captures.
    void set_rules(RuleSet rules);
    std::shared_ptr<const RuleSet> rules() const;

    MetadataStore& store() { return *store_; }
    const QueryEngine& query() const { return *query_; }
    AlertStore& alerts() { return *alerts_; }
    MalwareTriage& triage() { return *triage_; }
    SocBridge& soc() { return *soc_; }
    AnomalyDetector& anomaly() { return *anomaly_; }
    const GeoIpTable* geoip() const { return geo_ ? &*geo_ : nullptr; }
    const EngineConfig& config() const noexcept { return config_; }

    /// Seals the open segment and flushes anomaly windows.
    void close();

private:
    struct Run;
    void register_source(const std::string& source_id, const std::filesystem::path& origin);
    void ingest_file(Run& run, const std::filesystem::path& file);
    void handle_session(Run& run, Session&& s);

    EngineConfig config_;
    std::unique_ptr<MetadataStore> store_;
    std::unique_ptr<AlertStore> alerts_;
    std::optional<GeoIpTable> geo_;
    std::unique_ptr<QueryEngine> query_;
    std::unique_ptr<MalwareTriage> triage_;
    std::unique_ptr<SocBridge> soc_;
    std::unique_ptr<AnomalyDetector> anomaly_;
    FtpCorrelator ftp_;

    mutable std::mutex rules_mu_;
    std::shared_ptr<const RuleSet> rules_;

    std::mutex sources_mu_;
    std::map<std::string, std::string> sources_;  // source_id -> origin

    std::mutex write_mu_;
    bool closed_ = false;
};

/// Human-readable one-line form of a summary.
std::string to_string(const IngestSummary& s);

}  // namespace nfe

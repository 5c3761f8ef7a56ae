#pragma once

#include "nfe/alerts.hpp"
#include "nfe/protocols.hpp"

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace nfe {

enum class Container : std::uint8_t { pe, elf, unknown_exec };
std::string_view to_string(Container c);

struct SampleOrigin {
    std::uint64_t session_id = 0;
    AppProtocol protocol = AppProtocol::unknown;
    /// Offset in the carrying stream; 0 for files a parser extracted whole.
    std::uint64_t carve_offset = 0;
    std::string filename;
    bool operator==(const SampleOrigin&) const = default;
};

struct ExecutableSample {
    std::string sha256;
    std::uint64_t size_bytes = 0;
    Container container = Container::unknown_exec;
    std::vector<SampleOrigin> origins;
    std::int64_t first_seen_ts_us = 0;
    Bytes bytes;
};

/// MZ or ELF magic, else nullopt.
std::optional<Container> executable_container(ByteView data);

/// Executables among the parser-extracted files; when a session yielded no
/// files its raw streams are carved at validated PE/ELF headers. Duplicates
/// by sha256 are merged with their origins appended.
std::vector<ExecutableSample> extract_executables(const Session& session, const MetadataRecord& record,
                                                  const std::vector<ExtractedFile>& files);

/// Appends `incoming` into `into`, merging by sha256.
void merge_samples(std::vector<ExecutableSample>& into, std::vector<ExecutableSample> incoming);

/// sha256 -> malware id, loaded from `sha256  malware_id` lines.
class SignatureStore {
public:
    /// Adds every entry of a signature file. Throws IoError, ConfigInvalid.
    void load(const std::filesystem::path& path);
    void add(std::string sha256, std::string malware_id);
    std::optional<std::string> find(const std::string& sha256) const;
    std::size_t size() const;

private:
    mutable std::mutex mu_;
    std::map<std::string, std::string> known_;
};

struct StaticFeatureVector {
    std::uint64_t size_bytes = 0;
    /// floor(log2(size)).
    std::uint32_t size_bucket = 0;
    double entropy = 0.0;
    std::array<double, 256> histogram{};
    /// Sorted distinct 16-bit hashes of byte 4-grams.
    std::vector<std::uint16_t> ngrams;
    std::string magic;
    /// Slot for an external antivirus verdict; never filled by the engine.
    std::optional<std::string> av_label;
};

/// 16-bit hash of a 4-byte window (FNV-1a, folded).
std::uint16_t ngram_hash(const std::uint8_t* p);

/// `ngram_cap` 0 keeps every hash (exact mode); otherwise the smallest
/// `ngram_cap` hashes are kept. Throws EmptySample.
StaticFeatureVector static_features(ByteView bytes, std::size_t ngram_cap = 4096);

double shannon_entropy(ByteView bytes);
double cosine(const std::array<double, 256>& a, const std::array<double, 256>& b);
template <typename T>
double jaccard(const std::vector<T>& a, const std::vector<T>& b);  // inputs sorted, distinct

struct Triple {
    std::string object_type;
    std::string object_name;
    std::string operation;
    auto operator<=>(const Triple&) const = default;
};

/// Lowercases, trims, and for file/registry objects turns `/` into `\`,
/// collapses repeated separators and drops a trailing one.
Triple canonical_triple(Triple t);

struct BehavioralProfile {
    std::string sha256;
    std::set<Triple> features;
    bool operator==(const BehavioralProfile&) const = default;
};

double jaccard(const std::set<Triple>& a, const std::set<Triple>& b);

struct StaticCentroid {
    std::array<double, 256> histogram{};
    double entropy = 0.0;
    std::vector<std::uint16_t> ngrams;  // present in >= half the members
};

struct Cluster {
    std::uint32_t cluster_id = 0;
    std::set<std::string> members;
    std::set<Triple> representative;
    std::optional<StaticCentroid> centroid;
    /// Members whose Jaccard to the representative fell below t_cluster.
    std::vector<std::string> representative_outliers;
};

struct SimilarityWeights {
    double histogram = 0.5;
    double ngrams = 0.5;
};

struct ClusterModel {
    std::uint64_t version = 0;
    std::vector<Cluster> clusters;
    double tau_pred = 0.90;
    double tau_score = 0.30;
    double t_cluster = 0.70;
    SimilarityWeights weights;
};

double similarity(const StaticFeatureVector& fv, const StaticCentroid& c, const SimilarityWeights& w = {});

struct Prediction {
    std::uint32_t cluster_id = 0;
    double similarity = 0.0;
};

/// Best cluster by similarity if it reaches tau_pred.
std::optional<Prediction> predict_cluster(const StaticFeatureVector& fv, const ClusterModel& model);
/// 1 - best similarity over clusters; 1.0 for an empty model.
double score_sample(const StaticFeatureVector& fv, const ClusterModel& model);

/// Single-linkage agglomeration under Jaccard, merging while the closest
/// pair of clusters is at least t_cluster similar. Ties go to the lowest
/// sha256 pair. Cluster ids follow the smallest member hash. Centroids come
/// from `features` where available. Returns the next model version.
ClusterModel cluster_behaviors(const std::vector<BehavioralProfile>& profiles,
                               const std::map<std::string, StaticFeatureVector>& features,
                               const ClusterModel& previous);

class SandboxBackend {
public:
    virtual ~SandboxBackend() = default;
    virtual std::string name() const = 0;
    /// Throws SandboxFailure or BudgetExceeded.
    virtual BehavioralProfile execute(const ExecutableSample& sample, std::chrono::milliseconds budget) = 0;
};

/// Returns profiles recorded in a JSON-lines manifest. Nothing is executed:
/// the sample bytes are never interpreted.
class ReplaySandbox : public SandboxBackend {
public:
    struct Entry {
        std::vector<Triple> triples;
        std::optional<std::int64_t> duration_ms;
        bool fail = false;
    };

    static ReplaySandbox load(const std::filesystem::path& manifest);
    void add(std::string sha256, Entry entry);
    std::string name() const override { return "replay"; }
    BehavioralProfile execute(const ExecutableSample& sample, std::chrono::milliseconds budget) override;
    std::uint64_t invocations() const { return invocations_; }

private:
    std::map<std::string, Entry> entries_;
    std::uint64_t invocations_ = 0;
};

/// Runs the backend and canonicalizes its profile.
BehavioralProfile run_dynamic(const ExecutableSample& sample, SandboxBackend& backend,
                              std::chrono::milliseconds budget);

enum class SampleStatus : std::uint8_t { known_signature, assigned, below_threshold, queued, analyzed, unanalyzed };
std::string_view to_string(SampleStatus s);
std::optional<SampleStatus> parse_sample_status(std::string_view s);

struct SampleState {
    std::string sha256;
    std::uint64_t size_bytes = 0;
    Container container = Container::unknown_exec;
    std::string magic;
    std::vector<SampleOrigin> origins;
    std::int64_t first_seen_ts_us = 0;
    SampleStatus status = SampleStatus::queued;
    std::optional<std::string> malware_id;
    std::optional<std::uint32_t> cluster_id;
    std::optional<double> similarity;
    std::optional<double> score;
    std::optional<double> entropy;
    std::uint32_t attempts = 0;
    std::optional<std::string> last_error;
};

struct AuditEntry {
    std::uint64_t seq = 0;
    std::string sha256;
    /// signature, static_features, predict, score, queue, dynamic, dynamic_failed,
    /// unanalyzed, cluster.
    std::string stage;
    std::string detail;
};

struct MalwareConfig {
    double tau_pred = 0.90;
    double tau_score = 0.30;
    double t_cluster = 0.70;
    SimilarityWeights weights;
    std::size_t ngram_cap = 4096;
    std::chrono::milliseconds sandbox_budget{60'000};
    std::uint32_t retry_max = 3;
    std::filesystem::path signatures;
    std::filesystem::path sandbox_manifest;
};

struct TriageCounts {
    std::uint64_t samples = 0;
    std::uint64_t dynamic_invocations = 0;
    std::map<std::string, std::uint64_t> by_status;
};

/// The triage loop: signature check, static features, cluster prediction,
/// scoring, dynamic analysis via a backend, behavioral clustering feeding
/// the next prediction. State persists under `dir` when it is non-empty.
/// Thread-safe.
class MalwareTriage {
public:
    MalwareTriage(MalwareConfig config, std::filesystem::path dir = {}, AlertStore* alerts = nullptr);

    void set_backend(std::shared_ptr<SandboxBackend> backend);
    SignatureStore& signatures() { return signatures_; }

    /// Runs the static half of the loop for a new sample; a sample already
    /// known just gains origins. Returns the sample's status.
    SampleStatus intake(const ExecutableSample& sample);
    /// Sends queued samples to the backend. Returns how many were analyzed.
    std::size_t process_queue();
    /// Re-clusters every analyzed profile; the new model serves later
    /// predictions. Returns the new model.
    ClusterModel run_clustering();
    /// Re-runs the static checks for a known sample against the current
    /// model and signatures.
    SampleStatus rescore(const std::string& sha256);

    std::vector<SampleState> samples() const;
    std::optional<SampleState> sample(const std::string& sha256) const;
    std::optional<BehavioralProfile> profile(const std::string& sha256) const;
    ClusterModel model() const;
    void set_model(ClusterModel m);
    std::vector<AuditEntry> audit() const;
    TriageCounts counts() const;
    const MalwareConfig& config() const noexcept { return config_; }

    /// Loads a profile recorded elsewhere (used to seed a model).
    void add_profile(BehavioralProfile p);

private:
    SampleStatus classify(SampleState& st, ByteView bytes);
    void log(const std::string& sha, std::string stage, std::string detail);
    void save_state() const;
    void load_state();
    Bytes sample_bytes(const std::string& sha) const;

    MalwareConfig config_;
    std::filesystem::path dir_;
    AlertStore* alerts_;
    SignatureStore signatures_;
    std::shared_ptr<SandboxBackend> backend_;
    mutable std::mutex mu_;
    std::map<std::string, SampleState> samples_;
    std::map<std::string, Bytes> bytes_;  // in-memory mode only
    std::map<std::string, StaticFeatureVector> features_;
    std::map<std::string, BehavioralProfile> profiles_;
    ClusterModel model_;
    std::vector<AuditEntry> audit_;
    std::uint64_t dynamic_invocations_ = 0;
};

}  // namespace nfe

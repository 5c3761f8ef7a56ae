#include "nfe/malware.hpp"

#include "nfe/errors.hpp"
#include "nfe/json_codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace nfe {

std::string_view to_string(Container c) {
    switch (c) {
        case Container::pe: return "pe";
        case Container::elf: return "elf";
        case Container::unknown_exec: return "unknown-exec";
    }
    return "?";
}

std::optional<Container> executable_container(ByteView d) {
    if (d.size() >= 2 && d[0] == 'M' && d[1] == 'Z') return Container::pe;
    if (d.size() >= 4 && d[0] == 0x7F && d[1] == 'E' && d[2] == 'L' && d[3] == 'F') return Container::elf;
    return std::nullopt;
}

// Extraction -----------------------------------------------------------------

namespace {

// Raw-stream carving demands a real header, not just two magic bytes.
bool plausible_pe(ByteView d, std::size_t at) {
    if (at + 0x40 > d.size()) return false;
    std::uint32_t lfanew = d[at + 0x3C] | (d[at + 0x3D] << 8) | (d[at + 0x3E] << 16) |
                           (static_cast<std::uint32_t>(d[at + 0x3F]) << 24);
    if (lfanew < 0x40 || lfanew > 4096) return false;
    auto pe = at + lfanew;
    return pe + 4 <= d.size() && d[pe] == 'P' && d[pe + 1] == 'E' && d[pe + 2] == 0 && d[pe + 3] == 0;
}

bool plausible_elf(ByteView d, std::size_t at) {
    return at + 16 <= d.size() && d[at] == 0x7F && d[at + 1] == 'E' && d[at + 2] == 'L' && d[at + 3] == 'F' &&
           (d[at + 4] == 1 || d[at + 4] == 2) && (d[at + 5] == 1 || d[at + 5] == 2);
}

ExecutableSample make_sample(ByteView data, Container c, SampleOrigin origin, std::int64_t ts) {
    ExecutableSample s;
    s.sha256 = sha256_hex(data);
    s.size_bytes = data.size();
    s.container = c;
    s.origins.push_back(std::move(origin));
    s.first_seen_ts_us = ts;
    s.bytes.assign(data.begin(), data.end());
    return s;
}

}  // namespace

void merge_samples(std::vector<ExecutableSample>& into, std::vector<ExecutableSample> incoming) {
    for (auto& s : incoming) {
        auto it = std::find_if(into.begin(), into.end(), [&](const auto& x) { return x.sha256 == s.sha256; });
        if (it == into.end()) {
            into.push_back(std::move(s));
            continue;
        }
        for (auto& o : s.origins) {
            if (std::find(it->origins.begin(), it->origins.end(), o) == it->origins.end()) it->origins.push_back(o);
        }
        it->first_seen_ts_us = std::min(it->first_seen_ts_us, s.first_seen_ts_us);
    }
}

std::vector<ExecutableSample> extract_executables(const Session& session, const MetadataRecord& record,
                                                  const std::vector<ExtractedFile>& files) {
    std::vector<ExecutableSample> out;
    for (const auto& f : files) {
        auto c = executable_container(f.data);
        if (!c) continue;
        merge_samples(out, {make_sample(f.data, *c,
                                        SampleOrigin{session.session_id, f.protocol == AppProtocol::unknown
                                                                             ? record.app_protocol
                                                                             : f.protocol,
                                                     0, f.name_hint},
                                        record.first_ts_us)});
    }
    if (!files.empty()) return out;
    constexpr int kMaxCarves = 16;
    for (const Bytes* stream : {&session.stream_fwd, &session.stream_rev}) {
        ByteView d(*stream);
        int carved = 0;
        for (std::size_t i = 0; i + 4 <= d.size() && carved < kMaxCarves; ++i) {
            std::optional<Container> c;
            if (d[i] == 'M' && d[i + 1] == 'Z' && plausible_pe(d, i)) c = Container::pe;
            else if (d[i] == 0x7F && plausible_elf(d, i)) c = Container::elf;
            if (!c) continue;
            // Extent is unknown in a raw stream; the carve runs to its end.
            merge_samples(out, {make_sample(d.subspan(i), *c,
                                            SampleOrigin{session.session_id, record.app_protocol, i, {}},
                                            record.first_ts_us)});
            ++carved;
        }
    }
    return out;
}

// Signatures -----------------------------------------------------------------

void SignatureStore::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read signature store " + path.string());
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        auto v = trim(line);
        if (v.empty() || v.front() == '#') continue;
        std::istringstream ls{std::string(v)};
        std::string sha, id;
        ls >> sha >> id;
        if (sha.size() != 64 || !from_hex(sha)) {
            throw ConfigInvalid(path.string() + ":" + std::to_string(n) + ": expected '<sha256>  <malware_id>'");
        }
        add(to_lower(sha), id.empty() ? "unnamed" : id);
    }
}

void SignatureStore::add(std::string sha256, std::string malware_id) {
    std::lock_guard lock(mu_);
    known_[to_lower(sha256)] = std::move(malware_id);
}

std::optional<std::string> SignatureStore::find(const std::string& sha256) const {
    std::lock_guard lock(mu_);
    auto it = known_.find(sha256);
    if (it == known_.end()) return std::nullopt;
    return it->second;
}

std::size_t SignatureStore::size() const {
    std::lock_guard lock(mu_);
    return known_.size();
}

// Static features --------------------------------------------------------------

std::uint16_t ngram_hash(const std::uint8_t* p) {
    std::uint32_t h = 2166136261u;
    for (int i = 0; i < 4; ++i) {
        h ^= p[i];
        h *= 16777619u;
    }
    return static_cast<std::uint16_t>((h >> 16) ^ (h & 0xFFFF));
}

double shannon_entropy(ByteView bytes) {
    if (bytes.empty()) return 0.0;
    std::array<std::uint64_t, 256> counts{};
    for (auto b : bytes) ++counts[b];
    double h = 0.0;
    const double n = static_cast<double>(bytes.size());
    for (auto c : counts) {
        if (c == 0) continue;
        double p = static_cast<double>(c) / n;
        h -= p * std::log2(p);
    }
    return std::clamp(h, 0.0, 8.0);
}

StaticFeatureVector static_features(ByteView bytes, std::size_t ngram_cap) {
    if (bytes.empty()) throw EmptySample("sample has no bytes");
    StaticFeatureVector fv;
    fv.size_bytes = bytes.size();
    fv.size_bucket = static_cast<std::uint32_t>(std::bit_width(bytes.size()) - 1);
    std::array<std::uint64_t, 256> counts{};
    for (auto b : bytes) ++counts[b];
    const double n = static_cast<double>(bytes.size());
    for (std::size_t i = 0; i < 256; ++i) fv.histogram[i] = static_cast<double>(counts[i]) / n;
    fv.entropy = shannon_entropy(bytes);
    std::vector<bool> seen(65536, false);
    for (std::size_t i = 0; i + 4 <= bytes.size(); ++i) seen[ngram_hash(bytes.data() + i)] = true;
    for (std::size_t h = 0; h < seen.size(); ++h) {
        if (!seen[h]) continue;
        if (ngram_cap != 0 && fv.ngrams.size() >= ngram_cap) break;  // ascending: keeps the smallest
        fv.ngrams.push_back(static_cast<std::uint16_t>(h));
    }
    fv.magic = file_magic(bytes);
    return fv;
}

double cosine(const std::array<double, 256>& a, const std::array<double, 256>& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < 256; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0) return 0.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), 0.0, 1.0);
}

template <typename T>
double jaccard(const std::vector<T>& a, const std::vector<T>& b) {
    if (a.empty() && b.empty()) return 1.0;
    std::size_t inter = 0, i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] < b[j]) ++i;
        else if (b[j] < a[i]) ++j;
        else {
            ++inter;
            ++i;
            ++j;
        }
    }
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}
template double jaccard(const std::vector<std::uint16_t>&, const std::vector<std::uint16_t>&);
template double jaccard(const std::vector<std::string>&, const std::vector<std::string>&);

double jaccard(const std::set<Triple>& a, const std::set<Triple>& b) {
    if (a.empty() && b.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& t : a) inter += b.count(t);
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

Triple canonical_triple(Triple t) {
    t.object_type = to_lower(trim(t.object_type));
    t.object_name = to_lower(trim(t.object_name));
    t.operation = to_lower(trim(t.operation));
    if (t.object_type == "file" || t.object_type == "registry") {
        std::string n;
        for (char c : t.object_name) {
            if (c == '/') c = '\\';
            if (c == '\\' && !n.empty() && n.back() == '\\') continue;
            n.push_back(c);
        }
        if (n.size() > 1 && n.back() == '\\') n.pop_back();
        t.object_name = std::move(n);
    }
    return t;
}

// Prediction ---------------------------------------------------------------------

double similarity(const StaticFeatureVector& fv, const StaticCentroid& c, const SimilarityWeights& w) {
    double total = w.histogram + w.ngrams;
    if (total <= 0) return 0.0;
    return (w.histogram * cosine(fv.histogram, c.histogram) + w.ngrams * jaccard(fv.ngrams, c.ngrams)) / total;
}

std::optional<Prediction> predict_cluster(const StaticFeatureVector& fv, const ClusterModel& model) {
    std::optional<Prediction> best;
    for (const auto& c : model.clusters) {
        if (!c.centroid) continue;
        double s = similarity(fv, *c.centroid, model.weights);
        if (!best || s > best->similarity) best = Prediction{c.cluster_id, s};
    }
    if (best && best->similarity >= model.tau_pred) return best;
    return std::nullopt;
}

double score_sample(const StaticFeatureVector& fv, const ClusterModel& model) {
    double best = 0.0;
    bool any = false;
    for (const auto& c : model.clusters) {
        if (!c.centroid) continue;
        any = true;
        best = std::max(best, similarity(fv, *c.centroid, model.weights));
    }
    return any ? 1.0 - best : 1.0;
}

// Clustering ---------------------------------------------------------------------

namespace {

struct UnionFind {
    std::vector<std::size_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    bool unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        if (b < a) std::swap(a, b);
        parent[b] = a;
        return true;
    }
};

}  // namespace

ClusterModel cluster_behaviors(const std::vector<BehavioralProfile>& input,
                               const std::map<std::string, StaticFeatureVector>& features,
                               const ClusterModel& previous) {
    // Order by hash so every permutation of the input yields the same model.
    std::map<std::string, const BehavioralProfile*> by_sha;
    for (const auto& p : input) by_sha.emplace(p.sha256, &p);
    std::vector<const BehavioralProfile*> ps;
    for (auto& [sha, p] : by_sha) ps.push_back(p);

    struct Pair {
        double sim;
        std::size_t i, j;
    };
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        for (std::size_t j = i + 1; j < ps.size(); ++j) {
            double s = jaccard(ps[i]->features, ps[j]->features);
            if (s >= previous.t_cluster) pairs.push_back({s, i, j});
        }
    }
    // Merging the closest pair first, lowest hash pair on ties. Single
    // linkage makes the final partition the components of this graph.
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.sim != b.sim) return a.sim > b.sim;
        return std::tie(a.i, a.j) < std::tie(b.i, b.j);
    });
    UnionFind uf(ps.size());
    for (const auto& p : pairs) uf.unite(p.i, p.j);

    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < ps.size(); ++i) groups[uf.find(i)].push_back(i);

    ClusterModel m = previous;
    m.clusters.clear();
    m.version = previous.version + 1;
    std::uint32_t next_id = 0;
    // Roots are the smallest index, hence the smallest hash, of each group.
    for (auto& [root, idx] : groups) {
        Cluster c;
        c.cluster_id = next_id++;
        std::map<Triple, std::size_t> counts;
        for (auto i : idx) {
            c.members.insert(ps[i]->sha256);
            for (const auto& t : ps[i]->features) ++counts[t];
        }
        for (auto& [t, n] : counts) {
            if (2 * n >= idx.size()) c.representative.insert(t);
        }
        for (auto i : idx) {
            if (jaccard(ps[i]->features, c.representative) < m.t_cluster) c.representative_outliers.push_back(ps[i]->sha256);
        }
        std::vector<const StaticFeatureVector*> fvs;
        for (const auto& sha : c.members) {
            if (auto it = features.find(sha); it != features.end()) fvs.push_back(&it->second);
        }
        if (!fvs.empty()) {
            StaticCentroid cen;
            std::map<std::uint16_t, std::size_t> ng;
            for (const auto* fv : fvs) {
                for (std::size_t b = 0; b < 256; ++b) cen.histogram[b] += fv->histogram[b];
                cen.entropy += fv->entropy;
                for (auto h : fv->ngrams) ++ng[h];
            }
            for (auto& v : cen.histogram) v /= static_cast<double>(fvs.size());
            cen.entropy /= static_cast<double>(fvs.size());
            for (auto& [h, n] : ng) {
                if (2 * n >= fvs.size()) cen.ngrams.push_back(h);
            }
            c.centroid = std::move(cen);
        }
        m.clusters.push_back(std::move(c));
    }
    return m;
}

// Sandbox ------------------------------------------------------------------------

namespace {

Triple triple_from_json(const json& t) {
    if (t.is_array() && t.size() == 3) return {t[0].get<std::string>(), t[1].get<std::string>(), t[2].get<std::string>()};
    if (t.is_object()) {
        auto field = [&](const char* shorter, const char* longer) {
            return (t.contains(shorter) ? t.at(shorter) : t.at(longer)).get<std::string>();
        };
        return {field("type", "object_type"), field("name", "object_name"), field("op", "operation")};
    }
    throw ConfigInvalid("triple must be [type, name, op] or {type, name, op}");
}

json triple_to_json(const Triple& t) { return json::array({t.object_type, t.object_name, t.operation}); }

}  // namespace

ReplaySandbox ReplaySandbox::load(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw IoError("cannot read sandbox manifest " + manifest.string());
    ReplaySandbox rs;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (trim(line).empty()) continue;
        try {
            auto j = json::parse(line);
            Entry e;
            for (const auto& t : j.at("triples")) e.triples.push_back(triple_from_json(t));
            if (j.contains("duration_ms")) e.duration_ms = j["duration_ms"].get<std::int64_t>();
            e.fail = j.value("fail", false);
            rs.add(to_lower(j.at("sha256").get<std::string>()), std::move(e));
        } catch (const json::exception& ex) {
            throw ConfigInvalid(manifest.string() + ":" + std::to_string(n) + ": " + ex.what());
        }
    }
    return rs;
}

void ReplaySandbox::add(std::string sha256, Entry entry) { entries_[std::move(sha256)] = std::move(entry); }

BehavioralProfile ReplaySandbox::execute(const ExecutableSample& sample, std::chrono::milliseconds budget) {
    ++invocations_;
    auto it = entries_.find(sample.sha256);
    if (it == entries_.end()) throw SandboxFailure("no recorded behavior for " + sample.sha256);
    if (it->second.fail) throw SandboxFailure("recorded run failed for " + sample.sha256);
    if (it->second.duration_ms && *it->second.duration_ms > budget.count()) {
        throw BudgetExceeded("recorded run took " + std::to_string(*it->second.duration_ms) + " ms, budget " +
                             std::to_string(budget.count()) + " ms");
    }
    BehavioralProfile p;
    p.sha256 = sample.sha256;
    p.features.insert(it->second.triples.begin(), it->second.triples.end());
    return p;
}

BehavioralProfile run_dynamic(const ExecutableSample& sample, SandboxBackend& backend,
                              std::chrono::milliseconds budget) {
    auto raw = backend.execute(sample, budget);
    BehavioralProfile p;
    p.sha256 = sample.sha256;
    for (const auto& t : raw.features) p.features.insert(canonical_triple(t));
    if (p.features.empty()) throw SandboxFailure("backend returned an empty profile for " + sample.sha256);
    return p;
}

// Triage -------------------------------------------------------------------------

std::string_view to_string(SampleStatus s) {
    switch (s) {
        case SampleStatus::known_signature: return "known_signature";
        case SampleStatus::assigned: return "assigned";
        case SampleStatus::below_threshold: return "below_threshold";
        case SampleStatus::queued: return "queued";
        case SampleStatus::analyzed: return "analyzed";
        case SampleStatus::unanalyzed: return "unanalyzed";
    }
    return "?";
}

std::optional<SampleStatus> parse_sample_status(std::string_view s) {
    for (auto v : {SampleStatus::known_signature, SampleStatus::assigned, SampleStatus::below_threshold,
                   SampleStatus::queued, SampleStatus::analyzed, SampleStatus::unanalyzed}) {
        if (to_string(v) == s) return v;
    }
    return std::nullopt;
}

namespace {

json origin_json(const SampleOrigin& o) {
    return {{"session_id", o.session_id},
            {"protocol", to_string(o.protocol)},
            {"carve_offset", o.carve_offset},
            {"filename", o.filename}};
}

SampleOrigin origin_from(const json& j) {
    return {j.at("session_id"), parse_app_protocol(j.value("protocol", "unknown")).value_or(AppProtocol::unknown),
            j.value("carve_offset", std::uint64_t{0}), j.value("filename", "")};
}

template <typename T>
void opt_set(json& j, const char* k, const std::optional<T>& v) {
    if (v) j[k] = *v;
}

json state_json(const SampleState& s) {
    json j = {{"sha256", s.sha256},
              {"size_bytes", s.size_bytes},
              {"container", to_string(s.container)},
              {"magic", s.magic},
              {"first_seen_ts_us", s.first_seen_ts_us},
              {"status", to_string(s.status)},
              {"attempts", s.attempts}};
    j["origins"] = json::array();
    for (const auto& o : s.origins) j["origins"].push_back(origin_json(o));
    opt_set(j, "malware_id", s.malware_id);
    opt_set(j, "cluster_id", s.cluster_id);
    opt_set(j, "similarity", s.similarity);
    opt_set(j, "score", s.score);
    opt_set(j, "entropy", s.entropy);
    opt_set(j, "last_error", s.last_error);
    return j;
}

SampleState state_from(const json& j) {
    SampleState s;
    s.sha256 = j.at("sha256");
    s.size_bytes = j.value("size_bytes", std::uint64_t{0});
    auto c = j.value("container", "unknown-exec");
    s.container = c == "pe" ? Container::pe : c == "elf" ? Container::elf : Container::unknown_exec;
    s.magic = j.value("magic", "");
    s.first_seen_ts_us = j.value("first_seen_ts_us", std::int64_t{0});
    s.status = parse_sample_status(j.value("status", "queued")).value_or(SampleStatus::queued);
    s.attempts = j.value("attempts", 0u);
    for (const auto& o : j.value("origins", json::array())) s.origins.push_back(origin_from(o));
    if (j.contains("malware_id")) s.malware_id = j["malware_id"].get<std::string>();
    if (j.contains("cluster_id")) s.cluster_id = j["cluster_id"].get<std::uint32_t>();
    if (j.contains("similarity")) s.similarity = j["similarity"].get<double>();
    if (j.contains("score")) s.score = j["score"].get<double>();
    if (j.contains("entropy")) s.entropy = j["entropy"].get<double>();
    if (j.contains("last_error")) s.last_error = j["last_error"].get<std::string>();
    return s;
}

json model_json(const ClusterModel& m) {
    json j = {{"format", "nfe-cluster-model"},
              {"version", m.version},
              {"tau_pred", m.tau_pred},
              {"tau_score", m.tau_score},
              {"t_cluster", m.t_cluster},
              {"weights", {{"histogram", m.weights.histogram}, {"ngrams", m.weights.ngrams}}},
              {"clusters", json::array()}};
    for (const auto& c : m.clusters) {
        json cj = {{"cluster_id", c.cluster_id},
                   {"members", c.members},
                   {"representative", json::array()},
                   {"representative_outliers", c.representative_outliers}};
        for (const auto& t : c.representative) cj["representative"].push_back(triple_to_json(t));
        if (c.centroid) {
            cj["centroid"] = {{"histogram", c.centroid->histogram},
                              {"entropy", c.centroid->entropy},
                              {"ngrams", c.centroid->ngrams}};
        }
        j["clusters"].push_back(std::move(cj));
    }
    return j;
}

ClusterModel model_from(const json& j) {
    ClusterModel m;
    m.version = j.at("version");
    m.tau_pred = j.value("tau_pred", m.tau_pred);
    m.tau_score = j.value("tau_score", m.tau_score);
    m.t_cluster = j.value("t_cluster", m.t_cluster);
    if (j.contains("weights")) {
        m.weights.histogram = j["weights"].value("histogram", 0.5);
        m.weights.ngrams = j["weights"].value("ngrams", 0.5);
    }
    for (const auto& cj : j.at("clusters")) {
        Cluster c;
        c.cluster_id = cj.at("cluster_id");
        c.members = cj.at("members").get<std::set<std::string>>();
        for (const auto& t : cj.at("representative")) c.representative.insert(triple_from_json(t));
        c.representative_outliers = cj.value("representative_outliers", std::vector<std::string>{});
        if (cj.contains("centroid")) {
            StaticCentroid cen;
            cen.histogram = cj["centroid"].at("histogram").get<std::array<double, 256>>();
            cen.entropy = cj["centroid"].at("entropy");
            cen.ngrams = cj["centroid"].at("ngrams").get<std::vector<std::uint16_t>>();
            c.centroid = std::move(cen);
        }
        m.clusters.push_back(std::move(c));
    }
    return m;
}

json profile_json(const BehavioralProfile& p) {
    json j = {{"sha256", p.sha256}, {"triples", json::array()}};
    for (const auto& t : p.features) j["triples"].push_back(triple_to_json(t));
    return j;
}

BehavioralProfile profile_from(const json& j) {
    BehavioralProfile p;
    p.sha256 = j.at("sha256");
    for (const auto& t : j.at("triples")) p.features.insert(triple_from_json(t));
    return p;
}

void write_atomic(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << text;
        if (!out) throw IoError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

MalwareTriage::MalwareTriage(MalwareConfig config, std::filesystem::path dir, AlertStore* alerts)
    : config_(std::move(config)), dir_(std::move(dir)), alerts_(alerts) {
    model_.tau_pred = config_.tau_pred;
    model_.tau_score = config_.tau_score;
    model_.t_cluster = config_.t_cluster;
    model_.weights = config_.weights;
    if (!config_.signatures.empty()) signatures_.load(config_.signatures);
    if (!config_.sandbox_manifest.empty()) {
        backend_ = std::make_shared<ReplaySandbox>(ReplaySandbox::load(config_.sandbox_manifest));
    }
    if (!dir_.empty()) {
        std::filesystem::create_directories(dir_ / "samples");
        std::filesystem::create_directories(dir_ / "profiles");
        std::filesystem::create_directories(dir_ / "models");
        load_state();
    }
}

void MalwareTriage::set_backend(std::shared_ptr<SandboxBackend> backend) {
    std::lock_guard lock(mu_);
    backend_ = std::move(backend);
}

void MalwareTriage::log(const std::string& sha, std::string stage, std::string detail) {
    AuditEntry e{audit_.size() + 1, sha, std::move(stage), std::move(detail)};
    if (!dir_.empty()) {
        std::ofstream out(dir_ / "audit.jsonl", std::ios::app);
        out << json{{"seq", e.seq}, {"sha256", e.sha256}, {"stage", e.stage}, {"detail", e.detail}}.dump() << "\n";
    }
    audit_.push_back(std::move(e));
}

Bytes MalwareTriage::sample_bytes(const std::string& sha) const {
    if (auto it = bytes_.find(sha); it != bytes_.end()) return it->second;
    if (dir_.empty()) return {};
    auto text = read_text(dir_ / "samples" / sha);
    return Bytes(text.begin(), text.end());
}

SampleStatus MalwareTriage::classify(SampleState& st, ByteView bytes) {
    const auto& sha = st.sha256;
    auto known = signatures_.find(sha);
    log(sha, "signature", known ? "known " + *known : "unknown");
    if (known) {
        st.status = SampleStatus::known_signature;
        st.malware_id = known;
        if (alerts_) {
            Alert a;
            a.kind = AlertKind::signature;
            a.severity = Severity::critical;
            a.ts_us = st.first_seen_ts_us;
            a.entity = sha;
            a.message = "known malware " + *known + " transferred";
            for (const auto& o : st.origins) a.session_ids.push_back(o.session_id);
            a.evidence["sha256"] = sha;
            a.evidence["malware_id"] = *known;
            if (!st.origins.empty() && !st.origins.front().filename.empty()) {
                a.evidence["filename"] = st.origins.front().filename;
            }
            alerts_->raise(std::move(a));
        }
        return st.status;
    }
    auto fit = features_.find(sha);
    if (fit == features_.end()) fit = features_.emplace(sha, static_features(bytes, config_.ngram_cap)).first;
    const auto& fv = fit->second;
    st.entropy = fv.entropy;
    log(sha, "static_features", "entropy " + format_double(fv.entropy));
    st.cluster_id.reset();
    st.similarity.reset();
    if (auto p = predict_cluster(fv, model_)) {
        st.status = SampleStatus::assigned;
        st.cluster_id = p->cluster_id;
        st.similarity = p->similarity;
        st.score = 1.0 - p->similarity;
        log(sha, "predict", "cluster " + std::to_string(p->cluster_id) + " similarity " + format_double(p->similarity) +
                                " model v" + std::to_string(model_.version));
        return st.status;
    }
    log(sha, "predict", "unknown, model v" + std::to_string(model_.version));
    st.score = score_sample(fv, model_);
    log(sha, "score", format_double(*st.score));
    if (*st.score >= model_.tau_score) {
        st.status = SampleStatus::queued;
        log(sha, "queue", "");
    } else {
        st.status = SampleStatus::below_threshold;
    }
    return st.status;
}

SampleStatus MalwareTriage::intake(const ExecutableSample& sample) {
    std::lock_guard lock(mu_);
    if (auto it = samples_.find(sample.sha256); it != samples_.end()) {
        auto& st = it->second;
        for (const auto& o : sample.origins) {
            if (std::find(st.origins.begin(), st.origins.end(), o) == st.origins.end()) st.origins.push_back(o);
        }
        st.first_seen_ts_us = std::min(st.first_seen_ts_us, sample.first_seen_ts_us);
        save_state();
        return st.status;
    }
    SampleState st;
    st.sha256 = sample.sha256;
    st.size_bytes = sample.bytes.size();
    st.container = sample.container;
    st.magic = file_magic(sample.bytes);
    st.origins = sample.origins;
    st.first_seen_ts_us = sample.first_seen_ts_us;
    if (dir_.empty()) {
        bytes_[sample.sha256] = sample.bytes;
    } else {
        write_atomic(dir_ / "samples" / sample.sha256, std::string(as_chars(sample.bytes)));
    }
    auto status = classify(st, sample.bytes);
    samples_.emplace(st.sha256, std::move(st));
    save_state();
    return status;
}

SampleStatus MalwareTriage::rescore(const std::string& sha256) {
    std::lock_guard lock(mu_);
    auto it = samples_.find(sha256);
    if (it == samples_.end()) throw UnknownSession("no sample " + sha256);
    if (it->second.status == SampleStatus::analyzed) return it->second.status;
    auto status = classify(it->second, sample_bytes(sha256));
    save_state();
    return status;
}

std::size_t MalwareTriage::process_queue() {
    std::lock_guard lock(mu_);
    if (!backend_) return 0;
    std::size_t analyzed = 0;
    for (auto& [sha, st] : samples_) {
        if (st.status != SampleStatus::queued) continue;
        ExecutableSample s;
        s.sha256 = sha;
        s.size_bytes = st.size_bytes;
        s.container = st.container;
        s.origins = st.origins;
        s.first_seen_ts_us = st.first_seen_ts_us;
        s.bytes = sample_bytes(sha);
        while (st.status == SampleStatus::queued) {
            ++st.attempts;
            ++dynamic_invocations_;
            try {
                auto p = run_dynamic(s, *backend_, config_.sandbox_budget);
                log(sha, "dynamic", std::to_string(p.features.size()) + " features via " + backend_->name());
                if (!dir_.empty()) write_atomic(dir_ / "profiles" / (sha + ".json"), profile_json(p).dump());
                profiles_[sha] = std::move(p);
                st.status = SampleStatus::analyzed;
                st.last_error.reset();
                ++analyzed;
            } catch (const Error& e) {
                st.last_error = e.kind() + ": " + e.what();
                log(sha, "dynamic_failed", *st.last_error);
                if (st.attempts >= config_.retry_max) {
                    st.status = SampleStatus::unanalyzed;
                    log(sha, "unanalyzed", "gave up after " + std::to_string(st.attempts) + " attempts");
                }
            }
        }
    }
    save_state();
    return analyzed;
}

void MalwareTriage::add_profile(BehavioralProfile p) {
    std::lock_guard lock(mu_);
    BehavioralProfile c;
    c.sha256 = p.sha256;
    for (const auto& t : p.features) c.features.insert(canonical_triple(t));
    if (!dir_.empty()) write_atomic(dir_ / "profiles" / (c.sha256 + ".json"), profile_json(c).dump());
    profiles_[c.sha256] = std::move(c);
}

ClusterModel MalwareTriage::run_clustering() {
    std::lock_guard lock(mu_);
    std::vector<BehavioralProfile> ps;
    std::map<std::string, StaticFeatureVector> fvs;
    for (const auto& [sha, p] : profiles_) {
        ps.push_back(p);
        auto fit = features_.find(sha);
        if (fit == features_.end()) {
            auto bytes = sample_bytes(sha);
            if (bytes.empty()) continue;
            fit = features_.emplace(sha, static_features(bytes, config_.ngram_cap)).first;
        }
        fvs.emplace(sha, fit->second);
    }
    model_ = cluster_behaviors(ps, fvs, model_);
    for (const auto& c : model_.clusters) {
        for (const auto& m : c.members) {
            if (auto it = samples_.find(m); it != samples_.end()) it->second.cluster_id = c.cluster_id;
        }
    }
    log("", "cluster",
        "model v" + std::to_string(model_.version) + ", " + std::to_string(model_.clusters.size()) + " clusters from " +
            std::to_string(ps.size()) + " profiles");
    save_state();
    return model_;
}

std::vector<SampleState> MalwareTriage::samples() const {
    std::lock_guard lock(mu_);
    std::vector<SampleState> out;
    for (const auto& [sha, s] : samples_) out.push_back(s);
    return out;
}

std::optional<SampleState> MalwareTriage::sample(const std::string& sha256) const {
    std::lock_guard lock(mu_);
    auto it = samples_.find(sha256);
    if (it == samples_.end()) return std::nullopt;
    return it->second;
}

std::optional<BehavioralProfile> MalwareTriage::profile(const std::string& sha256) const {
    std::lock_guard lock(mu_);
    auto it = profiles_.find(sha256);
    if (it == profiles_.end()) return std::nullopt;
    return it->second;
}

ClusterModel MalwareTriage::model() const {
    std::lock_guard lock(mu_);
    return model_;
}

void MalwareTriage::set_model(ClusterModel m) {
    std::lock_guard lock(mu_);
    model_ = std::move(m);
    save_state();
}

std::vector<AuditEntry> MalwareTriage::audit() const {
    std::lock_guard lock(mu_);
    return audit_;
}

TriageCounts MalwareTriage::counts() const {
    std::lock_guard lock(mu_);
    TriageCounts c;
    c.samples = samples_.size();
    c.dynamic_invocations = dynamic_invocations_;
    for (const auto& [sha, s] : samples_) ++c.by_status[std::string(to_string(s.status))];
    return c;
}

void MalwareTriage::save_state() const {
    if (dir_.empty()) return;
    json j = {{"format", "nfe-triage"}, {"version", 1}, {"dynamic_invocations", dynamic_invocations_},
              {"samples", json::array()}};
    for (const auto& [sha, s] : samples_) j["samples"].push_back(state_json(s));
    write_atomic(dir_ / "samples.json", j.dump(1));
    write_atomic(dir_ / "models" / "cluster-model.json", model_json(model_).dump(1));
}

void MalwareTriage::load_state() {
    if (std::filesystem::exists(dir_ / "samples.json")) {
        auto j = json::parse(read_text(dir_ / "samples.json"));
        dynamic_invocations_ = j.value("dynamic_invocations", std::uint64_t{0});
        for (const auto& s : j.at("samples")) {
            auto st = state_from(s);
            samples_.emplace(st.sha256, std::move(st));
        }
    }
    if (std::filesystem::exists(dir_ / "models" / "cluster-model.json")) {
        model_ = model_from(json::parse(read_text(dir_ / "models" / "cluster-model.json")));
    }
    for (const auto& e : std::filesystem::directory_iterator(dir_ / "profiles")) {
        if (e.path().extension() != ".json") continue;
        auto p = profile_from(json::parse(read_text(e.path())));
        profiles_.emplace(p.sha256, std::move(p));
    }
    if (std::filesystem::exists(dir_ / "audit.jsonl")) {
        std::ifstream in(dir_ / "audit.jsonl");
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = json::parse(line, nullptr, false);
            if (j.is_discarded()) continue;  // torn tail from a crash
            audit_.push_back({j.value("seq", std::uint64_t{0}), j.value("sha256", ""), j.value("stage", ""),
                              j.value("detail", "")});
        }
    }
}

}  // namespace nfe

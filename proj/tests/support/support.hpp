#pragma once

#include "corpus.hpp"

#include "nfe/engine.hpp"
#include "nfe/pcap.hpp"

#include <cstdlib>
#include <random>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace nfe::test {

/// A fresh directory removed on destruction.
class TempDir {
public:
    TempDir() {
        auto tmpl = (std::filesystem::temp_directory_path() / "nfe-test-XXXXXX").string();
        if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline EngineConfig engine_config(const std::filesystem::path& store) {
    EngineConfig c;
    c.store = store;
    return c;
}

inline std::filesystem::path save(const corpus::Corpus& c, const TempDir& dir, const std::string& name) {
    auto p = dir / (name + ".pcap");
    c.capture.save(p);
    return p;
}

inline std::vector<DecodedPacket> decode_all(const corpus::Corpus& c) {
    PcapReader reader(c.capture.pcap(), "test");
    std::vector<DecodedPacket> out;
    while (auto p = reader.next()) out.push_back(std::move(*p));
    return out;
}

inline std::vector<MetadataRecord> all_records(const MetadataStore& store) {
    std::vector<MetadataRecord> out;
    store.scan(TimeRange{}, [&](const MetadataRecord& r) { out.push_back(r); });
    return out;
}

inline bool same_flow(const MetadataRecord& r, const corpus::SessionTruth& t) {
    return r.initiator == t.client && r.responder == t.server && r.ip_proto == t.ip_proto;
}

inline bool same_flow(const Session& s, const corpus::SessionTruth& t) {
    return s.initiator == t.client && s.responder == t.server && s.key.ip_proto == t.ip_proto;
}

/// Records of the truth session; throws if there are none.
inline std::vector<MetadataRecord> records_of(const std::vector<MetadataRecord>& all, const corpus::SessionTruth& t) {
    std::vector<MetadataRecord> out;
    for (const auto& r : all) {
        if (same_flow(r, t)) out.push_back(r);
    }
    if (out.empty()) throw std::runtime_error("no record for " + t.name);
    return out;
}

/// A plausible record with a skewed value distribution, so some terms are
/// common and some rare. `ts_us` is the record's first timestamp.
inline MetadataRecord random_record(std::mt19937_64& rng, std::int64_t ts_us) {
    static const char* kProtos[] = {"http", "dns", "smtp", "ftp", "sip", "unknown"};
    MetadataRecord r;
    r.session_id = rng() % 1'000'000 + 1;
    r.source_id = "src" + std::to_string(rng() % 3);
    r.first_ts_us = ts_us;
    r.last_ts_us = ts_us + static_cast<std::int64_t>(rng() % 5'000'000);
    auto octet = [&](std::uint64_t range) { return std::to_string(rng() % range); };
    r.initiator = corpus::ep("10.0." + octet(4) + "." + octet(50), static_cast<std::uint16_t>(1024 + rng() % 60000));
    r.responder = corpus::ep("192.0." + octet(2) + "." + octet(20), static_cast<std::uint16_t>(rng() % 2 ? 80 : 53));
    auto proto = *parse_app_protocol(kProtos[std::min<std::uint64_t>(rng() % 8, 5)]);
    r.app_protocol = proto;
    r.ip_proto = proto == AppProtocol::dns ? 17 : 6;
    switch (proto) {
        case AppProtocol::http:
            r.add("http.host", "host" + octet(200) + ".example");
            r.add("http.method", rng() % 4 ? "GET" : "POST");
            r.add("http.status", rng() % 10 ? "200" : "404");
            break;
        case AppProtocol::dns:
            r.add("dns.qname", "q" + octet(300) + ".example");
            for (auto n = rng() % 3; n > 0; --n) r.add("dns.answers", "198.51.100." + octet(255));
            break;
        case AppProtocol::smtp:
            r.add("mail.from", "user" + octet(40) + "@example.com");
            r.add("mail.to", "user" + octet(40) + "@example.org");
            break;
        default:
            break;
    }
    r.packets_total = 1 + rng() % 40;
    r.bytes_total = r.packets_total * (60 + rng() % 1400);
    return r;
}

inline ExecutableSample executable_sample(Bytes bytes, std::int64_t ts_us = 0, std::uint64_t session_id = 0) {
    ExecutableSample s;
    s.sha256 = sha256_hex(bytes);
    s.size_bytes = bytes.size();
    s.container = executable_container(bytes).value_or(Container::unknown_exec);
    s.first_seen_ts_us = ts_us;
    s.origins.push_back({session_id, AppProtocol::http, 0, "sample.exe"});
    s.bytes = std::move(bytes);
    return s;
}

/// Single linkage by brute force: connected components of the graph whose
/// edges join profiles at least `t` similar.
inline std::set<std::set<std::string>> brute_force_clusters(const std::vector<BehavioralProfile>& ps, double t) {
    std::vector<std::size_t> comp(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) comp[i] = i;
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t i = 0; i < ps.size(); ++i) {
            for (std::size_t j = 0; j < ps.size(); ++j) {
                if (comp[i] != comp[j] && jaccard(ps[i].features, ps[j].features) >= t) {
                    auto lo = std::min(comp[i], comp[j]);
                    comp[i] = comp[j] = lo;
                    changed = true;
                }
            }
        }
    }
    std::map<std::size_t, std::set<std::string>> groups;
    for (std::size_t i = 0; i < ps.size(); ++i) groups[comp[i]].insert(ps[i].sha256);
    std::set<std::set<std::string>> out;
    for (auto& [k, g] : groups) out.insert(std::move(g));
    return out;
}

inline std::set<std::set<std::string>> member_sets(const ClusterModel& m) {
    std::set<std::set<std::string>> out;
    for (const auto& c : m.clusters) out.insert(c.members);
    return out;
}

}  // namespace nfe::test

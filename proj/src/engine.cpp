#include "nfe/engine.hpp"

#include "nfe/errors.hpp"
#include "nfe/pcap.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

namespace nfe {

namespace {

std::int64_t steady_us() {
    return std::chrono::duration_cast<std::chrono::microseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::vector<std::filesystem::path> capture_files(const std::filesystem::path& p) {
    if (!std::filesystem::is_directory(p)) return {p};
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(p)) {
        if (e.is_regular_file() && (e.path().extension() == ".pcap" || e.path().extension() == ".cap")) {
            out.push_back(e.path());
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::string flow_text(const Session& s) {
    return s.initiator.to_string() + " -> " + s.responder.to_string() + "/" + std::to_string(s.key.ip_proto);
}

}  // namespace

struct Engine::Run {
    IngestSummary summary;
    std::shared_ptr<const RuleSet> rules;
    LinkType link = LinkType::ethernet;
    // Network rule that raised an alert verdict for a flow, kept until the
    // session completes so the alert can name it.
    std::unordered_map<FlowKey, std::string, FlowKeyHash> net_alert_rule;
    std::unordered_set<std::string> samples_seen;
};

Engine::Engine(EngineConfig config) : config_(std::move(config)) {
    config_.validate();
    std::filesystem::create_directories(config_.store);
    store_ = std::make_unique<MetadataStore>(config_.store, config_.index);
    alerts_ = std::make_unique<AlertStore>(config_.store / "alerts.jsonl", config_.alert_log);
    if (!config_.geoip_csv.empty()) geo_ = GeoIpTable::load_csv(config_.geoip_csv);
    query_ = std::make_unique<QueryEngine>(*store_, geoip());
    triage_ = std::make_unique<MalwareTriage>(config_.malware, config_.store / "malware", alerts_.get());
    soc_ = std::make_unique<SocBridge>(*query_, *alerts_, config_.soc_slack_us);
    anomaly_ = std::make_unique<AnomalyDetector>(config_.anomaly, [this](Alert&& a) { alerts_->raise(std::move(a)); });
    RuleSet rs;
    rs.default_action = config_.default_action;
    if (!config_.rules.empty()) rs = load_ruleset(config_.rules.string(), config_.default_action);
    rules_ = std::make_shared<const RuleSet>(std::move(rs));
}

Engine::~Engine() {
    try {
        close();
    } catch (...) {
        // Destructors must not throw; the journal keeps acknowledged records.
    }
}

void Engine::close() {
    std::lock_guard lock(write_mu_);
    if (closed_) return;
    closed_ = true;
    anomaly_->flush();
    store_->close();
}

void Engine::set_rules(RuleSet rules) {
    auto p = std::make_shared<const RuleSet>(std::move(rules));
    std::lock_guard lock(rules_mu_);
    rules_ = std::move(p);
}

std::shared_ptr<const RuleSet> Engine::rules() const {
    std::lock_guard lock(rules_mu_);
    return rules_;
}

void Engine::register_source(const std::string& source_id, const std::filesystem::path& origin) {
    if (source_id.empty()) throw ConfigInvalid("source id must not be empty");
    auto canon = std::filesystem::weakly_canonical(origin).string();
    std::lock_guard lock(sources_mu_);
    auto [it, inserted] = sources_.emplace(source_id, canon);
    if (!inserted && it->second != canon) {
        throw ConfigInvalid("source id '" + source_id + "' already names " + it->second);
    }
}

IngestSummary Engine::ingest(const std::string& source_id, const std::filesystem::path& capture,
                             std::shared_ptr<const RuleSet> rules) {
    register_source(source_id, capture);
    Run run;
    run.summary.source_id = source_id;
    run.summary.origin = capture.string();
    run.rules = rules ? std::move(rules) : this->rules();
    const auto t0 = steady_us();
    const auto alerts_before = alerts_->last_id();
    {
        std::lock_guard lock(write_mu_);
        closed_ = false;
    }
    for (const auto& f : capture_files(capture)) ingest_file(run, f);
    anomaly_->flush();
    triage_->process_queue();
    run.summary.samples = run.samples_seen.size();
    run.summary.alerts = alerts_->last_id() - alerts_before;
    run.summary.duration_us = steady_us() - t0;
    return run.summary;
}

std::vector<IngestSummary> Engine::ingest_sources() {
    std::vector<IngestSummary> out(config_.sources.size());
    std::vector<std::exception_ptr> errors(config_.sources.size());
    std::vector<std::thread> threads;
    for (std::size_t i = 0; i < config_.sources.size(); ++i) {
        threads.emplace_back([&, i] {
            try {
                out[i] = ingest(config_.sources[i].source_id, config_.sources[i].path);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

void Engine::ingest_file(Run& run, const std::filesystem::path& file) {
    PcapReader reader(file, run.summary.source_id);
    run.link = reader.source().link_type;
    SessionAssembler assembler(
        config_.session, [&](Session&& s) { handle_session(run, std::move(s)); },
        [this] { return store_->allocate_session_id(); });
    const auto& rs = *run.rules;
    try {
        while (auto p = reader.next()) {
            ++run.summary.packets_read;
            if (p->is_tcp() && p->payload_len > 0) ftp_.observe(*p);
            auto verdict = evaluate_network(*p, rs);
            if (verdict.action == Action::drop) {
                ++run.summary.packets_dropped;
                continue;
            }
            if (!p->has_ports()) {
                ++run.summary.packets_not_flow;
                continue;
            }
            if (verdict.action == Action::alert && verdict.rule_id) {
                run.net_alert_rule.try_emplace(flow_key(*p), *verdict.rule_id);
            }
            assembler.add(*p, static_cast<std::uint8_t>(verdict.action));
            anomaly_->advance(p->ts_us);
        }
    } catch (const CorruptRecord& e) {
        run.summary.error = std::string("CorruptRecord: ") + e.what();
    }
    assembler.finish();
}

void Engine::handle_session(Run& run, Session&& s) {
    ++run.summary.sessions;
    const auto& rs = *run.rules;
    ParseContext ctx{&ftp_};
    auto parsed = ProtocolRegistry::builtin().process(s, ctx);

    // An application rule decides when one matches any record of the
    // session; otherwise the strongest network verdict among its packets.
    std::optional<Verdict> app;
    for (const auto& r : parsed.records) {
        auto v = evaluate_application(r, rs);
        if (v.rule_id && (!app || v.action > app->action)) app = v;
    }
    Action action = app ? app->action : static_cast<Action>(s.admission_tag);
    std::optional<std::string> rule_id;
    std::string layer = "application";
    if (app) {
        rule_id = app->rule_id;
    } else if (auto it = run.net_alert_rule.find(s.key); it != run.net_alert_rule.end()) {
        rule_id = it->second;
        layer = "network";
    }
    run.net_alert_rule.erase(s.key);

    if (action == Action::drop) {
        ++run.summary.sessions_dropped;
        return;
    }

    std::vector<MetadataRecord> stored;
    {
        std::lock_guard lock(write_mu_);
        if (action != Action::store_metadata) {
            PcapWriter w(run.link);
            const bool full = stores_full_payload(action);
            for (const auto& f : s.frames) {
                ByteView raw(f.raw);
                w.write(f.ts_us, full ? raw : raw.first(std::min<std::size_t>(f.header_len, raw.size())), f.orig_len);
            }
            store_->store_payload(s.session_id, w.image(), full ? StoredForm::full : StoredForm::headers_only);
            ++run.summary.payloads_stored;
        }
        for (auto& r : parsed.records) {
            r.source_id = run.summary.source_id;
            r.session_id = s.session_id;
            r.record_id = store_->append_record(r);
            stored.push_back(r);
        }
    }
    run.summary.records += stored.size();
    for (const auto& r : stored) anomaly_->accumulate(r);

    if (action == Action::alert) {
        Alert a;
        a.kind = AlertKind::rule;
        a.severity = Severity::warn;
        a.ts_us = s.first_ts_us;
        a.entity = flow_text(s);
        a.message = "rule " + rule_id.value_or("default") + " matched " +
                    std::string(to_string(stored.empty() ? AppProtocol::unknown : stored.front().app_protocol)) +
                    " session";
        a.session_ids = {s.session_id};
        a.evidence["rule_id"] = rule_id.value_or("default");
        a.evidence["layer"] = rule_id ? layer : "default";
        a.evidence["action"] = std::string(to_string(action));
        if (!stored.empty()) {
            a.evidence["app_protocol"] = std::string(to_string(stored.front().app_protocol));
            a.evidence["record_id"] = std::to_string(stored.front().record_id);
        }
        alerts_->raise(std::move(a));
    }

    if (!stored.empty()) {
        for (auto& sample : extract_executables(s, stored.front(), parsed.files)) {
            bool fresh = !triage_->sample(sample.sha256).has_value();
            triage_->intake(sample);
            if (run.samples_seen.insert(sample.sha256).second && fresh) ++run.summary.samples_new;
        }
    }
}

std::string to_string(const IngestSummary& s) {
    std::ostringstream o;
    o << "source=" << s.source_id << " packets=" << s.packets_read << " dropped=" << s.packets_dropped
      << " not_flow=" << s.packets_not_flow << " sessions=" << s.sessions << " sessions_dropped=" << s.sessions_dropped
      << " records=" << s.records << " payloads=" << s.payloads_stored << " samples=" << s.samples
      << " samples_new=" << s.samples_new << " alerts=" << s.alerts << " duration_ms=" << s.duration_us / 1000;
    if (s.error) o << " error=\"" << *s.error << "\"";
    return o.str();
}

}  // namespace nfe

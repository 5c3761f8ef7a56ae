// nfe: command-line front end to the forensic engine.

#include "nfe/api.hpp"
#include "nfe/engine.hpp"
#include "nfe/errors.hpp"
#include "nfe/json_codec.hpp"
#include "nfe/report.hpp"

#include "CLI11.hpp"

#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace {

using nfe::json;

struct GlobalOptions {
    std::string config;
    std::string store;
    std::string rules;
    std::string alert_log;
    std::string signatures;
    std::string sandbox_manifest;
    std::string geoip;
    bool json_out = false;
};

struct QueryOptions {
    std::vector<std::string> terms;
    std::string from;
    std::string to;
    std::vector<std::string> facets;
    std::size_t limit = 20;
    std::size_t offset = 0;
    std::string keyword;
};

nfe::EngineConfig build_config(const GlobalOptions& g) {
    nfe::EngineConfig c;
    if (!g.config.empty()) c = nfe::load_config(g.config);
    if (!g.store.empty()) c.store = g.store;
    if (!g.rules.empty()) c.rules = g.rules;
    if (!g.alert_log.empty()) c.alert_log = g.alert_log;
    if (!g.signatures.empty()) c.malware.signatures = g.signatures;
    if (!g.sandbox_manifest.empty()) c.malware.sandbox_manifest = g.sandbox_manifest;
    if (!g.geoip.empty()) c.geoip_csv = g.geoip;
    if (c.store.empty()) throw nfe::ConfigInvalid("a store directory is required (--store or config 'store')");
    return c;
}

std::int64_t parse_time(const std::string& text) {
    if (text.empty()) return 0;
    if (text.find_first_not_of("-0123456789") == std::string::npos) return std::stoll(text);
    auto t = nfe::parse_iso8601_us(text);
    if (!t) throw nfe::MalformedRequest("unparseable time '" + text + "'", 0);
    return *t;
}

nfe::Query build_query(const QueryOptions& o) {
    nfe::Query q;
    for (const auto& t : o.terms) {
        auto eq = t.find('=');
        if (eq == std::string::npos || eq == 0) throw nfe::MalformedRequest("term must be field=value: " + t, 0);
        q.terms.push_back({t.substr(0, eq), t.substr(eq + 1)});
    }
    if (!o.from.empty()) q.range.from_us = parse_time(o.from);
    if (!o.to.empty()) q.range.to_us = parse_time(o.to);
    q.facet_fields = o.facets;
    q.limit = o.limit;
    q.offset = o.offset;
    if (!o.keyword.empty()) q.keyword = o.keyword;
    return q;
}

void add_query_options(CLI::App* cmd, QueryOptions& o, bool paging = true) {
    cmd->add_option("terms", o.terms, "field=value terms, all must hold");
    cmd->add_option("--from", o.from, "range start (ISO-8601 or microseconds)");
    cmd->add_option("--to", o.to, "range end (ISO-8601 or microseconds)");
    cmd->add_option("--keyword", o.keyword, "case-insensitive substring of stored payloads");
    if (paging) {
        cmd->add_option("--facet", o.facets, "facet field (repeatable)");
        cmd->add_option("--limit", o.limit, "records per page");
        cmd->add_option("--offset", o.offset, "first record of the page");
    }
}

void print_json(const json& j) { std::cout << j.dump(2, ' ', false, json::error_handler_t::replace) << "\n"; }

std::string record_line(const nfe::MetadataRecord& r) {
    std::ostringstream o;
    o << std::setw(8) << r.session_id << "  " << nfe::format_iso8601_us(r.first_ts_us) << "  " << std::left
      << std::setw(6) << nfe::to_string(r.app_protocol) << std::right << "  " << r.initiator.to_string() << " -> "
      << r.responder.to_string() << "  " << r.packets_total << " pkts " << r.bytes_total << " B";
    for (const auto& [k, v] : r.attributes) o << "  " << k << "=" << v;
    return o.str();
}

int cmd_ingest(const GlobalOptions& g, const std::vector<std::string>& paths, const std::string& source) {
    nfe::Engine engine(build_config(g));
    std::vector<nfe::IngestSummary> out;
    if (paths.empty()) {
        if (engine.config().sources.empty()) throw nfe::ConfigInvalid("nothing to ingest: give paths or configure [sources]");
        out = engine.ingest_sources();
    } else {
        for (const auto& p : paths) {
            auto id = source.empty() ? std::filesystem::path(p).stem().string() : source;
            out.push_back(engine.ingest(id, p));
        }
    }
    engine.close();
    int rc = 0;
    json arr = json::array();
    for (const auto& s : out) {
        if (s.error) rc = 2;
        if (g.json_out) {
            json j = {{"source_id", s.source_id},       {"origin", s.origin},
                      {"packets_read", s.packets_read}, {"packets_dropped", s.packets_dropped},
                      {"packets_not_flow", s.packets_not_flow}, {"sessions", s.sessions},
                      {"sessions_dropped", s.sessions_dropped}, {"records", s.records},
                      {"payloads_stored", s.payloads_stored}, {"samples", s.samples},
                      {"samples_new", s.samples_new}, {"alerts", s.alerts},
                      {"duration_us", s.duration_us}};
            if (s.error) j["error"] = *s.error;
            arr.push_back(j);
        } else {
            std::cout << nfe::to_string(s) << "\n";
        }
    }
    if (g.json_out) print_json(arr);
    return rc;
}

int cmd_query(const GlobalOptions& g, const QueryOptions& o) {
    nfe::Engine engine(build_config(g));
    auto rs = engine.query().run_query(build_query(o));
    if (g.json_out) {
        print_json(nfe::to_json(rs));
        return 0;
    }
    std::cout << "matched " << rs.matched << " sessions (store version " << rs.store_version << ", "
              << rs.elapsed_us << " us)\n";
    for (const auto& [field, rows] : rs.facets) {
        std::cout << "\nfacet " << field << "\n";
        for (const auto& r : rows) {
            std::cout << "  " << std::left << std::setw(40) << r.value << std::right << std::setw(8) << r.session_count
                      << " sessions " << std::setw(10) << r.packet_count << " pkts " << std::setw(12) << r.byte_count
                      << " B\n";
        }
    }
    if (!rs.records.empty()) std::cout << "\n";
    for (const auto& r : rs.records) std::cout << record_line(r) << "\n";
    if (rs.keyword_unscanned) std::cout << rs.keyword_unscanned << " sessions not scanned for the keyword\n";
    return 0;
}

int cmd_timeline(const GlobalOptions& g, const QueryOptions& o, std::int64_t granularity_s) {
    nfe::Engine engine(build_config(g));
    auto buckets = engine.query().timeline(build_query(o), granularity_s * 1'000'000);
    if (g.json_out) {
        print_json(nfe::to_json(buckets));
        return 0;
    }
    for (const auto& b : buckets) {
        std::cout << nfe::format_iso8601_us(b.bucket_start_us) << "  " << std::setw(8) << b.session_count
                  << " sessions " << std::setw(12) << b.byte_count << " B\n";
    }
    return 0;
}

int cmd_graph(const GlobalOptions& g, const QueryOptions& o) {
    nfe::Engine engine(build_config(g));
    auto graph = engine.query().relation_graph(build_query(o));
    if (g.json_out) {
        print_json(nfe::to_json(graph));
        return 0;
    }
    std::cout << graph.nodes.size() << " hosts, " << graph.edges.size() << " edges\n";
    for (const auto& e : graph.edges) {
        std::cout << "  " << e.src << " -> " << e.dst << "  " << e.session_count << " sessions " << e.byte_count << " B";
        for (const auto& p : e.protocols) std::cout << " " << p;
        std::cout << "\n";
    }
    return 0;
}

int cmd_show(const GlobalOptions& g, std::uint64_t session_id, const std::string& extract_dir) {
    nfe::Engine engine(build_config(g));
    auto content = engine.query().reconstruct_content(session_id);
    if (!extract_dir.empty()) {
        std::filesystem::create_directories(extract_dir);
        for (const auto& a : content.artifacts) {
            auto name = std::filesystem::path(a.name).filename();
            std::ofstream f(std::filesystem::path(extract_dir) / name, std::ios::binary);
            f.write(reinterpret_cast<const char*>(a.body.data()), static_cast<std::streamsize>(a.body.size()));
        }
    }
    if (g.json_out) {
        print_json(nfe::to_json(content));
        return 0;
    }
    std::cout << "session " << content.session_id << " (" << content.kind << ")\n";
    for (const auto& r : content.records) std::cout << record_line(r) << "\n";
    if (content.body_error) std::cout << *content.body_error << "\n";
    for (const auto& a : content.artifacts) {
        std::cout << "\n== " << a.name << " (" << a.content_type << ", " << a.body.size() << " bytes, sha256 "
                  << nfe::sha256_hex(a.body) << ")\n";
        if (a.content_type.starts_with("text/") || a.content_type == "message/rfc822") {
            std::cout << nfe::as_chars(a.body).substr(0, 4096) << "\n";
        } else {
            std::cout << nfe::hex_dump(a.body, 512);
        }
    }
    return 0;
}

int cmd_report(const GlobalOptions& g, const QueryOptions& o, const std::string& tmpl_name, std::int64_t granularity_s,
               const std::string& out) {
    nfe::Engine engine(build_config(g));
    nfe::ReportTemplate t;
    t.name = tmpl_name;
    t.granularity_us = granularity_s * 1'000'000;
    auto report = nfe::generate_report(engine.query(), engine.alerts(), &engine.triage(), build_query(o), t);
    std::string text = g.json_out ? report.dump(2, ' ', false, json::error_handler_t::replace) + "\n"
                                  : nfe::render_report_text(report);
    if (out.empty()) {
        std::cout << text;
    } else {
        std::ofstream(out) << text;
        std::cout << "report " << report["report_id"].get<std::string>() << " written to " << out << "\n";
    }
    return 0;
}

json sample_json(const nfe::SampleState& s) {
    json o = {{"sha256", s.sha256}, {"size_bytes", s.size_bytes}, {"container", nfe::to_string(s.container)},
              {"status", nfe::to_string(s.status)}, {"attempts", s.attempts}};
    if (s.malware_id) o["malware_id"] = *s.malware_id;
    if (s.cluster_id) o["cluster_id"] = *s.cluster_id;
    if (s.similarity) o["similarity"] = *s.similarity;
    if (s.score) o["score"] = *s.score;
    if (s.last_error) o["last_error"] = *s.last_error;
    return o;
}

void print_sample(const nfe::SampleState& s) {
    std::cout << s.sha256 << "  " << std::left << std::setw(16) << nfe::to_string(s.status) << std::right
              << std::setw(9) << s.size_bytes << " B";
    if (s.malware_id) std::cout << "  signature=" << *s.malware_id;
    if (s.cluster_id) std::cout << "  cluster=" << *s.cluster_id;
    if (s.score) std::cout << "  score=" << nfe::format_double(*s.score);
    std::cout << "\n";
}

int cmd_triage_list(const GlobalOptions& g, const std::string& status) {
    nfe::Engine engine(build_config(g));
    std::optional<nfe::SampleStatus> want;
    if (!status.empty()) {
        want = nfe::parse_sample_status(status);
        if (!want) throw nfe::MalformedRequest("unknown status " + status, 0);
    }
    json arr = json::array();
    for (const auto& s : engine.triage().samples()) {
        if (want && s.status != *want) continue;
        if (g.json_out) arr.push_back(sample_json(s));
        else print_sample(s);
    }
    if (g.json_out) print_json(arr);
    return 0;
}

int cmd_triage_score(const GlobalOptions& g, const std::string& sha) {
    nfe::Engine engine(build_config(g));
    engine.triage().rescore(sha);
    engine.triage().process_queue();
    auto s = engine.triage().sample(sha);
    if (!s) throw nfe::UnknownSession("no sample " + sha);
    if (g.json_out) print_json(sample_json(*s));
    else print_sample(*s);
    return 0;
}

json cluster_json(const nfe::ClusterModel& m) {
    json arr = json::array();
    for (const auto& c : m.clusters) {
        json rep = json::array();
        for (const auto& t : c.representative) rep.push_back({t.object_type, t.object_name, t.operation});
        arr.push_back({{"cluster_id", c.cluster_id}, {"members", c.members}, {"representative", rep},
                       {"representative_outliers", c.representative_outliers}});
    }
    return {{"model_version", m.version}, {"clusters", arr}};
}

void print_clusters(const nfe::ClusterModel& m) {
    std::cout << "model version " << m.version << ", " << m.clusters.size() << " clusters\n";
    for (const auto& c : m.clusters) {
        std::cout << "cluster " << c.cluster_id << ": " << c.members.size() << " members, "
                  << c.representative.size() << " representative triples\n";
        for (const auto& sha : c.members) std::cout << "  " << sha << "\n";
    }
}

int cmd_cluster(const GlobalOptions& g, bool run) {
    nfe::Engine engine(build_config(g));
    auto m = run ? engine.triage().run_clustering() : engine.triage().model();
    if (g.json_out) print_json(cluster_json(m));
    else print_clusters(m);
    return 0;
}

int cmd_soc_import(const GlobalOptions& g, const std::string& file) {
    nfe::Engine engine(build_config(g));
    std::ifstream in(file);
    if (!in) throw nfe::IoError("cannot open " + file);
    auto r = engine.soc().import_alerts(in);
    if (g.json_out) {
        json rej = json::array();
        for (const auto& x : r.rejected) rej.push_back({{"line", x.line}, {"reason", x.reason}});
        print_json({{"accepted", r.accepted}, {"duplicates", r.duplicates}, {"rejected", rej}});
    } else {
        std::cout << "accepted " << r.accepted << ", duplicates " << r.duplicates << ", rejected " << r.rejected.size()
                  << "\n";
        for (const auto& x : r.rejected) std::cout << "  line " << x.line << ": " << x.reason << "\n";
    }
    return r.rejected.empty() ? 0 : 2;
}

int cmd_soc_correlate(const GlobalOptions& g, const std::string& id) {
    nfe::Engine engine(build_config(g));
    auto ids = engine.soc().correlate_stored(id);
    if (g.json_out) {
        print_json({{"soc_id", id}, {"session_ids", ids}});
    } else {
        std::cout << ids.size() << " sessions\n";
        for (auto sid : ids) std::cout << "  " << sid << "\n";
    }
    return 0;
}

int cmd_serve(const GlobalOptions& g, std::string bind, std::string ui_dir) {
    auto config = build_config(g);
    if (bind.empty()) bind = config.api_bind;
    if (ui_dir.empty() && !config.ui_dir.empty()) ui_dir = config.ui_dir.string();
    // Block termination signals before any thread starts so sigwait sees them.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    nfe::Engine engine(std::move(config));
    nfe::ApiServer server(engine, ui_dir);
    auto [host, port] = nfe::parse_bind(bind);
    int bound = server.bind(host, port);
    std::cout << "listening on " << host << ":" << bound << std::endl;
    server.start();
    int sig = 0;
    sigwait(&set, &sig);
    std::cout << "stopping" << std::endl;
    server.stop();
    engine.close();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"nfe: network forensic engine"};
    app.require_subcommand(1);
    GlobalOptions g;
    app.add_option("--config", g.config, "engine config file")->check(CLI::ExistingFile);
    app.add_option("--store", g.store, "store directory");
    app.add_option("--rules", g.rules, "filter rules file")->check(CLI::ExistingFile);
    app.add_option("--alert-log", g.alert_log, "append alerts to this JSON-lines file");
    app.add_option("--signatures", g.signatures, "malware signature list")->check(CLI::ExistingFile);
    app.add_option("--sandbox-manifest", g.sandbox_manifest, "replay sandbox manifest")->check(CLI::ExistingFile);
    app.add_option("--geoip", g.geoip, "GeoIP CSV (cidr,label)")->check(CLI::ExistingFile);
    app.add_flag("--json", g.json_out, "machine-readable output");

    std::function<int()> action;

    auto* ingest = app.add_subcommand("ingest", "ingest capture files or directories");
    std::vector<std::string> paths;
    std::string source;
    ingest->add_option("paths", paths, "capture files or directories (default: configured sources)");
    ingest->add_option("--source", source, "source id (default: file stem)");
    ingest->callback([&] { action = [&] { return cmd_ingest(g, paths, source); }; });

    QueryOptions qo;
    auto* query = app.add_subcommand("query", "search sessions");
    add_query_options(query, qo);
    query->callback([&] { action = [&] { return cmd_query(g, qo); }; });

    std::int64_t granularity_s = 60;
    auto* timeline = app.add_subcommand("timeline", "session histogram over time");
    add_query_options(timeline, qo, false);
    timeline->add_option("--granularity", granularity_s, "bucket width in seconds");
    timeline->callback([&] { action = [&] { return cmd_timeline(g, qo, granularity_s); }; });

    auto* graph = app.add_subcommand("graph", "host relation graph");
    add_query_options(graph, qo, false);
    graph->callback([&] { action = [&] { return cmd_graph(g, qo); }; });

    std::uint64_t session_id = 0;
    std::string extract_dir;
    auto* show = app.add_subcommand("show", "reconstruct a session's content");
    show->add_option("session", session_id, "session id")->required();
    show->add_option("--extract", extract_dir, "write artifacts into this directory");
    show->callback([&] { action = [&] { return cmd_show(g, session_id, extract_dir); }; });

    std::string tmpl_name = "standard", report_out;
    auto* report = app.add_subcommand("report", "generate a report");
    add_query_options(report, qo, false);
    report->add_option("--template", tmpl_name, "template name");
    report->add_option("--granularity", granularity_s, "timeline bucket width in seconds");
    report->add_option("--out", report_out, "write to file instead of stdout");
    report->callback([&] { action = [&] { return cmd_report(g, qo, tmpl_name, granularity_s, report_out); }; });

    auto* triage = app.add_subcommand("triage", "malware samples");
    triage->require_subcommand(1);
    std::string status, sha;
    auto* tlist = triage->add_subcommand("list", "list samples");
    tlist->add_option("--status", status, "only this status");
    tlist->callback([&] { action = [&] { return cmd_triage_list(g, status); }; });
    auto* tscore = triage->add_subcommand("score", "re-run static triage for a sample");
    tscore->add_option("sha256", sha, "sample hash")->required();
    tscore->callback([&] { action = [&] { return cmd_triage_score(g, sha); }; });

    auto* cluster = app.add_subcommand("cluster", "behavioral clustering");
    cluster->require_subcommand(1);
    cluster->add_subcommand("run", "recluster all profiles")->callback([&] {
        action = [&] { return cmd_cluster(g, true); };
    });
    cluster->add_subcommand("show", "show the current model")->callback([&] {
        action = [&] { return cmd_cluster(g, false); };
    });

    auto* soc = app.add_subcommand("soc", "SOC alert feed");
    soc->require_subcommand(1);
    std::string feed, alert_id;
    auto* simport = soc->add_subcommand("import", "import a JSON-lines alert feed");
    simport->add_option("file", feed, "feed file")->required()->check(CLI::ExistingFile);
    simport->callback([&] { action = [&] { return cmd_soc_import(g, feed); }; });
    auto* scorr = soc->add_subcommand("correlate", "sessions matching an imported alert");
    scorr->add_option("alert_id", alert_id, "feed alert id")->required();
    scorr->callback([&] { action = [&] { return cmd_soc_correlate(g, alert_id); }; });

    std::string bind, ui_dir;
    auto* serve = app.add_subcommand("serve", "run the HTTP API");
    serve->add_option("--bind", bind, "host:port (default from config, 127.0.0.1:8080)");
    serve->add_option("--ui-dir", ui_dir, "static console assets")->check(CLI::ExistingDirectory);
    serve->callback([&] { action = [&] { return cmd_serve(g, bind, ui_dir); }; });

    CLI11_PARSE(app, argc, argv);
    try {
        return action ? action() : 1;
    } catch (const nfe::Error& e) {
        std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

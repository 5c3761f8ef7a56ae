#include "doctest.h"

#include "support.hpp"

#include "nfe/api.hpp"
#include "nfe/engine.hpp"
#include "nfe/errors.hpp"
#include "nfe/report.hpp"

#include "httplib.h"

#include <fstream>
#include <thread>

using namespace nfe;
using namespace nfe::corpus;
using namespace nfe::test;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

std::vector<DecodedPacket> payload_packets(const MetadataStore& store, std::uint64_t sid) {
    auto [bytes, form] = store.fetch_payload(sid);
    PcapReader r(bytes, "payload");
    std::vector<DecodedPacket> out;
    while (auto p = r.next()) out.push_back(std::move(*p));
    return out;
}

}  // namespace

TEST_CASE("ingest summary accounts for every packet") {
    TempDir dir;
    Engine engine(engine_config(dir / "store"));
    auto c = protocol_corpus();
    auto s = engine.ingest("protocols", save(c, dir, "p"));
    CHECK_FALSE(s.error);
    CHECK(s.packets_read == c.capture.frames().size());
    CHECK(s.packets_not_flow == c.non_flow_packets);
    CHECK(s.packets_dropped == 0);
    CHECK(s.sessions == c.sessions.size());
    CHECK(s.records == c.sessions.size());
    CHECK(s.payloads_stored == 0);
    CHECK(s.samples == 2);
    CHECK(s.samples_new == 2);
    CHECK(engine.store().record_count() == s.records);
    for (const auto& r : all_records(engine.store())) CHECK(r.source_id == "protocols");
}

TEST_CASE("a second source doubles records but not samples") {
    TempDir dir;
    Engine engine(engine_config(dir / "store"));
    auto c = protocol_corpus();
    auto path = save(c, dir, "p");
    auto a = engine.ingest("site-a", path);
    auto b = engine.ingest("site-b", path);
    CHECK(engine.store().record_count() == 2 * a.records);
    CHECK(b.samples == 2);
    CHECK(b.samples_new == 0);
    CHECK(engine.triage().samples().size() == 2);
    for (const auto& st : engine.triage().samples()) CHECK(st.origins.size() == 2);
    Query q;
    q.terms = {{"source_id", "site-b"}};
    CHECK(engine.query().run_query(q).matched == b.records);
}

TEST_CASE("a truncated capture ingests what precedes the damage") {
    TempDir dir;
    Engine engine(engine_config(dir / "store"));
    auto c = http_get_corpus();
    auto image = c.capture.pcap();
    image.resize(image.size() - 3);
    auto path = dir / "cut.pcap";
    {
        std::ofstream out(path, std::ios::binary);
        out.write(reinterpret_cast<const char*>(image.data()), static_cast<std::streamsize>(image.size()));
    }
    auto s = engine.ingest("cut", path);
    REQUIRE(s.error);
    CHECK(s.error->starts_with("CorruptRecord"));
    CHECK(s.packets_read == 9);
    CHECK(s.records == 1);
}

TEST_CASE("network drop rule discards packets before assembly") {
    TempDir dir;
    write_text(dir / "rules.txt", "net 1 ip.proto eq 6 => drop\n");
    auto cfg = engine_config(dir / "store");
    cfg.rules = dir / "rules.txt";
    Engine engine(cfg);
    auto c = protocol_corpus();
    auto s = engine.ingest("p", save(c, dir, "p"));
    std::uint64_t tcp_packets = 0, udp_sessions = 0;
    for (const auto& t : c.sessions) {
        if (t.ip_proto == 6) tcp_packets += t.packets;
        else ++udp_sessions;
    }
    CHECK(s.packets_dropped == tcp_packets);
    CHECK(s.sessions == udp_sessions);
    for (const auto& r : all_records(engine.store())) CHECK(r.ip_proto == 17);
}

TEST_CASE("each action yields its storage outcome") {
    auto c = http_get_corpus();
    const auto& truth = c.session("http_get");
    for (auto action : {Action::drop, Action::store_metadata, Action::store_headers, Action::store_full,
                        Action::reconstruct, Action::alert}) {
        CAPTURE(to_string(action));
        TempDir dir;
        write_text(dir / "rules.txt", "app 1 http.host exists => " + std::string(to_string(action)) + "\n");
        auto cfg = engine_config(dir / "store");
        cfg.rules = dir / "rules.txt";
        Engine engine(cfg);
        auto s = engine.ingest("a", save(c, dir, "c"));
        auto recs = all_records(engine.store());
        auto payloads = engine.store().payloads();
        auto rule_alerts = engine.alerts().list(AlertKind::rule);
        switch (action) {
            case Action::drop:
                CHECK(recs.empty());
                CHECK(payloads.empty());
                CHECK(s.sessions_dropped == 1);
                break;
            case Action::store_metadata:
                CHECK(recs.size() == 1);
                CHECK(payloads.empty());
                break;
            case Action::store_headers: {
                REQUIRE(recs.size() == 1);
                REQUIRE(payloads.size() == 1);
                CHECK(payloads[0].form == StoredForm::headers_only);
                auto packets = payload_packets(engine.store(), recs[0].session_id);
                CHECK(packets.size() == truth.packets);
                for (const auto& p : packets) CHECK(p.payload_len == 0);
                break;
            }
            case Action::store_full:
            case Action::reconstruct:
            case Action::alert: {
                REQUIRE(recs.size() == 1);
                REQUIRE(payloads.size() == 1);
                CHECK(payloads[0].form == StoredForm::full);
                auto packets = payload_packets(engine.store(), recs[0].session_id);
                REQUIRE(packets.size() == c.capture.frames().size());
                for (std::size_t i = 0; i < packets.size(); ++i) {
                    CHECK(packets[i].raw == c.capture.frames()[i].raw);
                    CHECK(packets[i].ts_us == c.capture.frames()[i].ts_us);
                }
                auto rc = engine.query().reconstruct_content(recs[0].session_id);
                CHECK_FALSE(rc.body_error);
                CHECK(rc.artifacts.size() == 1);
                break;
            }
        }
        if (action == Action::alert) {
            REQUIRE(rule_alerts.size() == 1);
            CHECK(rule_alerts[0].evidence.at("rule_id") == "app:1");
            CHECK(rule_alerts[0].session_ids == std::vector<std::uint64_t>{recs[0].session_id});
        } else {
            CHECK(rule_alerts.empty());
        }
    }
}

TEST_CASE("config text") {
    auto c = parse_config(R"(
# engine
store = "data/store"
default_action = "store-full"

[session]
tcp_idle_timeout_s = 90

[index]
segment_max_records = 5000
sync = true

[anomaly]
window_s = 30
k_sigma = 2.5
capacity_bytes = 1000000

[malware]
tau_pred = 0.8

[sources]
edge = "captures/edge"
)",
                          "/base");
    CHECK(c.store == "/base/data/store");
    CHECK(c.default_action == Action::store_full);
    CHECK(c.session.tcp_idle_timeout_us == 90'000'000);
    CHECK(c.index.segment_max_records == 5000);
    CHECK(c.index.sync);
    CHECK(c.anomaly.window_us == 30'000'000);
    CHECK(c.anomaly.k_sigma == 2.5);
    CHECK(c.anomaly.capacity[0] == 1'000'000.0);
    CHECK(c.malware.tau_pred == 0.8);
    REQUIRE(c.sources.size() == 1);
    CHECK(c.sources[0].source_id == "edge");
    CHECK(c.sources[0].path == "/base/captures/edge");
    CHECK_NOTHROW(c.validate());

    CHECK_THROWS_AS(parse_config("store = \"x\"\nbogus = 1\n"), ConfigInvalid);
    CHECK_THROWS_AS(parse_config("[nowhere]\nx = 1\n"), ConfigInvalid);
    CHECK_THROWS_AS(parse_config("[index]\nsync = maybe\n"), ConfigInvalid);
    CHECK_THROWS_AS(parse_config("[malware]\ntau_pred = 1.5\nstore=\"x\"").validate(), ConfigInvalid);
    try {
        parse_config("store = \"x\"\n\n[anomaly]\nwindow_s = \"soon\"\n");
        FAIL("expected ConfigInvalid");
    } catch (const ConfigInvalid& e) {
        CHECK(std::string(e.what()).find("line 4") != std::string::npos);
    }
    CHECK_THROWS_AS(EngineConfig{}.validate(), ConfigInvalid);
}

TEST_CASE("reports are deterministic and embed their queries") {
    TempDir dir;
    Engine engine(engine_config(dir / "store"));
    auto c = protocol_corpus();
    engine.ingest("p", save(c, dir, "p"));
    Query q;
    auto a = generate_report(engine.query(), engine.alerts(), &engine.triage(), q);
    auto b = generate_report(engine.query(), engine.alerts(), &engine.triage(), q);
    a.erase("generated_ts_us");
    b.erase("generated_ts_us");
    CHECK(a == b);
    CHECK(render_report_text(a) == render_report_text(b));
    CHECK(a["matched"] == c.sessions.size());
    for (const auto& name : {"protocol_volume", "top_sources", "top_destinations", "timeline", "alert_digest",
                             "malware_summary"}) {
        CAPTURE(name);
        REQUIRE(a["sections"].contains(name));
        CHECK(a["sections"][name].contains("query"));
    }
    CHECK(a["sections"]["top_sources"]["rows"][0]["value"] == "10.0.0.66");

    Query empty;
    empty.range = {0, 1000};
    auto e = generate_report(engine.query(), engine.alerts(), &engine.triage(), empty);
    CHECK(e["matched"] == 0);
    CHECK_FALSE(render_report_text(e).empty());

    Query bad;
    bad.terms = {{"nope", "1"}};
    CHECK_THROWS_AS(generate_report(engine.query(), engine.alerts(), nullptr, bad), UnknownField);
}

TEST_CASE("bind addresses") {
    CHECK(parse_bind("127.0.0.1:8080") == std::pair<std::string, int>{"127.0.0.1", 8080});
    CHECK(parse_bind("[::1]:9000") == std::pair<std::string, int>{"::1", 9000});
    CHECK_THROWS_AS(parse_bind("localhost"), ConfigInvalid);
    CHECK_THROWS_AS(parse_bind("h:99999"), ConfigInvalid);
}

TEST_CASE("HTTP API") {
    TempDir dir;
    std::filesystem::create_directories(dir / "ui");
    write_text(dir / "ui" / "index.html", "<html>console</html>");
    auto cfg = engine_config(dir / "store");
    cfg.default_action = Action::store_full;
    Engine engine(cfg);
    auto c = protocol_corpus();
    engine.ingest("p", save(c, dir, "p"));

    ApiServer api(engine, dir / "ui");
    int port = api.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    api.start();
    httplib::Client cli("127.0.0.1", port);
    cli.set_read_timeout(10, 0);
    const auto version = std::to_string(engine.store().version());

    auto post = [&](const std::string& path, const json& body) {
        auto res = cli.Post(path, body.dump(), "application/json");
        REQUIRE(res);
        return res;
    };

    SUBCASE("schema") {
        auto res = cli.Get("/api/schema");
        REQUIRE(res);
        CHECK(res->status == 200);
        CHECK(res->get_header_value("X-Store-Version") == version);
        auto j = json::parse(res->body);
        CHECK(j["format"] == "nfe-schema");
        bool has_host = false;
        for (const auto& f : j["fields"]) has_host |= f["name"] == "http.host";
        CHECK(has_host);
        CHECK(j.contains("elapsed_us"));
    }
    SUBCASE("query and drill-down agree with the engine") {
        json q = {{"terms", json::array()}, {"facets", {"app.protocol"}}};
        auto res = post("/api/query", q);
        CHECK(res->status == 200);
        auto j = json::parse(res->body);
        CHECK(j["matched"] == c.sessions.size());
        CHECK(j["store_version"] == engine.store().version());
        for (const auto& row : j["facets"]["app.protocol"]) {
            auto d = json::parse(post("/api/drilldown", {{"query", q}, {"field", "app.protocol"}, {"value", row["value"]}})->body);
            CHECK(d["matched_sessions"] == row["session_count"]);
            CHECK(d["query"]["terms"].size() == 1);
        }
    }
    SUBCASE("errors map to status codes") {
        CHECK(post("/api/query", {{"terms", {{{"field", "nope"}, {"value", "1"}}}}})->status == 400);
        auto bad = cli.Post("/api/query", "{oops", "application/json");
        REQUIRE(bad);
        CHECK(bad->status == 400);
        CHECK(json::parse(bad->body)["error"] == "MalformedRequest");
        CHECK(post("/api/timeline", {{"granularity_us", 0}})->status == 400);
        auto missing = cli.Get("/api/sessions/999999");
        REQUIRE(missing);
        CHECK(missing->status == 404);
        CHECK(json::parse(missing->body)["error"] == "UnknownSession");
    }
    SUBCASE("sessions, content, timeline and graph") {
        auto recs = all_records(engine.store());
        auto sid = records_of(recs, c.session("http_download")).front().session_id;
        auto s = cli.Get("/api/sessions/" + std::to_string(sid));
        REQUIRE(s);
        auto sj = json::parse(s->body);
        CHECK(sj["payload"]["stored_form"] == "full");
        CHECK(sj["records"].size() == 1);
        auto content = cli.Get("/api/sessions/" + std::to_string(sid) + "/content");
        REQUIRE(content);
        auto cj = json::parse(content->body);
        CHECK(cj["kind"] == "http");

        auto t = json::parse(post("/api/timeline", {{"granularity_us", 1'000'000}})->body);
        std::uint64_t total = 0;
        for (const auto& b : t["buckets"]) total += b["session_count"].get<std::uint64_t>();
        CHECK(total == c.sessions.size());

        auto g = json::parse(post("/api/graph", {{"terms", {{{"field", "ip.src"}, {"value", "10.0.0.66"}}}}})->body);
        CHECK(g["edges"].size() == 10);
    }
    SUBCASE("samples, clusters, SOC and reports") {
        auto samples = json::parse(cli.Get("/api/samples")->body);
        CHECK(samples["samples"].size() == 2);
        CHECK(json::parse(cli.Get("/api/samples?status=queued")->body)["samples"].size() == 2);
        CHECK(cli.Get("/api/samples?status=bogus")->status == 400);
        auto clusters = json::parse(cli.Get("/api/clusters")->body);
        CHECK(clusters["model_version"] == 0);
        CHECK(clusters["thresholds"]["tau_pred"] == 0.9);

        auto soc = json::parse(post("/api/soc/query", {{"op", "query"}, {"query", {{"terms", json::array()}}}})->body);
        CHECK(soc["matched"] == c.sessions.size());

        auto report = json::parse(post("/api/reports", {{"template", "standard"}})->body);
        CHECK(report["sections"].contains("timeline"));
        CHECK(report["text"].get<std::string>().size() > 0);
    }
    SUBCASE("alerts list and stream") {
        Alert a;
        a.kind = AlertKind::rule;
        a.message = "first";
        auto first = engine.alerts().raise(a);
        auto list = json::parse(cli.Get("/api/alerts?kind=rule")->body);
        CHECK(list["alerts"].size() == 1);
        CHECK(list["last_id"] == first);

        std::string received;
        std::thread raiser([&] {
            std::this_thread::sleep_for(std::chrono::milliseconds(200));
            Alert b;
            b.kind = AlertKind::anomaly;
            b.message = "second";
            engine.alerts().raise(b);
        });
        httplib::Client sse("127.0.0.1", port);
        sse.set_read_timeout(10, 0);
        httplib::Headers headers = {{"Last-Event-ID", std::to_string(first)}};
        sse.Get("/api/alerts/stream", headers, [&](const char* data, std::size_t n) {
            received.append(data, n);
            return received.find("event: alert") == std::string::npos;
        });
        raiser.join();
        CHECK(received.find("id: " + std::to_string(first + 1)) != std::string::npos);
        CHECK(received.find("\"second\"") != std::string::npos);
        CHECK(received.find("\"first\"") == std::string::npos);
    }
    SUBCASE("console files are served") {
        auto res = cli.Get("/index.html");
        REQUIRE(res);
        CHECK(res->status == 200);
        CHECK(res->body == "<html>console</html>");
    }
    api.stop();
}

TEST_CASE("bind failure is reported") {
    TempDir dir;
    Engine engine(engine_config(dir / "store"));
    ApiServer first(engine);
    int port = first.bind("127.0.0.1", 0);
    ApiServer second(engine);
    CHECK_THROWS_AS(second.bind("127.0.0.1", port), BindFailure);
    CHECK_THROWS_AS(ApiServer(engine, dir / "missing"), ConfigInvalid);
}

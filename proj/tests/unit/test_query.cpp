#include "doctest.h"

#include "support.hpp"

#include "nfe/engine.hpp"
#include "nfe/errors.hpp"

#include <fstream>

using namespace nfe;
using namespace nfe::corpus;
using namespace nfe::test;

namespace {

struct Fixture {
    TempDir dir;
    Corpus corpus;
    std::unique_ptr<Engine> engine;

    explicit Fixture(Corpus c, Action default_action = Action::store_metadata) : corpus(std::move(c)) {
        auto cfg = engine_config(dir / "store");
        cfg.default_action = default_action;
        engine = std::make_unique<Engine>(cfg);
        auto summary = engine->ingest("test", save(corpus, dir, "capture"));
        REQUIRE_FALSE(summary.error);
    }
    const QueryEngine& q() const { return engine->query(); }
};

std::uint64_t facet_count(const ResultSet& rs, const std::string& field, const std::string& value) {
    for (const auto& row : rs.facets.at(field)) {
        if (row.value == value) return row.session_count;
    }
    return 0;
}

}  // namespace

TEST_CASE("facet corpus composition") {
    Fixture f(facet_corpus());
    Query q;
    q.facet_fields = {"app.protocol", "http.host"};
    auto rs = f.q().run_query(q);
    CHECK(rs.matched == 12);
    CHECK(rs.matched_sessions == 12);
    CHECK(facet_count(rs, "app.protocol", "http") == 5);
    CHECK(facet_count(rs, "app.protocol", "dns") == 4);
    CHECK(facet_count(rs, "app.protocol", "smtp") == 2);
    CHECK(facet_count(rs, "app.protocol", "ftp") == 1);
    CHECK(facet_count(rs, "http.host", "www.example.com") == 2);
    CHECK(facet_count(rs, "http.host", "cdn.example.com") == 2);
    CHECK(facet_count(rs, "http.host", "mail.example.com") == 1);
    // Rows come most frequent first.
    const auto& rows = rs.facets.at("app.protocol");
    CHECK(rows.front().value == "http");
    CHECK(std::is_sorted(rows.begin(), rows.end(),
                         [](const FacetRow& a, const FacetRow& b) { return a.session_count > b.session_count; }));
}

TEST_CASE("facet counts equal refined query counts") {
    Fixture f(facet_corpus());
    const std::vector<std::string> fields = {"app.protocol", "http.host", "ip.src", "ip.dst", "tp.dst", "dns.qname"};
    std::vector<Query> queries(1);
    queries.push_back(f.q().drill_down(Query{}, "app.protocol", "http"));
    queries.push_back(f.q().drill_down(Query{}, "ip.src", "10.2.0.1"));
    for (auto q : queries) {
        q.facet_fields = fields;
        auto rs = f.q().run_query(q);
        for (const auto& [field, rows] : rs.facets) {
            for (const auto& row : rows) {
                CAPTURE(field);
                CAPTURE(row.value);
                auto refined = f.q().run_query(f.q().drill_down(q, field, row.value));
                CHECK(refined.matched_sessions == row.session_count);
                CHECK(refined.matched_sessions <= rs.matched_sessions);
            }
        }
    }
}

TEST_CASE("drill-down narrows monotonically and is idempotent") {
    Fixture f(facet_corpus());
    Query q;
    auto all = f.q().run_query(q).matched;
    auto q1 = f.q().drill_down(q, "app.protocol", "http");
    auto n1 = f.q().run_query(q1).matched;
    auto q2 = f.q().drill_down(q1, "ip.dst", "203.0.113.80");
    auto n2 = f.q().run_query(q2).matched;
    CHECK(all >= n1);
    CHECK(n1 >= n2);
    CHECK(n1 == 5);
    CHECK(n2 == 2);
    auto again = f.q().drill_down(q2, "ip.dst", "203.0.113.80");
    CHECK(again.terms == q2.terms);

    // Contradictory terms match nothing.
    auto none = f.q().drill_down(q1, "app.protocol", "dns");
    CHECK(f.q().run_query(none).matched == 0);
    CHECK_THROWS_AS(f.q().drill_down(q, "no.field", "x"), UnknownField);
}

TEST_CASE("pagination is a window over the match") {
    Fixture f(facet_corpus());
    Query q;
    q.limit = 5;
    auto p0 = f.q().run_query(q);
    q.offset = 5;
    auto p1 = f.q().run_query(q);
    q.offset = 10;
    auto p2 = f.q().run_query(q);
    CHECK(p0.records.size() == 5);
    CHECK(p1.records.size() == 5);
    CHECK(p2.records.size() == 2);
    CHECK(p0.records.back().record_id < p1.records.front().record_id);
}

TEST_CASE("timeline conserves sessions and bytes under coarsening") {
    Fixture f(facet_corpus());
    Query q;
    auto rs = f.q().run_query(q);
    std::uint64_t bytes = 0;
    for (const auto& r : f.q().run_query(Query{.limit = 1000}).records) bytes += r.bytes_total;
    for (std::int64_t g : {100'000LL, 1'000'000LL, 5'000'000LL, 3'600'000'000LL}) {
        CAPTURE(g);
        auto buckets = f.q().timeline(q, g);
        std::uint64_t sessions = 0, b = 0;
        for (const auto& bk : buckets) {
            sessions += bk.session_count;
            b += bk.byte_count;
            CHECK(bk.bucket_start_us % g == 0);
        }
        CHECK(sessions == rs.matched_sessions);
        CHECK(b == bytes);
    }
    // Coarsening merges adjacent buckets exactly.
    auto fine = f.q().timeline(q, 500'000);
    auto coarse = f.q().timeline(q, 1'000'000);
    for (const auto& c : coarse) {
        std::uint64_t merged = 0;
        for (const auto& fb : fine) {
            if (fb.bucket_start_us >= c.bucket_start_us && fb.bucket_start_us < c.bucket_start_us + 1'000'000)
                merged += fb.session_count;
        }
        CHECK(merged == c.session_count);
    }
    CHECK_THROWS_AS(f.q().timeline(q, 0), InvalidGranularity);
    CHECK_THROWS_AS(f.q().timeline(q, -5), InvalidGranularity);
    CHECK_THROWS_AS(f.q().timeline(q, 1), InvalidGranularity);
}

TEST_CASE("empty range yields an empty timeline") {
    Fixture f(facet_corpus());
    Query q;
    q.range = {0, 1000};
    auto buckets = f.q().timeline(q, 1000);
    std::uint64_t total = 0;
    for (const auto& b : buckets) total += b.session_count;
    CHECK(total == 0);
}

TEST_CASE("relation graph of the scan star") {
    Fixture f(protocol_corpus());
    Query q;
    q.terms = {{"ip.src", "10.0.0.66"}};
    auto g = f.q().relation_graph(q);
    CHECK(g.nodes.size() == 11);
    CHECK(g.edges.size() == 10);
    REQUIRE_FALSE(g.top_sources.empty());
    CHECK(g.top_sources.front() == "10.0.0.66");
    CHECK(g.top_sources.size() == 1);
    CHECK(g.top_destinations.size() == 10);
    for (const auto& e : g.edges) {
        CHECK(e.src == "10.0.0.66");
        CHECK(e.session_count == 1);
    }
    // Over the whole corpus the scanner is still the top source.
    auto whole = f.q().relation_graph(Query{});
    CHECK(whole.top_sources.front() == "10.0.0.66");
}

TEST_CASE("reconstructed HTTP content is byte-equal to what was sent") {
    Fixture f(protocol_corpus(), Action::store_full);
    auto id = f.q().store().lookup("http.uri", "/files/tool.exe");
    REQUIRE(id.size() == 1);
    auto rec = *f.q().store().get(id[0]);
    auto rc = f.q().reconstruct_content(rec.session_id);
    CHECK(rc.kind == "http");
    CHECK_FALSE(rc.body_error);
    REQUIRE(rc.artifacts.size() == 1);
    CHECK(rc.artifacts[0].name == "tool.exe");
    CHECK(sha256_hex(rc.artifacts[0].body) == f.corpus.session("http_download").file_sha256[0]);

    // The gzip body comes back decoded.
    auto gz = f.q().store().lookup("http.uri", "/data.txt");
    REQUIRE(gz.size() == 1);
    auto grc = f.q().reconstruct_content(f.q().store().get(gz[0])->session_id);
    REQUIRE(grc.artifacts.size() == 1);
    CHECK(sha256_hex(grc.artifacts[0].body) == f.corpus.session("http_retransmit").file_sha256[0]);

    // SMTP attachments are artifacts too.
    auto mail = f.q().store().lookup("app.protocol", "smtp");
    REQUIRE(mail.size() == 1);
    auto mrc = f.q().reconstruct_content(f.q().store().get(mail[0])->session_id);
    CHECK(mrc.kind == "smtp");
    bool found = false;
    for (const auto& a : mrc.artifacts) found |= sha256_hex(a.body) == f.corpus.session("smtp_attachment").file_sha256[0];
    CHECK(found);

    // Protocols without a renderer fall back to a hex dump.
    auto sip = f.q().store().lookup("app.protocol", "sip");
    REQUIRE(sip.size() == 1);
    auto src = f.q().reconstruct_content(f.q().store().get(sip[0])->session_id);
    CHECK(src.kind == "dump");
    REQUIRE(src.artifacts.size() == 2);
    CHECK(as_chars(src.artifacts[0].body).find("INVITE") != std::string_view::npos);

    CHECK_THROWS_AS(f.q().reconstruct_content(999'999), UnknownSession);
}

TEST_CASE("metadata-only sessions report why there is no body") {
    Fixture f(http_get_corpus());
    auto rs = f.q().run_query(Query{});
    REQUIRE(rs.records.size() == 1);
    auto rc = f.q().reconstruct_content(rs.records[0].session_id);
    REQUIRE(rc.body_error);
    CHECK(rc.body_error->starts_with("NotStored"));
    CHECK(rc.records.size() == 1);
}

TEST_CASE("keyword search scans stored payloads") {
    Fixture f(protocol_corpus(), Action::store_full);
    Query q;
    q.keyword = "invoice 4471";  // case-insensitive
    auto rs = f.q().run_query(q);
    REQUIRE(rs.matched == 1);
    CHECK(rs.records[0].app_protocol == AppProtocol::smtp);

    q.keyword = "no such text anywhere";
    CHECK(f.q().run_query(q).matched == 0);
}

TEST_CASE("unknown fields and bad ranges are rejected") {
    Fixture f(http_get_corpus());
    Query q;
    q.terms = {{"bogus", "1"}};
    CHECK_THROWS_AS(f.q().run_query(q), UnknownField);
    Query facet;
    facet.facet_fields = {"bogus"};
    CHECK_THROWS_AS(f.q().run_query(facet), UnknownField);
}

TEST_CASE("GeoIP labels join at query time") {
    TempDir dir;
    auto csv = dir / "geo.csv";
    {
        std::ofstream out(csv);
        out << "# cidr,label\n203.0.113.0/24,Testland\n203.0.113.80/32,Port City\n";
    }
    auto geo = GeoIpTable::load_csv(csv);
    CHECK(geo.size() == 2);
    CHECK(geo.lookup(*IpAddress::parse("203.0.113.80")) == "Port City");
    CHECK(geo.lookup(*IpAddress::parse("203.0.113.81")) == "Testland");
    CHECK_FALSE(geo.lookup(*IpAddress::parse("10.0.0.1")));

    auto cfg = engine_config(dir / "store");
    cfg.geoip_csv = csv;
    Engine engine(cfg);
    auto c = facet_corpus();
    engine.ingest("t", save(c, dir, "facets"));
    Query q;
    q.terms = {{"geo.dst", "Port City"}};
    q.facet_fields = {"geo.dst"};
    auto rs = engine.query().run_query(q);
    CHECK(rs.matched == 2);
    CHECK(facet_count(rs, "geo.dst", "Port City") == 2);
}

#include "doctest.h"

#include "support.hpp"

#include "nfe/engine.hpp"
#include "nfe/errors.hpp"
#include "nfe/soc.hpp"

#include <random>
#include <sstream>

using namespace nfe;
using namespace nfe::corpus;
using namespace nfe::test;

namespace {

struct Fixture {
    TempDir dir;
    Corpus corpus = protocol_corpus();
    std::unique_ptr<Engine> engine;
    Fixture() {
        engine = std::make_unique<Engine>(engine_config(dir / "store"));
        engine->ingest("soc", save(corpus, dir, "protocols"));
    }
    std::uint64_t session_of(const std::string& name) const {
        auto all = all_records(engine->store());
        return records_of(all, corpus.session(name)).front().session_id;
    }
};

/// Drops the fields that legitimately differ between two runs.
json stable(json j) {
    j.erase("elapsed_us");
    j.erase("op");
    return j;
}

}  // namespace

TEST_CASE("feed lines parse or are rejected with a reason") {
    std::string reason;
    auto a = parse_soc_line(
        R"({"id":"x1","ts":"2023-11-14T22:13:20.5Z","severity":"critical","sig":"S1","src":"10.0.0.1","dst":"*","sport":null,"dport":"443","proto":6,"msg":"m"})",
        reason);
    REQUIRE(a);
    CHECK(a->soc_id == "x1");
    CHECK(a->ts_us == 1'700'000'000'500'000);
    CHECK(a->severity == Severity::critical);
    CHECK(a->scope.src == IpAddress::parse("10.0.0.1"));
    CHECK_FALSE(a->scope.dst);
    CHECK_FALSE(a->scope.sport);
    CHECK(a->scope.dport == 443);
    CHECK(a->scope.proto == 6);

    auto epoch = parse_soc_line(R"({"id":"x2","ts":1700000000000001,"src":""})", reason);
    REQUIRE(epoch);
    CHECK(epoch->ts_us == 1'700'000'000'000'001);
    CHECK_FALSE(epoch->scope.src);

    const std::vector<std::pair<std::string, std::string>> bad = {
        {"not json", "invalid JSON"},
        {"[1,2]", "not a JSON object"},
        {R"({"ts":1})", "missing id"},
        {R"({"id":"a"})", "missing ts"},
        {R"({"id":"a","ts":"yesterday"})", "unparseable ts"},
        {R"({"id":"a","ts":1,"severity":"meh"})", "unknown severity"},
        {R"({"id":"a","ts":1,"src":"10.0.0.300"})", "bad src address"},
        {R"({"id":"a","ts":1,"dport":70000})", "bad dport"},
        {R"({"id":"a","ts":1,"proto":"carrier-pigeon"})", "bad proto"},
    };
    for (const auto& [line, why] : bad) {
        CAPTURE(line);
        reason.clear();
        CHECK_FALSE(parse_soc_line(line, reason));
        CHECK(reason.starts_with(why));
    }
}

TEST_CASE("ISO-8601 timestamps") {
    CHECK(parse_iso8601_us("1970-01-01T00:00:00Z") == 0);
    CHECK(parse_iso8601_us("2023-11-14T22:13:20Z") == 1'700'000'000'000'000);
    CHECK(parse_iso8601_us("2023-11-14T23:13:20+01:00") == 1'700'000'000'000'000);
    CHECK(parse_iso8601_us("2023-11-14T22:13:20.123456Z") == 1'700'000'000'123'456);
    CHECK_FALSE(parse_iso8601_us("2023-13-14T22:13:20Z"));
    CHECK_FALSE(parse_iso8601_us("2023-11-14"));
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
        auto ts = static_cast<std::int64_t>(rng() % 4'000'000'000'000'000ull);
        CHECK(parse_iso8601_us(format_iso8601_us(ts)) == ts);
        CHECK(format_iso8601_us(ts) == iso8601(ts));
    }
}

TEST_CASE("scope matches either orientation") {
    MetadataRecord r;
    r.initiator = ep("10.0.0.1", 40000);
    r.responder = ep("10.0.0.2", 80);
    r.ip_proto = 6;
    SocScope fwd{IpAddress::parse("10.0.0.1"), IpAddress::parse("10.0.0.2"), std::nullopt, 80, 6};
    SocScope rev{IpAddress::parse("10.0.0.2"), IpAddress::parse("10.0.0.1"), 80, std::nullopt, std::nullopt};
    SocScope wrong_port{std::nullopt, std::nullopt, std::nullopt, 443, std::nullopt};
    SocScope wrong_proto{std::nullopt, std::nullopt, std::nullopt, std::nullopt, 17};
    CHECK(scope_matches(fwd, r));
    CHECK(scope_matches(rev, r));
    CHECK(scope_matches(SocScope{}, r));
    CHECK_FALSE(scope_matches(wrong_port, r));
    CHECK_FALSE(scope_matches(wrong_proto, r));
}

TEST_CASE("feed alerts correlate to exactly their truth sessions") {
    Fixture f;
    auto feed = soc_feed(f.corpus);
    std::vector<std::string> lines;
    for (const auto& c : feed) lines.push_back(c.line);
    lines.push_back("garbage line");
    lines.push_back(feed[0].line);  // duplicate id
    auto result = f.engine->soc().import_lines(lines);
    CHECK(result.accepted == feed.size());
    CHECK(result.duplicates == 1);
    REQUIRE(result.rejected.size() == 1);
    CHECK(result.rejected[0].line == feed.size() + 1);
    CHECK(f.engine->alerts().list(AlertKind::soc).size() == feed.size());

    for (std::size_t i = 0; i < feed.size(); ++i) {
        const auto& c = feed[i];
        std::set<std::uint64_t> expect;
        for (const auto& name : c.expected_sessions) expect.insert(f.session_of(name));
        auto id = "soc-" + std::to_string(i + 1);
        CAPTURE(id);
        auto got = f.engine->soc().correlate_stored(id);
        CHECK(std::set<std::uint64_t>(got.begin(), got.end()) == expect);
        CHECK(got.size() == expect.size());
    }
    CHECK(feed[0].expected_sessions == std::vector<std::string>{"http_get"});
    CHECK(feed[3].expected_sessions.size() == 10);
    CHECK(feed[4].expected_sessions.empty());
    CHECK(feed[5].expected_sessions.empty());
}

TEST_CASE("import reads a stream") {
    Fixture f;
    std::stringstream in;
    for (const auto& c : soc_feed(f.corpus)) in << c.line << "\n";
    in << "\n";
    auto r = f.engine->soc().import_alerts(in);
    CHECK(r.accepted == 6);
    CHECK(r.rejected.empty());
}

TEST_CASE("wire answers equal local queries") {
    Fixture f;
    std::mt19937_64 rng(2);
    const std::vector<std::pair<std::string, std::string>> terms = {
        {"app.protocol", "http"}, {"app.protocol", "dns"}, {"tp.dst", "22"}, {"tp.dst", "80"},
        {"ip.src", "10.0.0.66"}, {"http.method", "GET"}, {"ip.dst", "192.0.2.53"}, {"mail.from", "mallory@example.com"},
    };
    const auto base = f.corpus.sessions.front().first_ts_us;
    for (int i = 0; i < 50; ++i) {
        Query q;
        for (auto n = rng() % 3; n > 0; --n) {
            const auto& t = terms[rng() % terms.size()];
            q.terms.push_back({t.first, t.second});
        }
        if (rng() % 2) q.range = {base + static_cast<std::int64_t>(rng() % 5'000'000), base + 30'000'000};
        if (rng() % 2) q.facet_fields = {"app.protocol", "ip.dst"};
        q.limit = 1 + rng() % 20;
        auto wire = json::parse(f.engine->soc().answer_query(json({{"op", "query"}, {"query", to_json(q)}}).dump()));
        auto local = to_json(f.engine->query().run_query(q));
        CHECK(stable(wire) == stable(local));
    }
}

TEST_CASE("wire errors carry kind and position") {
    Fixture f;
    auto bad = json::parse(f.engine->soc().answer_query(R"({"op":"query", "terms": [)"));
    CHECK(bad["error"] == "MalformedRequest");
    CHECK(bad["position"].get<std::size_t>() > 0);
    auto unknown = json::parse(f.engine->soc().answer_query(R"({"terms":[{"field":"nope","value":"1"}]})"));
    CHECK(unknown["error"] == "UnknownField");
    CHECK(unknown["field"] == "nope");
    auto op = json::parse(f.engine->soc().answer_query(R"({"op":"dance"})"));
    CHECK(op["error"] == "MalformedRequest");

    // Correlation over the wire.
    auto c = soc_feed(f.corpus)[0];
    auto resp = f.engine->soc().answer(json{{"op", "correlate"}, {"alert", json::parse(c.line)}});
    CHECK(resp["session_ids"] == json::array({f.session_of("http_get")}));
}

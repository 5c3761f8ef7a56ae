#include "doctest.h"

#include "support.hpp"

#include "nfe/anomaly.hpp"
#include "nfe/engine.hpp"

#include <cmath>
#include <random>

using namespace nfe;
using namespace nfe::corpus;
using namespace nfe::test;

namespace {

WindowStats window(std::uint64_t bytes, std::uint64_t packets = 10, std::uint64_t flows = 1) {
    WindowStats w;
    w.entity = std::string(kAggregateEntity);
    w.window_us = 60'000'000;
    w.bytes = bytes;
    w.packets = packets;
    w.flows = flows;
    return w;
}

MetadataRecord rec(std::string_view src, std::string_view dst, std::int64_t ts, std::uint64_t bytes,
                   std::uint64_t sid) {
    MetadataRecord r;
    r.session_id = sid;
    r.initiator = ep(src, 1000);
    r.responder = ep(dst, 80);
    r.ip_proto = 6;
    r.first_ts_us = r.last_ts_us = ts;
    r.bytes_total = bytes;
    r.packets_total = 1;
    return r;
}

}  // namespace

TEST_CASE("Welford reference example") {
    Welford w;
    for (double x : {2, 4, 4, 4, 5, 5, 7, 9}) w.update(x);
    CHECK(w.count() == 8);
    CHECK(w.mean() == doctest::Approx(5.0));
    CHECK(w.stddev() == doctest::Approx(2.0));
    CHECK(Welford{}.stddev() == 0.0);
}

TEST_CASE("Welford agrees with a two-pass computation") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> scale(1e-3, 1e9);
    for (int trial = 0; trial < 1000; ++trial) {
        const double s = scale(rng);
        std::normal_distribution<double> d(s, s / 10 + 1);
        std::vector<double> xs(1 + rng() % 200);
        Welford w;
        for (auto& x : xs) {
            x = d(rng);
            w.update(x);
        }
        double mean = 0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        double var = 0;
        for (double x : xs) var += (x - mean) * (x - mean);
        var /= static_cast<double>(xs.size());
        CHECK(w.mean() == doctest::Approx(mean).epsilon(1e-9));
        CHECK(w.stddev() == doctest::Approx(std::sqrt(var)).epsilon(1e-6).scale(s));
    }
}

TEST_CASE("deviation needs warmup, threshold and floor") {
    AnomalyConfig cfg;
    BaselineProfile p;
    p.entity = "aggregate";
    for (int i = 0; i < 9; ++i) update_baseline(p, window(i % 2 ? 20'000 : 30'000));
    // Nine windows: still warming up.
    CHECK(detect(window(1'000'000), p, cfg).empty());
    update_baseline(p, window(25'000));
    REQUIRE(p.windows() == 10);
    const double mu = p.of(Metric::bytes).mean();
    const double sigma = p.of(Metric::bytes).stddev();
    const double threshold = mu + 3 * sigma;
    CHECK(detect(window(static_cast<std::uint64_t>(threshold) - 1), p, cfg).empty());
    auto alerts = detect(window(static_cast<std::uint64_t>(threshold) + 1), p, cfg);
    REQUIRE(alerts.size() == 1);
    const auto& a = alerts[0];
    CHECK(a.kind == AlertKind::anomaly);
    CHECK(a.evidence.at("metric") == "bytes");
    CHECK(a.evidence.at("check") == "deviation");
    // Evidence re-verifies the trigger.
    CHECK(std::stod(a.evidence.at("observed")) > std::stod(a.evidence.at("mean")) +
                                                     std::stod(a.evidence.at("k")) * std::stod(a.evidence.at("stddev")));

    // A quiet baseline does not alert on a small absolute change.
    BaselineProfile quiet;
    for (int i = 0; i < 20; ++i) update_baseline(quiet, window(100));
    CHECK(detect(window(5000), quiet, cfg).empty());
    CHECK(detect(window(20'000), quiet, cfg).size() == 1);
}

TEST_CASE("capacity alerts fire without a baseline") {
    AnomalyConfig cfg;
    cfg.capacity[static_cast<std::size_t>(Metric::packets)] = 100.0;
    BaselineProfile empty;
    auto alerts = detect(window(0, 101), empty, cfg);
    REQUIRE(alerts.size() == 1);
    CHECK(alerts[0].severity == Severity::critical);
    CHECK(alerts[0].evidence.at("check") == "capacity");
    CHECK(detect(window(0, 100), empty, cfg).empty());
}

TEST_CASE("steady traffic raises nothing") {
    TempDir dir;
    Engine engine(engine_config(dir / "store"));
    auto c = anomaly_corpus({});
    auto s = engine.ingest("steady", save(c, dir, "steady"));
    CHECK(s.records == c.sessions.size());
    CHECK(engine.alerts().list(AlertKind::anomaly).empty());
    CHECK(engine.anomaly().stats().windows_closed >= 20);
}

TEST_CASE("a five-fold byte burst raises one aggregate alert") {
    TempDir dir;
    Engine engine(engine_config(dir / "store"));
    AnomalyCorpusSpec spec;
    spec.burst_window = 15;
    auto c = anomaly_corpus(spec);
    engine.ingest("burst", save(c, dir, "burst"));
    auto alerts = engine.alerts().list(AlertKind::anomaly);
    REQUIRE(alerts.size() == 1);
    const auto& a = alerts[0];
    CHECK(a.entity == "aggregate");
    CHECK(a.evidence.at("metric") == "bytes");
    CHECK(a.session_ids.size() == spec.sessions_per_window);
    const auto burst_start = c.sessions[15 * spec.sessions_per_window].first_ts_us / spec.window_us * spec.window_us;
    CHECK(a.ts_us == burst_start);
    CHECK(std::stod(a.evidence.at("observed")) == doctest::Approx(5.0 * 300 * 60));
}

TEST_CASE("peers count distinct counterparts") {
    std::vector<Alert> raised;
    AnomalyConfig cfg;
    AnomalyDetector det(cfg, [&](Alert&& a) { raised.push_back(std::move(a)); });
    det.accumulate(rec("10.0.0.1", "10.0.0.2", 0, 10, 1));
    det.accumulate(rec("10.0.0.1", "10.0.0.3", 1, 10, 2));
    det.accumulate(rec("10.0.0.1", "10.0.0.3", 2, 10, 3));
    auto w = det.open_window("10.0.0.1", 0);
    REQUIRE(w);
    CHECK(w->distinct_peers() == 2);
    CHECK(w->flows == 3);
    CHECK(w->bytes == 30);
    auto agg = det.open_window("aggregate", 0);
    REQUIRE(agg);
    CHECK(agg->flows == 3);
}

TEST_CASE("records behind a closed window are counted as late") {
    AnomalyConfig cfg;
    cfg.lateness_us = 0;
    AnomalyDetector det(cfg);
    det.accumulate(rec("10.0.0.1", "10.0.0.2", 0, 10, 1));
    det.advance(10 * cfg.window_us);
    CHECK(det.stats().windows_closed >= 1);
    det.accumulate(rec("10.0.0.1", "10.0.0.2", 5, 10, 2));
    CHECK(det.stats().late_records == 1);
}

TEST_CASE("host profiles are bounded") {
    AnomalyConfig cfg;
    cfg.max_entities = 8;
    AnomalyDetector det(cfg);
    for (int i = 0; i < 50; ++i) {
        det.accumulate(rec("10.1.0." + std::to_string(i), "10.2.0.1", i * cfg.window_us, 10, i));
    }
    det.flush();
    CHECK(det.stats().evictions > 0);
    CHECK(det.profile("aggregate"));
    CHECK_FALSE(det.profile("10.1.0.0"));
    CHECK(det.profile("10.1.0.49"));
}

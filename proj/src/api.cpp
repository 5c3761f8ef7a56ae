#include "nfe/api.hpp"

#include "nfe/errors.hpp"
#include "nfe/json_codec.hpp"
#include "nfe/report.hpp"

#include "httplib.h"

#include <chrono>
#include <charconv>

namespace nfe {

namespace {

std::int64_t steady_us() {
    return std::chrono::duration_cast<std::chrono::microseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string dump(const json& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace); }

int status_for(const std::exception& e) {
    if (const auto* ne = dynamic_cast<const Error*>(&e)) {
        const auto& k = ne->kind();
        if (k == "UnknownField" || k == "MalformedRequest" || k == "InvalidGranularity" || k == "SyntaxError") {
            return 400;
        }
        if (k == "UnknownSession" || k == "NotStored") return 404;
        if (k == "IntegrityFailure") return 409;
    }
    return 500;
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        return json::parse(req.body);
    } catch (const json::parse_error& e) {
        throw MalformedRequest(std::string("malformed JSON: ") + e.what(), e.byte);
    }
}

std::uint64_t parse_id(const std::string& text) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size()) throw MalformedRequest("bad id '" + text + "'", 0);
    return v;
}

json field_manifest() {
    json fields = json::array();
    for (const auto& f : Vocabulary::instance().fields()) {
        fields.push_back({{"name", f.name},
                          {"type", to_string(f.kind)},
                          {"description", f.description},
                          {"indexed", f.indexed && !f.query_time},
                          {"synthetic", f.synthetic},
                          {"query_time", f.query_time}});
    }
    return fields;
}

}  // namespace

std::pair<std::string, int> parse_bind(const std::string& bind) {
    auto colon = bind.rfind(':');
    if (colon == std::string::npos || colon == 0) throw ConfigInvalid("bind address must be host:port");
    int port = 0;
    auto ps = std::string_view(bind).substr(colon + 1);
    auto [p, ec] = std::from_chars(ps.data(), ps.data() + ps.size(), port);
    if (ec != std::errc() || p != ps.data() + ps.size() || port < 0 || port > 65535) {
        throw ConfigInvalid("bad port in " + bind);
    }
    auto host = bind.substr(0, colon);
    if (host.size() > 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
    return {host, port};
}

ApiServer::ApiServer(Engine& engine, std::filesystem::path ui_dir)
    : engine_(engine), ui_dir_(std::move(ui_dir)), server_(std::make_unique<httplib::Server>()) {
    // SO_REUSEPORT would let a second instance share the port silently.
    server_->set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    routes();
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port) {
    if (port == 0) {
        port_ = server_->bind_to_any_port(host);
        if (port_ < 0) throw BindFailure("cannot bind " + host);
    } else {
        if (!server_->bind_to_port(host, port)) throw BindFailure("cannot bind " + host + ":" + std::to_string(port));
        port_ = port;
    }
    return port_;
}

void ApiServer::start() {
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
}

void ApiServer::run() { server_->listen_after_bind(); }

void ApiServer::stop() {
    stopping_ = true;
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

void ApiServer::routes() {
    auto& svr = *server_;
    // Wraps a handler: JSON out, errors mapped to status codes, timing and
    // store version attached.
    auto wrap = [this](auto fn) {
        return [this, fn](const httplib::Request& req, httplib::Response& res) {
            const auto t0 = steady_us();
            json body;
            try {
                body = fn(req);
                res.status = 200;
            } catch (const std::exception& e) {
                body = error_json(e);
                res.status = status_for(e);
            }
            if (!body.is_object()) body = json{{"result", std::move(body)}};
            const auto version = engine_.store().version();
            body["store_version"] = version;
            body["elapsed_us"] = steady_us() - t0;
            res.set_header("X-Store-Version", std::to_string(version));
            res.set_content(dump(body), "application/json");
        };
    };

    svr.Get("/api/schema", wrap([](const httplib::Request&) {
                return json{{"format", "nfe-schema"}, {"version", 1}, {"fields", field_manifest()}};
            }));

    svr.Post("/api/query", wrap([this](const httplib::Request& req) {
                 return to_json(engine_.query().run_query(query_from_json(parse_body(req))));
             }));

    svr.Post("/api/drilldown", wrap([this](const httplib::Request& req) {
                 auto j = parse_body(req);
                 auto q = query_from_json(j.value("query", json::object()));
                 if (!j.contains("field") || !j.contains("value")) throw MalformedRequest("field and value required", 0);
                 auto refined = engine_.query().drill_down(q, j["field"].get<std::string>(), j["value"].get<std::string>());
                 auto rs = engine_.query().run_query(refined);
                 json out = to_json(rs);
                 out["query"] = to_json(refined);
                 return out;
             }));

    svr.Get(R"(/api/sessions/(\d+))", wrap([this](const httplib::Request& req) {
                auto sid = parse_id(req.matches[1]);
                auto recs = engine_.store().records_for_session(sid);
                if (recs.empty()) throw UnknownSession("no session " + std::to_string(sid));
                json out = {{"session_id", sid}, {"records", json::array()}};
                for (const auto& r : recs) out["records"].push_back(to_json(r));
                if (auto loc = engine_.store().payload_locator(sid)) {
                    out["payload"] = {{"stored_form", loc->form == StoredForm::full ? "full" : "headers_only"},
                                      {"length", loc->length},
                                      {"sha256", to_hex(loc->sha256)}};
                } else {
                    out["payload"] = nullptr;
                }
                return out;
            }));

    svr.Get(R"(/api/sessions/(\d+)/content)", wrap([this](const httplib::Request& req) {
                return to_json(engine_.query().reconstruct_content(parse_id(req.matches[1])));
            }));

    svr.Post("/api/timeline", wrap([this](const httplib::Request& req) {
                 auto j = parse_body(req);
                 auto q = query_from_json(j.value("query", j));
                 auto g = j.contains("granularity_us") ? json_int(j["granularity_us"], 0) : 60'000'000;
                 return json{{"granularity_us", g}, {"buckets", to_json(engine_.query().timeline(q, g))}};
             }));

    svr.Post("/api/graph", wrap([this](const httplib::Request& req) {
                 auto j = parse_body(req);
                 return to_json(engine_.query().relation_graph(query_from_json(j.value("query", j))));
             }));

    svr.Get("/api/alerts", wrap([this](const httplib::Request& req) {
                std::optional<AlertKind> kind;
                if (req.has_param("kind")) {
                    kind = parse_alert_kind(req.get_param_value("kind"));
                    if (!kind) throw MalformedRequest("unknown alert kind", 0);
                }
                std::uint64_t after = req.has_param("after") ? parse_id(req.get_param_value("after")) : 0;
                std::size_t limit = req.has_param("limit") ? parse_id(req.get_param_value("limit")) : 1000;
                json arr = json::array();
                for (const auto& a : engine_.alerts().list(kind, after, limit)) arr.push_back(to_json(a));
                return json{{"alerts", arr}, {"last_id", engine_.alerts().last_id()}};
            }));

    svr.Get("/api/alerts/stream", [this](const httplib::Request& req, httplib::Response& res) {
        std::uint64_t after = 0;
        if (req.has_param("after")) after = parse_id(req.get_param_value("after"));
        else if (req.has_header("Last-Event-ID")) after = parse_id(req.get_header_value("Last-Event-ID"));
        auto cursor = std::make_shared<std::uint64_t>(after);
        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider("text/event-stream", [this, cursor](std::size_t, httplib::DataSink& sink) {
            if (stopping_) return false;
            engine_.alerts().wait_for_newer(*cursor, std::chrono::milliseconds(1000));
            auto fresh = engine_.alerts().list(std::nullopt, *cursor, 100);
            std::string out;
            for (const auto& a : fresh) {
                out += "id: " + std::to_string(a.alert_id) + "\nevent: alert\ndata: " + dump(to_json(a)) + "\n\n";
                *cursor = a.alert_id;
            }
            if (out.empty()) out = ": keepalive\n\n";
            return sink.write(out.data(), out.size());
        });
    });

    svr.Get("/api/samples", wrap([this](const httplib::Request& req) {
                std::optional<SampleStatus> status;
                if (req.has_param("status")) {
                    status = parse_sample_status(req.get_param_value("status"));
                    if (!status) throw MalformedRequest("unknown sample status", 0);
                }
                json arr = json::array();
                for (const auto& s : engine_.triage().samples()) {
                    if (status && s.status != *status) continue;
                    json o = {{"sha256", s.sha256},
                              {"size_bytes", s.size_bytes},
                              {"container", to_string(s.container)},
                              {"status", to_string(s.status)},
                              {"first_seen_ts_us", s.first_seen_ts_us},
                              {"origins", json::array()}};
                    for (const auto& og : s.origins) {
                        o["origins"].push_back({{"session_id", og.session_id},
                                                {"protocol", to_string(og.protocol)},
                                                {"filename", og.filename},
                                                {"carve_offset", og.carve_offset}});
                    }
                    if (s.malware_id) o["malware_id"] = *s.malware_id;
                    if (s.cluster_id) o["cluster_id"] = *s.cluster_id;
                    if (s.score) o["score"] = *s.score;
                    if (s.entropy) o["entropy"] = *s.entropy;
                    arr.push_back(std::move(o));
                }
                auto counts = engine_.triage().counts();
                return json{{"samples", arr}, {"dynamic_invocations", counts.dynamic_invocations}};
            }));

    svr.Get("/api/clusters", wrap([this](const httplib::Request&) {
                auto m = engine_.triage().model();
                json arr = json::array();
                for (const auto& c : m.clusters) {
                    json rep = json::array();
                    for (const auto& t : c.representative) rep.push_back({t.object_type, t.object_name, t.operation});
                    json members = json::array();
                    for (const auto& sha : c.members) {
                        json mj = {{"sha256", sha}, {"session_ids", json::array()}};
                        if (auto s = engine_.triage().sample(sha)) {
                            for (const auto& o : s->origins) mj["session_ids"].push_back(o.session_id);
                        }
                        members.push_back(std::move(mj));
                    }
                    arr.push_back({{"cluster_id", c.cluster_id},
                                   {"members", members},
                                   {"representative", rep},
                                   {"has_centroid", c.centroid.has_value()},
                                   {"representative_outliers", c.representative_outliers}});
                }
                return json{{"model_version", m.version},
                            {"thresholds", {{"tau_pred", m.tau_pred}, {"tau_score", m.tau_score}, {"t_cluster", m.t_cluster}}},
                            {"clusters", arr}};
            }));

    svr.Post("/api/soc/query", wrap([this](const httplib::Request& req) { return engine_.soc().answer(parse_body(req)); }));

    svr.Post("/api/reports", wrap([this](const httplib::Request& req) {
                 auto j = parse_body(req);
                 auto q = query_from_json(j.value("query", json::object()));
                 ReportTemplate t;
                 if (j.contains("template")) {
                     const auto& tj = j["template"];
                     if (tj.is_string()) t.name = tj.get<std::string>();
                     else if (tj.is_object()) {
                         t.name = tj.value("name", t.name);
                         if (tj.contains("granularity_us")) t.granularity_us = json_int(tj["granularity_us"], t.granularity_us);
                         if (tj.contains("top_n")) t.top_n = static_cast<std::size_t>(json_int(tj["top_n"], 10));
                     }
                 }
                 auto report = generate_report(engine_.query(), engine_.alerts(), &engine_.triage(), q, t);
                 report["text"] = render_report_text(report);
                 return report;
             }));

    if (!ui_dir_.empty()) {
        if (!svr.set_mount_point("/", ui_dir_.string())) {
            throw ConfigInvalid("ui dir " + ui_dir_.string() + " is not a readable directory");
        }
    }
}

}  // namespace nfe

#include "doctest.h"

#include "support.hpp"

#include "nfe/errors.hpp"
#include "nfe/filter.hpp"

using namespace nfe;
using namespace nfe::corpus;

namespace {

DecodedPacket udp_packet(std::string_view src, std::uint16_t sport, std::string_view dst, std::uint16_t dport) {
    auto f = udp_frame(ep(src, sport), ep(dst, dport), as_bytes("payload"));
    return decode_frame(f, LinkType::ethernet, 0, 0);
}

MetadataRecord http_record(std::string_view host) {
    MetadataRecord r;
    r.initiator = ep("10.0.0.1", 40000);
    r.responder = ep("10.0.0.2", 80);
    r.ip_proto = 6;
    r.app_protocol = AppProtocol::http;
    r.add("http.host", std::string(host));
    r.add("http.method", "GET");
    return r;
}

}  // namespace

TEST_CASE("grammar accepts every operator") {
    auto rs = compile_ruleset({
        "# comment line",
        "net 10 ip.src prefix 10.0.0.0/8 and tp.dst eq 53 => store-full",
        "net 20 tp.dst in_set {80,443} => store-headers",
        "net 30 tp.src range 1000..2000 => alert",
        "net 40 ip.dst neq 10.0.0.2 => drop",
        "net 50 exists tp.dst => store-meta",
        "app 5 http.host eq evil.example => alert",
        "app 6 http.method exists => reconstruct   # trailing comment",
        "default => drop",
    });
    CHECK(rs.network.size() == 5);
    CHECK(rs.application.size() == 2);
    CHECK(rs.default_action == Action::drop);
    CHECK(rs.network[0].rule_id == "net:10");

    auto dns = udp_packet("10.1.1.1", 5000, "10.0.0.2", 53);
    CHECK(evaluate_network(dns, rs) == Verdict{Action::store_full, "net:10"});
    auto web = udp_packet("192.168.1.1", 5000, "10.0.0.2", 443);
    CHECK(evaluate_network(web, rs) == Verdict{Action::store_headers, "net:20"});
    auto mid = udp_packet("192.168.1.1", 1500, "10.0.0.2", 9);
    CHECK(evaluate_network(mid, rs).action == Action::alert);
    auto other = udp_packet("192.168.1.1", 5000, "10.9.9.9", 9);
    CHECK(evaluate_network(other, rs).action == Action::drop);
    CHECK(evaluate_network(other, rs).rule_id == "net:40");
    auto last = udp_packet("192.168.1.1", 5000, "10.0.0.2", 9);
    CHECK(evaluate_network(last, rs) == Verdict{Action::store_metadata, "net:50"});

    CHECK(evaluate_application(http_record("evil.example"), rs).action == Action::alert);
    CHECK(evaluate_application(http_record("good.example"), rs).action == Action::reconstruct);
    MetadataRecord bare;
    CHECK(evaluate_application(bare, rs) == Verdict{Action::drop, std::nullopt});
}

TEST_CASE("lowest priority number wins regardless of text order") {
    auto rs = compile_ruleset({"net 9 tp.dst eq 53 => drop", "net 1 ip.proto eq 17 => alert"});
    auto p = udp_packet("10.0.0.1", 1, "10.0.0.2", 53);
    CHECK(evaluate_network(p, rs) == Verdict{Action::alert, "net:1"});
}

TEST_CASE("absent fields never satisfy a predicate") {
    auto rs = compile_ruleset({"net 1 tp.dst neq 80 => drop", "net 2 tp.dst exists => alert"});
    auto icmp = decode_frame(icmp_echo_frame(*IpAddress::parse("10.0.0.1"), *IpAddress::parse("10.0.0.2")),
                             LinkType::ethernet, 0, 0);
    // No ports: neither neq nor exists match, so the default applies.
    CHECK(evaluate_network(icmp, rs) == Verdict{Action::store_metadata, std::nullopt});
}

TEST_CASE("multi-valued fields match when any value matches") {
    auto rs = compile_ruleset({"app 1 dns.answers eq 192.0.2.9 => alert"});
    MetadataRecord r;
    r.add("dns.answers", "192.0.2.1");
    CHECK(evaluate_application(r, rs).action == Action::store_metadata);
    r.add("dns.answers", "192.0.2.9");
    CHECK(evaluate_application(r, rs).action == Action::alert);
}

TEST_CASE("operands are normalized like field values") {
    auto rs = compile_ruleset({"net 1 tp.dst eq 0x35 => alert", "net 2 ip.src eq 2001:DB8:0::1 => drop"});
    CHECK(evaluate_network(udp_packet("10.0.0.1", 1, "10.0.0.2", 53), rs).action == Action::alert);
}

TEST_CASE("rejections name the problem") {
    CHECK_THROWS_AS(compile_ruleset({"net 1 http.host eq x => drop"}), UnknownField);
    CHECK_THROWS_AS(compile_ruleset({"app 1 no.such eq x => drop"}), UnknownField);
    CHECK_THROWS_AS(compile_ruleset({"net 1 tp.dst eq 1 => drop", "net 1 tp.dst eq 2 => alert"}), DuplicatePriority);
    // The same number in different layers is fine.
    CHECK_NOTHROW(compile_ruleset({"net 1 tp.dst eq 1 => drop", "app 1 http.host eq x => alert"}));

    try {
        compile_ruleset({"net 1 tp.dst eq 80", "ignored"});
        FAIL("expected SyntaxError");
    } catch (const SyntaxError& e) {
        CHECK(e.line() == 1);
    }
    try {
        compile_ruleset({"", "net 1 tp.dst like 80 => drop"});
        FAIL("expected SyntaxError");
    } catch (const SyntaxError& e) {
        CHECK(e.line() == 2);
        CHECK(e.column() == 14);
    }
    CHECK_THROWS_AS(compile_ruleset({"net 1 tp.dst eq notaport => drop"}), SyntaxError);
    CHECK_THROWS_AS(compile_ruleset({"net 1 tp.dst eq 80 => explode"}), SyntaxError);
    CHECK_THROWS_AS(compile_ruleset({"net x tp.dst eq 80 => drop"}), SyntaxError);
    CHECK_THROWS_AS(compile_ruleset({"both 1 tp.dst eq 80 => drop"}), SyntaxError);
    CHECK_THROWS_AS(compile_ruleset({"net 1 ip.src prefix 10.0.0.0/40 => drop"}), SyntaxError);
    CHECK_THROWS_AS(compile_ruleset({"net 1 => drop"}), SyntaxError);
}

TEST_CASE("action order is the retention lattice") {
    CHECK(Action::drop < Action::store_metadata);
    CHECK(Action::store_metadata < Action::store_headers);
    CHECK(Action::store_headers < Action::store_full);
    CHECK(Action::store_full < Action::reconstruct);
    CHECK(Action::reconstruct < Action::alert);
    for (auto a : {Action::drop, Action::store_metadata, Action::store_headers, Action::store_full,
                   Action::reconstruct, Action::alert}) {
        CHECK(parse_action(to_string(a)) == a);
    }
    CHECK_FALSE(stores_full_payload(Action::store_headers));
    CHECK(stores_full_payload(Action::store_full));
}

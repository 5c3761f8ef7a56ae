#include "nfe/filter.hpp"

#include "nfe/errors.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>

namespace nfe {

std::string_view to_string(Action a) {
    switch (a) {
        case Action::drop: return "drop";
        case Action::store_metadata: return "store-meta";
        case Action::store_headers: return "store-headers";
        case Action::store_full: return "store-full";
        case Action::reconstruct: return "reconstruct";
        case Action::alert: return "alert";
    }
    return "store-meta";
}

std::optional<Action> parse_action(std::string_view s) {
    for (auto a : {Action::drop, Action::store_metadata, Action::store_headers, Action::store_full,
                   Action::reconstruct, Action::alert}) {
        if (to_string(a) == s) return a;
    }
    return std::nullopt;
}

std::string_view to_string(RuleLayer l) { return l == RuleLayer::network ? "net" : "app"; }

std::string_view to_string(PredicateOp op) {
    switch (op) {
        case PredicateOp::eq: return "eq";
        case PredicateOp::neq: return "neq";
        case PredicateOp::in_set: return "in_set";
        case PredicateOp::range: return "range";
        case PredicateOp::prefix: return "prefix";
        case PredicateOp::exists: return "exists";
    }
    return "eq";
}

namespace {

std::optional<PredicateOp> parse_op(std::string_view s) {
    for (auto op : {PredicateOp::eq, PredicateOp::neq, PredicateOp::in_set, PredicateOp::range,
                    PredicateOp::prefix, PredicateOp::exists}) {
        if (to_string(op) == s) return op;
    }
    return std::nullopt;
}

struct NetworkField {
    const char* name;
    FieldKind kind;
};

constexpr NetworkField kNetworkFields[] = {
    {"eth.src", FieldKind::string}, {"eth.dst", FieldKind::string}, {"ethertype", FieldKind::integer},
    {"ip.version", FieldKind::integer}, {"ip.src", FieldKind::ip}, {"ip.dst", FieldKind::ip},
    {"ip.proto", FieldKind::integer}, {"tp.src", FieldKind::port}, {"tp.dst", FieldKind::port},
};

std::optional<FieldKind> network_field_kind(std::string_view name) {
    for (const auto& f : kNetworkFields)
        if (name == f.name) return f.kind;
    return std::nullopt;
}

std::optional<std::uint64_t> parse_uint(std::string_view s) {
    s = trim(s);
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        s.remove_prefix(2);
        base = 16;
    }
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

// Operand normalization mirrors how field values are rendered, so plain
// string equality decides eq/neq/in_set.
std::optional<std::string> normalize_operand(FieldKind kind, std::string_view field, std::string_view text) {
    switch (kind) {
        case FieldKind::ip: {
            auto a = IpAddress::parse(text);
            if (!a) return std::nullopt;
            return a->to_string();
        }
        case FieldKind::port:
        case FieldKind::integer: {
            auto v = parse_uint(text);
            if (!v) return std::nullopt;
            return std::to_string(*v);
        }
        case FieldKind::enumeration:
            return to_lower(text);
        case FieldKind::string:
            if (field == "eth.src" || field == "eth.dst") {
                auto m = MacAddress::parse(text);
                if (!m) return std::nullopt;
                return m->to_string();
            }
            return std::string(text);
    }
    return std::string(text);
}

struct Token {
    std::string text;
    std::size_t column;  // 1-based
};

std::vector<Token> tokenize(std::string_view line, std::size_t line_no) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < line.size()) {
        char c = line[i];
        if (c == ' ' || c == '\t' || c == '\r') {
            ++i;
            continue;
        }
        if (c == '#') break;
        std::size_t start = i;
        std::string text;
        if (c == '"') {
            ++i;
            bool closed = false;
            while (i < line.size()) {
                if (line[i] == '\\' && i + 1 < line.size()) {
                    text.push_back(line[i + 1]);
                    i += 2;
                    continue;
                }
                if (line[i] == '"') {
                    closed = true;
                    ++i;
                    break;
                }
                text.push_back(line[i++]);
            }
            if (!closed) throw SyntaxError(line_no, start + 1, "unterminated quoted operand");
        } else {
            while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r' && line[i] != '#')
                text.push_back(line[i++]);
        }
        out.push_back({std::move(text), start + 1});
    }
    return out;
}

std::vector<std::string> split_set(std::string_view s) {
    if (s.size() >= 2 && s.front() == '{' && s.back() == '}') s = s.substr(1, s.size() - 2);
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        auto comma = s.find(',', pos);
        auto part = trim(s.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
        if (!part.empty()) out.emplace_back(part);
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

Predicate compile_predicate(RuleLayer layer, const Token& field_tok, PredicateOp op, const Token* operand_tok,
                            std::size_t line_no) {
    Predicate p;
    p.field = field_tok.text;
    p.op = op;
    if (layer == RuleLayer::network) {
        auto kind = network_field_kind(p.field);
        if (!kind) throw UnknownField(p.field, "network layer");
        p.kind = *kind;
    } else {
        const auto* spec = Vocabulary::instance().find(p.field);
        if (!spec) throw UnknownField(p.field, "application layer");
        p.kind = spec->kind;
    }
    if (op == PredicateOp::exists) return p;
    if (!operand_tok) throw SyntaxError(line_no, field_tok.column, "missing operand for " + p.field);
    p.operand = operand_tok->text;
    auto bad = [&](const std::string& why) { throw SyntaxError(line_no, operand_tok->column, why); };

    switch (op) {
        case PredicateOp::eq:
        case PredicateOp::neq: {
            auto v = normalize_operand(p.kind, p.field, p.operand);
            if (!v) bad("operand '" + p.operand + "' is not a valid " + std::string(to_string(p.kind)));
            p.values.push_back(*v);
            break;
        }
        case PredicateOp::in_set: {
            for (const auto& item : split_set(p.operand)) {
                auto v = normalize_operand(p.kind, p.field, item);
                if (!v) bad("set member '" + item + "' is not a valid " + std::string(to_string(p.kind)));
                p.values.push_back(*v);
            }
            if (p.values.empty()) bad("empty set");
            break;
        }
        case PredicateOp::range: {
            std::string_view text = p.operand;
            auto sep = text.find("..");
            std::size_t sep_len = 2;
            if (sep == std::string_view::npos && p.kind != FieldKind::ip) {
                sep = text.find('-');
                sep_len = 1;
            }
            if (sep == std::string_view::npos) bad("range operand must be lo..hi");
            auto lo = normalize_operand(p.kind, p.field, text.substr(0, sep));
            auto hi = normalize_operand(p.kind, p.field, text.substr(sep + sep_len));
            if (!lo || !hi) bad("invalid range bounds '" + p.operand + "'");
            p.range_lo = *lo;
            p.range_hi = *hi;
            break;
        }
        case PredicateOp::prefix:
            if (p.kind == FieldKind::ip) {
                p.cidr = Cidr::parse(p.operand);
                if (!p.cidr) bad("invalid CIDR prefix '" + p.operand + "'");
            }
            break;
        case PredicateOp::exists:
            break;
    }
    return p;
}

int compare_values(FieldKind kind, const std::string& a, const std::string& b) {
    if (kind == FieldKind::integer || kind == FieldKind::port) {
        auto x = parse_uint(a), y = parse_uint(b);
        if (x && y) return *x < *y ? -1 : (*x > *y ? 1 : 0);
    } else if (kind == FieldKind::ip) {
        auto x = IpAddress::parse(a), y = IpAddress::parse(b);
        if (x && y) return *x < *y ? -1 : (*x > *y ? 1 : 0);
    }
    return a.compare(b) < 0 ? -1 : (a == b ? 0 : 1);
}

}  // namespace

bool Predicate::matches(const std::vector<std::string>& field_values) const {
    if (op == PredicateOp::exists) return !field_values.empty();
    for (const auto& v : field_values) {
        switch (op) {
            case PredicateOp::eq:
                if (v == values.front()) return true;
                break;
            case PredicateOp::neq:
                if (v != values.front()) return true;
                break;
            case PredicateOp::in_set:
                if (std::find(values.begin(), values.end(), v) != values.end()) return true;
                break;
            case PredicateOp::range:
                if (compare_values(kind, v, range_lo) >= 0 && compare_values(kind, v, range_hi) <= 0) return true;
                break;
            case PredicateOp::prefix:
                if (cidr) {
                    if (auto a = IpAddress::parse(v); a && cidr->contains(*a)) return true;
                } else if (v.starts_with(operand)) {
                    return true;
                }
                break;
            case PredicateOp::exists:
                return true;
        }
    }
    return false;
}

const std::vector<std::string>& network_fields() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& f : kNetworkFields) v.emplace_back(f.name);
        return v;
    }();
    return names;
}

std::vector<std::string> network_field_values(const DecodedPacket& p, std::string_view field) {
    if (field == "eth.src") return p.eth_src ? std::vector{p.eth_src->to_string()} : std::vector<std::string>{};
    if (field == "eth.dst") return p.eth_dst ? std::vector{p.eth_dst->to_string()} : std::vector<std::string>{};
    if (field == "ethertype") return p.ethertype ? std::vector{std::to_string(*p.ethertype)} : std::vector<std::string>{};
    if (field == "ip.version") return p.ip_version ? std::vector{std::to_string(*p.ip_version)} : std::vector<std::string>{};
    if (field == "ip.src") return p.ip_src ? std::vector{p.ip_src->to_string()} : std::vector<std::string>{};
    if (field == "ip.dst") return p.ip_dst ? std::vector{p.ip_dst->to_string()} : std::vector<std::string>{};
    if (field == "ip.proto") return p.ip_proto ? std::vector{std::to_string(*p.ip_proto)} : std::vector<std::string>{};
    if (field == "tp.src") return p.tp_src ? std::vector{std::to_string(*p.tp_src)} : std::vector<std::string>{};
    if (field == "tp.dst") return p.tp_dst ? std::vector{std::to_string(*p.tp_dst)} : std::vector<std::string>{};
    return {};
}

RuleSet compile_ruleset(const std::vector<std::string>& rule_texts, Action default_action) {
    RuleSet rs;
    rs.default_action = default_action;
    std::set<int> net_prios, app_prios;

    for (std::size_t idx = 0; idx < rule_texts.size(); ++idx) {
        const std::size_t line_no = idx + 1;
        auto toks = tokenize(rule_texts[idx], line_no);
        if (toks.empty()) continue;

        if (toks[0].text == "default") {
            if (toks.size() != 3 || toks[1].text != "=>")
                throw SyntaxError(line_no, toks[0].column, "expected 'default => <action>'");
            auto a = parse_action(toks[2].text);
            if (!a) throw SyntaxError(line_no, toks[2].column, "unknown action '" + toks[2].text + "'");
            rs.default_action = *a;
            continue;
        }

        FilterRule rule;
        if (toks[0].text == "net") rule.layer = RuleLayer::network;
        else if (toks[0].text == "app") rule.layer = RuleLayer::application;
        else throw SyntaxError(line_no, toks[0].column, "expected layer 'net' or 'app'");

        if (toks.size() < 2) throw SyntaxError(line_no, toks[0].column + toks[0].text.size(), "missing priority");
        {
            const auto& t = toks[1].text;
            int prio = 0;
            auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), prio);
            if (ec != std::errc{} || ptr != t.data() + t.size())
                throw SyntaxError(line_no, toks[1].column, "priority must be an integer");
            rule.priority = prio;
        }

        std::size_t i = 2;
        bool saw_arrow = false;
        while (i < toks.size()) {
            if (toks[i].text == "=>") {
                saw_arrow = true;
                ++i;
                break;
            }
            if (!rule.predicates.empty()) {
                if (toks[i].text != "and") throw SyntaxError(line_no, toks[i].column, "expected 'and' or '=>'");
                ++i;
                if (i >= toks.size()) throw SyntaxError(line_no, toks[i - 1].column, "dangling 'and'");
            }
            // Accept both "<field> exists" and "exists <field>".
            if (toks[i].text == "exists") {
                if (i + 1 >= toks.size()) throw SyntaxError(line_no, toks[i].column, "missing field after exists");
                rule.predicates.push_back(
                    compile_predicate(rule.layer, toks[i + 1], PredicateOp::exists, nullptr, line_no));
                i += 2;
                continue;
            }
            const Token& field = toks[i];
            if (field.text == "=>") throw SyntaxError(line_no, field.column, "expected a predicate");
            if (i + 1 >= toks.size()) throw SyntaxError(line_no, field.column + field.text.size(), "missing operator");
            auto op = parse_op(toks[i + 1].text);
            if (!op) throw SyntaxError(line_no, toks[i + 1].column, "unknown operator '" + toks[i + 1].text + "'");
            if (*op == PredicateOp::exists) {
                rule.predicates.push_back(compile_predicate(rule.layer, field, *op, nullptr, line_no));
                i += 2;
                continue;
            }
            if (i + 2 >= toks.size() || toks[i + 2].text == "=>")
                throw SyntaxError(line_no, toks[i + 1].column + toks[i + 1].text.size(), "missing operand");
            rule.predicates.push_back(compile_predicate(rule.layer, field, *op, &toks[i + 2], line_no));
            i += 3;
        }
        if (!saw_arrow) {
            auto col = toks.back().column + toks.back().text.size();
            throw SyntaxError(line_no, col, "missing '=> <action>'");
        }
        if (rule.predicates.empty()) throw SyntaxError(line_no, toks[1].column, "rule has no predicates");
        if (i >= toks.size()) throw SyntaxError(line_no, toks.back().column + 2, "missing action");
        auto action = parse_action(toks[i].text);
        if (!action) throw SyntaxError(line_no, toks[i].column, "unknown action '" + toks[i].text + "'");
        rule.action = *action;
        if (i + 1 < toks.size()) throw SyntaxError(line_no, toks[i + 1].column, "unexpected text after action");

        auto& prios = rule.layer == RuleLayer::network ? net_prios : app_prios;
        if (!prios.insert(rule.priority).second) {
            throw DuplicatePriority("line " + std::to_string(line_no) + ": priority " +
                                    std::to_string(rule.priority) + " already used in " +
                                    std::string(to_string(rule.layer)) + " layer");
        }
        rule.rule_id = std::string(to_string(rule.layer)) + ":" + std::to_string(rule.priority);
        rule.note = std::string(trim(rule_texts[idx]));
        (rule.layer == RuleLayer::network ? rs.network : rs.application).push_back(std::move(rule));
    }
    auto by_prio = [](const FilterRule& a, const FilterRule& b) { return a.priority < b.priority; };
    std::sort(rs.network.begin(), rs.network.end(), by_prio);
    std::sort(rs.application.begin(), rs.application.end(), by_prio);
    return rs;
}

RuleSet load_ruleset(const std::string& path, Action default_action) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open rules file " + path);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    return compile_ruleset(lines, default_action);
}

Verdict evaluate_network(const DecodedPacket& packet, const RuleSet& rs) {
    for (const auto& rule : rs.network) {
        bool all = std::all_of(rule.predicates.begin(), rule.predicates.end(), [&](const Predicate& p) {
            return p.matches(network_field_values(packet, p.field));
        });
        if (all) return {rule.action, rule.rule_id};
    }
    return {rs.default_action, std::nullopt};
}

Verdict evaluate_application(const MetadataRecord& record, const RuleSet& rs) {
    for (const auto& rule : rs.application) {
        bool all = std::all_of(rule.predicates.begin(), rule.predicates.end(), [&](const Predicate& p) {
            return p.matches(record.field_values(p.field));
        });
        if (all) return {rule.action, rule.rule_id};
    }
    return {rs.default_action, std::nullopt};
}

}  // namespace nfe

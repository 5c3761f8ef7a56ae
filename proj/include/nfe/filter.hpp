#pragma once

#include "nfe/metadata.hpp"
#include "nfe/packet.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nfe {

/// What happens to traffic a rule matches. Declaration order is also the
/// retention order used when several packets of one session disagree.
enum class Action : std::uint8_t {
    drop = 0,
    store_metadata = 1,
    store_headers = 2,
    store_full = 3,
    reconstruct = 4,
    alert = 5,
};

std::string_view to_string(Action a);
std::optional<Action> parse_action(std::string_view s);

/// True when the action keeps the whole frames in the payload store.
inline bool stores_full_payload(Action a) {
    return a == Action::store_full || a == Action::reconstruct || a == Action::alert;
}

enum class RuleLayer : std::uint8_t { network, application };
enum class PredicateOp : std::uint8_t { eq, neq, in_set, range, prefix, exists };

std::string_view to_string(RuleLayer l);
std::string_view to_string(PredicateOp op);

struct Predicate {
    std::string field;
    PredicateOp op = PredicateOp::eq;
    std::string operand;
    FieldKind kind = FieldKind::string;
    // Compiled operand forms.
    std::vector<std::string> values;  // eq/neq (one) and in_set (many), normalized
    std::string range_lo, range_hi;
    std::optional<Cidr> cidr;

    bool matches(const std::vector<std::string>& field_values) const;
};

struct FilterRule {
    std::string rule_id;
    RuleLayer layer = RuleLayer::network;
    int priority = 0;
    std::vector<Predicate> predicates;
    Action action = Action::store_metadata;
    std::string note;
};

/// Immutable, priority-ordered rules per layer.
struct RuleSet {
    std::vector<FilterRule> network;
    std::vector<FilterRule> application;
    Action default_action = Action::store_metadata;
};

struct Verdict {
    Action action = Action::store_metadata;
    std::optional<std::string> rule_id;
    bool operator==(const Verdict&) const = default;
};

/// The header fields a network rule may name.
const std::vector<std::string>& network_fields();

/// Canonical string value(s) of a network field, empty when absent.
std::vector<std::string> network_field_values(const DecodedPacket& p, std::string_view field);

/// Grammar, one rule per line:
///   <net|app> <priority> <field> <op> <operand> [and <field> <op> <operand>]* => <action>
/// `#` starts a comment. `default => <action>` sets the fallback action.
/// Throws SyntaxError, UnknownField, DuplicatePriority.
RuleSet compile_ruleset(const std::vector<std::string>& rule_texts,
                        Action default_action = Action::store_metadata);
RuleSet load_ruleset(const std::string& path, Action default_action = Action::store_metadata);

Verdict evaluate_network(const DecodedPacket& packet, const RuleSet& rs);
Verdict evaluate_application(const MetadataRecord& record, const RuleSet& rs);

}  // namespace nfe

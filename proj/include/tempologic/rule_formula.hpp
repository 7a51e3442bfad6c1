#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tempologic/event_store.hpp"

namespace tempologic {

struct RelationConstraint {
  PredicateId first = 0;
  PredicateId second = 0;
  Relation kind = Relation::None;

  auto operator<=>(const RelationConstraint&) const = default;
};

// Symbolic temporal Horn rule  Y <- X_a ^ X_b ^ ... ^ (X_a before X_b) ...
// In canonical form the body is sorted and deduplicated, and relations are
// sorted, use only Before (earlier operand first) or Equal (smaller id
// first), and never None.
struct RuleFormula {
  std::vector<PredicateId> body;
  std::vector<RelationConstraint> relations;
  double weight = 0.0;

  bool empty() const { return body.empty(); }
  // Structural identity, ignoring the weight.
  bool same_logic(const RuleFormula& other) const {
    return body == other.body && relations == other.relations;
  }
  bool operator==(const RuleFormula&) const = default;
};

// Throws ConfigError on contradictory relations or relation endpoints that
// are missing from the body. Idempotent.
RuleFormula canonicalize(const RuleFormula& formula);

// Hard boolean grounding of a canonical formula against history before t.
bool formula_holds(const RuleFormula& formula, const EventSequence& seq, double t, double delta);

std::string format_weight(double weight);
std::string format_rule(const RuleFormula& formula);
// Accepts the text grammar emitted by format_rule (whitespace-insensitive)
// and returns the canonical formula. When `num_predicates` is given,
// predicates above it are rejected.
RuleFormula parse_rule(std::string_view text, std::optional<int> num_predicates = std::nullopt);

}  // namespace tempologic

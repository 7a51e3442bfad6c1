#include <gtest/gtest.h>

#include "tempologic/errors.hpp"
#include "tempologic/rng.hpp"
#include "tempologic/rule_formula.hpp"
#include "tempologic/synthetic.hpp"

using namespace tempologic;

namespace {

// Random (not necessarily canonical) formula: at most one relation per
// unordered pair, so it always canonicalizes.
RuleFormula random_formula(Rng& rng) {
  RuleFormula f;
  const auto len = 1 + rng.below(4);
  for (std::uint64_t i = 0; i < len; ++i) f.body.push_back(1 + static_cast<int>(rng.below(12)));
  for (std::size_t i = 0; i < f.body.size(); ++i) {
    for (std::size_t j = i + 1; j < f.body.size(); ++j) {
      if (f.body[i] == f.body[j] || rng.uniform() < 0.5) continue;
      f.relations.push_back({f.body[i], f.body[j], static_cast<Relation>(rng.below(kNumRelations))});
    }
  }
  // Drop relations whose unordered pair already appeared.
  std::vector<RelationConstraint> kept;
  for (const auto& r : f.relations) {
    const auto key = std::minmax(r.first, r.second);
    bool dup = false;
    for (const auto& k : kept) dup = dup || std::minmax(k.first, k.second) == key;
    if (!dup) kept.push_back(r);
  }
  f.relations = kept;
  f.weight = std::round(rng.uniform(0.0, 2.0) * 1000.0) / 1000.0;
  return f;
}

}  // namespace

TEST(RuleFormula, FormatsGroupOneTruth) {
  const auto spec = *GroundTruthSpec::preset("group1");
  ASSERT_EQ(spec.rules.size(), 1u);
  EXPECT_EQ(format_rule(spec.rules[0].formula), "Y <- X1 ^ X2 ^ X3 ^ (X1 before X2) @ 0.40");
}

TEST(RuleFormula, EmptyBodyFormatsAsTrue) {
  RuleFormula f;
  f.weight = 0.25;
  EXPECT_EQ(format_rule(f), "Y <- true @ 0.25");
  EXPECT_EQ(parse_rule("Y <- true @ 0.25"), f);
}

TEST(RuleFormula, ParseRewritesAfterAsBefore) {
  const auto f = parse_rule("Y <- X4 ^ X5 ^ (X4 after X5) @ 0.80");
  EXPECT_EQ(f.body, (std::vector<PredicateId>{4, 5}));
  ASSERT_EQ(f.relations.size(), 1u);
  EXPECT_EQ(f.relations[0], (RelationConstraint{5, 4, Relation::Before}));
  EXPECT_DOUBLE_EQ(f.weight, 0.80);
}

TEST(RuleFormula, RelationOutsideBodyIsRejected) {
  EXPECT_THROW(parse_rule("Y <- X1 ^ (X1 before X9) @ 1"), ConfigError);
}

TEST(RuleFormula, WhitespaceInsensitive) {
  EXPECT_EQ(parse_rule("Y<-X1^X2^X3^(X1 before X2)@0.40"),
            parse_rule("  Y <-   X1 ^ X2 ^  X3 ^ ( X1  before  X2 )  @ 0.40 "));
}

TEST(RuleFormula, SyntaxErrorsCarryColumns) {
  try {
    parse_rule("Y <- X1 ^ ^ X2 @ 1");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("col 11"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_rule("Y <- X1 ^ (X1 sideways X2) ^ X2 @ 1"), ConfigError);
  EXPECT_THROW(parse_rule("Y <- X31 @ 1", 30), ConfigError);
  EXPECT_THROW(parse_rule("Y <- X1 ^ X2 ^ (X1 before X2) ^ (X1 equal X2) @ 1"), ConfigError);
}

TEST(RuleFormula, SymmetricRelationsCanonicalizeIdentically) {
  EXPECT_EQ(parse_rule("Y <- X1 ^ X2 ^ (X1 before X2) @ 1"), parse_rule("Y <- X1 ^ X2 ^ (X2 after X1) @ 1"));
  EXPECT_EQ(parse_rule("Y <- X1 ^ X2 ^ (X2 equal X1) @ 1"), parse_rule("Y <- X1 ^ X2 ^ (X1 equal X2) @ 1"));
}

TEST(RuleFormula, NoneRelationsAreDropped) {
  RuleFormula f;
  f.body = {2, 1};
  f.relations = {{1, 2, Relation::None}};
  EXPECT_TRUE(canonicalize(f).relations.empty());
  // The text grammar has no keyword for None.
  EXPECT_THROW(parse_rule("Y <- X1 ^ X2 ^ (X1 none X2) @ 1"), ConfigError);
}

TEST(RuleFormulaProperty, CanonicalizeIsIdempotent) {
  Rng rng(21);
  for (int i = 0; i < 1000; ++i) {
    const auto once = canonicalize(random_formula(rng));
    EXPECT_EQ(canonicalize(once), once);
  }
}

TEST(RuleFormulaProperty, ParseFormatRoundTrip) {
  Rng rng(22);
  for (int i = 0; i < 1000; ++i) {
    auto f = canonicalize(random_formula(rng));
    f.weight = rng.uniform(-3.0, 3.0);  // arbitrary doubles must survive too
    EXPECT_EQ(parse_rule(format_rule(f)), f) << format_rule(f);
  }
}

TEST(RuleFormulaProperty, CanonicalFormIsNormalized) {
  Rng rng(23);
  for (int i = 0; i < 1000; ++i) {
    const auto f = canonicalize(random_formula(rng));
    EXPECT_TRUE(std::is_sorted(f.body.begin(), f.body.end()));
    EXPECT_TRUE(std::adjacent_find(f.body.begin(), f.body.end()) == f.body.end());
    for (const auto& r : f.relations) {
      EXPECT_TRUE(r.kind == Relation::Before || r.kind == Relation::Equal);
      if (r.kind == Relation::Equal) {
        EXPECT_LT(r.first, r.second);
      }
    }
  }
}

TEST(RuleFormula, FormulaHoldsUsesHardGrounding) {
  const auto f = parse_rule("Y <- X1 ^ X2 ^ (X1 before X2) @ 1");
  EventSequence seq;
  seq.horizon = 10.0;
  seq.events = {{1, {1.0}}, {2, {3.0}}};
  EXPECT_FALSE(formula_holds(f, seq, 3.0, 0.5));  // X2 not yet strictly before t
  EXPECT_TRUE(formula_holds(f, seq, 3.5, 0.5));
  EXPECT_FALSE(formula_holds(f, seq, 3.5, 2.5));  // within tolerance: equal, not before
}

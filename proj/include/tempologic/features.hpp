#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tempologic/event_store.hpp"
#include "tempologic/rng.hpp"
#include "tempologic/rule_formula.hpp"

namespace tempologic {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Fixed key tables the rule embeddings are matched against.
struct EmbeddingTables {
  Matrix predicates;  // (U+1) x d, row 0 is the dummy
  Matrix relations;   // 4 x d_r, rows ordered Before, Equal, After, None

  int num_predicates() const { return static_cast<int>(predicates.rows()) - 1; }

  // Row i = e_i for predicates 1..U (d = U), zero dummy row, and identity
  // relation rows (d_r = 4).
  static EmbeddingTables one_hot(int num_predicates);
};

// Index pairs (i, l), i < l, in the row order of the relation slot matrix:
// (0,1), (0,2), ..., (0,L-1), (1,2), ...
std::vector<std::pair<int, int>> slot_pairs(int length);

struct RuleEmbedding {
  Matrix static_slots;    // L x d
  Matrix relation_slots;  // L(L-1)/2 x d_r

  int length() const { return static_cast<int>(static_slots.rows()); }

  static RuleEmbedding random(int length, const EmbeddingTables& tables, Rng& rng, double scale = 0.5);
};

enum class FeatureMode { SoftMin, Product };

struct HyperParams {
  double tau = 0.2;    // softmax temperature
  double rho = 20.0;   // soft-min sharpness
  double delta = 0.5;  // relation tolerance
  FeatureMode mode = FeatureMode::SoftMin;
  // Predicate slots select without replacement.
  bool distinct_slots = true;

  void validate() const;
};

// One sampled (or argmax) reading of a rule embedding.
struct SelectionResult {
  std::vector<PredicateId> static_idx;
  std::vector<Relation> relation_idx;
  // Gumbel draws, slot-major. Empty for noiseless selections.
  std::vector<double> noise_record;

  bool operator==(const SelectionResult&) const = default;
};

// Row-wise softmax(Q K^T / tau).
Matrix similarity_matrix(const Matrix& slots, const Matrix& keys, double tau);

// Per-row argmax of slot.key/tau + Gumbel noise. Appends the draws to
// `noise` when given. With `distinct`, a row skips columns other than the
// dummy (column 0) already picked by an earlier row.
std::vector<int> gumbel_argmax(const Matrix& slots, const Matrix& keys, double tau, Rng& rng,
                               std::vector<double>* noise = nullptr, bool distinct = false);

// `distinct` fills predicate slots without replacement, in slot order.
SelectionResult gumbel_select(const RuleEmbedding& rule, const EmbeddingTables& tables, double tau,
                              Rng& rng, bool distinct = false);
SelectionResult argmax_select(const RuleEmbedding& rule, const EmbeddingTables& tables,
                              bool distinct = false);

// -(1/rho) log((1/N) sum exp(-rho x_i)), evaluated with a min shift.
double softmin(std::span<const double> values, double rho);
// Value plus d/dx_i written to `grad` (same length as values).
double softmin_with_grad(std::span<const double> values, double rho, std::span<double> grad);

// The scores and facts a selection contributes to its feature. Relation
// slots touching a dummy slot are left out entirely.
struct RuleTerms {
  struct Score {
    bool relational = false;
    int row = 0;
    int col = 0;
    double value = 0.0;
  };
  struct RelationFact {
    PredicateId first = 0;
    PredicateId second = 0;
    Relation kind = Relation::None;
  };
  std::vector<Score> scores;
  // One entry per non-dummy static slot (duplicates kept).
  std::vector<PredicateId> static_facts;
  // Non-None relations between two non-dummy slots.
  std::vector<RelationFact> relation_facts;
  // Facts that are always 1: dummy static slots and None relations.
  int constant_facts = 0;

  int num_facts() const {
    return static_cast<int>(static_facts.size() + relation_facts.size()) + constant_facts;
  }
  int size() const { return static_cast<int>(scores.size()) + num_facts(); }
};

RuleTerms collect_terms(const Matrix& static_w, const Matrix& relation_w, const SelectionResult& sel,
                        bool include_static = true, bool include_temporal = true);

// Feature value given the fact values (ones and zeros) that complete the
// collection. Facts are 0/1, so only the number of false facts matters.
double feature_value(const RuleTerms& terms, int false_facts, const HyperParams& hyper);
// Same, with d feature / d score written to `grad` (one entry per score).
double feature_value_with_grad(const RuleTerms& terms, int false_facts, const HyperParams& hyper,
                               std::span<double> grad);

// Counts facts in `terms` that are false against `seq` before time t.
int count_false_facts(const RuleTerms& terms, const EventSequence& seq, double t, double delta);

double static_feature(const Matrix& static_w, const SelectionResult& sel, const EventSequence& seq,
                      double t, double rho);
double temporal_feature(const Matrix& relation_w, const SelectionResult& sel, const EventSequence& seq,
                        double t, double rho, double delta);
double combined_feature(const RuleEmbedding& rule, const EmbeddingTables& tables,
                        const SelectionResult& sel, const EventSequence& seq, double t,
                        const HyperParams& hyper);

// Feature value of the rule when every selected fact holds; the intensity
// increment per unit weight once the rule fires.
double active_feature(const RuleEmbedding& rule, const EmbeddingTables& tables,
                      const SelectionResult& sel, const HyperParams& hyper);

// Noiseless read-out: argmax per slot, dummy slots dropped, None and
// dangling relations omitted, result canonicalized. Weight is left at 0.
RuleFormula interpret_rule(const RuleEmbedding& rule, const EmbeddingTables& tables,
                           bool distinct = false);
RuleFormula selection_formula(const SelectionResult& sel);

}  // namespace tempologic

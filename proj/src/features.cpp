#include "tempologic/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "tempologic/errors.hpp"

namespace tempologic {

EmbeddingTables EmbeddingTables::one_hot(int num_predicates) {
  EmbeddingTables tables;
  tables.predicates = Matrix::Zero(num_predicates + 1, num_predicates);
  for (int i = 1; i <= num_predicates; ++i) tables.predicates(i, i - 1) = 1.0;
  tables.relations = Matrix::Identity(kNumRelations, kNumRelations);
  return tables;
}

std::vector<std::pair<int, int>> slot_pairs(int length) {
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < length; ++i) {
    for (int l = i + 1; l < length; ++l) pairs.emplace_back(i, l);
  }
  return pairs;
}

RuleEmbedding RuleEmbedding::random(int length, const EmbeddingTables& tables, Rng& rng, double scale) {
  if (length < 1) throw ConfigError("rule length must be at least 1");
  RuleEmbedding rule;
  const int num_pairs = length * (length - 1) / 2;
  rule.static_slots.resize(length, tables.predicates.cols());
  rule.relation_slots.resize(num_pairs, tables.relations.cols());
  for (Eigen::Index i = 0; i < rule.static_slots.size(); ++i) {
    rule.static_slots.data()[i] = rng.uniform(-scale, scale);
  }
  for (Eigen::Index i = 0; i < rule.relation_slots.size(); ++i) {
    rule.relation_slots.data()[i] = rng.uniform(-scale, scale);
  }
  return rule;
}

void HyperParams::validate() const {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (!(rho > 0.0)) throw ConfigError("rho must be positive");
  if (!(delta >= 0.0)) throw ConfigError("delta must be non-negative");
}

Matrix similarity_matrix(const Matrix& slots, const Matrix& keys, double tau) {
  if (slots.cols() != keys.cols()) {
    throw std::invalid_argument("similarity_matrix: slot width " + std::to_string(slots.cols()) +
                                " != key width " + std::to_string(keys.cols()));
  }
  Matrix logits = slots * keys.transpose() / tau;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double top = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - top).exp();
    logits.row(r) /= logits.row(r).sum();
  }
  return logits;
}

namespace {

// Whether a row before `row` already picked `col`; column 0 (the dummy) is
// never taken.
bool taken_before(const std::vector<int>& picks, Eigen::Index row, Eigen::Index col) {
  if (col == 0) return false;
  for (Eigen::Index r = 0; r < row; ++r) {
    if (picks[r] == col) return true;
  }
  return false;
}

}  // namespace

std::vector<int> gumbel_argmax(const Matrix& slots, const Matrix& keys, double tau, Rng& rng,
                               std::vector<double>* noise, bool distinct) {
  const Matrix logits = slots * keys.transpose() / tau;
  std::vector<int> picks(logits.rows());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const double eps = rng.gumbel();
      if (noise) noise->push_back(eps);
      if (distinct && taken_before(picks, r, j)) continue;
      const double score = logits(r, j) + eps;
      if (score > best) {
        best = score;
        picks[r] = static_cast<int>(j);
      }
    }
  }
  return picks;
}

namespace {

std::vector<int> row_argmax(const Matrix& slots, const Matrix& keys, bool distinct) {
  const Matrix logits = slots * keys.transpose();
  std::vector<int> picks(logits.rows());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      if (distinct && taken_before(picks, r, j)) continue;
      if (logits(r, j) > best) {
        best = logits(r, j);
        picks[r] = static_cast<int>(j);
      }
    }
  }
  return picks;
}

SelectionResult make_selection(const std::vector<int>& stat, const std::vector<int>& rel) {
  SelectionResult sel;
  sel.static_idx.assign(stat.begin(), stat.end());
  sel.relation_idx.reserve(rel.size());
  for (const int k : rel) sel.relation_idx.push_back(static_cast<Relation>(k));
  return sel;
}

}  // namespace

SelectionResult gumbel_select(const RuleEmbedding& rule, const EmbeddingTables& tables, double tau,
                              Rng& rng, bool distinct) {
  std::vector<double> noise;
  const auto stat = gumbel_argmax(rule.static_slots, tables.predicates, tau, rng, &noise, distinct);
  const auto rel = gumbel_argmax(rule.relation_slots, tables.relations, tau, rng, &noise);
  auto sel = make_selection(stat, rel);
  sel.noise_record = std::move(noise);
  return sel;
}

SelectionResult argmax_select(const RuleEmbedding& rule, const EmbeddingTables& tables, bool distinct) {
  // Positive tau does not move the argmax, so it is left out.
  return make_selection(row_argmax(rule.static_slots, tables.predicates, distinct),
                        row_argmax(rule.relation_slots, tables.relations, false));
}

double softmin(std::span<const double> values, double rho) {
  if (values.empty()) throw std::invalid_argument("softmin of an empty collection");
  const double lo = *std::min_element(values.begin(), values.end());
  double sum = 0.0;
  for (const double x : values) sum += std::exp(-rho * (x - lo));
  return lo - std::log(sum / static_cast<double>(values.size())) / rho;
}

double softmin_with_grad(std::span<const double> values, double rho, std::span<double> grad) {
  if (values.empty()) throw std::invalid_argument("softmin of an empty collection");
  const double lo = *std::min_element(values.begin(), values.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    grad[i] = std::exp(-rho * (values[i] - lo));
    sum += grad[i];
  }
  for (auto& g : grad) g /= sum;
  return lo - std::log(sum / static_cast<double>(values.size())) / rho;
}

RuleTerms collect_terms(const Matrix& static_w, const Matrix& relation_w, const SelectionResult& sel,
                        bool include_static, bool include_temporal) {
  RuleTerms terms;
  const int length = static_cast<int>(sel.static_idx.size());
  if (include_static) {
    for (int l = 0; l < length; ++l) {
      const int j = sel.static_idx[l];
      terms.scores.push_back({false, l, j, static_w(l, j)});
      if (j == kDummyPredicate) {
        ++terms.constant_facts;
      } else {
        terms.static_facts.push_back(j);
      }
    }
  }
  if (include_temporal) {
    const auto pairs = slot_pairs(length);
    for (std::size_t r = 0; r < pairs.size(); ++r) {
      const PredicateId first = sel.static_idx[pairs[r].first];
      const PredicateId second = sel.static_idx[pairs[r].second];
      if (first == kDummyPredicate || second == kDummyPredicate) continue;
      const Relation kind = sel.relation_idx[r];
      terms.scores.push_back({true, static_cast<int>(r), static_cast<int>(kind),
                              relation_w(static_cast<Eigen::Index>(r), static_cast<int>(kind))});
      if (kind == Relation::None) {
        ++terms.constant_facts;
      } else {
        terms.relation_facts.push_back({first, second, kind});
      }
    }
  }
  return terms;
}

namespace {

// Builds the full collection: scores, then `false_facts` zeros, then ones.
std::vector<double> term_values(const RuleTerms& terms, int false_facts) {
  std::vector<double> values;
  values.reserve(terms.size());
  for (const auto& s : terms.scores) values.push_back(s.value);
  const int facts = terms.num_facts();
  for (int i = 0; i < facts; ++i) values.push_back(i < false_facts ? 0.0 : 1.0);
  return values;
}

}  // namespace

double feature_value(const RuleTerms& terms, int false_facts, const HyperParams& hyper) {
  if (hyper.mode == FeatureMode::Product) {
    if (false_facts > 0) return 0.0;
    double prod = 1.0;
    for (const auto& s : terms.scores) prod *= s.value;
    return prod;
  }
  const auto values = term_values(terms, false_facts);
  return softmin(values, hyper.rho);
}

double feature_value_with_grad(const RuleTerms& terms, int false_facts, const HyperParams& hyper,
                               std::span<double> grad) {
  const std::size_t n_scores = terms.scores.size();
  if (hyper.mode == FeatureMode::Product) {
    if (false_facts > 0) {
      std::fill(grad.begin(), grad.begin() + static_cast<std::ptrdiff_t>(n_scores), 0.0);
      return 0.0;
    }
    double prod = 1.0;
    for (std::size_t k = 0; k < n_scores; ++k) {
      double others = 1.0;
      for (std::size_t m = 0; m < n_scores; ++m) {
        if (m != k) others *= terms.scores[m].value;
      }
      grad[k] = others;
      prod *= terms.scores[k].value;
    }
    return prod;
  }
  const auto values = term_values(terms, false_facts);
  std::vector<double> full(values.size());
  const double value = softmin_with_grad(values, hyper.rho, full);
  std::copy_n(full.begin(), n_scores, grad.begin());
  return value;
}

int count_false_facts(const RuleTerms& terms, const EventSequence& seq, double t, double delta) {
  int count = 0;
  for (const auto p : terms.static_facts) count += fact_static(seq, p, t) ? 0 : 1;
  for (const auto& r : terms.relation_facts) {
    count += fact_relation(seq, r.first, r.second, r.kind, t, delta) ? 0 : 1;
  }
  return count;
}

double static_feature(const Matrix& static_w, const SelectionResult& sel, const EventSequence& seq,
                      double t, double rho) {
  const auto terms = collect_terms(static_w, Matrix(), sel, true, false);
  HyperParams hyper;
  hyper.rho = rho;
  return feature_value(terms, count_false_facts(terms, seq, t, 0.0), hyper);
}

double temporal_feature(const Matrix& relation_w, const SelectionResult& sel, const EventSequence& seq,
                        double t, double rho, double delta) {
  const auto terms = collect_terms(Matrix(), relation_w, sel, false, true);
  HyperParams hyper;
  hyper.rho = rho;
  if (terms.size() == 0) return 1.0;  // no relation slot between real predicates
  return feature_value(terms, count_false_facts(terms, seq, t, delta), hyper);
}

double combined_feature(const RuleEmbedding& rule, const EmbeddingTables& tables,
                        const SelectionResult& sel, const EventSequence& seq, double t,
                        const HyperParams& hyper) {
  const Matrix static_w = similarity_matrix(rule.static_slots, tables.predicates, hyper.tau);
  const Matrix relation_w = similarity_matrix(rule.relation_slots, tables.relations, hyper.tau);
  const auto terms = collect_terms(static_w, relation_w, sel);
  return feature_value(terms, count_false_facts(terms, seq, t, hyper.delta), hyper);
}

double active_feature(const RuleEmbedding& rule, const EmbeddingTables& tables,
                      const SelectionResult& sel, const HyperParams& hyper) {
  const Matrix static_w = similarity_matrix(rule.static_slots, tables.predicates, hyper.tau);
  const Matrix relation_w = similarity_matrix(rule.relation_slots, tables.relations, hyper.tau);
  return feature_value(collect_terms(static_w, relation_w, sel), 0, hyper);
}

RuleFormula selection_formula(const SelectionResult& sel) {
  const int length = static_cast<int>(sel.static_idx.size());
  // A slot repeating an earlier slot's predicate adds nothing to the body
  // and is read out like a dummy slot.
  std::vector<bool> kept(length, false);
  RuleFormula formula;
  for (int l = 0; l < length; ++l) {
    const PredicateId p = sel.static_idx[l];
    if (p == kDummyPredicate) continue;
    if (std::find(formula.body.begin(), formula.body.end(), p) != formula.body.end()) continue;
    kept[l] = true;
    formula.body.push_back(p);
  }
  const auto pairs = slot_pairs(length);
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    const auto [i, l] = pairs[r];
    if (!kept[i] || !kept[l] || sel.relation_idx[r] == Relation::None) continue;
    formula.relations.push_back({sel.static_idx[i], sel.static_idx[l], sel.relation_idx[r]});
  }
  return canonicalize(formula);
}

RuleFormula interpret_rule(const RuleEmbedding& rule, const EmbeddingTables& tables, bool distinct) {
  return selection_formula(argmax_select(rule, tables, distinct));
}

}  // namespace tempologic

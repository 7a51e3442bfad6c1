#include "tempologic/induction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "tempologic/errors.hpp"
#include "tempologic/parallel.hpp"

namespace tempologic {

namespace {

// Floor for b0 so the likelihood stays finite when no rule covers a target.
constexpr double kMinBase = 1e-6;

std::size_t flat_size(const IntensityParams& params) {
  std::size_t n = 1 + params.num_rules();
  for (const auto& r : params.rules) {
    n += static_cast<std::size_t>(r.static_slots.size() + r.relation_slots.size());
  }
  return n;
}

std::vector<double> step_sizes_for(const IntensityParams& params, const TrainConfig& config) {
  std::vector<double> steps(flat_size(params), config.learning_rate);
  std::fill_n(steps.begin(), 1 + params.num_rules(), config.rate_learning_rate);
  return steps;
}

void pack(const IntensityParams& params, std::vector<double>& out) {
  out.clear();
  out.push_back(params.b0);
  out.insert(out.end(), params.gammas.begin(), params.gammas.end());
  for (const auto& r : params.rules) {
    out.insert(out.end(), r.static_slots.data(), r.static_slots.data() + r.static_slots.size());
    out.insert(out.end(), r.relation_slots.data(), r.relation_slots.data() + r.relation_slots.size());
  }
}

void pack(const GradientBundle& grad, std::vector<double>& out) {
  out.clear();
  out.push_back(grad.d_b0);
  out.insert(out.end(), grad.d_gammas.begin(), grad.d_gammas.end());
  for (std::size_t f = 0; f < grad.d_static.size(); ++f) {
    const auto& s = grad.d_static[f];
    const auto& r = grad.d_relation[f];
    out.insert(out.end(), s.data(), s.data() + s.size());
    out.insert(out.end(), r.data(), r.data() + r.size());
  }
}

void unpack(std::span<const double> flat, IntensityParams& params) {
  std::size_t at = 0;
  params.b0 = std::max(kMinBase, flat[at++]);
  for (auto& g : params.gammas) g = std::max(0.0, flat[at++]);
  for (auto& r : params.rules) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), r.static_slots.size(), r.static_slots.data());
    at += static_cast<std::size_t>(r.static_slots.size());
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), r.relation_slots.size(),
                r.relation_slots.data());
    at += static_cast<std::size_t>(r.relation_slots.size());
  }
}

std::vector<std::size_t> all_indices(const GroundedCorpus& corpus, std::span<const std::size_t> subset) {
  if (!subset.empty()) return {subset.begin(), subset.end()};
  std::vector<std::size_t> idx(corpus.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

std::size_t batch_size_for(std::size_t n, const TrainConfig& config) {
  return n <= config.full_batch_limit ? n : std::max<std::size_t>(1, config.batch_size);
}

// Tracks the relative-improvement stopping rule.
class ConvergenceMonitor {
 public:
  explicit ConvergenceMonitor(const TrainConfig& config) : config_(config) {}

  // Returns true when the new loss is the best so far.
  bool observe(double loss) {
    ++epochs_;
    const bool improved_enough = loss < best_ - config_.tolerance * std::abs(best_);
    stall_ = improved_enough || !std::isfinite(best_) ? 0 : stall_ + 1;
    if (loss < best_) {
      best_ = loss;
      return true;
    }
    return false;
  }

  bool done() const { return epochs_ >= config_.min_epochs && stall_ >= config_.patience; }

 private:
  const TrainConfig& config_;
  double best_ = std::numeric_limits<double>::infinity();
  int stall_ = 0;
  int epochs_ = 0;
};

// NLL of the best constant-rate model on the listed sequences.
double base_only_nll(const GroundedCorpus& corpus, std::span<const std::size_t> seqs) {
  double exposure = 0.0;
  double count = 0.0;
  for (const auto s : seqs) {
    exposure += corpus.horizon(s);
    count += static_cast<double>(corpus.targets(s).size());
  }
  if (count == 0.0) return 0.0;
  const double rate = count / exposure;
  return rate * exposure - count * std::log(rate);
}

}  // namespace

void TrainConfig::validate() const {
  hyper.validate();
  if (max_rule_length < 1) throw ConfigError("max rule length must be at least 1");
  if (restarts < 1) throw ConfigError("restarts must be at least 1");
  if (!(weight_threshold > 0.0)) throw ConfigError("weight threshold must be positive");
  if (!(learning_rate > 0.0) || !(rate_learning_rate > 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  if (max_rules < 0) throw ConfigError("max_rules must be non-negative");
}

IntensityParams RuleSet::params() const {
  IntensityParams p;
  p.b0 = b0;
  for (const auto& r : rules) {
    p.gammas.push_back(r.gamma);
    p.rules.push_back(r.embedding);
  }
  return p;
}

std::vector<SelectionResult> RuleSet::selections() const {
  std::vector<SelectionResult> out;
  for (const auto& r : rules) out.push_back(r.selection);
  return out;
}

AdamOptimizer::AdamOptimizer(std::vector<double> step_sizes, double beta1, double beta2, double eps)
    : step_sizes_(std::move(step_sizes)),
      m_(step_sizes_.size(), 0.0),
      v_(step_sizes_.size(), 0.0),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {}

void AdamOptimizer::step(std::span<double> params, std::span<const double> grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= step_sizes_[i] * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

LearnedRule make_learned_rule(const RuleEmbedding& rule, double gamma, const EmbeddingTables& tables,
                              const HyperParams& hyper) {
  return make_learned_rule(rule, argmax_select(rule, tables, hyper.distinct_slots), gamma, tables, hyper);
}

LearnedRule make_learned_rule(const RuleEmbedding& rule, const SelectionResult& selection, double gamma,
                              const EmbeddingTables& tables, const HyperParams& hyper) {
  LearnedRule out;
  out.embedding = rule;
  out.gamma = gamma;
  out.selection = selection;
  out.formula = selection_formula(out.selection);
  out.formula.weight = gamma * active_feature(rule, tables, out.selection, hyper);
  return out;
}

SingleRuleNll single_rule_nll(std::span<const double> phi, const FactCountStats& stats, double b0,
                              double gamma) {
  SingleRuleNll out;
  for (std::size_t z = 0; z < phi.size(); ++z) {
    const double lambda = b0 + gamma * phi[z];
    const double e = stats.exposure[z];
    const double c = stats.targets[z];
    out.nll += lambda * e;
    double g = e;
    if (c > 0.0) {
      if (!(lambda > 0.0)) {
        out.nll = std::numeric_limits<double>::infinity();
        return out;
      }
      out.nll -= c * std::log(lambda);
      g -= c / lambda;
    }
    out.d_lambda.push_back(g);
    out.d_b0 += g;
    out.d_gamma += phi[z] * g;
  }
  return out;
}

namespace {

// Selection statistics keyed by the selected indices; valid for one subset.
class StatsCache {
 public:
  StatsCache(const GroundedCorpus& corpus, std::span<const std::size_t> subset, double delta,
             int workers)
      : corpus_(corpus), subset_(subset), delta_(delta), workers_(workers) {}

  const FactCountStats& get(const SelectionResult& sel, const RuleTerms& terms) {
    std::vector<int> key(sel.static_idx.begin(), sel.static_idx.end());
    for (const auto r : sel.relation_idx) key.push_back(static_cast<int>(r));
    auto it = cache_.find(key);
    if (it == cache_.end()) {
      it = cache_.emplace(std::move(key), fact_count_stats(terms, corpus_, subset_, delta_, workers_)).first;
    }
    return it->second;
  }

 private:
  const GroundedCorpus& corpus_;
  std::span<const std::size_t> subset_;
  double delta_;
  int workers_;
  std::map<std::vector<int>, FactCountStats> cache_;
};

void add_softmax_chain(double incoming, const Matrix& w, int row, int col, const Matrix& keys, double tau,
                       Matrix& grad) {
  const Eigen::RowVectorXd mean_key = w.row(row) * keys;
  grad.row(row) += incoming * w(row, col) / tau * (keys.row(col) - mean_key);
}

// d log p / d slot-row for the probability p that the row picked `col`,
// scaled and added to `grad`. Columns in `excluded` were unavailable, so p is
// the softmax renormalized over the rest.
void add_log_softmax(double scale, const Matrix& w, int row, int col, const Matrix& keys, double tau,
                     std::span<const int> excluded, Matrix& grad) {
  Eigen::RowVectorXd mean_key = w.row(row) * keys;
  double mass = 1.0;
  for (const int k : excluded) {
    mean_key -= w(row, k) * keys.row(k);
    mass -= w(row, k);
  }
  if (mass > 0.0) mean_key /= mass;
  grad.row(row) += scale / tau * (keys.row(col) - mean_key);
}

struct Draw {
  SelectionResult sel;
  RuleTerms terms;
  const FactCountStats* stats = nullptr;
  double nll = 0.0;
};

}  // namespace

namespace {

// Settles a search result: the noiseless selection is frozen and b0, gamma and
// the embedding follow the pathwise gradient, so restarts are compared at
// convergence rather than mid-search.
void polish(SingleRuleFit& fit, const SelectionResult& sel, StatsCache& cache, const EmbeddingTables& tables,
            const TrainConfig& config) {
  const auto& hyper = config.hyper;
  IntensityParams params;
  params.b0 = fit.b0;
  params.gammas = {fit.gamma};
  params.rules = {fit.rule};
  auto& rule = params.rules[0];

  AdamOptimizer adam(step_sizes_for(params, config));
  std::vector<double> flat;
  std::vector<double> flat_grad;
  ConvergenceMonitor monitor(config);
  for (int epoch = 0; epoch <= config.polish_epochs; ++epoch) {
    const Matrix w = similarity_matrix(rule.static_slots, tables.predicates, hyper.tau);
    const Matrix wr = similarity_matrix(rule.relation_slots, tables.relations, hyper.tau);
    const RuleTerms terms = collect_terms(w, wr, sel);
    const auto& stats = cache.get(sel, terms);
    std::vector<double> phi(static_cast<std::size_t>(terms.num_facts()) + 1);
    std::vector<std::vector<double>> dphi(phi.size(), std::vector<double>(terms.scores.size()));
    for (std::size_t z = 0; z < phi.size(); ++z) {
      phi[z] = feature_value_with_grad(terms, static_cast<int>(z), hyper, dphi[z]);
    }
    const auto eval = single_rule_nll(phi, stats, params.b0, params.gammas[0]);
    if (!std::isfinite(eval.nll)) return;
    if (monitor.observe(eval.nll) && eval.nll < fit.loss) {
      fit.loss = eval.nll;
      fit.b0 = params.b0;
      fit.gamma = params.gammas[0];
      fit.rule = rule;
      fit.selection = sel;
    }
    if (monitor.done() || epoch == config.polish_epochs) return;

    GradientBundle grad = GradientBundle::zeros_like(params);
    grad.d_b0 = eval.d_b0;
    grad.d_gammas[0] = eval.d_gamma;
    for (std::size_t k = 0; k < terms.scores.size(); ++k) {
      double incoming = 0.0;
      for (std::size_t z = 0; z < phi.size(); ++z) incoming += eval.d_lambda[z] * dphi[z][k];
      incoming *= params.gammas[0];
      const auto& sc = terms.scores[k];
      if (sc.relational) {
        add_softmax_chain(incoming, wr, sc.row, sc.col, tables.relations, hyper.tau, grad.d_relation[0]);
      } else {
        add_softmax_chain(incoming, w, sc.row, sc.col, tables.predicates, hyper.tau, grad.d_static[0]);
      }
    }
    pack(params, flat);
    pack(grad, flat_grad);
    adam.step(flat, flat_grad);
    unpack(flat, params);
  }
}


// Moves the embedding so that its noiseless reading becomes `target`, by
// swapping the winning logit with the target's (or pushing every logit
// below the dummy's zero).
RuleEmbedding force_selection(const RuleEmbedding& rule, const EmbeddingTables& tables,
                              const SelectionResult& current, const SelectionResult& target, double tau) {
  RuleEmbedding out = rule;
  const double margin = 3.0 * tau;
  for (int l = 0; l < out.length(); ++l) {
    const int from = current.static_idx[static_cast<std::size_t>(l)];
    const int to = target.static_idx[static_cast<std::size_t>(l)];
    if (from == to) continue;
    auto row = out.static_slots.row(l);
    const Eigen::RowVectorXd logits = row * tables.predicates.transpose();
    if (to == kDummyPredicate) {
      row.array() -= std::max(0.0, logits.maxCoeff()) + margin;
    } else {
      row(to - 1) = std::max(0.0, logits.maxCoeff()) + margin;
    }
  }
  for (Eigen::Index r = 0; r < out.relation_slots.rows(); ++r) {
    const auto from = static_cast<int>(current.relation_idx[static_cast<std::size_t>(r)]);
    const auto to = static_cast<int>(target.relation_idx[static_cast<std::size_t>(r)]);
    if (from != to) std::swap(out.relation_slots(r, from), out.relation_slots(r, to));
  }
  return out;
}

// Greedy single-slot moves around a polished fit: every other predicate
// (or the dummy) per predicate slot and every other relation per live
// relation slot. The best move is taken while it buys more than
// `min_gain` nats.
void local_search(SingleRuleFit& fit, StatsCache& cache, const EmbeddingTables& tables,
                  const TrainConfig& config, double min_gain) {
  const auto& hyper = config.hyper;
  const auto pairs = slot_pairs(config.max_rule_length);
  for (int round = 0; round < config.local_search_rounds; ++round) {
    const SelectionResult current = fit.selection;
    std::vector<SelectionResult> moves;
    for (int l = 0; l < config.max_rule_length; ++l) {
      for (int p = 0; p <= tables.num_predicates(); ++p) {
        auto m = current;
        m.static_idx[static_cast<std::size_t>(l)] = p;
        if (p == current.static_idx[static_cast<std::size_t>(l)]) continue;
        if (p != kDummyPredicate && hyper.distinct_slots &&
            std::count(m.static_idx.begin(), m.static_idx.end(), p) > 1) {
          continue;
        }
        moves.push_back(std::move(m));
      }
    }
    for (std::size_t r = 0; r < pairs.size(); ++r) {
      const auto [a, b] = pairs[r];
      if (current.static_idx[static_cast<std::size_t>(a)] == kDummyPredicate ||
          current.static_idx[static_cast<std::size_t>(b)] == kDummyPredicate) {
        continue;
      }
      for (int k = 0; k < kNumRelations; ++k) {
        if (static_cast<Relation>(k) == current.relation_idx[r]) continue;
        auto m = current;
        m.relation_idx[r] = static_cast<Relation>(k);
        moves.push_back(std::move(m));
      }
    }

    SingleRuleFit best_move;
    best_move.loss = fit.loss - min_gain;
    bool improved = false;
    for (const auto& m : moves) {
      SingleRuleFit cand = fit;
      cand.rule = force_selection(fit.rule, tables, argmax_select(fit.rule, tables, hyper.distinct_slots), m,
                                  hyper.tau);
      cand.selection = m;
      cand.loss = std::numeric_limits<double>::infinity();
      polish(cand, m, cache, tables, config);
      if (cand.loss < best_move.loss) {
        best_move = cand;
        improved = true;
      }
    }
    if (!improved) return;
    best_move.epochs = fit.epochs;
    fit = best_move;
  }
}

}  // namespace

SingleRuleFit fit_single_rule(const GroundedCorpus& corpus, std::span<const std::size_t> subset,
                              const EmbeddingTables& tables, const TrainConfig& config, Rng& rng) {
  if (corpus.size() == 0) {
    throw ConfigError("cannot fit a rule on an empty dataset");
  }
  const auto& hyper = config.hyper;
  StatsCache cache(corpus, subset, hyper.delta, config.workers);

  IntensityParams params;
  params.b0 = config.init_b0;
  params.gammas = {config.init_gamma};
  params.rules = {RuleEmbedding::random(config.max_rule_length, tables, rng, config.init_scale)};
  auto& rule = params.rules[0];
  rule.static_slots.array() -= config.init_offset;

  AdamOptimizer adam(step_sizes_for(params, config));
  std::vector<double> flat;
  std::vector<double> flat_grad;
  ConvergenceMonitor monitor(config);
  const int samples = std::max(1, config.samples_per_step);
  std::vector<Draw> draws(static_cast<std::size_t>(samples));
  std::vector<double> dphi;

  SingleRuleFit best;
  best.loss = std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const Matrix w = similarity_matrix(rule.static_slots, tables.predicates, hyper.tau);
    const Matrix wr = similarity_matrix(rule.relation_slots, tables.relations, hyper.tau);
    GradientBundle grad = GradientBundle::zeros_like(params);

    for (auto& d : draws) {
      d.sel = gumbel_select(rule, tables, hyper.tau, rng, hyper.distinct_slots);
      d.terms = collect_terms(w, wr, d.sel);
      d.stats = &cache.get(d.sel, d.terms);
      const int facts = d.terms.num_facts();
      std::vector<double> phi(static_cast<std::size_t>(facts) + 1);
      std::vector<std::vector<double>> dphi_z(phi.size());
      for (int z = 0; z <= facts; ++z) {
        dphi_z[z].resize(d.terms.scores.size());
        phi[z] = feature_value_with_grad(d.terms, z, hyper, dphi_z[z]);
      }
      const auto eval = single_rule_nll(phi, *d.stats, params.b0, params.gammas[0]);
      if (!std::isfinite(eval.nll)) {
        best.diverged = true;
        best.epochs = epoch;
        return best;
      }
      d.nll = eval.nll;
      grad.d_b0 += eval.d_b0 / samples;
      grad.d_gammas[0] += eval.d_gamma / samples;
      for (std::size_t k = 0; k < d.terms.scores.size(); ++k) {
        double incoming = 0.0;
        for (std::size_t z = 0; z < phi.size(); ++z) incoming += eval.d_lambda[z] * dphi_z[z][k];
        incoming *= params.gammas[0] / samples;
        const auto& sc = d.terms.scores[k];
        if (sc.relational) {
          add_softmax_chain(incoming, wr, sc.row, sc.col, tables.relations, hyper.tau, grad.d_relation[0]);
        } else {
          add_softmax_chain(incoming, w, sc.row, sc.col, tables.predicates, hyper.tau, grad.d_static[0]);
        }
      }
    }

    // Score-function term with a leave-one-out baseline.
    if (config.score_weight > 0.0 && samples > 1) {
      double total = 0.0;
      for (const auto& d : draws) total += d.nll;
      for (const auto& d : draws) {
        const double adv = config.score_weight * (d.nll - (total - d.nll) / (samples - 1)) / samples;
        std::vector<int> taken;
        for (const auto& sc : d.terms.scores) {
          if (sc.relational) {
            add_log_softmax(adv, wr, sc.row, sc.col, tables.relations, hyper.tau, {}, grad.d_relation[0]);
          } else {
            add_log_softmax(adv, w, sc.row, sc.col, tables.predicates, hyper.tau, taken, grad.d_static[0]);
            if (hyper.distinct_slots && sc.col != 0) taken.push_back(sc.col);
          }
        }
      }
    }

    pack(params, flat);
    pack(grad, flat_grad);
    adam.step(flat, flat_grad);
    unpack(flat, params);

    const SelectionResult sel = argmax_select(rule, tables, hyper.distinct_slots);
    const Matrix w_now = similarity_matrix(rule.static_slots, tables.predicates, hyper.tau);
    const Matrix wr_now = similarity_matrix(rule.relation_slots, tables.relations, hyper.tau);
    const RuleTerms terms = collect_terms(w_now, wr_now, sel);
    std::vector<double> phi(static_cast<std::size_t>(terms.num_facts()) + 1);
    for (std::size_t z = 0; z < phi.size(); ++z) phi[z] = feature_value(terms, static_cast<int>(z), hyper);
    const double loss = single_rule_nll(phi, cache.get(sel, terms), params.b0, params.gammas[0]).nll;
    if (!std::isfinite(loss)) {
      best.diverged = true;
      best.epochs = epoch;
      return best;
    }
    if (monitor.observe(loss)) {
      best.rule = rule;
      best.selection = sel;
      best.gamma = params.gammas[0];
      best.b0 = params.b0;
      best.loss = loss;
    }
    best.epochs = epoch;
    if (monitor.done()) break;
  }
  if (std::isfinite(best.loss) && config.polish_epochs > 0) {
    polish(best, best.selection, cache, tables, config);
    if (config.local_search_rounds > 0) {
      local_search(best, cache, tables, config, std::log(tables.num_predicates() + 1.0));
    }
  }
  return best;
}

RestartResult best_of_restarts(const GroundedCorpus& corpus, std::span<const std::size_t> subset,
                               const EmbeddingTables& tables, const TrainConfig& config,
                               std::uint64_t seed) {
  std::vector<SingleRuleFit> fits(static_cast<std::size_t>(config.restarts));
  // Restarts run side by side; each evaluates its own likelihood serially.
  TrainConfig inner = config;
  inner.workers = 1;
  parallel_for(fits.size(), config.workers, [&](std::size_t r) {
    Rng rng(child_seed(seed, r));
    fits[r] = fit_single_rule(corpus, subset, tables, inner, rng);
  });

  RestartResult out;
  const SingleRuleFit* best = nullptr;
  for (const auto& fit : fits) {
    out.losses.push_back(fit.diverged ? std::numeric_limits<double>::infinity() : fit.loss);
    if (!fit.diverged && (!best || fit.loss < best->loss)) best = &fit;
  }
  if (!best) throw NumericalError("all restarts diverged");
  out.best = *best;
  return out;
}

double rule_description_length(int max_length, int num_predicates) {
  const double slots = static_cast<double>(max_length);
  const double pairs = slots * (slots - 1.0) / 2.0;
  return slots * std::log(num_predicates + 1.0) + pairs * std::log(static_cast<double>(kNumRelations));
}

bool is_explained(const EventSequence& seq, const RuleFormula& formula, double delta) {
  return std::any_of(seq.targets.begin(), seq.targets.end(),
                     [&](double t) { return formula_holds(formula, seq, t, delta); });
}

CoverResult sequential_cover(const Dataset& data, const TrainConfig& config, CoverObserver observer,
                             void* observer_ctx) {
  config.validate();
  if (data.empty()) throw ConfigError("cannot learn rules from an empty dataset");
  const GroundedCorpus corpus(data);
  const auto tables = EmbeddingTables::one_hot(data.num_predicates);

  CoverResult out;
  std::vector<std::size_t> remaining(data.size());
  std::iota(remaining.begin(), remaining.end(), 0);
  double last_b0 = config.init_b0;

  for (int iter = 0; iter < config.max_rules && !remaining.empty(); ++iter) {
    const auto fitted = best_of_restarts(corpus, remaining, tables, config,
                                         child_seed(config.seed, static_cast<std::uint64_t>(iter)));
    auto learned =
        make_learned_rule(fitted.best.rule, fitted.best.selection, fitted.best.gamma, tables, config.hyper);
    last_b0 = fitted.best.b0;

    CoverStep step;
    step.formula = learned.formula;
    step.loss = fitted.best.loss;
    step.remaining = remaining.size();
    step.gain = base_only_nll(corpus, remaining) - step.loss;

    const bool duplicate = std::any_of(out.rules.rules.begin(), out.rules.rules.end(), [&](const auto& r) {
      return r.formula.same_logic(learned.formula);
    });
    if (learned.formula.empty()) {
      step.note = "empty rule";
    } else if (learned.formula.weight < config.weight_threshold) {
      step.note = "weight below threshold";
    } else if (config.require_gain && step.gain < rule_description_length(config.max_rule_length, data.num_predicates)) {
      step.note = "gain below description length";
    } else if (duplicate) {
      step.note = "duplicate rule";
    } else {
      std::vector<std::size_t> still;
      for (const auto s : remaining) {
        if (is_explained(data.sequences[s], learned.formula, config.hyper.delta)) {
          ++step.explained;
        } else {
          still.push_back(s);
        }
      }
      if (step.explained == 0) {
        step.note = "explains no remaining sequence";
      } else {
        step.accepted = true;
        remaining = std::move(still);
        out.rules.rules.push_back(std::move(learned));
        if (out.rules.rules.size() == 1) out.rules.b0 = fitted.best.b0;
      }
    }
    if (observer) observer(step, observer_ctx);
    out.steps.push_back(step);
    if (!step.accepted) break;
  }
  if (out.rules.rules.empty()) out.rules.b0 = last_b0;
  return out;
}

RuleSet joint_refine(const Dataset& data, const RuleSet& rules, const TrainConfig& config) {
  config.validate();
  if (rules.rules.empty()) return rules;
  const GroundedCorpus corpus(data);
  const auto tables = EmbeddingTables::one_hot(data.num_predicates);
  const auto selections = rules.selections();

  IntensityParams params = rules.params();
  auto order = all_indices(corpus, {});
  const std::size_t batch = batch_size_for(order.size(), config);
  Rng rng(child_seed(config.seed, 0x7efe5eedULL));

  auto full_nll = [&](const IntensityParams& p) {
    return evaluate_likelihood(p, selections, tables, corpus, {}, config.hyper, false, config.workers).nll;
  };

  IntensityParams best = params;
  double best_loss = full_nll(params);
  AdamOptimizer adam(step_sizes_for(params, config));
  std::vector<double> flat;
  std::vector<double> flat_grad;
  ConvergenceMonitor monitor(config);
  monitor.observe(best_loss);

  for (int epoch = 1; epoch <= config.refine_epochs; ++epoch) {
    if (batch < order.size()) rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t len = std::min(batch, order.size() - start);
      const auto res = evaluate_likelihood(params, selections, tables, corpus,
                                           std::span(order.data() + start, len), config.hyper, true,
                                           config.workers);
      if (!std::isfinite(res.nll)) throw NumericalError("joint refinement diverged");
      pack(params, flat);
      pack(res.grad, flat_grad);
      adam.step(flat, flat_grad);
      unpack(flat, params);
    }
    const double loss = full_nll(params);
    if (!std::isfinite(loss)) throw NumericalError("joint refinement diverged");
    if (monitor.observe(loss)) {
      best = params;
      best_loss = loss;
    }
    if (monitor.done()) break;
  }

  RuleSet out;
  out.b0 = best.b0;
  for (std::size_t f = 0; f < rules.rules.size(); ++f) {
    LearnedRule r = rules.rules[f];
    r.embedding = best.rules[f];
    r.gamma = best.gammas[f];
    r.formula.weight = r.gamma * active_feature(r.embedding, tables, r.selection, config.hyper);
    out.rules.push_back(std::move(r));
  }
  return out;
}

}  // namespace tempologic

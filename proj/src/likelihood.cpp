#include "tempologic/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tempologic/errors.hpp"
#include "tempologic/parallel.hpp"

namespace tempologic {

namespace {

constexpr std::size_t kChunkSize = 256;
constexpr double kInf = std::numeric_limits<double>::infinity();

// Everything about one rule that is fixed for a whole evaluation. Facts are
// 0/1, so the feature and its score gradient are tabulated by the number of
// false facts.
struct RuleCache {
  RuleTerms terms;
  Matrix static_w;
  Matrix relation_w;
  std::vector<double> phi;
  std::vector<std::vector<double>> dphi;
  std::vector<PredicateId> change_preds;
};

std::vector<PredicateId> change_predicates(const RuleTerms& terms) {
  std::vector<PredicateId> preds = terms.static_facts;
  std::sort(preds.begin(), preds.end());
  preds.erase(std::unique(preds.begin(), preds.end()), preds.end());
  return preds;
}

RuleCache build_cache(const RuleEmbedding& rule, const SelectionResult& sel,
                      const EmbeddingTables& tables, const HyperParams& hyper, bool with_gradient) {
  RuleCache cache;
  cache.static_w = similarity_matrix(rule.static_slots, tables.predicates, hyper.tau);
  cache.relation_w = similarity_matrix(rule.relation_slots, tables.relations, hyper.tau);
  cache.terms = collect_terms(cache.static_w, cache.relation_w, sel);
  const int facts = cache.terms.num_facts();
  cache.phi.resize(facts + 1);
  if (with_gradient) cache.dphi.assign(facts + 1, std::vector<double>(cache.terms.scores.size()));
  for (int z = 0; z <= facts; ++z) {
    cache.phi[z] = with_gradient ? feature_value_with_grad(cache.terms, z, hyper, cache.dphi[z])
                                 : feature_value(cache.terms, z, hyper);
  }
  cache.change_preds = change_predicates(cache.terms);
  return cache;
}

struct Piece {
  double start;
  double end;
  int false_facts;
};

// Reused buffers for one worker.
struct Scratch {
  std::vector<std::vector<Piece>> pieces;
  std::vector<double> cuts;
  std::vector<std::size_t> cursor;
  std::vector<int> false_facts;
};

// Splits [0, horizon] at the first occurrences of the rule's predicates.
// On piece (start, end] a fact holds iff its predicates first occurred at or
// before `start`; the leading piece [0, c_1] has none.
void build_pieces(const RuleTerms& terms, std::span<const PredicateId> change_preds,
                  const GroundedCorpus& corpus, std::size_t seq, double delta, std::vector<double>& cuts,
                  std::vector<Piece>& pieces) {
  pieces.clear();
  cuts.clear();
  const double horizon = corpus.horizon(seq);
  for (const auto p : change_preds) {
    const double ft = corpus.first_time(seq, p);
    if (ft < horizon) cuts.push_back(ft);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  auto false_facts_at = [&](double threshold) {
    int count = 0;
    for (const auto p : terms.static_facts) {
      count += corpus.first_time(seq, p) <= threshold ? 0 : 1;
    }
    for (const auto& r : terms.relation_facts) {
      const double a = corpus.first_time(seq, r.first);
      const double b = corpus.first_time(seq, r.second);
      const bool holds = a <= threshold && b <= threshold && relation_holds(r.kind, a, b, delta);
      count += holds ? 0 : 1;
    }
    return count;
  };

  double start = 0.0;
  double threshold = -kInf;
  for (const double cut : cuts) {
    pieces.push_back({start, cut, false_facts_at(threshold)});
    start = cut;
    threshold = cut;
  }
  pieces.push_back({start, horizon, false_facts_at(threshold)});
}

struct ChunkResult {
  double nll = 0.0;
  double d_b0 = 0.0;
  // Per rule, per false-fact count: exposure time and sum of 1/lambda at
  // targets.
  std::vector<std::vector<double>> exposure;
  std::vector<std::vector<double>> inv_rate;
};

void accumulate_sequence(const IntensityParams& params, const std::vector<RuleCache>& caches,
                         const GroundedCorpus& corpus, std::size_t seq, const HyperParams& hyper,
                         Scratch& scratch, ChunkResult& out) {
  const std::size_t n_rules = caches.size();
  const double horizon = corpus.horizon(seq);
  double comp = params.b0 * horizon;
  for (std::size_t f = 0; f < n_rules; ++f) {
    build_pieces(caches[f].terms, caches[f].change_preds, corpus, seq, hyper.delta, scratch.cuts, scratch.pieces[f]);
    for (const auto& pc : scratch.pieces[f]) {
      const double len = pc.end - pc.start;
      comp += params.gammas[f] * caches[f].phi[pc.false_facts] * len;
      out.exposure[f][pc.false_facts] += len;
    }
  }
  std::fill(scratch.cursor.begin(), scratch.cursor.end(), 0);
  double log_sum = 0.0;
  double inv_sum = 0.0;
  for (const double t : corpus.targets(seq)) {
    double lambda = params.b0;
    for (std::size_t f = 0; f < n_rules; ++f) {
      auto& c = scratch.cursor[f];
      const auto& pf = scratch.pieces[f];
      while (c + 1 < pf.size() && t > pf[c].end) ++c;
      scratch.false_facts[f] = pf[c].false_facts;
      lambda += params.gammas[f] * caches[f].phi[pf[c].false_facts];
    }
    log_sum += std::log(lambda);
    const double inv = 1.0 / lambda;
    inv_sum += inv;
    for (std::size_t f = 0; f < n_rules; ++f) out.inv_rate[f][scratch.false_facts[f]] += inv;
  }
  out.nll += comp - log_sum;
  out.d_b0 += horizon - inv_sum;
}

// d w_{row, col} / d slot-row, scaled by the incoming gradient, added to
// `grad_row`.
void chain_softmax(double incoming, const Matrix& w, int row, int col, const Matrix& keys, double tau,
                   Matrix& grad) {
  const Eigen::RowVectorXd mean_key = w.row(row) * keys;
  grad.row(row) += incoming * w(row, col) / tau * (keys.row(col) - mean_key);
}

}  // namespace

void IntensityParams::validate() const {
  if (!(b0 >= 0.0)) throw ConfigError("b0 must be non-negative");
  if (gammas.size() != rules.size()) throw ConfigError("gammas and rules differ in length");
  for (const double g : gammas) {
    if (!(g >= 0.0)) throw ConfigError("rule weights must be non-negative");
  }
}

GradientBundle GradientBundle::zeros_like(const IntensityParams& params) {
  GradientBundle g;
  g.d_gammas.assign(params.num_rules(), 0.0);
  for (const auto& rule : params.rules) {
    g.d_static.push_back(Matrix::Zero(rule.static_slots.rows(), rule.static_slots.cols()));
    g.d_relation.push_back(Matrix::Zero(rule.relation_slots.rows(), rule.relation_slots.cols()));
  }
  return g;
}

GroundedCorpus::GroundedCorpus(const Dataset& data)
    : num_predicates_(data.num_predicates), stride_(static_cast<std::size_t>(data.num_predicates) + 1) {
  horizons_.reserve(data.size());
  first_times_.assign(data.size() * stride_, kInf);
  target_offsets_.reserve(data.size() + 1);
  target_offsets_.push_back(0);
  for (std::size_t s = 0; s < data.size(); ++s) {
    const auto& seq = data.sequences[s];
    horizons_.push_back(seq.horizon);
    first_times_[s * stride_] = -kInf;
    for (const auto& [p, times] : seq.events) {
      if (p >= 1 && p <= num_predicates_ && !times.empty()) first_times_[s * stride_ + p] = times.front();
    }
    target_times_.insert(target_times_.end(), seq.targets.begin(), seq.targets.end());
    target_offsets_.push_back(target_times_.size());
  }
}

FactCountStats fact_count_stats(const RuleTerms& terms, const GroundedCorpus& corpus,
                                std::span<const std::size_t> subset, double delta, int workers) {
  const auto change_preds = change_predicates(terms);
  const std::size_t bins = static_cast<std::size_t>(terms.num_facts()) + 1;
  const std::size_t count = subset.empty() ? corpus.size() : subset.size();
  const std::size_t n_chunks = (count + kChunkSize - 1) / kChunkSize;
  std::vector<FactCountStats> chunks(n_chunks);
  parallel_for(n_chunks, workers, [&](std::size_t c) {
    auto& out = chunks[c];
    out.exposure.assign(bins, 0.0);
    out.targets.assign(bins, 0.0);
    std::vector<double> cuts;
    std::vector<Piece> pieces;
    const std::size_t end = std::min(count, (c + 1) * kChunkSize);
    for (std::size_t i = c * kChunkSize; i < end; ++i) {
      const std::size_t seq = subset.empty() ? i : subset[i];
      build_pieces(terms, change_preds, corpus, seq, delta, cuts, pieces);
      for (const auto& pc : pieces) out.exposure[pc.false_facts] += pc.end - pc.start;
      std::size_t cur = 0;
      for (const double t : corpus.targets(seq)) {
        while (cur + 1 < pieces.size() && t > pieces[cur].end) ++cur;
        out.targets[pieces[cur].false_facts] += 1.0;
      }
    }
  });
  FactCountStats total;
  total.exposure.assign(bins, 0.0);
  total.targets.assign(bins, 0.0);
  for (const auto& ch : chunks) {
    for (std::size_t z = 0; z < bins; ++z) {
      total.exposure[z] += ch.exposure[z];
      total.targets[z] += ch.targets[z];
    }
  }
  return total;
}

LikelihoodResult evaluate_likelihood(const IntensityParams& params,
                                     std::span<const SelectionResult> selections,
                                     const EmbeddingTables& tables, const GroundedCorpus& corpus,
                                     std::span<const std::size_t> subset, const HyperParams& hyper,
                                     bool with_gradient, int workers) {
  const std::size_t n_rules = params.num_rules();
  if (selections.size() != n_rules || params.gammas.size() != n_rules) {
    throw std::invalid_argument("evaluate_likelihood: rules, weights and selections disagree");
  }
  std::vector<RuleCache> caches;
  caches.reserve(n_rules);
  for (std::size_t f = 0; f < n_rules; ++f) {
    caches.push_back(build_cache(params.rules[f], selections[f], tables, hyper, with_gradient));
  }

  const std::size_t count = subset.empty() ? corpus.size() : subset.size();
  const std::size_t n_chunks = (count + kChunkSize - 1) / kChunkSize;
  std::vector<ChunkResult> chunks(n_chunks);
  parallel_for(n_chunks, workers, [&](std::size_t c) {
    auto& out = chunks[c];
    out.exposure.resize(n_rules);
    out.inv_rate.resize(n_rules);
    for (std::size_t f = 0; f < n_rules; ++f) {
      out.exposure[f].assign(caches[f].phi.size(), 0.0);
      out.inv_rate[f].assign(caches[f].phi.size(), 0.0);
    }
    Scratch scratch;
    scratch.pieces.resize(n_rules);
    scratch.cursor.resize(n_rules);
    scratch.false_facts.resize(n_rules);
    const std::size_t end = std::min(count, (c + 1) * kChunkSize);
    for (std::size_t i = c * kChunkSize; i < end; ++i) {
      accumulate_sequence(params, caches, corpus, subset.empty() ? i : subset[i], hyper, scratch, out);
    }
  });

  LikelihoodResult result;
  ChunkResult total;
  total.exposure.resize(n_rules);
  total.inv_rate.resize(n_rules);
  for (std::size_t f = 0; f < n_rules; ++f) {
    total.exposure[f].assign(caches[f].phi.size(), 0.0);
    total.inv_rate[f].assign(caches[f].phi.size(), 0.0);
  }
  for (const auto& ch : chunks) {
    total.nll += ch.nll;
    total.d_b0 += ch.d_b0;
    for (std::size_t f = 0; f < n_rules; ++f) {
      for (std::size_t z = 0; z < ch.exposure[f].size(); ++z) {
        total.exposure[f][z] += ch.exposure[f][z];
        total.inv_rate[f][z] += ch.inv_rate[f][z];
      }
    }
  }
  result.nll = total.nll;
  if (!with_gradient) return result;

  auto& grad = result.grad;
  grad = GradientBundle::zeros_like(params);
  grad.d_b0 = total.d_b0;
  for (std::size_t f = 0; f < n_rules; ++f) {
    const auto& cache = caches[f];
    const std::size_t n_scores = cache.terms.scores.size();
    std::vector<double> d_score(n_scores, 0.0);
    for (std::size_t z = 0; z < cache.phi.size(); ++z) {
      const double net = total.exposure[f][z] - total.inv_rate[f][z];
      grad.d_gammas[f] += cache.phi[z] * net;
      for (std::size_t k = 0; k < n_scores; ++k) d_score[k] += params.gammas[f] * net * cache.dphi[z][k];
    }
    for (std::size_t k = 0; k < n_scores; ++k) {
      const auto& s = cache.terms.scores[k];
      if (s.relational) {
        chain_softmax(d_score[k], cache.relation_w, s.row, s.col, tables.relations, hyper.tau,
                      grad.d_relation[f]);
      } else {
        chain_softmax(d_score[k], cache.static_w, s.row, s.col, tables.predicates, hyper.tau,
                      grad.d_static[f]);
      }
    }
  }
  return result;
}

double intensity_at(const IntensityParams& params, std::span<const SelectionResult> selections,
                    const EmbeddingTables& tables, const EventSequence& seq, double t,
                    const HyperParams& hyper) {
  double lambda = params.b0;
  for (std::size_t f = 0; f < params.num_rules(); ++f) {
    lambda += params.gammas[f] * combined_feature(params.rules[f], tables, selections[f], seq, t, hyper);
  }
  return lambda;
}

double compensator(const IntensityParams& params, std::span<const SelectionResult> selections,
                   const EmbeddingTables& tables, const EventSequence& seq, const HyperParams& hyper) {
  const auto breaks = breakpoints(seq);
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    const double mid = 0.5 * (breaks[i] + breaks[i + 1]);
    total += intensity_at(params, selections, tables, seq, mid, hyper) * (breaks[i + 1] - breaks[i]);
  }
  return total;
}

double neg_log_likelihood(const IntensityParams& params, std::span<const SelectionResult> selections,
                          const EmbeddingTables& tables, const Dataset& data,
                          const HyperParams& hyper, int workers) {
  const GroundedCorpus corpus(data);
  const double nll =
      evaluate_likelihood(params, selections, tables, corpus, {}, hyper, false, workers).nll;
  if (!std::isfinite(nll)) {
    throw NumericalError("negative log-likelihood is not finite (zero intensity at a target event?)");
  }
  return nll;
}

GradientBundle gradient(const IntensityParams& params, std::span<const SelectionResult> selections,
                        const EmbeddingTables& tables, const Dataset& data, const HyperParams& hyper,
                        int workers) {
  const GroundedCorpus corpus(data);
  return evaluate_likelihood(params, selections, tables, corpus, {}, hyper, true, workers).grad;
}

double predict_next_time(const IntensityParams& params, std::span<const SelectionResult> selections,
                         const EmbeddingTables& tables, const EventSequence& seq, double t_last,
                         const HyperParams& hyper) {
  std::vector<double> cuts;
  for (const auto& [p, times] : seq.events) {
    for (const double t : times) {
      if (t > t_last && t < seq.horizon) cuts.push_back(t);
    }
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  // Survival-weighted integral: sum over segments of S(a) (1 - e^{-r len}) / r.
  double mass = 0.0;  // integrated intensity since t_last
  double expected_gap = 0.0;
  double start = t_last;
  auto add_segment = [&](double end) {
    const double len = end - start;
    if (len <= 0.0) return;
    const double rate = intensity_at(params, selections, tables, seq, 0.5 * (start + end), hyper);
    const double survival = std::exp(-mass);
    expected_gap += rate > 0.0 ? survival * -std::expm1(-rate * len) / rate : survival * len;
    mass += rate * len;
    start = end;
  };
  for (const double cut : cuts) add_segment(cut);
  add_segment(std::max(seq.horizon, t_last));
  const double tail_rate = intensity_at(params, selections, tables, seq, kInf, hyper);
  if (!(tail_rate > 0.0)) return kInf;
  expected_gap += std::exp(-mass) / tail_rate;
  return t_last + expected_gap;
}

}  // namespace tempologic

#pragma once

#include <span>
#include <vector>

#include "tempologic/event_store.hpp"
#include "tempologic/features.hpp"

namespace tempologic {

// lambda(t) = b0 + sum_f gamma_f * phi_f(H_t-)
struct IntensityParams {
  double b0 = 0.0;
  std::vector<double> gammas;
  std::vector<RuleEmbedding> rules;

  std::size_t num_rules() const { return rules.size(); }
  void validate() const;
};

// d NLL / d theta, shaped like IntensityParams.
struct GradientBundle {
  double d_b0 = 0.0;
  std::vector<double> d_gammas;
  std::vector<Matrix> d_static;
  std::vector<Matrix> d_relation;

  static GradientBundle zeros_like(const IntensityParams& params);
};

// Columnar copy of a dataset holding what the likelihood needs: the first
// occurrence of every predicate (every grounding time is a first
// occurrence) and the target times.
class GroundedCorpus {
 public:
  explicit GroundedCorpus(const Dataset& data);

  std::size_t size() const { return horizons_.size(); }
  int num_predicates() const { return num_predicates_; }
  double horizon(std::size_t seq) const { return horizons_[seq]; }
  // +inf when the predicate never occurs, -inf for the dummy.
  double first_time(std::size_t seq, PredicateId p) const {
    return first_times_[seq * stride_ + static_cast<std::size_t>(p)];
  }
  std::span<const double> targets(std::size_t seq) const {
    return {target_times_.data() + target_offsets_[seq],
            target_offsets_[seq + 1] - target_offsets_[seq]};
  }

 private:
  int num_predicates_ = 0;
  std::size_t stride_ = 1;
  std::vector<double> horizons_;
  std::vector<double> first_times_;
  std::vector<std::size_t> target_offsets_;
  std::vector<double> target_times_;
};

struct LikelihoodResult {
  double nll = 0.0;
  GradientBundle grad;
};

// NLL (and optionally its gradient) over the listed sequences, or over all
// of them when `subset` is empty. Work is split into fixed chunks reduced in
// order, so the result does not depend on `workers`.
LikelihoodResult evaluate_likelihood(const IntensityParams& params,
                                     std::span<const SelectionResult> selections,
                                     const EmbeddingTables& tables, const GroundedCorpus& corpus,
                                     std::span<const std::size_t> subset, const HyperParams& hyper,
                                     bool with_gradient, int workers = 1);

// Exposure time and target count of one rule, binned by the number of false
// facts. They depend only on which facts the rule selects, so the NLL of
// lambda = b0 + gamma * phi[z] is sum_z (b0 + gamma phi[z]) exposure[z] -
// targets[z] log(b0 + gamma phi[z]) for any b0, gamma and scores.
struct FactCountStats {
  std::vector<double> exposure;
  std::vector<double> targets;
};

FactCountStats fact_count_stats(const RuleTerms& terms, const GroundedCorpus& corpus,
                                std::span<const std::size_t> subset, double delta, int workers = 1);

double intensity_at(const IntensityParams& params, std::span<const SelectionResult> selections,
                    const EmbeddingTables& tables, const EventSequence& seq, double t,
                    const HyperParams& hyper);

// Exact integral of the intensity over [0, horizon], summed over the
// breakpoint segments on which every feature is constant.
double compensator(const IntensityParams& params, std::span<const SelectionResult> selections,
                   const EmbeddingTables& tables, const EventSequence& seq, const HyperParams& hyper);

// Throws NumericalError when the result is not finite.
double neg_log_likelihood(const IntensityParams& params, std::span<const SelectionResult> selections,
                          const EmbeddingTables& tables, const Dataset& data,
                          const HyperParams& hyper, int workers = 1);

GradientBundle gradient(const IntensityParams& params, std::span<const SelectionResult> selections,
                        const EmbeddingTables& tables, const Dataset& data, const HyperParams& hyper,
                        int workers = 1);

// E[next target time | history up to t_last]. Body events are exogenous
// covariates, so the intensity follows the sequence's breakpoints after
// t_last and stays at its final value past the horizon.
double predict_next_time(const IntensityParams& params, std::span<const SelectionResult> selections,
                         const EmbeddingTables& tables, const EventSequence& seq, double t_last,
                         const HyperParams& hyper);

}  // namespace tempologic

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tempologic/event_store.hpp"
#include "tempologic/features.hpp"
#include "tempologic/likelihood.hpp"
#include "tempologic/rule_formula.hpp"

namespace tempologic {

struct TrainConfig {
  // Sharper soft-min than the feature default: at rho = 20 the leak of an
  // unsatisfied rule is comparable to the base rate.
  HyperParams hyper{.rho = 500.0};
  int max_rule_length = 3;
  // Step size for rule embeddings; b0 and weights use rate_learning_rate.
  double learning_rate = 0.005;
  double rate_learning_rate = 0.01;
  int max_epochs = 4000;
  int min_epochs = 1000;
  int patience = 200;
  double tolerance = 1e-5;
  // Datasets up to full_batch_limit sequences train full-batch.
  std::size_t batch_size = 1024;
  std::size_t full_batch_limit = 5000;
  int restarts = 4;
  double weight_threshold = 0.05;
  int max_rules = 10;
  int refine_epochs = 200;
  double init_scale = 0.5;
  // Subtracted from the initial predicate slots so the dummy starts likely
  // and rules grow from the empty body.
  double init_offset = 0.0;
  double init_gamma = 0.1;
  double init_b0 = 0.05;
  // Gumbel draws averaged per step.
  int samples_per_step = 32;
  // Weight of the score-function term on the selection logits (0 = pathwise
  // gradient only).
  double score_weight = 0.5;
  // Stop covering when a rule's NLL gain over a constant rate is below the
  // nats needed to name it (see rule_description_length).
  bool require_gain = true;
  // Epochs spent settling each restart on its frozen noiseless selection.
  int polish_epochs = 500;
  // Rounds of greedy single-slot moves after polishing (0 = off).
  int local_search_rounds = 3;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const;
};

struct SingleRuleFit {
  RuleEmbedding rule;
  // Selection the loss was computed with; polishing can move the embedding
  // without changing it.
  SelectionResult selection;
  double gamma = 0.0;
  double b0 = 0.0;
  double loss = 0.0;  // noiseless NLL on the fitted sequences
  int epochs = 0;
  bool diverged = false;
};

struct LearnedRule {
  RuleFormula formula;  // weight = gamma * feature value when fully satisfied
  RuleEmbedding embedding;
  SelectionResult selection;  // noiseless selection the formula was read from
  double gamma = 0.0;
};

struct RuleSet {
  double b0 = 0.0;
  std::vector<LearnedRule> rules;

  IntensityParams params() const;
  std::vector<SelectionResult> selections() const;
};

// Adam with per-entry step sizes.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<double> step_sizes, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step(std::span<double> params, std::span<const double> grad);

 private:
  std::vector<double> step_sizes_;
  std::vector<double> m_;
  std::vector<double> v_;
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
};

// Interpreted formula with its effective weight.
LearnedRule make_learned_rule(const RuleEmbedding& rule, double gamma, const EmbeddingTables& tables,
                              const HyperParams& hyper);
// Same, read from a given (frozen) selection.
LearnedRule make_learned_rule(const RuleEmbedding& rule, const SelectionResult& selection, double gamma,
                              const EmbeddingTables& tables, const HyperParams& hyper);

// NLL of lambda = b0 + gamma * phi[z] from per-bin statistics, with
// d NLL / d lambda per bin and the b0 / gamma gradients.
struct SingleRuleNll {
  double nll = 0.0;
  double d_b0 = 0.0;
  double d_gamma = 0.0;
  std::vector<double> d_lambda;
};
SingleRuleNll single_rule_nll(std::span<const double> phi, const FactCountStats& stats, double b0,
                              double gamma);

// Fits lambda = b0 + gamma * phi_f on `subset` (all sequences when empty).
SingleRuleFit fit_single_rule(const GroundedCorpus& corpus, std::span<const std::size_t> subset,
                              const EmbeddingTables& tables, const TrainConfig& config, Rng& rng);

struct RestartResult {
  SingleRuleFit best;
  std::vector<double> losses;  // per restart, in restart order
};

// Throws NumericalError if every restart diverges.
RestartResult best_of_restarts(const GroundedCorpus& corpus, std::span<const std::size_t> subset,
                               const EmbeddingTables& tables, const TrainConfig& config,
                               std::uint64_t seed);

// ln of the number of selections a rule embedding can express: the
// smallest NLL gain a rule must buy to be worth naming.
double rule_description_length(int max_length, int num_predicates);

// True iff some target event finds the formula fully satisfied.
bool is_explained(const EventSequence& seq, const RuleFormula& formula, double delta);

struct CoverStep {
  RuleFormula formula;
  double loss = 0.0;
  // NLL improvement over a constant rate on the remaining sequences.
  double gain = 0.0;
  std::size_t remaining = 0;
  std::size_t explained = 0;
  bool accepted = false;
  std::string note;
};

struct CoverResult {
  RuleSet rules;
  std::vector<CoverStep> steps;
};

// Optional per-step hook, e.g. for progress output.
using CoverObserver = void (*)(const CoverStep&, void*);

CoverResult sequential_cover(const Dataset& data, const TrainConfig& config,
                             CoverObserver observer = nullptr, void* observer_ctx = nullptr);

// Jointly optimizes all rules with selections frozen. Never returns a model
// with higher full-data NLL than the input.
RuleSet joint_refine(const Dataset& data, const RuleSet& rules, const TrainConfig& config);

}  // namespace tempologic

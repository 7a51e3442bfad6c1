#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tempologic/induction.hpp"
#include "tempologic/model_io.hpp"
#include "tempologic/synthetic.hpp"

namespace tempologic {

struct WeightPair {
  RuleFormula formula;  // canonical logic, truth weight
  double learned = 0.0;
};

// Pairing of learned formulas with the truth by exact logical identity
// (weights ignored).
struct RuleMatching {
  std::vector<WeightPair> matched;
  std::vector<RuleFormula> missed;    // truth rules with no identical learned rule
  std::vector<RuleFormula> spurious;  // learned rules matching no truth rule
};

RuleMatching match_rules(std::span<const RuleFormula> learned, std::span<const RuleFormula> truth);
RuleMatching match_rules(const RuleSet& learned, std::span<const RuleFormula> truth);

// matched / |truth|; 1 for an empty truth list.
double exact_match_accuracy(const RuleSet& learned, std::span<const RuleFormula> truth);
// Mean |learned - truth| weight over matched rules; nullopt when none match.
std::optional<double> weight_mae(const RuleSet& learned, std::span<const RuleFormula> truth);

// Mean |predicted - actual| over every target event, each predicted from
// the history up to the previous target (0 for the first). Errors are
// summed in sorted order, so the result ignores sequence order and worker
// count. Throws ConfigError when the set holds no target event.
double event_mae(const IntensityParams& params, std::span<const SelectionResult> selections,
                 const EmbeddingTables& tables, const Dataset& test_set, const HyperParams& hyper,
                 int workers = 1);

// Constant-rate model: b0 is the maximum-likelihood rate on `data`.
IntensityParams base_only_params(const Dataset& data);

struct DataSplit {
  Dataset train;
  Dataset test;
  std::vector<std::size_t> test_indices;  // positions in the original dataset
};

// Seeded split by sequence; round(n * test_fraction) sequences go to test.
DataSplit split_dataset(const Dataset& data, double test_fraction, std::uint64_t seed);

struct EvalReport {
  int repetition = 0;
  std::uint64_t seed = 0;
  std::optional<double> accuracy;  // absent without ground truth
  std::optional<double> weight_mae;
  std::optional<double> event_mae;       // absent without a test split
  std::optional<double> base_event_mae;  // constant-rate comparator
  RuleMatching matching;
  std::vector<RuleFormula> learned;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

// Scores a trained model against optional truth and an optional test set.
EvalReport evaluate_model(const TrainedModel& model, const std::optional<std::vector<RuleFormula>>& truth,
                          const Dataset* test_set, int workers = 1);

struct ExperimentOptions {
  std::size_t num_sequences = 1000;
  int repetitions = 1;
  std::uint64_t seed = 0;
  // Fraction held out for event MAE; 0 trains on everything and skips it.
  double test_fraction = 0.0;
};

// Trained rule set from the full pipeline: sequential_cover + joint_refine.
TrainedModel train_model(const Dataset& data, const TrainConfig& config,
                         CoverObserver observer = nullptr, void* observer_ctx = nullptr);

// Repetition r draws its data and training seeds from child_seed(seed, r).
std::vector<EvalReport> run_experiment(const GroundTruthSpec& spec, const TrainConfig& config,
                                       const ExperimentOptions& options);

struct ExperimentSummary {
  double mean_accuracy = 0.0;
  std::optional<double> mean_weight_mae;  // over all matched rules
  std::optional<double> mean_event_mae;
  double mean_seconds = 0.0;
  int exact_repetitions = 0;  // repetitions with accuracy 1

  nlohmann::json to_json() const;
};

ExperimentSummary summarize(std::span<const EvalReport> reports);

// repetition,accuracy,weight_mae,event_mae,seconds (empty cell = absent).
std::string reports_to_csv(std::span<const EvalReport> reports);

}  // namespace tempologic

#include <algorithm>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "tempologic/errors.hpp"
#include "tempologic/evaluation.hpp"
#include "tempologic/synthetic.hpp"
#include "test_util.hpp"

using namespace tempologic;

namespace {

// E|X - 1/lambda| for X ~ Exp(lambda = 0.02), from oracle_values.py.
constexpr double kExponentialMeanPredictorMae = 36.787944117144232;

RuleSet learned_set(const std::vector<std::string>& texts) {
  RuleSet set;
  for (const auto& text : texts) {
    LearnedRule r;
    r.formula = parse_rule(text);
    set.rules.push_back(r);
  }
  return set;
}

std::vector<RuleFormula> formulas(const std::vector<std::string>& texts) {
  std::vector<RuleFormula> out;
  for (const auto& text : texts) out.push_back(parse_rule(text));
  return out;
}

}  // namespace

TEST(Evaluation, ExtraRelationIsNotAMatch) {
  const auto learned = learned_set({"Y <- X1 ^ X2 ^ X3 ^ (X1 before X2) ^ (X1 before X3) @ 0.4"});
  const auto truth = formulas({"Y <- X1 ^ X2 ^ X3 ^ (X1 before X2) @ 0.4"});
  EXPECT_EQ(exact_match_accuracy(learned, truth), 0.0);
  const auto m = match_rules(learned, truth);
  EXPECT_EQ(m.missed.size(), 1u);
  EXPECT_EQ(m.spurious.size(), 1u);
}

TEST(Evaluation, MatchIsSymmetricUnderRelationRewrite) {
  const auto learned = learned_set({"Y <- X4 ^ X5 ^ (X5 before X4) @ 0.8"});
  const auto truth = formulas({"Y <- X4 ^ X5 ^ (X4 after X5) @ 0.8"});
  EXPECT_EQ(exact_match_accuracy(learned, truth), 1.0);
}

TEST(Evaluation, EmptyLearnedSet) {
  const auto truth = *GroundTruthSpec::preset("group3");
  EXPECT_EQ(exact_match_accuracy(RuleSet{}, truth.truth_formulas()), 0.0);
  EXPECT_FALSE(weight_mae(RuleSet{}, truth.truth_formulas()));
  EXPECT_EQ(exact_match_accuracy(RuleSet{}, {}), 1.0);
}

TEST(Evaluation, WeightMaeExamples) {
  const auto truth = formulas({"Y <- X1 ^ X2 ^ X3 ^ (X1 before X2) @ 0.40", "Y <- X4 ^ X5 ^ (X4 after X5) @ 0.80"});
  auto learned = learned_set({"Y <- X4 ^ X5 ^ (X4 after X5) @ 0.79", "Y <- X1 ^ X2 ^ X3 ^ (X1 before X2) @ 0.40"});
  EXPECT_NEAR(*weight_mae(learned, truth), 0.005, 1e-12);
  learned = learned_set({"Y <- X4 ^ X5 ^ (X4 after X5) @ 0.80", "Y <- X1 ^ X2 ^ X3 ^ (X1 before X2) @ 0.40"});
  EXPECT_NEAR(*weight_mae(learned, truth), 0.0, 1e-15);
  // Only matched rules count; the missed rule is reported, not scored.
  learned = learned_set({"Y <- X1 ^ X2 ^ X3 ^ (X1 before X2) @ 0.41"});
  EXPECT_NEAR(*weight_mae(learned, truth), 0.01, 1e-12);
  EXPECT_EQ(exact_match_accuracy(learned, truth), 0.5);
}

TEST(EvaluationProperty, AccuracyInvariants) {
  const auto truth = GroundTruthSpec::preset("group3")->truth_formulas();
  Rng rng(1);
  const std::vector<std::string> pool{"Y <- X1 ^ X2 ^ X3 @ 0.4", "Y <- X4 ^ X5 ^ (X5 before X4) @ 0.8",
                                      "Y <- X6 ^ X7 ^ (X6 before X7) @ 1.2", "Y <- X6 ^ X7 @ 1.2",
                                      "Y <- X1 ^ X2 @ 0.4"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::string> picked;
    for (const auto& p : pool) {
      if (rng.uniform() < 0.5) picked.push_back(p);
    }
    const auto learned = learned_set(picked);
    const auto m = match_rules(learned, truth);
    const double acc = exact_match_accuracy(learned, truth);
    EXPECT_EQ(m.matched.size() + m.missed.size(), truth.size());
    EXPECT_EQ(m.matched.size() + m.spurious.size(), picked.size());
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
    EXPECT_EQ(acc == 1.0, m.missed.empty());
  }
}

TEST(Evaluation, BaseOnlyParamsIsMaximumLikelihood) {
  Dataset data;
  data.num_predicates = 1;
  EventSequence a;
  a.horizon = 10.0;
  a.targets = {1.0, 2.0, 3.0};
  EventSequence b;
  b.horizon = 30.0;
  b.targets = {4.0};
  data.sequences = {a, b};
  EXPECT_DOUBLE_EQ(base_only_params(data).b0, 0.1);
  EXPECT_TRUE(base_only_params(data).rules.empty());
}

TEST(Evaluation, ConstantRateEventMaeMatchesOracle) {
  // One long sequence so that horizon truncation is negligible.
  Rng rng(2);
  EventSequence seq;
  seq.horizon = 2e6;
  const std::vector<double> breaks{0.0, seq.horizon};
  const std::vector<double> rates{0.02};
  seq.targets = sample_target_times(breaks, rates, rng);
  Dataset data;
  data.num_predicates = 1;
  data.sequences = {seq};
  IntensityParams params;
  params.b0 = 0.02;
  const double mae = event_mae(params, {}, EmbeddingTables::one_hot(1), data, {});
  EXPECT_NEAR(mae, kExponentialMeanPredictorMae, 0.02 * kExponentialMeanPredictorMae);
}

TEST(Evaluation, SpikeAtTheTrueTimeDrivesMaeToZero) {
  // The rule fires just before the only target and its rate is huge.
  EventSequence seq;
  seq.horizon = 100.0;
  seq.events = {{1, {39.999}}};
  seq.targets = {40.0};
  Dataset data;
  data.num_predicates = 1;
  data.sequences = {seq};
  const auto tables = EmbeddingTables::one_hot(1);
  HyperParams hyper;
  hyper.mode = FeatureMode::Product;
  RuleEmbedding rule;
  rule.static_slots = Matrix::Constant(1, 1, 5.0);
  rule.relation_slots = Matrix::Zero(0, 4);
  SelectionResult sel;
  sel.static_idx = {1};
  IntensityParams params;
  params.b0 = 1e-9;
  params.rules = {rule};
  const std::vector<SelectionResult> sels{sel};
  double prev = std::numeric_limits<double>::infinity();
  // The expected gap is 1/gamma, which meets the true 0.001 gap at gamma = 1000.
  for (const double gamma : {10.0, 1e2, 1e3}) {
    params.gammas = {gamma};
    const double mae = event_mae(params, sels, tables, data, hyper);
    EXPECT_LT(mae, prev);
    prev = mae;
  }
  EXPECT_LT(prev, 1e-6);
}

TEST(EvaluationProperty, EventMaeIgnoresOrderAndWorkers) {
  const auto spec = *GroundTruthSpec::preset("group2");
  auto data = generate_dataset(spec, 600, 3).dataset;
  const auto tables = EmbeddingTables::one_hot(spec.num_predicates);
  Rng rng(4);
  HyperParams hyper;
  IntensityParams params;
  params.b0 = 0.02;
  params.rules = {RuleEmbedding::random(3, tables, rng)};
  params.gammas = {0.5};
  const std::vector<SelectionResult> sel{gumbel_select(params.rules[0], tables, hyper.tau, rng, true)};
  const double base = event_mae(params, sel, tables, data, hyper);
  for (int trial = 0; trial < 3; ++trial) {
    rng.shuffle(std::span<EventSequence>(data.sequences));
    EXPECT_EQ(event_mae(params, sel, tables, data, hyper, 1 + trial), base);
  }
}

TEST(Evaluation, EventMaeNeedsTargets) {
  Dataset empty;
  empty.num_predicates = 1;
  IntensityParams params;
  params.b0 = 0.02;
  const auto tables = EmbeddingTables::one_hot(1);
  EXPECT_THROW(event_mae(params, {}, tables, empty, {}), ConfigError);
  EventSequence quiet;
  quiet.horizon = 10.0;
  empty.sequences = {quiet};
  EXPECT_THROW(event_mae(params, {}, tables, empty, {}), ConfigError);
}

TEST(Evaluation, SplitDataset) {
  const auto data = generate_dataset(*GroundTruthSpec::preset("group1"), 101, 5).dataset;
  const auto split = split_dataset(data, 0.2, 9);
  EXPECT_EQ(split.test.size(), 20u);
  EXPECT_EQ(split.train.size(), 81u);
  EXPECT_EQ(split.test.num_predicates, data.num_predicates);
  const std::set<std::size_t> idx(split.test_indices.begin(), split.test_indices.end());
  EXPECT_EQ(idx.size(), 20u);
  for (std::size_t k = 0; k < split.test_indices.size(); ++k) {
    EXPECT_EQ(split.test.sequences[k], data.sequences[split.test_indices[k]]);
  }
  EXPECT_EQ(split_dataset(data, 0.2, 9).test_indices, split.test_indices);
  EXPECT_NE(split_dataset(data, 0.2, 10).test_indices, split.test_indices);
}

TEST(Evaluation, ExperimentIsDeterministic) {
  const auto spec = *GroundTruthSpec::preset("group1");
  TrainConfig config;
  config.max_epochs = 200;
  config.min_epochs = 50;
  config.patience = 30;
  config.polish_epochs = 30;
  config.local_search_rounds = 1;
  config.samples_per_step = 8;
  config.restarts = 1;
  config.refine_epochs = 20;
  ExperimentOptions options;
  options.num_sequences = 400;
  options.repetitions = 2;
  options.seed = 77;
  options.test_fraction = 0.25;
  const auto a = run_experiment(spec, config, options);
  const auto b = run_experiment(spec, config, options);
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t r = 0; r < a.size(); ++r) {
    EXPECT_EQ(a[r].repetition, static_cast<int>(r));
    EXPECT_EQ(a[r].seed, b[r].seed);
    EXPECT_EQ(a[r].accuracy, b[r].accuracy);
    EXPECT_EQ(a[r].event_mae, b[r].event_mae);
    EXPECT_TRUE(a[r].event_mae && a[r].base_event_mae);
    EXPECT_EQ(a[r].learned, b[r].learned);
  }
  EXPECT_NE(a[0].seed, a[1].seed);

  const auto summary = summarize(a);
  EXPECT_GE(summary.mean_accuracy, 0.0);
  EXPECT_LE(summary.mean_accuracy, 1.0);
  const auto csv = reports_to_csv(a);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "repetition,accuracy,weight_mae,event_mae,seconds");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Evaluation, SummaryPoolsMatchedWeights) {
  EvalReport a;
  a.accuracy = 1.0;
  a.matching.matched = {{parse_rule("Y <- X1 @ 0.4"), 0.42}};
  a.seconds = 2.0;
  EvalReport b;
  b.accuracy = 0.5;
  b.matching.matched = {{parse_rule("Y <- X1 @ 0.4"), 0.40}, {parse_rule("Y <- X2 @ 0.8"), 0.81}};
  b.seconds = 4.0;
  const std::vector<EvalReport> reports{a, b};
  const auto s = summarize(reports);
  EXPECT_DOUBLE_EQ(s.mean_accuracy, 0.75);
  EXPECT_DOUBLE_EQ(s.mean_seconds, 3.0);
  EXPECT_EQ(s.exact_repetitions, 1);
  EXPECT_NEAR(*s.mean_weight_mae, 0.01, 1e-12);
  EXPECT_FALSE(s.mean_event_mae);
}

#include "tempologic/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tempologic/errors.hpp"
#include "tempologic/parallel.hpp"

namespace tempologic {

using nlohmann::json;

namespace {

constexpr std::uint64_t kSplitStream = 0x5b11755eedULL;
constexpr std::uint64_t kDataStream = 0xda7aULL;
constexpr std::uint64_t kTrainStream = 0x7a1aULL;

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json formulas_json(std::span<const RuleFormula> formulas) {
  json out = json::array();
  for (const auto& f : formulas) out.push_back(format_rule(f));
  return out;
}

std::string csv_cell(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream out;
  out.precision(17);
  out << *v;
  return out.str();
}

}  // namespace

RuleMatching match_rules(std::span<const RuleFormula> learned, std::span<const RuleFormula> truth) {
  RuleMatching out;
  std::vector<bool> used(learned.size(), false);
  for (const auto& t : truth) {
    const auto ct = canonicalize(t);
    bool found = false;
    for (std::size_t i = 0; i < learned.size(); ++i) {
      if (used[i] || !canonicalize(learned[i]).same_logic(ct)) continue;
      used[i] = true;
      out.matched.push_back({ct, learned[i].weight});
      found = true;
      break;
    }
    if (!found) out.missed.push_back(ct);
  }
  for (std::size_t i = 0; i < learned.size(); ++i) {
    if (!used[i]) out.spurious.push_back(canonicalize(learned[i]));
  }
  return out;
}

RuleMatching match_rules(const RuleSet& learned, std::span<const RuleFormula> truth) {
  std::vector<RuleFormula> formulas;
  for (const auto& r : learned.rules) formulas.push_back(r.formula);
  return match_rules(formulas, truth);
}

double exact_match_accuracy(const RuleSet& learned, std::span<const RuleFormula> truth) {
  if (truth.empty()) return 1.0;
  return static_cast<double>(match_rules(learned, truth).matched.size()) / static_cast<double>(truth.size());
}

std::optional<double> weight_mae(const RuleSet& learned, std::span<const RuleFormula> truth) {
  const auto m = match_rules(learned, truth);
  if (m.matched.empty()) return std::nullopt;
  double sum = 0.0;
  for (const auto& p : m.matched) sum += std::abs(p.learned - p.formula.weight);
  return sum / static_cast<double>(m.matched.size());
}

double event_mae(const IntensityParams& params, std::span<const SelectionResult> selections,
                 const EmbeddingTables& tables, const Dataset& test_set, const HyperParams& hyper,
                 int workers) {
  if (test_set.empty()) throw ConfigError("event MAE needs a non-empty test set");
  std::vector<std::vector<double>> per_seq(test_set.size());
  parallel_for(test_set.size(), workers, [&](std::size_t s) {
    const auto& seq = test_set.sequences[s];
    double t_last = 0.0;
    for (const double t : seq.targets) {
      const double pred = predict_next_time(params, selections, tables, seq, t_last, hyper);
      per_seq[s].push_back(std::abs(pred - t));
      t_last = t;
    }
  });
  std::vector<double> errors;
  for (auto& e : per_seq) errors.insert(errors.end(), e.begin(), e.end());
  if (errors.empty()) throw ConfigError("event MAE needs at least one target event");
  std::sort(errors.begin(), errors.end());
  const double sum = std::accumulate(errors.begin(), errors.end(), 0.0);
  if (!std::isfinite(sum)) throw NumericalError("event MAE is not finite");
  return sum / static_cast<double>(errors.size());
}

IntensityParams base_only_params(const Dataset& data) {
  double exposure = 0.0;
  double count = 0.0;
  for (const auto& seq : data.sequences) {
    exposure += seq.horizon;
    count += static_cast<double>(seq.targets.size());
  }
  IntensityParams p;
  p.b0 = exposure > 0.0 ? count / exposure : 0.0;
  return p;
}

DataSplit split_dataset(const Dataset& data, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) throw ConfigError("test fraction must lie in [0, 1]");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(child_seed(seed, kSplitStream));
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(data.size())));
  std::vector<bool> is_test(data.size(), false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

  DataSplit out;
  out.train.num_predicates = out.test.num_predicates = data.num_predicates;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (is_test[i]) {
      out.test.sequences.push_back(data.sequences[i]);
      out.test_indices.push_back(i);
    } else {
      out.train.sequences.push_back(data.sequences[i]);
    }
  }
  return out;
}

json EvalReport::to_json() const {
  json j;
  j["repetition"] = repetition;
  j["seed"] = seed;
  j["accuracy"] = optional_json(accuracy);
  j["weight_mae"] = optional_json(weight_mae);
  j["event_mae"] = optional_json(event_mae);
  j["base_event_mae"] = optional_json(base_event_mae);
  json matched = json::array();
  for (const auto& p : matching.matched) {
    matched.push_back({{"rule", format_rule(p.formula)}, {"truth_weight", p.formula.weight},
                       {"learned_weight", p.learned}});
  }
  j["matched"] = matched;
  j["missed"] = formulas_json(matching.missed);
  j["spurious"] = formulas_json(matching.spurious);
  j["learned"] = formulas_json(learned);
  j["seconds"] = seconds;
  return j;
}

EvalReport evaluate_model(const TrainedModel& model, const std::optional<std::vector<RuleFormula>>& truth,
                          const Dataset* test_set, int workers) {
  EvalReport report;
  for (const auto& r : model.rules.rules) report.learned.push_back(r.formula);
  if (truth) {
    report.matching = match_rules(model.rules, *truth);
    report.accuracy = exact_match_accuracy(model.rules, *truth);
    report.weight_mae = weight_mae(model.rules, *truth);
  }
  if (test_set) {
    const auto tables = model.tables();
    const auto selections = model.rules.selections();
    report.event_mae = event_mae(model.rules.params(), selections, tables, *test_set, model.hyper, workers);
    report.base_event_mae = event_mae(base_only_params(*test_set), {}, tables, *test_set, model.hyper, workers);
  }
  return report;
}

TrainedModel train_model(const Dataset& data, const TrainConfig& config, CoverObserver observer,
                         void* observer_ctx) {
  config.validate();
  TrainedModel model;
  model.num_predicates = data.num_predicates;
  model.max_rule_length = config.max_rule_length;
  model.hyper = config.hyper;
  const auto cover = sequential_cover(data, config, observer, observer_ctx);
  model.rules = joint_refine(data, cover.rules, config);
  return model;
}

std::vector<EvalReport> run_experiment(const GroundTruthSpec& spec, const TrainConfig& config,
                                       const ExperimentOptions& options) {
  spec.validate();
  if (options.repetitions < 1) throw ConfigError("repetitions must be at least 1");
  const auto truth = spec.truth_formulas();
  std::vector<EvalReport> reports;
  for (int rep = 0; rep < options.repetitions; ++rep) {
    const auto rep_seed = child_seed(options.seed, static_cast<std::uint64_t>(rep));
    const auto start = std::chrono::steady_clock::now();
    const auto gen = generate_dataset(spec, options.num_sequences, child_seed(rep_seed, kDataStream), config.workers);
    TrainConfig cfg = config;
    cfg.seed = child_seed(rep_seed, kTrainStream);

    EvalReport report;
    if (options.test_fraction > 0.0) {
      const auto split = split_dataset(gen.dataset, options.test_fraction, rep_seed);
      const auto model = train_model(split.train, cfg);
      report = evaluate_model(model, truth, &split.test, config.workers);
    } else {
      const auto model = train_model(gen.dataset, cfg);
      report = evaluate_model(model, truth, nullptr, config.workers);
    }
    report.repetition = rep;
    report.seed = rep_seed;
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    reports.push_back(std::move(report));
  }
  return reports;
}

json ExperimentSummary::to_json() const {
  return {{"mean_accuracy", mean_accuracy},
          {"mean_weight_mae", optional_json(mean_weight_mae)},
          {"mean_event_mae", optional_json(mean_event_mae)},
          {"mean_seconds", mean_seconds},
          {"exact_repetitions", exact_repetitions}};
}

ExperimentSummary summarize(std::span<const EvalReport> reports) {
  ExperimentSummary s;
  if (reports.empty()) return s;
  double abs_err = 0.0;
  std::size_t matched = 0;
  double event = 0.0;
  std::size_t with_event = 0;
  for (const auto& r : reports) {
    s.mean_accuracy += r.accuracy.value_or(0.0);
    s.mean_seconds += r.seconds;
    if (r.accuracy && *r.accuracy == 1.0) ++s.exact_repetitions;
    for (const auto& p : r.matching.matched) {
      abs_err += std::abs(p.learned - p.formula.weight);
      ++matched;
    }
    if (r.event_mae) {
      event += *r.event_mae;
      ++with_event;
    }
  }
  const auto n = static_cast<double>(reports.size());
  s.mean_accuracy /= n;
  s.mean_seconds /= n;
  if (matched > 0) s.mean_weight_mae = abs_err / static_cast<double>(matched);
  if (with_event > 0) s.mean_event_mae = event / static_cast<double>(with_event);
  return s;
}

std::string reports_to_csv(std::span<const EvalReport> reports) {
  std::ostringstream out;
  out << "repetition,accuracy,weight_mae,event_mae,seconds\n";
  for (const auto& r : reports) {
    out << r.repetition << ',' << csv_cell(r.accuracy) << ',' << csv_cell(r.weight_mae) << ','
        << csv_cell(r.event_mae) << ',' << csv_cell(r.seconds) << '\n';
  }
  return out.str();
}

}  // namespace tempologic

#include "tempologic/cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "tempologic/errors.hpp"
#include "tempologic/evaluation.hpp"
#include "tempologic/model_io.hpp"
#include "tempologic/parallel.hpp"
#include "tempologic/synthetic.hpp"

namespace tempologic {

using nlohmann::json;

namespace {

template <typename T>
void read_into(const json& j, T& field) {
  field = j.get<T>();
}

using FieldSetter = std::function<void(const json&, TrainConfig&)>;

const std::map<std::string, FieldSetter>& train_fields() {
  static const std::map<std::string, FieldSetter> fields = {
      {"max_rule_length", [](const json& j, TrainConfig& c) { read_into(j, c.max_rule_length); }},
      {"learning_rate", [](const json& j, TrainConfig& c) { read_into(j, c.learning_rate); }},
      {"rate_learning_rate", [](const json& j, TrainConfig& c) { read_into(j, c.rate_learning_rate); }},
      {"max_epochs", [](const json& j, TrainConfig& c) { read_into(j, c.max_epochs); }},
      {"min_epochs", [](const json& j, TrainConfig& c) { read_into(j, c.min_epochs); }},
      {"patience", [](const json& j, TrainConfig& c) { read_into(j, c.patience); }},
      {"tolerance", [](const json& j, TrainConfig& c) { read_into(j, c.tolerance); }},
      {"batch_size", [](const json& j, TrainConfig& c) { read_into(j, c.batch_size); }},
      {"full_batch_limit", [](const json& j, TrainConfig& c) { read_into(j, c.full_batch_limit); }},
      {"restarts", [](const json& j, TrainConfig& c) { read_into(j, c.restarts); }},
      {"weight_threshold", [](const json& j, TrainConfig& c) { read_into(j, c.weight_threshold); }},
      {"max_rules", [](const json& j, TrainConfig& c) { read_into(j, c.max_rules); }},
      {"refine_epochs", [](const json& j, TrainConfig& c) { read_into(j, c.refine_epochs); }},
      {"init_scale", [](const json& j, TrainConfig& c) { read_into(j, c.init_scale); }},
      {"init_offset", [](const json& j, TrainConfig& c) { read_into(j, c.init_offset); }},
      {"init_gamma", [](const json& j, TrainConfig& c) { read_into(j, c.init_gamma); }},
      {"init_b0", [](const json& j, TrainConfig& c) { read_into(j, c.init_b0); }},
      {"samples_per_step", [](const json& j, TrainConfig& c) { read_into(j, c.samples_per_step); }},
      {"score_weight", [](const json& j, TrainConfig& c) { read_into(j, c.score_weight); }},
      {"require_gain", [](const json& j, TrainConfig& c) { read_into(j, c.require_gain); }},
      {"polish_epochs", [](const json& j, TrainConfig& c) { read_into(j, c.polish_epochs); }},
      {"local_search_rounds", [](const json& j, TrainConfig& c) { read_into(j, c.local_search_rounds); }},
      {"tau", [](const json& j, TrainConfig& c) { read_into(j, c.hyper.tau); }},
      {"rho", [](const json& j, TrainConfig& c) { read_into(j, c.hyper.rho); }},
      {"delta", [](const json& j, TrainConfig& c) { read_into(j, c.hyper.delta); }},
      {"distinct_slots", [](const json& j, TrainConfig& c) { read_into(j, c.hyper.distinct_slots); }},
      {"mode",
       [](const json& j, TrainConfig& c) {
         const auto name = j.get<std::string>();
         if (name == "softmin") {
           c.hyper.mode = FeatureMode::SoftMin;
         } else if (name == "product") {
           c.hyper.mode = FeatureMode::Product;
         } else {
           throw ConfigError("unknown feature mode '" + name + "'");
         }
       }},
  };
  return fields;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

// g2.jsonl -> g2.assign.json, model.json -> model.rules.txt
std::string sibling_path(const std::string& path, const std::string& suffix) {
  std::filesystem::path p(path);
  p.replace_extension();
  return p.string() + suffix;
}

GroundTruthSpec resolve_spec(const std::string& name_or_path) {
  if (auto spec = GroundTruthSpec::preset(name_or_path)) return *spec;
  if (!std::filesystem::exists(name_or_path)) {
    std::string names;
    for (const auto& n : GroundTruthSpec::preset_names()) names += (names.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset or spec file '" + name_or_path + "' (presets: " + names + ")");
  }
  return GroundTruthSpec::load(name_or_path);
}

// Options shared by every command that draws random numbers or spawns
// workers.
struct RunOptions {
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  int workers = 0;
  std::string config_path;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--seed", seed, "Master seed for all randomness");
    cmd.add_flag("--deterministic", deterministic, "Require a seed; results are bit-stable");
    cmd.add_option("--workers", workers, "Worker threads (default: TEMPOLOGIC_WORKERS or 1)");
    cmd.add_option("--config", config_path, "JSON run configuration; flags take precedence");
  }

  // Config-file values fill in whatever the flags left unset.
  json load_config() {
    json cfg = config_path.empty() ? json::object() : read_json_file(config_path);
    if (!cfg.is_object()) throw ConfigError("run configuration must be a JSON object");
    if (!seed && cfg.contains("seed")) seed = cfg["seed"].get<std::uint64_t>();
    if (!deterministic && cfg.contains("deterministic")) deterministic = cfg["deterministic"].get<bool>();
    if (workers == 0 && cfg.contains("workers")) workers = cfg["workers"].get<int>();
    if (workers == 0) workers = default_workers();
    if (workers < 1) throw ConfigError("workers must be at least 1");
    if (deterministic && !seed) throw ConfigError("--deterministic requires --seed");
    return cfg;
  }

  std::uint64_t resolved_seed(std::ostream& err) {
    if (!seed) {
      seed = std::random_device{}();
      err << "seed: " << *seed << "\n";
    }
    return *seed;
  }
};

struct TrainFlags {
  std::optional<int> restarts;
  std::optional<int> max_rules;
  std::optional<int> max_epochs;
  std::optional<int> rule_length;
  std::optional<double> tau;
  std::optional<double> rho;
  std::optional<double> delta;
  std::optional<double> learning_rate;
  std::optional<double> weight_threshold;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--restarts", restarts, "Random restarts per rule");
    cmd.add_option("--max-rules", max_rules, "Stop after this many accepted rules");
    cmd.add_option("--max-epochs", max_epochs, "Epoch cap per restart");
    cmd.add_option("--rule-length", rule_length, "Predicate slots per rule (L)");
    cmd.add_option("--tau", tau, "Softmax temperature");
    cmd.add_option("--rho", rho, "Soft-min sharpness");
    cmd.add_option("--delta", delta, "Relation tolerance");
    cmd.add_option("--learning-rate", learning_rate, "Step size for rule embeddings");
    cmd.add_option("--weight-threshold", weight_threshold, "Covering stops below this weight");
  }

  void apply(TrainConfig& c) const {
    if (restarts) c.restarts = *restarts;
    if (max_rules) c.max_rules = *max_rules;
    if (max_epochs) {
      c.max_epochs = *max_epochs;
      c.min_epochs = std::min(c.min_epochs, c.max_epochs);
    }
    if (rule_length) c.max_rule_length = *rule_length;
    if (tau) c.hyper.tau = *tau;
    if (rho) c.hyper.rho = *rho;
    if (delta) c.hyper.delta = *delta;
    if (learning_rate) c.learning_rate = *learning_rate;
    if (weight_threshold) c.weight_threshold = *weight_threshold;
  }
};

void print_step(const CoverStep& step, void* ctx) {
  auto& out = *static_cast<std::ostream*>(ctx);
  if (step.accepted) {
    out << "accepted " << format_rule(step.formula) << "  (explains " << step.explained << " of "
        << step.remaining << " remaining sequences)" << std::endl;
  } else {
    out << "stopped: " << step.note;
    if (!step.formula.empty()) out << " [" << format_rule(step.formula) << "]";
    out << std::endl;
  }
}

std::string fixed(double v, int precision = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

json inspect_json(const TrainedModel& model) {
  const auto tables = model.tables();
  json rules = json::array();
  for (const auto& r : model.rules.rules) {
    const Matrix w = similarity_matrix(r.embedding.static_slots, tables.predicates, model.hyper.tau);
    const Matrix wr = similarity_matrix(r.embedding.relation_slots, tables.relations, model.hyper.tau);
    auto rows = [](const Matrix& m) {
      json out = json::array();
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        out.push_back(row);
      }
      return out;
    };
    json rels = json::array();
    for (const auto rel : r.selection.relation_idx) rels.push_back(relation_name(rel));
    rules.push_back({{"formula", format_rule(r.formula)},
                     {"weight", r.formula.weight},
                     {"gamma", r.gamma},
                     {"static_similarity", rows(w)},
                     {"relation_similarity", rows(wr)},
                     {"static_choice", r.selection.static_idx},
                     {"relation_choice", rels}});
  }
  return {{"b0", model.rules.b0}, {"num_predicates", model.num_predicates}, {"rules", rules}};
}

std::string inspect_text(const TrainedModel& model) {
  const auto tables = model.tables();
  std::ostringstream out;
  out << "base rate b0 = " << fixed(model.rules.b0, 4) << "\n";
  const auto pairs = slot_pairs(model.max_rule_length);
  for (std::size_t k = 0; k < model.rules.rules.size(); ++k) {
    const auto& r = model.rules.rules[k];
    const Matrix w = similarity_matrix(r.embedding.static_slots, tables.predicates, model.hyper.tau);
    const Matrix wr = similarity_matrix(r.embedding.relation_slots, tables.relations, model.hyper.tau);
    out << "\nrule " << k + 1 << "  gamma = " << fixed(r.gamma, 4) << "\n";
    out << "  predicate slots (softmax over dummy, X1..X" << model.num_predicates << "):\n";
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      out << "    slot " << i << ":";
      for (Eigen::Index j = 0; j < w.cols(); ++j) out << ' ' << fixed(w(i, j));
      const auto pick = r.selection.static_idx[static_cast<std::size_t>(i)];
      out << "  -> " << (pick == kDummyPredicate ? std::string("dummy") : "X" + std::to_string(pick)) << "\n";
    }
    out << "  relation slots (before equal after none):\n";
    for (Eigen::Index i = 0; i < wr.rows(); ++i) {
      const auto [a, b] = pairs[static_cast<std::size_t>(i)];
      out << "    slots (" << a << "," << b << "):";
      for (Eigen::Index j = 0; j < wr.cols(); ++j) out << ' ' << fixed(wr(i, j));
      out << "  -> " << relation_name(r.selection.relation_idx[static_cast<std::size_t>(i)]) << "\n";
    }
    out << "  " << format_rule(r.formula) << "\n";
  }
  return out.str();
}

int cmd_generate(const std::string& source, std::size_t n, RunOptions& run, const std::string& out_path,
                 std::ostream& out, std::ostream& err) {
  run.load_config();
  const auto spec = resolve_spec(source);
  const auto seed = run.resolved_seed(err);
  const auto gen = generate_dataset(spec, n, seed, run.workers);
  save_corpus(gen.dataset, out_path);
  const auto sidecar = sibling_path(out_path, ".assign.json");
  json side = {{"seed", seed}, {"spec", spec.to_json()}, {"assignments", assignments_to_json(gen.assignments)}};
  write_text(sidecar, side.dump() + "\n");
  std::size_t targets = 0;
  for (const auto& seq : gen.dataset.sequences) targets += seq.targets.size();
  out << "sequences: " << gen.dataset.size() << "\n";
  out << "mean target count: " << (n ? fixed(static_cast<double>(targets) / static_cast<double>(n), 4) : "0")
      << "\n";
  out << "wrote " << out_path << " and " << sidecar << "\n";
  return kExitOk;
}

int cmd_train(const std::string& data_path, RunOptions& run, const TrainFlags& flags,
              const std::string& out_path, std::string listing_path, std::ostream& out, std::ostream& err) {
  const auto cfg = run.load_config();
  TrainConfig config;
  if (cfg.contains("train")) apply_train_config(cfg["train"], config);
  flags.apply(config);
  config.seed = run.resolved_seed(err);
  config.workers = run.workers;
  config.validate();
  const auto data = load_corpus(data_path);
  const auto model = train_model(data, config, print_step, &out);
  save_model(model, out_path);
  if (listing_path.empty()) listing_path = sibling_path(out_path, ".rules.txt");
  const auto listing = rule_listing(model);
  write_text(listing_path, listing);
  out << "refined model:\n" << listing;
  return kExitOk;
}

int cmd_evaluate(const std::string& model_path, const std::string& data_path, const std::string& truth,
                 const std::string& csv_path, RunOptions& run, std::ostream& out) {
  run.load_config();
  const auto model = load_model(model_path);
  std::optional<std::vector<RuleFormula>> truth_rules;
  if (!truth.empty()) truth_rules = resolve_spec(truth).truth_formulas();
  std::optional<Dataset> data;
  if (!data_path.empty()) {
    data = load_corpus(data_path);
    if (data->num_predicates != model.num_predicates) {
      throw ConfigError("corpus and model disagree on the number of predicates");
    }
  }
  const auto start = std::chrono::steady_clock::now();
  auto report = evaluate_model(model, truth_rules, data ? &*data : nullptr, run.workers);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  json j = report.to_json();
  if (!truth_rules) {
    for (const char* key : {"accuracy", "weight_mae", "matched", "missed", "spurious"}) j.erase(key);
  }
  out << j.dump(2) << "\n";
  if (!csv_path.empty()) write_text(csv_path, reports_to_csv(std::span(&report, 1)));
  return kExitOk;
}

int cmd_predict(const std::string& model_path, const std::string& data_path, std::optional<double> t_last,
                const std::string& out_path, RunOptions& run, std::ostream& out) {
  run.load_config();
  const auto model = load_model(model_path);
  const auto data = load_corpus(data_path);
  if (data.num_predicates != model.num_predicates) {
    throw ConfigError("corpus and model disagree on the number of predicates");
  }
  const auto tables = model.tables();
  const auto params = model.rules.params();
  const auto selections = model.rules.selections();
  std::vector<std::string> lines(data.size());
  std::vector<std::string> errors(data.size());
  parallel_for(data.size(), run.workers, [&](std::size_t i) {
    const auto& seq = data.sequences[i];
    const double at = t_last ? *t_last : (seq.targets.empty() ? 0.0 : seq.targets.back());
    if (!(at >= 0.0 && at < seq.horizon)) {
      errors[i] = "t_last " + std::to_string(at) + " outside [0, horizon) of sequence " + std::to_string(i);
      return;
    }
    const double pred = predict_next_time(params, selections, tables, seq, at, model.hyper);
    lines[i] = json{{"sequence", i}, {"t_last", at}, {"predicted", pred}}.dump();
  });
  for (const auto& e : errors) {
    if (!e.empty()) throw ConfigError(e);
  }
  std::ostringstream text;
  for (const auto& l : lines) text << l << "\n";
  if (out_path.empty()) {
    out << text.str();
  } else {
    write_text(out_path, text.str());
  }
  return kExitOk;
}

int cmd_inspect(const std::string& model_path, bool as_json, std::ostream& out) {
  const auto model = load_model(model_path);
  if (as_json) {
    out << inspect_json(model).dump(2) << "\n";
  } else {
    out << inspect_text(model);
  }
  return kExitOk;
}

}  // namespace

void apply_train_config(const json& j, TrainConfig& config) {
  if (!j.is_object()) throw ConfigError("train configuration must be a JSON object");
  const auto& fields = train_fields();
  for (const auto& [key, value] : j.items()) {
    const auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("unknown train configuration key '" + key + "'");
    try {
      it->second(value, config);
    } catch (const json::exception& e) {
      throw ConfigError("train configuration key '" + key + "': " + e.what());
    }
  }
}

json train_config_to_json(const TrainConfig& c) {
  return {{"max_rule_length", c.max_rule_length},
          {"learning_rate", c.learning_rate},
          {"rate_learning_rate", c.rate_learning_rate},
          {"max_epochs", c.max_epochs},
          {"min_epochs", c.min_epochs},
          {"patience", c.patience},
          {"tolerance", c.tolerance},
          {"batch_size", c.batch_size},
          {"full_batch_limit", c.full_batch_limit},
          {"restarts", c.restarts},
          {"weight_threshold", c.weight_threshold},
          {"max_rules", c.max_rules},
          {"refine_epochs", c.refine_epochs},
          {"init_scale", c.init_scale},
          {"init_offset", c.init_offset},
          {"init_gamma", c.init_gamma},
          {"init_b0", c.init_b0},
          {"samples_per_step", c.samples_per_step},
          {"score_weight", c.score_weight},
          {"require_gain", c.require_gain},
          {"polish_epochs", c.polish_epochs},
          {"local_search_rounds", c.local_search_rounds},
          {"tau", c.hyper.tau},
          {"rho", c.hyper.rho},
          {"delta", c.hyper.delta},
          {"distinct_slots", c.hyper.distinct_slots},
          {"mode", c.hyper.mode == FeatureMode::SoftMin ? "softmin" : "product"}};
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Weighted temporal logic rule learning for event sequences", "tempologic"};
  app.require_subcommand(1);

  RunOptions gen_run, train_run, eval_run, pred_run;
  TrainFlags train_flags;
  std::string gen_preset, gen_spec, gen_out;
  std::size_t gen_n = 0;
  auto* gen = app.add_subcommand("generate", "Simulate a corpus from a rule-group preset or spec file");
  auto* preset_opt = gen->add_option("--preset", gen_preset, "group1 | group2 | group3");
  gen->add_option("--spec", gen_spec, "Ground-truth spec JSON")->excludes(preset_opt);
  gen->add_option("--n", gen_n, "Number of sequences")->required();
  gen->add_option("--out", gen_out, "Output corpus (.jsonl)")->required();
  gen_run.add_to(*gen);

  std::string train_data, train_out, train_listing;
  auto* train = app.add_subcommand("train", "Learn a rule set by sequential covering and refinement");
  train->add_option("--data", train_data, "Training corpus")->required();
  train->add_option("--out", train_out, "Output model (.json)")->required();
  train->add_option("--listing", train_listing, "Rule listing path (default: <out>.rules.txt)");
  train_flags.add_to(*train);
  train_run.add_to(*train);

  std::string eval_model, eval_data, eval_truth, eval_csv;
  auto* evaluate = app.add_subcommand("evaluate", "Score a model against ground truth and held-out data");
  evaluate->add_option("--model", eval_model, "Model file")->required();
  evaluate->add_option("--data", eval_data, "Held-out corpus for event-time MAE");
  evaluate->add_option("--truth", eval_truth, "Ground truth: preset name or spec file");
  evaluate->add_option("--csv", eval_csv, "Write the per-repetition CSV row here");
  eval_run.add_to(*evaluate);

  std::string pred_model, pred_data, pred_out;
  std::optional<double> pred_t_last;
  auto* predict = app.add_subcommand("predict", "Expected next target time per sequence (JSON lines)");
  predict->add_option("--model", pred_model, "Model file")->required();
  predict->add_option("--data", pred_data, "Corpus")->required();
  predict->add_option("--t-last", pred_t_last, "Condition on history up to this time (default: last target)");
  predict->add_option("--out", pred_out, "Output file (default: stdout)");
  pred_run.add_to(*predict);

  std::string insp_model;
  bool insp_json = false;
  auto* inspect = app.add_subcommand("inspect", "Show similarity matrices, slot choices and rules");
  inspect->add_option("--model", insp_model, "Model file")->required();
  inspect->add_flag("--json", insp_json, "Machine-readable output");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (*gen) {
      if (gen_preset.empty() == gen_spec.empty()) throw ConfigError("generate needs exactly one of --preset or --spec");
      return cmd_generate(gen_preset.empty() ? gen_spec : gen_preset, gen_n, gen_run, gen_out, out, err);
    }
    if (*train) return cmd_train(train_data, train_run, train_flags, train_out, train_listing, out, err);
    if (*evaluate) return cmd_evaluate(eval_model, eval_data, eval_truth, eval_csv, eval_run, out);
    if (*predict) return cmd_predict(pred_model, pred_data, pred_t_last, pred_out, pred_run, out);
    if (*inspect) return cmd_inspect(insp_model, insp_json, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace tempologic

#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "tempologic/induction.hpp"

namespace tempologic {

// Everything needed to rebuild the intensity: the learned rule set plus the
// settings its features were computed with. Key tables are always one-hot
// over num_predicates.
struct TrainedModel {
  int num_predicates = 0;
  int max_rule_length = 3;
  HyperParams hyper;
  RuleSet rules;

  EmbeddingTables tables() const { return EmbeddingTables::one_hot(num_predicates); }
  // Throws ConfigError on inconsistent shapes or selections.
  void validate() const;
};

nlohmann::json model_to_json(const TrainedModel& model);
TrainedModel model_from_json(const nlohmann::json& j);

// Output is a pure function of the model, so equal models give equal bytes.
std::string model_to_text(const TrainedModel& model);
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

// One line per rule in the text rule grammar, preceded by the base rate.
std::string rule_listing(const TrainedModel& model);

}  // namespace tempologic

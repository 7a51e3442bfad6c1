#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tempologic/event_store.hpp"
#include "tempologic/rng.hpp"
#include "tempologic/rule_formula.hpp"

namespace tempologic {

struct GroundTruthRule {
  RuleFormula formula;  // canonical; formula.weight mirrors `weight`
  double weight = 0.0;
  double ratio = 0.0;
};

struct GroundTruthSpec {
  std::vector<GroundTruthRule> rules;
  double base = 0.02;
  int num_predicates = 30;
  double horizon = 100.0;
  // Rate for predicates outside an assigned rule body.
  double noise_rate = 0.002;
  // Kept for spec files that carry it; body events are placed uniformly.
  double body_rate = 0.0;
  // Relation margin enforced when placing body events.
  double delta = 0.5;

  void validate() const;
  std::vector<RuleFormula> truth_formulas() const;

  nlohmann::json to_json() const;
  static GroundTruthSpec from_json(const nlohmann::json& j);
  static GroundTruthSpec load(const std::filesystem::path& path);

  // "group1" | "group2" | "group3": the three benchmark rule groups.
  static std::optional<GroundTruthSpec> preset(const std::string& name);
  static std::vector<std::string> preset_names();
};

// Index into spec.rules, or nullopt for background sequences.
using Assignment = std::optional<int>;

// round(n * ratio_k) sequences per rule by largest remainder, the rest
// unassigned, in a seed-determined order.
std::vector<Assignment> assign_rules(std::size_t n, const GroundTruthSpec& spec, std::uint64_t seed);

EventSequence generate_sequence(Assignment assignment, const GroundTruthSpec& spec, Rng& rng);

// Exact sample of a Poisson process whose rate is rates[i] on
// [breaks[i], breaks[i+1]].
std::vector<double> sample_target_times(std::span<const double> breaks, std::span<const double> rates,
                                        Rng& rng);
// Time at which the integrated rate from breaks.front() reaches `mass`, or
// nullopt if it never does within the breaks.
std::optional<double> first_arrival(std::span<const double> breaks, std::span<const double> rates,
                                    double mass);

struct GeneratedData {
  Dataset dataset;
  std::vector<Assignment> assignments;
};

GeneratedData generate_dataset(const GroundTruthSpec& spec, std::size_t n, std::uint64_t seed,
                               int workers = 1);

nlohmann::json assignments_to_json(std::span<const Assignment> assignments);
std::vector<Assignment> assignments_from_json(const nlohmann::json& j);

}  // namespace tempologic

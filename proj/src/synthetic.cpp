#include "tempologic/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "tempologic/errors.hpp"
#include "tempologic/parallel.hpp"

namespace tempologic {

using nlohmann::json;

namespace {

constexpr int kMaxPlacementTries = 10000;
constexpr std::uint64_t kShuffleStream = 0x5eed5eedULL;

GroundTruthRule make_rule(const std::string& text, double ratio) {
  GroundTruthRule rule;
  rule.formula = parse_rule(text);
  rule.weight = rule.formula.weight;
  rule.ratio = ratio;
  return rule;
}

// Walks the piecewise-linear compensator, turning each requested mass
// increment into an arrival time.
template <typename NextMass>
std::vector<double> invert_compensator(std::span<const double> breaks, std::span<const double> rates,
                                       NextMass&& next_mass, std::size_t max_arrivals) {
  std::vector<double> arrivals;
  if (breaks.size() < 2 || max_arrivals == 0) return arrivals;
  double remaining = next_mass();
  double pos = breaks.front();
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    const double end = breaks[i + 1];
    const double rate = rates[i];
    while (rate > 0.0 && rate * (end - pos) >= remaining) {
      pos += remaining / rate;
      arrivals.push_back(pos);
      if (arrivals.size() >= max_arrivals) return arrivals;
      remaining = next_mass();
    }
    remaining -= rate * (end - pos);
    pos = end;
  }
  return arrivals;
}

}  // namespace

void GroundTruthSpec::validate() const {
  if (num_predicates < 1) throw ConfigError("num_predicates must be at least 1");
  if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
  if (!(base >= 0.0)) throw ConfigError("base must be non-negative");
  if (!(noise_rate >= 0.0)) throw ConfigError("noise_rate must be non-negative");
  if (!(delta >= 0.0)) throw ConfigError("delta must be non-negative");
  double total = 0.0;
  for (const auto& rule : rules) {
    if (!(rule.ratio > 0.0 && rule.ratio <= 1.0)) throw ConfigError("rule ratio must lie in (0, 1]");
    if (!(rule.weight > 0.0)) throw ConfigError("rule weight must be positive");
    if (rule.formula.empty()) throw ConfigError("ground-truth rule has an empty body");
    for (const auto p : rule.formula.body) {
      if (p > num_predicates) throw ConfigError("rule references X" + std::to_string(p) + " > num_predicates");
    }
    total += rule.ratio;
  }
  if (total > 1.0 + 1e-9) throw ConfigError("rule ratios sum to more than 1");
}

std::vector<RuleFormula> GroundTruthSpec::truth_formulas() const {
  std::vector<RuleFormula> out;
  for (const auto& rule : rules) {
    auto f = rule.formula;
    f.weight = rule.weight;
    out.push_back(f);
  }
  return out;
}

json GroundTruthSpec::to_json() const {
  json j;
  j["num_predicates"] = num_predicates;
  j["horizon"] = horizon;
  j["base"] = base;
  j["noise_rate"] = noise_rate;
  j["body_rate"] = body_rate;
  j["delta"] = delta;
  j["rules"] = json::array();
  for (const auto& rule : rules) {
    auto f = rule.formula;
    f.weight = rule.weight;
    j["rules"].push_back({{"formula", format_rule(f)}, {"ratio", rule.ratio}});
  }
  return j;
}

GroundTruthSpec GroundTruthSpec::from_json(const json& j) {
  GroundTruthSpec spec;
  try {
    spec.num_predicates = j.value("num_predicates", spec.num_predicates);
    spec.horizon = j.value("horizon", spec.horizon);
    spec.base = j.value("base", spec.base);
    spec.noise_rate = j.value("noise_rate", spec.noise_rate);
    spec.body_rate = j.value("body_rate", spec.body_rate);
    spec.delta = j.value("delta", spec.delta);
    for (const auto& r : j.at("rules")) {
      auto rule = make_rule(r.at("formula").get<std::string>(), r.at("ratio").get<double>());
      if (r.contains("weight")) rule.weight = rule.formula.weight = r["weight"].get<double>();
      spec.rules.push_back(std::move(rule));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("ground-truth spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

GroundTruthSpec GroundTruthSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open spec file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::optional<GroundTruthSpec> GroundTruthSpec::preset(const std::string& name) {
  GroundTruthSpec spec;
  if (name == "group1") {
    spec.rules = {make_rule("Y <- X1 ^ X2 ^ X3 ^ (X1 before X2) @ 0.40", 0.20)};
  } else if (name == "group2") {
    spec.rules = {make_rule("Y <- X1 ^ X2 ^ X3 ^ (X1 before X2) @ 0.40", 0.10),
                  make_rule("Y <- X4 ^ X5 ^ (X4 after X5) @ 0.80", 0.15)};
  } else if (name == "group3") {
    spec.rules = {make_rule("Y <- X1 ^ X2 ^ X3 @ 0.40", 0.10),
                  make_rule("Y <- X4 ^ X5 ^ (X4 after X5) @ 0.80", 0.15),
                  make_rule("Y <- X6 ^ X7 ^ (X6 before X7) @ 1.20", 0.15)};
  } else {
    return std::nullopt;
  }
  return spec;
}

std::vector<std::string> GroundTruthSpec::preset_names() { return {"group1", "group2", "group3"}; }

std::vector<Assignment> assign_rules(std::size_t n, const GroundTruthSpec& spec, std::uint64_t seed) {
  const std::size_t k = spec.rules.size();
  // Classes 0..k-1 are rules, class k is "none".
  std::vector<double> quota(k + 1);
  double used = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    quota[i] = static_cast<double>(n) * spec.rules[i].ratio;
    used += spec.rules[i].ratio;
  }
  quota[k] = static_cast<double>(n) * std::max(0.0, 1.0 - used);

  std::vector<std::size_t> counts(k + 1);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i <= k; ++i) {
    counts[i] = static_cast<std::size_t>(std::floor(quota[i] + 1e-9));
    assigned += counts[i];
  }
  std::vector<std::size_t> order(k + 1);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return quota[a] - static_cast<double>(counts[a]) > quota[b] - static_cast<double>(counts[b]);
  });
  for (std::size_t i = 0; assigned < n; i = (i + 1) % order.size()) {
    ++counts[order[i]];
    ++assigned;
  }
  while (assigned > n) {  // only reachable through rounding slack
    for (auto it = order.rbegin(); it != order.rend() && assigned > n; ++it) {
      if (counts[*it] > 0) {
        --counts[*it];
        --assigned;
      }
    }
  }

  std::vector<Assignment> out;
  out.reserve(n);
  for (std::size_t i = 0; i < k; ++i) out.insert(out.end(), counts[i], static_cast<int>(i));
  out.insert(out.end(), counts[k], std::nullopt);
  Rng rng(child_seed(seed, kShuffleStream));
  rng.shuffle(std::span<Assignment>(out));
  return out;
}

std::vector<double> sample_target_times(std::span<const double> breaks, std::span<const double> rates,
                                        Rng& rng) {
  return invert_compensator(breaks, rates, [&] { return rng.exponential(1.0); },
                            std::numeric_limits<std::size_t>::max());
}

std::optional<double> first_arrival(std::span<const double> breaks, std::span<const double> rates,
                                    double mass) {
  const auto arrivals = invert_compensator(breaks, rates, [mass] { return mass; }, 1);
  if (arrivals.empty()) return std::nullopt;
  return arrivals.front();
}

EventSequence generate_sequence(Assignment assignment, const GroundTruthSpec& spec, Rng& rng) {
  EventSequence seq;
  seq.horizon = spec.horizon;
  const RuleFormula* rule = nullptr;
  if (assignment) rule = &spec.rules.at(static_cast<std::size_t>(*assignment)).formula;

  if (rule) {
    int tries = 0;
    while (true) {
      if (++tries > kMaxPlacementTries) {
        throw ConfigError("could not place body events satisfying " + format_rule(*rule));
      }
      seq.events.clear();
      for (const auto p : rule->body) seq.events[p] = {rng.uniform(0.0, 0.5 * spec.horizon)};
      const bool ok = std::all_of(rule->relations.begin(), rule->relations.end(), [&](const auto& r) {
        return relation_holds(r.kind, seq.events[r.first][0], seq.events[r.second][0], spec.delta);
      });
      if (ok) break;
    }
  }
  for (PredicateId p = 1; p <= spec.num_predicates; ++p) {
    if (rule && std::binary_search(rule->body.begin(), rule->body.end(), p)) continue;
    std::vector<double> times;
    if (spec.noise_rate > 0.0) {
      for (double t = rng.exponential(spec.noise_rate); t <= spec.horizon;
           t += rng.exponential(spec.noise_rate)) {
        times.push_back(t);
      }
    }
    if (!times.empty()) seq.events[p] = std::move(times);
  }

  const auto breaks = breakpoints(seq);
  std::vector<double> rates(breaks.size() - 1, spec.base);
  if (rule) {
    const double weight = spec.rules[static_cast<std::size_t>(*assignment)].weight;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
      if (formula_holds(*rule, seq, 0.5 * (breaks[i] + breaks[i + 1]), spec.delta)) rates[i] += weight;
    }
  }
  seq.targets = sample_target_times(breaks, rates, rng);
  return seq;
}

GeneratedData generate_dataset(const GroundTruthSpec& spec, std::size_t n, std::uint64_t seed,
                               int workers) {
  spec.validate();
  GeneratedData out;
  out.assignments = assign_rules(n, spec, seed);
  out.dataset.num_predicates = spec.num_predicates;
  out.dataset.sequences.resize(n);
  parallel_for(n, workers, [&](std::size_t i) {
    Rng rng(child_seed(seed, i));
    out.dataset.sequences[i] = generate_sequence(out.assignments[i], spec, rng);
  });
  return out;
}

json assignments_to_json(std::span<const Assignment> assignments) {
  json arr = json::array();
  for (const auto& a : assignments) {
    if (a) {
      arr.push_back(*a);
    } else {
      arr.push_back(nullptr);
    }
  }
  return arr;
}

std::vector<Assignment> assignments_from_json(const json& j) {
  std::vector<Assignment> out;
  for (const auto& v : j) {
    if (v.is_null()) {
      out.emplace_back(std::nullopt);
    } else {
      out.emplace_back(v.get<int>());
    }
  }
  return out;
}

}  // namespace tempologic

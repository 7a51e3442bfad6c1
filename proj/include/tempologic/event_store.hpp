#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string_view>
#include <vector>

namespace tempologic {

// Index of a body predicate X_1..X_U. Zero is the dummy predicate, which
// never carries events and is vacuously true.
using PredicateId = int;
inline constexpr PredicateId kDummyPredicate = 0;

enum class Relation { Before = 0, Equal = 1, After = 2, None = 3 };
inline constexpr int kNumRelations = 4;

std::string_view relation_name(Relation rel);
std::optional<Relation> relation_from_name(std::string_view name);

struct EventSequence {
  // Strictly ascending occurrence times per predicate; no empty lists.
  std::map<PredicateId, std::vector<double>> events;
  std::vector<double> targets;
  double horizon = 0.0;

  // Earliest occurrence of `p` strictly before `t`, the grounding time used
  // by every fact query.
  std::optional<double> grounding(PredicateId p, double t) const;
  // First occurrence of `p` anywhere in the sequence.
  std::optional<double> first_occurrence(PredicateId p) const;

  // Throws ConfigError naming the violated invariant.
  void validate(int num_predicates) const;

  bool operator==(const EventSequence&) const = default;
};

struct Dataset {
  std::vector<EventSequence> sequences;
  int num_predicates = 0;

  std::size_t size() const { return sequences.size(); }
  bool empty() const { return sequences.empty(); }
  bool operator==(const Dataset&) const = default;
};

Dataset load_corpus(const std::filesystem::path& path);
void save_corpus(const Dataset& dataset, const std::filesystem::path& path);

// One JSON line per sequence, without a trailing newline.
std::string sequence_to_json_line(const EventSequence& seq);
EventSequence sequence_from_json_line(std::string_view line, int num_predicates);

bool fact_static(const EventSequence& seq, PredicateId p, double t);
bool fact_relation(const EventSequence& seq, PredicateId first, PredicateId second,
                   Relation rel, double t, double delta);
// Relation test on two grounding times with tolerance delta.
bool relation_holds(Relation rel, double t_first, double t_second, double delta);

// Sorted union of {0, horizon}, body-event times and target times.
std::vector<double> breakpoints(const EventSequence& seq);

}  // namespace tempologic

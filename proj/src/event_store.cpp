#include "tempologic/event_store.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <string>

#include <json.hpp>

#include "tempologic/errors.hpp"

namespace tempologic {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

void check_times(const std::vector<double>& times, double horizon, const std::string& what) {
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double t = times[i];
    if (!std::isfinite(t) || t < 0.0 || t > horizon) {
      throw ConfigError(what + ": time " + std::to_string(t) + " outside [0, horizon]");
    }
    if (i > 0 && !(times[i - 1] < t)) {
      throw ConfigError(what + ": non-ascending times");
    }
  }
}

PredicateId parse_predicate_key(const std::string& key) {
  PredicateId id = 0;
  const auto* end = key.data() + key.size();
  const auto [ptr, ec] = std::from_chars(key.data(), end, id);
  if (ec != std::errc() || ptr != end || key.empty()) {
    throw ConfigError("predicate id '" + key + "' is not a decimal integer");
  }
  return id;
}

std::vector<double> read_times(const json& node, const std::string& what) {
  if (!node.is_array()) throw ConfigError(what + ": expected an array of times");
  std::vector<double> out;
  out.reserve(node.size());
  for (const auto& v : node) {
    if (!v.is_number()) throw ConfigError(what + ": time is not a number");
    out.push_back(v.get<double>());
  }
  return out;
}

EventSequence sequence_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("sequence line is not a JSON object");
  EventSequence seq;
  if (!j.contains("horizon") || !j["horizon"].is_number()) {
    throw ConfigError("missing numeric \"horizon\"");
  }
  seq.horizon = j["horizon"].get<double>();
  if (j.contains("events")) {
    const auto& events = j["events"];
    if (!events.is_object()) throw ConfigError("\"events\" must be an object");
    for (const auto& [key, times] : events.items()) {
      auto list = read_times(times, "predicate " + key);
      if (!list.empty()) seq.events[parse_predicate_key(key)] = std::move(list);
    }
  }
  if (j.contains("target")) seq.targets = read_times(j["target"], "target");
  return seq;
}

int max_predicate(const EventSequence& seq) {
  return seq.events.empty() ? 0 : seq.events.rbegin()->first;
}

}  // namespace

std::string_view relation_name(Relation rel) {
  switch (rel) {
    case Relation::Before: return "before";
    case Relation::Equal: return "equal";
    case Relation::After: return "after";
    case Relation::None: return "none";
  }
  return "none";
}

std::optional<Relation> relation_from_name(std::string_view name) {
  for (int k = 0; k < kNumRelations; ++k) {
    const auto rel = static_cast<Relation>(k);
    if (relation_name(rel) == name) return rel;
  }
  return std::nullopt;
}

std::optional<double> EventSequence::grounding(PredicateId p, double t) const {
  const auto it = events.find(p);
  if (it == events.end() || it->second.empty() || !(it->second.front() < t)) return std::nullopt;
  return it->second.front();
}

std::optional<double> EventSequence::first_occurrence(PredicateId p) const {
  const auto it = events.find(p);
  if (it == events.end() || it->second.empty()) return std::nullopt;
  return it->second.front();
}

void EventSequence::validate(int num_predicates) const {
  if (!std::isfinite(horizon) || horizon <= 0.0) throw ConfigError("horizon must be positive");
  for (const auto& [p, times] : events) {
    if (p < 1) throw ConfigError("predicate id " + std::to_string(p) + " is reserved or negative");
    if (p > num_predicates) {
      throw ConfigError("predicate id " + std::to_string(p) + " > declared num_predicates " +
                        std::to_string(num_predicates));
    }
    if (times.empty()) throw ConfigError("predicate " + std::to_string(p) + " has no times");
    check_times(times, horizon, "predicate " + std::to_string(p));
  }
  check_times(targets, horizon, "target");
}

std::string sequence_to_json_line(const EventSequence& seq) {
  json events = json::object();
  for (const auto& [p, times] : seq.events) events[std::to_string(p)] = times;
  json j;
  j["horizon"] = seq.horizon;
  j["events"] = std::move(events);
  j["target"] = seq.targets;
  return j.dump();
}

EventSequence sequence_from_json_line(std::string_view line, int num_predicates) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
  auto seq = sequence_from_json(j);
  seq.validate(num_predicates);
  return seq;
}

Dataset load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus " + path.string());

  Dataset data;
  std::optional<int> declared;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j;
      try {
        j = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ConfigError(std::string("malformed JSON: ") + e.what());
      }
      if (j.is_object() && j.contains("num_predicates")) {
        if (declared || !data.sequences.empty()) throw ConfigError("header must be the first line");
        const auto version = j.value("format_version", kFormatVersion);
        if (version != kFormatVersion) {
          throw ConfigError("unsupported format_version " + std::to_string(version));
        }
        declared = j["num_predicates"].get<int>();
        if (*declared < 0) throw ConfigError("num_predicates must be non-negative");
        continue;
      }
      auto seq = sequence_from_json(j);
      seq.validate(declared ? *declared : std::max(max_predicate(seq), 0));
      data.sequences.push_back(std::move(seq));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (in.bad()) throw IoError("read failure on " + path.string());

  if (declared) {
    data.num_predicates = *declared;
  } else {
    for (const auto& seq : data.sequences) {
      data.num_predicates = std::max(data.num_predicates, max_predicate(seq));
    }
  }
  return data;
}

void save_corpus(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write corpus " + path.string());
  json header;
  header["num_predicates"] = dataset.num_predicates;
  header["format_version"] = kFormatVersion;
  out << header.dump() << '\n';
  for (const auto& seq : dataset.sequences) out << sequence_to_json_line(seq) << '\n';
  out.flush();
  if (!out) throw IoError("write failure on " + path.string());
}

bool fact_static(const EventSequence& seq, PredicateId p, double t) {
  if (p == kDummyPredicate) return true;
  return seq.grounding(p, t).has_value();
}

bool relation_holds(Relation rel, double t_first, double t_second, double delta) {
  const double diff = t_first - t_second;
  switch (rel) {
    case Relation::Before: return diff < -delta;
    case Relation::Equal: return std::abs(diff) <= delta;
    case Relation::After: return diff > delta;
    case Relation::None: return true;
  }
  return false;
}

bool fact_relation(const EventSequence& seq, PredicateId first, PredicateId second,
                   Relation rel, double t, double delta) {
  if (rel == Relation::None) return true;
  if (first == kDummyPredicate || second == kDummyPredicate) return false;
  const auto t_first = seq.grounding(first, t);
  const auto t_second = seq.grounding(second, t);
  if (!t_first || !t_second) return false;
  return relation_holds(rel, *t_first, *t_second, delta);
}

std::vector<double> breakpoints(const EventSequence& seq) {
  std::vector<double> out{0.0, seq.horizon};
  for (const auto& [p, times] : seq.events) out.insert(out.end(), times.begin(), times.end());
  out.insert(out.end(), seq.targets.begin(), seq.targets.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace tempologic

#include "tempologic/model_io.hpp"

#include <fstream>
#include <sstream>

#include "tempologic/errors.hpp"

namespace tempologic {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "tempologic-model";
constexpr int kVersion = 1;

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw ConfigError(what + ": expected " + std::to_string(rows) + " rows");
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ConfigError(what + ": expected " + std::to_string(cols) + " columns");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

std::string_view mode_name(FeatureMode mode) { return mode == FeatureMode::SoftMin ? "softmin" : "product"; }

FeatureMode mode_from_name(const std::string& name) {
  if (name == "softmin") return FeatureMode::SoftMin;
  if (name == "product") return FeatureMode::Product;
  throw ConfigError("unknown feature mode '" + name + "'");
}

}  // namespace

void TrainedModel::validate() const {
  if (num_predicates < 1) throw ConfigError("model: num_predicates must be at least 1");
  if (max_rule_length < 1) throw ConfigError("model: max_rule_length must be at least 1");
  hyper.validate();
  if (!(rules.b0 >= 0.0) || !std::isfinite(rules.b0)) throw ConfigError("model: b0 must be finite and >= 0");
  const auto pairs = static_cast<Eigen::Index>(max_rule_length * (max_rule_length - 1) / 2);
  for (const auto& r : rules.rules) {
    if (r.embedding.static_slots.rows() != max_rule_length ||
        r.embedding.static_slots.cols() != num_predicates || r.embedding.relation_slots.rows() != pairs ||
        r.embedding.relation_slots.cols() != kNumRelations) {
      throw ConfigError("model: rule embedding has the wrong shape");
    }
    if (!(r.gamma >= 0.0) || !std::isfinite(r.gamma)) throw ConfigError("model: gamma must be finite and >= 0");
    if (static_cast<int>(r.selection.static_idx.size()) != max_rule_length ||
        static_cast<Eigen::Index>(r.selection.relation_idx.size()) != pairs) {
      throw ConfigError("model: selection has the wrong length");
    }
    for (const auto p : r.selection.static_idx) {
      if (p < 0 || p > num_predicates) throw ConfigError("model: selected predicate out of range");
    }
  }
}

json model_to_json(const TrainedModel& model) {
  json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["num_predicates"] = model.num_predicates;
  j["max_rule_length"] = model.max_rule_length;
  j["hyper"] = {{"tau", model.hyper.tau},
                {"rho", model.hyper.rho},
                {"delta", model.hyper.delta},
                {"mode", mode_name(model.hyper.mode)},
                {"distinct_slots", model.hyper.distinct_slots}};
  j["b0"] = model.rules.b0;
  j["rules"] = json::array();
  for (const auto& r : model.rules.rules) {
    json rels = json::array();
    for (const auto rel : r.selection.relation_idx) rels.push_back(relation_name(rel));
    j["rules"].push_back({{"formula", format_rule(r.formula)},
                          {"weight", r.formula.weight},
                          {"gamma", r.gamma},
                          {"selection", {{"static", r.selection.static_idx}, {"relations", rels}}},
                          {"static_slots", matrix_to_json(r.embedding.static_slots)},
                          {"relation_slots", matrix_to_json(r.embedding.relation_slots)}});
  }
  return j;
}

TrainedModel model_from_json(const json& j) {
  TrainedModel model;
  try {
    if (j.value("format", std::string()) != kFormat) throw ConfigError("not a tempologic model file");
    if (j.value("version", 0) != kVersion) throw ConfigError("unsupported model version");
    model.num_predicates = j.at("num_predicates").get<int>();
    model.max_rule_length = j.at("max_rule_length").get<int>();
    const auto& h = j.at("hyper");
    model.hyper.tau = h.at("tau").get<double>();
    model.hyper.rho = h.at("rho").get<double>();
    model.hyper.delta = h.at("delta").get<double>();
    model.hyper.mode = mode_from_name(h.at("mode").get<std::string>());
    model.hyper.distinct_slots = h.value("distinct_slots", true);
    model.rules.b0 = j.at("b0").get<double>();
    if (model.num_predicates < 1 || model.max_rule_length < 1) throw ConfigError("model: bad dimensions");
    const auto pairs = model.max_rule_length * (model.max_rule_length - 1) / 2;
    for (const auto& r : j.at("rules")) {
      LearnedRule rule;
      rule.gamma = r.at("gamma").get<double>();
      rule.embedding.static_slots =
          matrix_from_json(r.at("static_slots"), model.max_rule_length, model.num_predicates, "static_slots");
      rule.embedding.relation_slots =
          matrix_from_json(r.at("relation_slots"), pairs, kNumRelations, "relation_slots");
      const auto& sel = r.at("selection");
      rule.selection.static_idx = sel.at("static").get<std::vector<PredicateId>>();
      for (const auto& name : sel.at("relations")) {
        const auto rel = relation_from_name(name.get<std::string>());
        if (!rel) throw ConfigError("model: unknown relation '" + name.get<std::string>() + "'");
        rule.selection.relation_idx.push_back(*rel);
      }
      rule.formula = parse_rule(r.at("formula").get<std::string>(), model.num_predicates);
      rule.formula.weight = r.at("weight").get<double>();
      model.rules.rules.push_back(std::move(rule));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model file: ") + e.what());
  }
  model.validate();
  for (const auto& r : model.rules.rules) {
    if (!selection_formula(r.selection).same_logic(r.formula)) {
      throw ConfigError("model: formula text disagrees with its selection");
    }
  }
  return model;
}

std::string model_to_text(const TrainedModel& model) { return model_to_json(model).dump(2) + "\n"; }

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model file " + path.string());
  out << model_to_text(model);
  if (!out) throw IoError("failed writing model file " + path.string());
}

TrainedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

std::string rule_listing(const TrainedModel& model) {
  std::ostringstream out;
  out << "b0 = " << format_weight(model.rules.b0) << "\n";
  for (const auto& r : model.rules.rules) out << format_rule(r.formula) << "\n";
  return out.str();
}

}  // namespace tempologic

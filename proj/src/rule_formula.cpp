#include "tempologic/rule_formula.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>

#include "tempologic/errors.hpp"

namespace tempologic {

namespace {

std::string pred_name(PredicateId p) { return "X" + std::to_string(p); }

class RuleLexer {
 public:
  enum class Kind { Arrow, And, LParen, RParen, At, Pred, Word, Number, End };
  struct Token {
    Kind kind;
    std::string text;
    std::size_t pos;
  };

  explicit RuleLexer(std::string_view text) : text_(text) {}

  Token next() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    const std::size_t start = pos_;
    if (pos_ >= text_.size()) return {Kind::End, "", start};
    const char c = text_[pos_];
    if (c == '<' && pos_ + 1 < text_.size() && text_[pos_ + 1] == '-') {
      pos_ += 2;
      return {Kind::Arrow, "<-", start};
    }
    if (c == '^') return single(Kind::And);
    if (c == '(') return single(Kind::LParen);
    if (c == ')') return single(Kind::RParen);
    if (c == '@') return single(Kind::At);
    if (c == 'X' && pos_ + 1 < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_ + 1]))) {
      ++pos_;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      return {Kind::Pred, std::string(text_.substr(start + 1, pos_ - start - 1)), start};
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      while (pos_ < text_.size() && std::isalpha(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      return {Kind::Word, std::string(text_.substr(start, pos_ - start)), start};
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '+') {
      while (pos_ < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.' ||
              text_[pos_] == '-' || text_[pos_] == '+')) {
        ++pos_;
      }
      return {Kind::Number, std::string(text_.substr(start, pos_ - start)), start};
    }
    throw ConfigError("col " + std::to_string(start + 1) + ": unexpected character '" +
                      std::string(1, c) + "'");
  }

 private:
  Token single(Kind kind) {
    ++pos_;
    return {kind, std::string(text_.substr(pos_ - 1, 1)), pos_ - 1};
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

[[noreturn]] void syntax_error(const RuleLexer::Token& tok, const std::string& expected) {
  const std::string found = tok.kind == RuleLexer::Kind::End ? "end of input" : "'" + tok.text + "'";
  throw ConfigError("col " + std::to_string(tok.pos + 1) + ": expected " + expected + ", found " + found);
}

}  // namespace

RuleFormula canonicalize(const RuleFormula& formula) {
  RuleFormula out;
  out.weight = formula.weight;
  out.body = formula.body;
  std::sort(out.body.begin(), out.body.end());
  out.body.erase(std::unique(out.body.begin(), out.body.end()), out.body.end());
  for (const auto p : out.body) {
    if (p < 1) throw ConfigError("rule body contains invalid predicate id " + std::to_string(p));
  }

  // Keyed by unordered pair so (a before b) and (b before a) collide.
  std::map<std::pair<PredicateId, PredicateId>, RelationConstraint> by_pair;
  for (auto rel : formula.relations) {
    if (!std::binary_search(out.body.begin(), out.body.end(), rel.first) ||
        !std::binary_search(out.body.begin(), out.body.end(), rel.second)) {
      throw ConfigError("relation (" + pred_name(rel.first) + " " +
                        std::string(relation_name(rel.kind)) + " " + pred_name(rel.second) +
                        ") refers to a predicate not in the body");
    }
    if (rel.kind == Relation::None) continue;
    if (rel.first == rel.second) {
      if (rel.kind == Relation::Equal) continue;
      throw ConfigError("relation of " + pred_name(rel.first) + " with itself is unsatisfiable");
    }
    if (rel.kind == Relation::After) {
      std::swap(rel.first, rel.second);
      rel.kind = Relation::Before;
    } else if (rel.kind == Relation::Equal && rel.first > rel.second) {
      std::swap(rel.first, rel.second);
    }
    const auto key = std::minmax(rel.first, rel.second);
    const auto [it, inserted] = by_pair.emplace(key, rel);
    if (!inserted && it->second != rel) {
      throw ConfigError("contradictory relations on pair (" + pred_name(key.first) + ", " +
                        pred_name(key.second) + ")");
    }
  }
  for (const auto& [key, rel] : by_pair) out.relations.push_back(rel);
  std::sort(out.relations.begin(), out.relations.end());
  return out;
}

bool formula_holds(const RuleFormula& formula, const EventSequence& seq, double t, double delta) {
  for (const auto p : formula.body) {
    if (!fact_static(seq, p, t)) return false;
  }
  for (const auto& rel : formula.relations) {
    if (!fact_relation(seq, rel.first, rel.second, rel.kind, t, delta)) return false;
  }
  return true;
}

std::string format_weight(double weight) {
  // Fixed notation with at least two decimals, extended until the value
  // parses back exactly.
  char buf[64];
  for (int precision = 2; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*f", precision, weight);
    double back = 0.0;
    std::from_chars(buf, buf + std::char_traits<char>::length(buf), back);
    if (back == weight) return buf;
  }
  const auto res = std::to_chars(buf, buf + sizeof buf, weight);
  return std::string(buf, res.ptr);
}

std::string format_rule(const RuleFormula& formula) {
  std::string out = "Y <- ";
  if (formula.body.empty()) {
    out += "true";
  } else {
    bool first = true;
    for (const auto p : formula.body) {
      if (!first) out += " ^ ";
      out += pred_name(p);
      first = false;
    }
    for (const auto& rel : formula.relations) {
      out += " ^ (" + pred_name(rel.first) + " " + std::string(relation_name(rel.kind)) + " " +
             pred_name(rel.second) + ")";
    }
  }
  out += " @ " + format_weight(formula.weight);
  return out;
}

RuleFormula parse_rule(std::string_view text, std::optional<int> num_predicates) {
  using Kind = RuleLexer::Kind;
  RuleLexer lex(text);
  auto tok = lex.next();

  auto expect = [&](Kind kind, const std::string& what) {
    if (tok.kind != kind) syntax_error(tok, what);
    auto consumed = tok;
    tok = lex.next();
    return consumed;
  };
  auto predicate = [&]() {
    const auto t = expect(Kind::Pred, "predicate X<k>");
    PredicateId id = 0;
    std::from_chars(t.text.data(), t.text.data() + t.text.size(), id);
    if (id < 1 || (num_predicates && id > *num_predicates)) {
      throw ConfigError("col " + std::to_string(t.pos + 1) + ": predicate X" + t.text +
                        " out of range");
    }
    return id;
  };

  if (tok.kind != Kind::Word || tok.text != "Y") syntax_error(tok, "'Y'");
  tok = lex.next();
  expect(Kind::Arrow, "'<-'");

  RuleFormula formula;
  if (tok.kind == Kind::Word && tok.text == "true") {
    tok = lex.next();
  } else {
    std::vector<std::size_t> relation_cols;
    while (true) {
      if (tok.kind == Kind::LParen) {
        const auto open = tok;
        tok = lex.next();
        RelationConstraint rel;
        rel.first = predicate();
        if (tok.kind != Kind::Word) syntax_error(tok, "relation before|equal|after");
        const auto kind = relation_from_name(tok.text);
        if (!kind || *kind == Relation::None) syntax_error(tok, "relation before|equal|after");
        rel.kind = *kind;
        tok = lex.next();
        rel.second = predicate();
        expect(Kind::RParen, "')'");
        formula.relations.push_back(rel);
        relation_cols.push_back(open.pos);
      } else {
        formula.body.push_back(predicate());
      }
      if (tok.kind != Kind::And) break;
      tok = lex.next();
    }
    for (std::size_t i = 0; i < formula.relations.size(); ++i) {
      const auto& rel = formula.relations[i];
      for (const auto p : {rel.first, rel.second}) {
        if (std::find(formula.body.begin(), formula.body.end(), p) == formula.body.end()) {
          throw ConfigError("col " + std::to_string(relation_cols[i] + 1) + ": " + pred_name(p) +
                            " not in body");
        }
      }
    }
  }

  expect(Kind::At, "'@ <weight>'");
  const auto num = expect(Kind::Number, "weight");
  const auto* end = num.text.data() + num.text.size();
  const char* begin = num.text.data();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, formula.weight);
  if (ec != std::errc() || ptr != end || !std::isfinite(formula.weight)) {
    throw ConfigError("col " + std::to_string(num.pos + 1) + ": invalid weight '" + num.text + "'");
  }
  if (tok.kind != Kind::End) syntax_error(tok, "end of rule");
  return canonicalize(formula);
}

}  // namespace tempologic

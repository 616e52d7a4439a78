#pragma once

// Logical forms over a lambda-DCS operator subset.
//
// Token inventory (one token per operator, constant, number and bracket):
//   Type.<T>                 type filter
//   <name>                   property (relation position) or entity (value)
//   <number>                 numeric literal
//   x                        the lambda variable
//   .                        join: relation . value
//   .≤. .≥. .<. .>. .=.      join against a numeric comparison
//   ⊓                        intersection
//   R ( ... )                reverse of a property or of a lambda
//   λx.                      lambda binder (only directly inside R)
//   count ( ... )            cardinality
//   argmax ( set , rel )     maximisers of a degree relation (argmin mirrors)
//   ( ) ,                    brackets and separator
//
// Compact surface text, e.g. "Type.HousingUnit ⊓ Size.≤.800", is produced
// by render_lf and read back by tokenize_lf.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mkbparse/error.hpp"
#include "mkbparse/kb.hpp"

namespace mkb::lf {

inline constexpr std::string_view kIntersect = "\xE2\x8A\x93";  // ⊓
inline constexpr std::string_view kLambda = "\xCE\xBBx.";       // λx.
inline constexpr std::string_view kJoin = ".";

enum class CompareOp { Le, Ge, Lt, Gt, Eq };

inline std::string_view compare_token(CompareOp op) {
  switch (op) {
    case CompareOp::Le: return ".\xE2\x89\xA4.";  // .≤.
    case CompareOp::Ge: return ".\xE2\x89\xA5.";  // .≥.
    case CompareOp::Lt: return ".<.";
    case CompareOp::Gt: return ".>.";
    case CompareOp::Eq: return ".=.";
  }
  return ".=.";
}

inline std::optional<CompareOp> compare_from_token(std::string_view tok) {
  for (CompareOp op : {CompareOp::Le, CompareOp::Ge, CompareOp::Lt, CompareOp::Gt, CompareOp::Eq}) {
    if (tok == compare_token(op)) return op;
  }
  return std::nullopt;
}

inline bool compare_holds(CompareOp op, double lhs, double rhs) {
  switch (op) {
    case CompareOp::Le: return lhs <= rhs;
    case CompareOp::Ge: return lhs >= rhs;
    case CompareOp::Lt: return lhs < rhs;
    case CompareOp::Gt: return lhs > rhs;
    case CompareOp::Eq: return lhs == rhs;
  }
  return false;
}

enum class Kind { Type, Property, Entity, Number, Variable, Join, Compare, Reverse, Lambda, Intersect, Count, Argmax, Argmin };

struct LogicalForm {
  Kind kind = Kind::Entity;
  std::string name;  // type, property or entity name; literal text for numbers
  double number = 0.0;
  CompareOp op = CompareOp::Eq;
  std::vector<LogicalForm> args;

  bool operator==(const LogicalForm& o) const {
    return kind == o.kind && name == o.name && op == o.op && args == o.args;
  }

  static LogicalForm leaf(Kind k, std::string name) {
    LogicalForm f;
    f.kind = k;
    f.name = std::move(name);
    return f;
  }
  static LogicalForm type(std::string t) { return leaf(Kind::Type, std::move(t)); }
  static LogicalForm property(std::string p) { return leaf(Kind::Property, std::move(p)); }
  static LogicalForm entity(std::string e) { return leaf(Kind::Entity, std::move(e)); }
  static LogicalForm variable() { return leaf(Kind::Variable, "x"); }
  static LogicalForm num(double v) {
    LogicalForm f = leaf(Kind::Number, format_number(v));
    f.number = v;
    return f;
  }
  static LogicalForm num_text(std::string text) {
    LogicalForm f = leaf(Kind::Number, text);
    if (!parse_number(text, f.number)) throw ParseError("bad number literal '" + text + "'");
    return f;
  }
  static LogicalForm join(LogicalForm relation, LogicalForm value) {
    return {Kind::Join, {}, 0.0, CompareOp::Eq, {std::move(relation), std::move(value)}};
  }
  static LogicalForm compare(CompareOp op, LogicalForm number) {
    return {Kind::Compare, {}, 0.0, op, {std::move(number)}};
  }
  static LogicalForm reverse(LogicalForm inner) { return {Kind::Reverse, {}, 0.0, CompareOp::Eq, {std::move(inner)}}; }
  static LogicalForm lambda(LogicalForm body) { return {Kind::Lambda, {}, 0.0, CompareOp::Eq, {std::move(body)}}; }
  static LogicalForm intersect(LogicalForm a, LogicalForm b) {
    return {Kind::Intersect, {}, 0.0, CompareOp::Eq, {std::move(a), std::move(b)}};
  }
  static LogicalForm count(LogicalForm set) { return {Kind::Count, {}, 0.0, CompareOp::Eq, {std::move(set)}}; }
  static LogicalForm argmax(LogicalForm set, LogicalForm degree) {
    return {Kind::Argmax, {}, 0.0, CompareOp::Eq, {std::move(set), std::move(degree)}};
  }
  static LogicalForm argmin(LogicalForm set, LogicalForm degree) {
    return {Kind::Argmin, {}, 0.0, CompareOp::Eq, {std::move(set), std::move(degree)}};
  }
};

/// Keywords that can never name a constant.
inline bool is_keyword(std::string_view tok) {
  return tok == "R" || tok == "count" || tok == "argmax" || tok == "argmin" || tok == "x" || tok == "Type" ||
         tok == kIntersect || tok == kLambda || tok == kJoin || tok == "(" || tok == ")" || tok == "," ||
         compare_from_token(tok).has_value();
}

inline bool is_number_token(std::string_view tok) {
  double v;
  if (tok.empty()) return false;
  const char c = tok[0];
  const bool numeric_start = (c >= '0' && c <= '9') || (c == '-' && tok.size() > 1);
  return numeric_start && parse_number(tok, v);
}

inline bool is_type_token(std::string_view tok) { return tok.size() > 5 && tok.substr(0, 5) == "Type."; }

/// True for tokens naming a KB constant (type, property or entity).
inline bool is_constant_token(std::string_view tok) {
  return is_type_token(tok) || (!is_keyword(tok) && !is_number_token(tok));
}

// ---------------------------------------------------------------------------
// Printing

namespace detail {

inline void emit(const LogicalForm& f, std::vector<std::string>& out);

inline void emit_relation(const LogicalForm& f, std::vector<std::string>& out) {
  if (f.kind == Kind::Property) {
    out.push_back(f.name);
    return;
  }
  if (f.kind == Kind::Reverse) {
    out.emplace_back("R");
    out.emplace_back("(");
    const LogicalForm& inner = f.args.at(0);
    if (inner.kind == Kind::Lambda) {
      out.emplace_back(kLambda);
      emit(inner.args.at(0), out);
    } else {
      emit_relation(inner, out);
    }
    out.emplace_back(")");
    return;
  }
  throw ParseError("node cannot be printed in relation position");
}

inline void emit_grouped(const LogicalForm& f, std::vector<std::string>& out) {
  if (f.kind == Kind::Intersect) {
    out.emplace_back("(");
    emit(f, out);
    out.emplace_back(")");
  } else {
    emit(f, out);
  }
}

inline void emit(const LogicalForm& f, std::vector<std::string>& out) {
  switch (f.kind) {
    case Kind::Type: out.push_back("Type." + f.name); return;
    case Kind::Property:
    case Kind::Entity:
    case Kind::Number: out.push_back(f.name); return;
    case Kind::Variable: out.emplace_back("x"); return;
    case Kind::Join: {
      emit_relation(f.args.at(0), out);
      const LogicalForm& value = f.args.at(1);
      if (value.kind == Kind::Compare) {
        out.emplace_back(compare_token(value.op));
        emit(value.args.at(0), out);
      } else {
        out.emplace_back(kJoin);
        emit_grouped(value, out);
      }
      return;
    }
    case Kind::Compare:
      out.emplace_back(compare_token(f.op));
      emit(f.args.at(0), out);
      return;
    case Kind::Reverse: emit_relation(f, out); return;
    case Kind::Lambda:
      out.emplace_back(kLambda);
      emit(f.args.at(0), out);
      return;
    case Kind::Intersect:
      emit(f.args.at(0), out);
      out.emplace_back(kIntersect);
      emit_grouped(f.args.at(1), out);
      return;
    case Kind::Count:
      out.emplace_back("count");
      out.emplace_back("(");
      emit(f.args.at(0), out);
      out.emplace_back(")");
      return;
    case Kind::Argmax:
    case Kind::Argmin:
      out.emplace_back(f.kind == Kind::Argmax ? "argmax" : "argmin");
      out.emplace_back("(");
      emit(f.args.at(0), out);
      out.emplace_back(",");
      emit_relation(f.args.at(1), out);
      out.emplace_back(")");
      return;
  }
}

}  // namespace detail

inline std::vector<std::string> print_tokens(const LogicalForm& f) {
  std::vector<std::string> out;
  detail::emit(f, out);
  return out;
}

/// Compact surface text of a token sequence.
inline std::string render_lf(const std::vector<std::string>& tokens) {
  std::string s;
  for (const auto& t : tokens) {
    if (t == kIntersect) {
      s += ' ';
      s += t;
      s += ' ';
    } else if (t == ",") {
      s += ", ";
    } else {
      s += t;
    }
  }
  return s;
}

inline std::string to_string(const LogicalForm& f) { return render_lf(print_tokens(f)); }

// ---------------------------------------------------------------------------
// Tokenizing compact text

inline std::vector<std::string> tokenize_lf(std::string_view text) {
  auto ident_char = [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '@' ||
           c == ':' || c == '-';
  };
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (c == ' ' || c == '\t') {
      ++i;
      continue;
    }
    if (c == '(' || c == ')' || c == ',') {
      out.emplace_back(1, c);
      ++i;
      continue;
    }
    if (text.substr(i, kIntersect.size()) == kIntersect) {
      out.emplace_back(kIntersect);
      i += kIntersect.size();
      continue;
    }
    if (text.substr(i, kLambda.size()) == kLambda) {
      out.emplace_back(kLambda);
      i += kLambda.size();
      continue;
    }
    if (c == '.') {
      bool matched = false;
      for (CompareOp op : {CompareOp::Le, CompareOp::Ge, CompareOp::Lt, CompareOp::Gt, CompareOp::Eq}) {
        auto tok = compare_token(op);
        if (text.substr(i, tok.size()) == tok) {
          out.emplace_back(tok);
          i += tok.size();
          matched = true;
          break;
        }
      }
      if (!matched) {
        out.emplace_back(kJoin);
        ++i;
      }
      continue;
    }
    const bool number_start = (c >= '0' && c <= '9') || (c == '-' && i + 1 < text.size() && text[i + 1] >= '0' &&
                                                         text[i + 1] <= '9');
    if (number_start) {
      std::size_t j = i + 1;
      while (j < text.size() && ((text[j] >= '0' && text[j] <= '9') ||
                                 (text[j] == '.' && j + 1 < text.size() && text[j + 1] >= '0' && text[j + 1] <= '9'))) {
        ++j;
      }
      out.emplace_back(text.substr(i, j - i));
      i = j;
      continue;
    }
    if (ident_char(c)) {
      std::size_t j = i;
      while (j < text.size() && ident_char(text[j])) ++j;
      std::string word(text.substr(i, j - i));
      if (word == "Type" && j < text.size() && text[j] == '.') {
        std::size_t k = j + 1;
        while (k < text.size() && ident_char(text[k])) ++k;
        if (k == j + 1) throw ParseError("'Type.' must be followed by a type name");
        word = std::string(text.substr(i, k - i));
        j = k;
      }
      out.push_back(std::move(word));
      i = j;
      continue;
    }
    throw ParseError("unexpected character in logical form at offset " + std::to_string(i));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

class Parser {
 public:
  explicit Parser(const std::vector<std::string>& tokens) : toks_(tokens) {}

  LogicalForm parse_all() {
    if (toks_.empty()) throw ParseError("empty logical form");
    LogicalForm f = expr();
    if (pos_ != toks_.size()) fail("trailing tokens starting with '" + toks_[pos_] + "'");
    return f;
  }

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw ParseError("logical form parse error at token " + std::to_string(pos_) + ": " + why);
  }

  bool at_end() const { return pos_ >= toks_.size(); }
  const std::string& peek(std::size_t ahead = 0) const {
    static const std::string end;
    return pos_ + ahead < toks_.size() ? toks_[pos_ + ahead] : end;
  }
  const std::string& take() {
    if (at_end()) fail("unexpected end of input");
    return toks_[pos_++];
  }
  void expect(std::string_view tok) {
    if (at_end()) fail("expected '" + std::string(tok) + "' but input ended");
    if (toks_[pos_] != tok) fail("expected '" + std::string(tok) + "', found '" + toks_[pos_] + "'");
    ++pos_;
  }

  static bool is_join_op(std::string_view tok) { return tok == kJoin || compare_from_token(tok).has_value(); }

  LogicalForm expr() {
    LogicalForm left = unit();
    while (peek() == kIntersect) {
      ++pos_;
      left = LogicalForm::intersect(std::move(left), unit());
    }
    return left;
  }

  LogicalForm relation() {
    const std::string& tok = take();
    if (tok == "R") {
      expect("(");
      LogicalForm inner;
      if (peek() == kLambda) {
        ++pos_;
        if (++lambda_depth_ > 1) fail("nested lambda");
        inner = LogicalForm::lambda(expr());
        --lambda_depth_;
      } else {
        inner = relation();
        if (inner.kind != Kind::Property) fail("R expects a property or a lambda");
      }
      expect(")");
      return LogicalForm::reverse(std::move(inner));
    }
    if (is_keyword(tok) || is_number_token(tok) || is_type_token(tok)) fail("expected a relation, found '" + tok + "'");
    return LogicalForm::property(tok);
  }

  LogicalForm joined(LogicalForm rel) {
    const std::string& op = take();
    if (auto cmp = compare_from_token(op)) {
      if (!is_number_token(peek())) fail("comparison needs a number");
      return LogicalForm::join(std::move(rel), LogicalForm::compare(*cmp, LogicalForm::num_text(take())));
    }
    return LogicalForm::join(std::move(rel), unit());
  }

  LogicalForm unit() {
    if (at_end()) fail("unexpected end of input");
    const std::string tok = peek();
    if (tok == "(") {
      ++pos_;
      LogicalForm inner = expr();
      expect(")");
      return inner;
    }
    if (is_type_token(tok)) {
      ++pos_;
      return LogicalForm::type(tok.substr(5));
    }
    if (tok == "count") {
      ++pos_;
      expect("(");
      LogicalForm set = expr();
      expect(")");
      return LogicalForm::count(std::move(set));
    }
    if (tok == "argmax" || tok == "argmin") {
      ++pos_;
      expect("(");
      LogicalForm set = expr();
      expect(",");
      LogicalForm degree = relation();
      expect(")");
      return tok == "argmax" ? LogicalForm::argmax(std::move(set), std::move(degree))
                             : LogicalForm::argmin(std::move(set), std::move(degree));
    }
    if (is_number_token(tok)) {
      ++pos_;
      return LogicalForm::num_text(tok);
    }
    if (tok == "x") {
      ++pos_;
      return LogicalForm::variable();
    }
    if (tok == "R") {
      LogicalForm rel = relation();
      if (!is_join_op(peek())) fail("reversed relation must be joined");
      return joined(std::move(rel));
    }
    if (is_keyword(tok)) fail("unexpected token '" + tok + "'");
    if (is_join_op(peek(1))) return joined(relation());
    ++pos_;
    return LogicalForm::entity(tok);
  }

  const std::vector<std::string>& toks_;
  std::size_t pos_ = 0;
  int lambda_depth_ = 0;
};

}  // namespace detail

inline LogicalForm parse_lf(const std::vector<std::string>& tokens) { return detail::Parser(tokens).parse_all(); }

inline LogicalForm parse_lf_text(std::string_view text) { return parse_lf(tokenize_lf(text)); }

}  // namespace mkb::lf

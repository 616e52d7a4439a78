#pragma once

// Knowledge base: entities with type labels and binary property triples.
//
// File format: one fact per line, `subject<TAB>property<TAB>object`. The
// reserved property `type` assigns a type label; an object that parses in
// full as a number is numeric, anything else names an entity.

#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "mkbparse/error.hpp"

namespace mkb {

inline constexpr std::string_view kTypeProperty = "type";

using KbValue = std::variant<std::string, double>;

struct Triple {
  std::string subject;
  std::string property;
  KbValue object;

  bool operator==(const Triple&) const = default;
};

/// Shortest decimal text that parses back to the same double.
inline std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Parses the whole of `text` as a number.
inline bool parse_number(std::string_view text, double& out) {
  if (text.empty()) return false;
  const char* first = text.data();
  if (*first == '+') return false;
  auto res = std::from_chars(first, first + text.size(), out);
  return res.ec == std::errc{} && res.ptr == first + text.size();
}

class Kb {
 public:
  using Fact = std::pair<std::string, KbValue>;

  void add(std::string subject, std::string property, KbValue object) {
    if (subject.empty() || property.empty()) throw Error("knowledge-base fact with empty field");
    entities_.insert(subject);
    if (property == kTypeProperty) {
      const auto* type = std::get_if<std::string>(&object);
      if (!type) throw Error("type of '" + subject + "' must be a name, not a number");
      types_[*type].insert(subject);
    } else {
      if (const auto* e = std::get_if<std::string>(&object)) entities_.insert(*e);
      facts_[property].emplace_back(subject, object);
    }
    triples_.push_back({std::move(subject), std::move(property), std::move(object)});
  }

  const std::set<std::string>& entities() const noexcept { return entities_; }

  bool has_entity(std::string_view e) const { return entities_.contains(std::string(e)); }
  bool has_type(std::string_view t) const { return types_.contains(std::string(t)); }
  bool has_property(std::string_view p) const { return facts_.contains(std::string(p)); }

  /// Entities carrying type `t`, sorted.
  const std::set<std::string>& entities_of_type(std::string_view t) const {
    static const std::set<std::string> none;
    auto it = types_.find(std::string(t));
    return it == types_.end() ? none : it->second;
  }

  /// (subject, object) pairs of a property in insertion order.
  const std::vector<Fact>& facts(std::string_view property) const {
    static const std::vector<Fact> none;
    auto it = facts_.find(std::string(property));
    return it == facts_.end() ? none : it->second;
  }

  std::set<std::string> types() const {
    std::set<std::string> out;
    for (const auto& [t, _] : types_) out.insert(t);
    return out;
  }

  std::set<std::string> properties() const {
    std::set<std::string> out;
    for (const auto& [p, _] : facts_) out.insert(p);
    return out;
  }

  const std::vector<Triple>& triples() const noexcept { return triples_; }

 private:
  std::set<std::string> entities_;
  std::map<std::string, std::set<std::string>> types_;
  std::map<std::string, std::vector<Fact>> facts_;
  std::vector<Triple> triples_;
};

inline Kb read_kb(std::istream& in, const std::string& source = "<kb>") {
  Kb kb;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": expected three tab-separated fields");
    }
    std::string subject = line.substr(0, t1);
    std::string property = line.substr(t1 + 1, t2 - t1 - 1);
    std::string object = line.substr(t2 + 1);
    if (subject.empty() || property.empty() || object.empty()) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": empty field");
    }
    double num;
    if (property != kTypeProperty && parse_number(object, num)) {
      kb.add(std::move(subject), std::move(property), num);
    } else {
      kb.add(std::move(subject), std::move(property), std::move(object));
    }
  }
  return kb;
}

inline Kb load_kb(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open knowledge base '" + path + "'");
  return read_kb(in, path);
}

inline void write_kb(std::ostream& out, const Kb& kb) {
  for (const auto& t : kb.triples()) {
    out << t.subject << '\t' << t.property << '\t';
    if (const auto* e = std::get_if<std::string>(&t.object)) {
      out << *e;
    } else {
      out << format_number(std::get<double>(t.object));
    }
    out << '\n';
  }
}

inline void save_kb(const std::string& path, const Kb& kb) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write knowledge base '" + path + "'");
  write_kb(out, kb);
}

}  // namespace mkb

#pragma once

// Set-semantics execution of logical forms against a Kb.

#include <algorithm>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mkbparse/error.hpp"
#include "mkbparse/kb.hpp"
#include "mkbparse/logical_form.hpp"

namespace mkb {

/// Tagged, canonical (sorted, deduplicated) execution result.
class Denotation {
 public:
  enum class Kind { Entities, Numbers, Scalar };

  static Denotation entities(std::vector<std::string> items) {
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    Denotation d;
    d.kind_ = Kind::Entities;
    d.entities_ = std::move(items);
    return d;
  }

  static Denotation numbers(std::vector<double> items) {
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    Denotation d;
    d.kind_ = Kind::Numbers;
    d.numbers_ = std::move(items);
    return d;
  }

  static Denotation scalar(double v) {
    Denotation d;
    d.kind_ = Kind::Scalar;
    d.numbers_ = {v};
    return d;
  }

  Kind kind() const noexcept { return kind_; }
  bool is_set() const noexcept { return kind_ != Kind::Scalar; }
  const std::vector<std::string>& entity_set() const noexcept { return entities_; }
  const std::vector<double>& number_set() const noexcept { return numbers_; }
  double scalar_value() const { return numbers_.at(0); }
  std::size_t size() const noexcept { return kind_ == Kind::Entities ? entities_.size() : numbers_.size(); }

  bool operator==(const Denotation&) const = default;

  std::string to_string() const {
    if (kind_ == Kind::Scalar) return format_number(numbers_[0]);
    std::string s = "{";
    for (std::size_t i = 0; i < size(); ++i) {
      if (i) s += ",";
      s += kind_ == Kind::Entities ? entities_[i] : format_number(numbers_[i]);
    }
    return s + "}";
  }

 private:
  Kind kind_ = Kind::Entities;
  std::vector<std::string> entities_;
  std::vector<double> numbers_;
};

inline bool denotation_equal(const Denotation& a, const Denotation& b) { return a == b; }

namespace detail {

using lf::Kind;
using lf::LogicalForm;

class Executor {
 public:
  explicit Executor(const Kb& kb) : kb_(kb) {}

  Denotation eval(const LogicalForm& f, const std::optional<std::string>& var) const {
    switch (f.kind) {
      case Kind::Type: {
        if (!kb_.has_type(f.name)) throw ExecutionError("unknown type '" + f.name + "'");
        const auto& s = kb_.entities_of_type(f.name);
        return Denotation::entities({s.begin(), s.end()});
      }
      case Kind::Entity:
        if (!kb_.has_entity(f.name)) throw ExecutionError("unknown entity '" + f.name + "'");
        return Denotation::entities({f.name});
      case Kind::Number: return Denotation::numbers({f.number});
      case Kind::Variable:
        if (!var) throw ExecutionError("unbound variable x");
        return Denotation::entities({*var});
      case Kind::Join: return join(f.args.at(0), f.args.at(1), var);
      case Kind::Intersect: {
        Denotation a = eval(f.args.at(0), var);
        Denotation b = eval(f.args.at(1), var);
        if (!a.is_set() || !b.is_set() || a.kind() != b.kind()) {
          throw ExecutionError("intersection of incompatible values");
        }
        if (a.kind() == Denotation::Kind::Entities) {
          std::vector<std::string> out;
          std::set_intersection(a.entity_set().begin(), a.entity_set().end(), b.entity_set().begin(),
                                b.entity_set().end(), std::back_inserter(out));
          return Denotation::entities(std::move(out));
        }
        std::vector<double> out;
        std::set_intersection(a.number_set().begin(), a.number_set().end(), b.number_set().begin(),
                              b.number_set().end(), std::back_inserter(out));
        return Denotation::numbers(std::move(out));
      }
      case Kind::Count: {
        if (f.args.at(0).kind == Kind::Number) throw ExecutionError("count applied to a number");
        Denotation s = eval(f.args.at(0), var);
        if (!s.is_set()) throw ExecutionError("count applied to a number");
        return Denotation::scalar(static_cast<double>(s.size()));
      }
      case Kind::Argmax:
      case Kind::Argmin: return superlative(f, var);
      case Kind::Property:
      case Kind::Reverse:
      case Kind::Lambda:
      case Kind::Compare: throw ExecutionError("relation or comparison used where a value is expected");
    }
    throw ExecutionError("unsupported logical form node");
  }

 private:
  // Membership test for objects on the value side of a join.
  struct ValueTest {
    std::optional<lf::CompareOp> op;
    double threshold = 0.0;
    Denotation set;

    bool operator()(const KbValue& v) const {
      if (op) {
        const double* n = std::get_if<double>(&v);
        return n && lf::compare_holds(*op, *n, threshold);
      }
      if (const auto* e = std::get_if<std::string>(&v)) {
        return set.kind() == Denotation::Kind::Entities &&
               std::binary_search(set.entity_set().begin(), set.entity_set().end(), *e);
      }
      const double n = std::get<double>(v);
      return set.kind() != Denotation::Kind::Entities &&
             std::binary_search(set.number_set().begin(), set.number_set().end(), n);
    }
  };

  const std::vector<Kb::Fact>& facts_of(const std::string& property) const {
    if (!kb_.has_property(property)) throw ExecutionError("unknown property '" + property + "'");
    return kb_.facts(property);
  }

  // Values of a lambda body evaluated at entity e.
  std::vector<KbValue> lambda_values(const LogicalForm& body, const std::string& e) const {
    Denotation d = eval(body, e);
    std::vector<KbValue> out;
    if (d.kind() == Denotation::Kind::Entities) {
      for (const auto& x : d.entity_set()) out.emplace_back(x);
    } else {
      for (double x : d.number_set()) out.emplace_back(x);
    }
    return out;
  }

  static Denotation collect(std::vector<KbValue> results) {
    std::vector<std::string> ents;
    std::vector<double> nums;
    for (auto& r : results) {
      if (auto* e = std::get_if<std::string>(&r)) {
        ents.push_back(std::move(*e));
      } else {
        nums.push_back(std::get<double>(r));
      }
    }
    if (!ents.empty() && !nums.empty()) throw ExecutionError("join yields a mix of entities and numbers");
    if (!nums.empty()) return Denotation::numbers(std::move(nums));
    return Denotation::entities(std::move(ents));
  }

  Denotation join(const LogicalForm& rel, const LogicalForm& value, const std::optional<std::string>& var) const {
    ValueTest test;
    if (value.kind == Kind::Compare) {
      test.op = value.op;
      test.threshold = value.args.at(0).number;
    } else {
      test.set = eval(value, var);
      if (test.set.kind() == Denotation::Kind::Scalar) test.set = Denotation::numbers({test.set.scalar_value()});
    }
    std::vector<KbValue> results;
    if (rel.kind == Kind::Property) {
      for (const auto& [s, o] : facts_of(rel.name))
        if (test(o)) results.emplace_back(s);
      return collect(std::move(results));
    }
    if (rel.kind == Kind::Reverse) {
      const LogicalForm& inner = rel.args.at(0);
      if (inner.kind == Kind::Property) {
        for (const auto& [s, o] : facts_of(inner.name))
          if (test(KbValue{s})) results.push_back(o);
        return collect(std::move(results));
      }
      if (inner.kind == Kind::Lambda) {
        for (const auto& e : kb_.entities()) {
          for (const auto& v : lambda_values(inner.args.at(0), e)) {
            if (test(v)) {
              results.emplace_back(e);
              break;
            }
          }
        }
        return collect(std::move(results));
      }
    }
    throw ExecutionError("join needs a property or reversed relation");
  }

  // Numeric degrees of entity e under a degree relation.
  std::vector<double> degrees(const LogicalForm& rel, const std::string& e) const {
    std::vector<double> out;
    if (rel.kind == Kind::Property) {
      for (const auto& [s, o] : facts_of(rel.name))
        if (s == e)
          if (const double* n = std::get_if<double>(&o)) out.push_back(*n);
      return out;
    }
    if (rel.kind == Kind::Reverse && rel.args.at(0).kind == Kind::Lambda) {
      for (const auto& v : lambda_values(rel.args.at(0).args.at(0), e))
        if (const double* n = std::get_if<double>(&v)) out.push_back(*n);
      return out;
    }
    if (rel.kind == Kind::Reverse && rel.args.at(0).kind == Kind::Property) {
      // Subjects are always entities, so a reversed property has no numeric degree.
      facts_of(rel.args.at(0).name);
      return out;
    }
    throw ExecutionError("superlative needs a degree relation");
  }

  Denotation superlative(const LogicalForm& f, const std::optional<std::string>& var) const {
    const bool is_max = f.kind == Kind::Argmax;
    Denotation set = eval(f.args.at(0), var);
    if (set.kind() != Denotation::Kind::Entities) throw ExecutionError("superlative over a non-entity set");
    if (set.size() == 0) throw ExecutionError("empty argmax domain");
    std::vector<std::string> best;
    double best_value = 0.0;
    for (const auto& e : set.entity_set()) {
      auto ds = degrees(f.args.at(1), e);
      if (ds.empty()) continue;
      const double d = is_max ? *std::max_element(ds.begin(), ds.end()) : *std::min_element(ds.begin(), ds.end());
      if (best.empty() || (is_max ? d > best_value : d < best_value)) {
        best = {e};
        best_value = d;
      } else if (d == best_value) {
        best.push_back(e);
      }
    }
    if (best.empty()) throw ExecutionError("no element of the superlative domain has a degree");
    return Denotation::entities(std::move(best));
  }

  const Kb& kb_;
};

}  // namespace detail

inline Denotation execute(const lf::LogicalForm& form, const Kb& kb) {
  return detail::Executor(kb).eval(form, std::nullopt);
}

/// Parses and executes a token sequence; nullopt on any executor error.
inline std::optional<Denotation> try_execute(const std::vector<std::string>& tokens, const Kb& kb) {
  try {
    return execute(lf::parse_lf(tokens), kb);
  } catch (const ParseError&) {
    return std::nullopt;
  } catch (const ExecutionError&) {
    return std::nullopt;
  }
}

}  // namespace mkb

#pragma once

// Tiny two-domain corpus shared by unit and acceptance tests.

#include <sstream>

#include "mkbparse/dataset.hpp"
#include "mkbparse/kb.hpp"

namespace fixture {

inline mkb::Kb kb(const std::string& type, const std::string& prop) {
  std::ostringstream s;
  for (int i = 1; i <= 4; ++i) {
    s << type << i << "\ttype\t" << type << "\n" << type << i << "\t" << prop << "\t" << (i * 2 + 1) << "\n";
  }
  std::istringstream in(s.str());
  return mkb::read_kb(in);
}

inline mkb::Example ex(std::size_t k, const std::string& u, const std::string& y) {
  return {k, mkb::split_tokens(u), mkb::split_tokens(y)};
}

/// Vocabularies: input {<unk> show a b 3 (+ domain tokens)}, output
/// {</s> <unk> Type.A Type.B ⊓ P Q . 3}. "7" only ever reaches the
/// output through a copy.
inline mkb::Corpus tiny() {
  mkb::Corpus c;
  mkb::DomainData a{"a", kb("A", "P"), {}, {}};
  a.train = {ex(0, "show a 3", "Type.A ⊓ P . 3"), ex(0, "show a", "Type.A"), ex(0, "show a 3", "Type.A ⊓ P . 3")};
  a.test = {ex(0, "show a 7", "Type.A ⊓ P . 7")};
  mkb::DomainData b{"b", kb("B", "Q"), {}, {}};
  b.train = {ex(1, "show b 3", "Type.B ⊓ Q . 3"), ex(1, "show b", "Type.B"), ex(1, "show b", "Type.B")};
  b.test = {ex(1, "show b 7", "Type.B ⊓ Q . 7")};
  c.domains = {std::move(a), std::move(b)};
  return c;
}

}  // namespace fixture

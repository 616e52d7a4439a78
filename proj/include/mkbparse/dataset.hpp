#pragma once

// Examples, per-domain data and the TSV interchange format.
//
// Dataset files hold one example per line: utterance tokens, a tab, then
// logical-form tokens, both space separated. A data directory contains
// `<domain>.train.tsv`, `<domain>.test.tsv` and `<domain>.kb.tsv` for each
// domain plus an optional `manifest.json` fixing the domain order.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mkbparse/error.hpp"
#include "mkbparse/kb.hpp"

namespace mkb {

struct Example {
  std::size_t domain = 0;
  std::vector<std::string> utterance;
  std::vector<std::string> logical_form;

  bool operator==(const Example&) const = default;
};

inline std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ') ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string join_tokens(std::span<const std::string> tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

inline std::vector<Example> read_dataset(std::istream& in, std::size_t domain, const std::string& source = "<dataset>") {
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    const std::string where = source + ":" + std::to_string(lineno);
    if (tab == std::string::npos) throw FormatError(where + ": missing tab between utterance and logical form");
    if (line.find('\t', tab + 1) != std::string::npos) throw FormatError(where + ": more than one tab");
    Example ex;
    ex.domain = domain;
    ex.utterance = split_tokens(std::string_view(line).substr(0, tab));
    ex.logical_form = split_tokens(std::string_view(line).substr(tab + 1));
    if (ex.utterance.empty()) throw FormatError(where + ": empty utterance");
    if (ex.logical_form.empty()) throw FormatError(where + ": empty logical form");
    out.push_back(std::move(ex));
  }
  return out;
}

inline void write_dataset(std::ostream& out, std::span<const Example> examples) {
  for (const auto& ex : examples) {
    out << join_tokens(ex.utterance) << '\t' << join_tokens(ex.logical_form) << '\n';
  }
}

inline std::vector<Example> load_dataset(const std::string& path, std::size_t domain) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset '" + path + "'");
  return read_dataset(in, domain, path);
}

inline void save_dataset(const std::string& path, std::span<const Example> examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write dataset '" + path + "'");
  write_dataset(out, examples);
}

struct DomainData {
  std::string name;
  Kb kb;
  std::vector<Example> train;
  std::vector<Example> test;
};

struct Corpus {
  std::vector<DomainData> domains;

  std::size_t size() const noexcept { return domains.size(); }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t k = 0; k < domains.size(); ++k)
      if (domains[k].name == name) return k;
    throw Error("unknown domain '" + std::string(name) + "'");
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& d : domains) out.push_back(d.name);
    return out;
  }
};

/// Domain names of a data directory: the manifest order when present,
/// otherwise every `<domain>.train.tsv` in lexicographic order.
inline std::vector<std::string> discover_domains(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path manifest = fs::path(dir) / "manifest.json";
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    auto j = nlohmann::json::parse(in);
    return j.at("domains").get<std::vector<std::string>>();
  }
  if (!fs::is_directory(dir)) throw Error("data directory '" + dir + "' does not exist");
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string file = entry.path().filename().string();
    const std::string suffix = ".train.tsv";
    if (file.size() > suffix.size() && file.ends_with(suffix)) names.push_back(file.substr(0, file.size() - suffix.size()));
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw Error("no '*.train.tsv' files in '" + dir + "'");
  return names;
}

inline Corpus load_corpus(const std::string& dir, const std::vector<std::string>& only = {}) {
  namespace fs = std::filesystem;
  Corpus corpus;
  const auto names = only.empty() ? discover_domains(dir) : only;
  for (const auto& name : names) {
    DomainData d;
    d.name = name;
    const std::size_t k = corpus.domains.size();
    const fs::path base(dir);
    d.train = load_dataset((base / (name + ".train.tsv")).string(), k);
    const fs::path test = base / (name + ".test.tsv");
    if (fs::exists(test)) d.test = load_dataset(test.string(), k);
    d.kb = load_kb((base / (name + ".kb.tsv")).string());
    corpus.domains.push_back(std::move(d));
  }
  return corpus;
}

inline void save_corpus(const std::string& dir, const Corpus& corpus, nlohmann::json manifest = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path base(dir);
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& d : corpus.domains) {
    save_dataset((base / (d.name + ".train.tsv")).string(), d.train);
    save_dataset((base / (d.name + ".test.tsv")).string(), d.test);
    save_kb((base / (d.name + ".kb.tsv")).string(), d.kb);
    counts[d.name] = {{"train", d.train.size()}, {"test", d.test.size()}};
  }
  manifest["domains"] = corpus.names();
  manifest["counts"] = counts;
  std::ofstream out(base / "manifest.json", std::ios::binary);
  if (!out) throw Error("cannot write manifest in '" + dir + "'");
  out << manifest.dump(2) << '\n';
}

}  // namespace mkb

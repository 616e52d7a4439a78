#pragma once

// SGD training with the halving schedule, data subsampling and checkpoints.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mkbparse/architecture.hpp"
#include "mkbparse/autodiff.hpp"
#include "mkbparse/dataset.hpp"
#include "mkbparse/error.hpp"
#include "mkbparse/random.hpp"

namespace mkb {

class TrainingError : public Error {
 public:
  using Error::Error;
};

struct TrainConfig {
  std::string preset = "paper";
  std::size_t epochs = 30;
  double lr0 = 0.1;
  std::size_t halve_from = 15;
  std::size_t halve_every = 5;
  std::size_t hidden = 200;
  std::size_t embedding = 100;
  double init_range = 0.1;
  std::size_t beam = 5;
  std::uint64_t seed = 1;
  double fraction = 1.0;

  void validate() const {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("fraction must lie in (0, 1], got " + std::to_string(fraction));
    if (epochs == 0 || hidden == 0 || embedding == 0 || beam == 0 || halve_every == 0)
      throw Error("epochs, hidden, embedding, beam and halving interval must be positive");
    if (!(lr0 > 0.0) || !(init_range > 0.0)) throw Error("learning rate and init range must be positive");
  }
};

/// Named scale presets. "paper" is the published recipe; "desk" shrinks
/// the network for minutes-scale CPU runs and keeps everything else.
inline TrainConfig preset_config(std::string_view name) {
  TrainConfig c;
  c.preset = std::string(name);
  if (name == "paper") return c;
  if (name == "desk") {
    c.hidden = 32;
    c.embedding = 16;
    return c;
  }
  throw Error("unknown preset '" + std::string(name) + "' (expected paper or desk)");
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"preset", c.preset}, {"epochs", c.epochs},       {"lr0", c.lr0},
          {"halve_from", c.halve_from}, {"halve_every", c.halve_every}, {"hidden", c.hidden},
          {"embedding", c.embedding},   {"init_range", c.init_range},   {"beam", c.beam},
          {"seed", c.seed},             {"fraction", c.fraction}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.preset = j.at("preset").get<std::string>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.lr0 = j.at("lr0").get<double>();
  c.halve_from = j.at("halve_from").get<std::size_t>();
  c.halve_every = j.at("halve_every").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.embedding = j.at("embedding").get<std::size_t>();
  c.init_range = j.at("init_range").get<double>();
  c.beam = j.at("beam").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.fraction = j.at("fraction").get<double>();
  return c;
}

/// Learning rate of a 1-based epoch: lr0 until `halve_from`, then halved
/// every `halve_every` epochs. A halving only happens when a full interval
/// of epochs remains, so a 30-epoch run ends on its 25-30 plateau.
inline double learning_rate(std::size_t epoch, std::size_t total_epochs = 30, double lr0 = 0.1,
                            std::size_t halve_from = 15, std::size_t halve_every = 5) {
  if (epoch < 1 || epoch > total_epochs) {
    throw DomainError("epoch " + std::to_string(epoch) + " outside 1.." + std::to_string(total_epochs));
  }
  double rate = lr0;
  for (std::size_t start = halve_from; start <= epoch; start += halve_every) {
    if (start + halve_every - 1 > total_epochs) break;
    rate *= 0.5;
  }
  return rate;
}

inline double learning_rate(std::size_t epoch, const TrainConfig& c) {
  return learning_rate(epoch, c.epochs, c.lr0, c.halve_from, c.halve_every);
}

inline void init_params(Model& model, std::uint64_t seed, double range = 0.1) { init_uniform(model.params, seed, range); }

/// Replaces training words seen fewer than twice with <unk> and test words
/// outside the resulting vocabulary with <unk>. Counts are pooled over all
/// domains, or taken per domain when `per_domain` is set.
inline Corpus apply_unk(const Corpus& corpus, bool per_domain = false) {
  std::vector<std::map<std::string, int>> counts(per_domain ? corpus.size() : 1);
  for (std::size_t k = 0; k < corpus.size(); ++k)
    for (const auto& ex : corpus.domains[k].train)
      for (const auto& w : ex.utterance) ++counts[per_domain ? k : 0][w];
  Corpus out = corpus;
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto& c = counts[per_domain ? k : 0];
    auto fix = [&](Example& ex) {
      for (auto& w : ex.utterance) {
        auto it = c.find(w);
        if (it == c.end() || it->second < 2) w = std::string(kUnk);
      }
    };
    for (auto& ex : out.domains[k].train) fix(ex);
    for (auto& ex : out.domains[k].test) fix(ex);
  }
  return out;
}

/// theta -= rate * grad for the parameters present in `grads`; parameters
/// off the example's path carry no entry and stay untouched.
inline void sgd_step(ad::ParameterStore& params, const ad::Gradients& grads, double rate) {
  for (const auto& e : grads.entries()) {
    auto& value = params[e.parameter].value;
    if (value.shape() != e.grad.shape()) {
      throw DimensionError("gradient shape " + shape_string(e.grad.shape()) + " does not match parameter '" +
                           params[e.parameter].name + "' " + shape_string(value.shape()));
    }
    auto& v = value.values();
    const auto& g = e.grad.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= rate * g[i];
  }
}

/// One SGD update on one example; returns its loss before the update.
inline double train_example(Model& model, const Example& ex, double rate) {
  ad::Graph g(&model.params);
  ad::Var loss = example_loss(g, model, ex);
  const double value = g.value(loss)[0];
  if (!std::isfinite(value)) {
    throw TrainingError("non-finite loss " + std::to_string(value) + " on a " + model.domains[ex.domain].name +
                        " example: '" + join_tokens(ex.utterance) + "'");
  }
  sgd_step(model.params, g.backward(loss), rate);
  return value;
}

struct EpochLog {
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double mean_loss = 0.0;
  std::size_t examples = 0;
};

/// Pooled training examples of a corpus in domain order.
inline std::vector<Example> training_pool(const Corpus& corpus) {
  std::vector<Example> all;
  for (std::size_t k = 0; k < corpus.size(); ++k)
    for (Example ex : corpus.domains[k].train) {
      ex.domain = k;
      all.push_back(std::move(ex));
    }
  return all;
}

/// Runs `config.epochs` epochs over the union of all domains' examples,
/// reshuffled every epoch with the run seed. Per-domain parameter sets of
/// separate architectures only receive their own domain's updates, so the
/// shuffled union is equivalent to independent per-domain streams.
inline std::vector<EpochLog> train(Model& model, std::vector<Example> examples, const TrainConfig& config,
                                   const std::function<void(const EpochLog&)>& on_epoch = {}) {
  config.validate();
  if (examples.empty()) throw TrainingError("no training examples");
  Rng rng(derive_seed(config.seed, 7));
  std::vector<EpochLog> log;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(examples);
    const double rate = learning_rate(epoch, config);
    double total = 0.0;
    for (const auto& ex : examples) {
      try {
        total += train_example(model, ex, rate);
      } catch (const TrainingError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    EpochLog entry{epoch, rate, total / static_cast<double>(examples.size()), examples.size()};
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return log;
}

inline std::vector<DomainSpec> domain_specs(const Corpus& corpus) {
  std::vector<DomainSpec> specs;
  for (const auto& d : corpus.domains) specs.push_back(make_domain_spec(d.name, d.train));
  return specs;
}

/// Builds and initialises a model for a corpus under a training config.
inline Model make_model(Architecture arch, const Corpus& corpus, const TrainConfig& config) {
  Model m = build_model(arch, domain_specs(corpus), config.hidden, config.embedding, derive_seed(config.seed, 3));
  init_params(m, derive_seed(config.seed, 3), config.init_range);
  return m;
}

/// Per-domain sample without replacement of ceil(fraction * n_k) training
/// examples, kept in their original order. Test splits are untouched.
inline Corpus subsample(const Corpus& corpus, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error("fraction must lie in (0, 1], got " + std::to_string(fraction));
  Corpus out = corpus;
  for (std::size_t k = 0; k < out.size(); ++k) {
    auto& train = out.domains[k].train;
    const std::size_t n = train.size();
    const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
    if (keep == 0) throw Error("subsample of domain '" + out.domains[k].name + "' is empty");
    if (keep == n) continue;
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(derive_seed(seed, 200 + k));
    rng.shuffle(idx);
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    std::vector<Example> picked;
    for (std::size_t i : idx) picked.push_back(train[i]);
    train = std::move(picked);
  }
  return out;
}

/// Moves the last ceil(dev_fraction * n_k) training examples of each domain
/// (after a seeded shuffle) into the test slot; used for dev analyses.
inline Corpus dev_split(const Corpus& corpus, double dev_fraction, std::uint64_t seed) {
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) throw Error("dev fraction must lie in (0, 1)");
  Corpus out = corpus;
  for (std::size_t k = 0; k < out.size(); ++k) {
    auto train = out.domains[k].train;
    Rng rng(derive_seed(seed, 300 + k));
    rng.shuffle(train);
    const auto dev = static_cast<std::size_t>(std::ceil(dev_fraction * static_cast<double>(train.size())));
    if (dev == 0 || dev >= train.size()) throw Error("dev split leaves an empty side for '" + out.domains[k].name + "'");
    out.domains[k].test.assign(train.end() - static_cast<std::ptrdiff_t>(dev), train.end());
    train.resize(train.size() - dev);
    out.domains[k].train = std::move(train);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Hash over the architecture's vocabularies, in parameter order.
inline std::string vocab_hash(const Model& m) {
  std::uint64_t h = fnv1a(to_string(m.architecture));
  for (const auto& d : m.domains) h = fnv1a(d.name + "\n", h);
  for (const auto& e : m.encoders)
    for (const auto& t : e.vocab.tokens()) h = fnv1a(t + "\x1f", h);
  h = fnv1a("\x1e", h);
  for (const auto& d : m.decoders)
    for (const auto& t : d.vocab.tokens()) h = fnv1a(t + "\x1f", h);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline constexpr std::string_view kCheckpointMagic = "mkbparse-checkpoint 1";

/// Text checkpoint: magic line, one JSON line of metadata (architecture,
/// sizes, domain specs, vocabulary hash), then one line per parameter:
/// `name<TAB>shape<TAB>hexfloat values`. Hexfloats round-trip bitwise.
inline void write_checkpoint(std::ostream& out, const Model& m, nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json meta = std::move(extra);
  meta["architecture"] = std::string(to_string(m.architecture));
  meta["hidden"] = m.hidden;
  meta["embedding"] = m.embedding;
  meta["vocab_hash"] = vocab_hash(m);
  nlohmann::json domains = nlohmann::json::array();
  for (const auto& d : m.domains) {
    domains.push_back({{"name", d.name}, {"input_counts", d.input_counts}, {"output_tokens", d.output_tokens}});
  }
  meta["domains"] = domains;
  meta["parameter_count"] = count_parameters(m);
  out << kCheckpointMagic << '\n' << meta.dump() << '\n';
  char buf[40];
  for (const auto& p : m.params) {
    out << p.name << '\t';
    for (std::size_t i = 0; i < p.value.rank(); ++i) out << (i ? "x" : "") << p.value.dim(i);
    out << '\t';
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%a", p.value[i]);
      out << (i ? " " : "") << buf;
    }
    out << '\n';
  }
}

struct Checkpoint {
  Model model;
  nlohmann::json meta;
};

inline Checkpoint read_checkpoint(std::istream& in, const std::string& source = "<checkpoint>") {
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) throw FormatError(source + ": not a checkpoint file");
  if (!std::getline(in, line)) throw FormatError(source + ": missing metadata line");
  Checkpoint cp;
  cp.meta = nlohmann::json::parse(line);
  std::vector<DomainSpec> specs;
  for (const auto& d : cp.meta.at("domains")) {
    DomainSpec s;
    s.name = d.at("name").get<std::string>();
    s.input_counts = d.at("input_counts").get<std::map<std::string, int>>();
    s.output_tokens = d.at("output_tokens").get<std::set<std::string>>();
    specs.push_back(std::move(s));
  }
  cp.model = build_model(parse_architecture(cp.meta.at("architecture").get<std::string>()), specs,
                         cp.meta.at("hidden").get<std::size_t>(), cp.meta.at("embedding").get<std::size_t>(), 0);
  if (vocab_hash(cp.model) != cp.meta.at("vocab_hash").get<std::string>()) {
    throw FormatError(source + ": vocabulary hash does not match the stored domains");
  }
  std::size_t seen = 0, lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    const std::string where = source + ":" + std::to_string(lineno);
    if (t2 == std::string::npos) throw FormatError(where + ": expected name, shape and values");
    const std::string name = line.substr(0, t1);
    auto id = cp.model.params.find(name);
    if (!id) throw FormatError(where + ": unknown parameter '" + name + "'");
    auto& value = cp.model.params[*id].value;
    std::string shape_text;
    for (std::size_t i = 0; i < value.rank(); ++i) shape_text += (i ? "x" : "") + std::to_string(value.dim(i));
    if (line.substr(t1 + 1, t2 - t1 - 1) != shape_text) throw FormatError(where + ": shape mismatch for '" + name + "'");
    const char* p = line.c_str() + t2 + 1;
    for (std::size_t i = 0; i < value.size(); ++i) {
      char* end = nullptr;
      value[i] = std::strtod(p, &end);
      if (end == p) throw FormatError(where + ": too few values for '" + name + "'");
      p = end;
    }
    while (*p == ' ') ++p;
    if (*p != '\0') throw FormatError(where + ": too many values for '" + name + "'");
    ++seen;
  }
  if (seen != cp.model.params.size()) throw FormatError(source + ": checkpoint is missing parameters");
  return cp;
}

inline void save_checkpoint(const std::string& path, const Model& m, nlohmann::json extra = nlohmann::json::object()) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  write_checkpoint(out, m, std::move(extra));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in, path);
}

}  // namespace mkb

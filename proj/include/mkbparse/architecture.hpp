#pragma once

// Multi-domain model variants and their parameter-sharing schemes.
//
//   indep            K encoders, K decoders, nothing shared
//   one2one          1 encoder, 1 decoder
//   input-token      one2one with an artificial "@<domain>" first source token
//   domain-encoding  one2one with the domain one-hot fed to the decoder LSTM
//   one2many         1 shared encoder, K decoders
//   many2many        K domain encoders + 1 general encoder, K decoders that
//                    attend over [b^k_i, b^general_i]
//
// Shared decoders use the union output vocabulary; at decoding time the
// write actions of tokens outside the example's domain are masked.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mkbparse/autodiff.hpp"
#include "mkbparse/dataset.hpp"
#include "mkbparse/random.hpp"
#include "mkbparse/seq2seq.hpp"

namespace mkb {

inline constexpr std::string_view kEos = "</s>";
inline constexpr std::string_view kUnk = "<unk>";

enum class Architecture { Indep, One2One, InputToken, DomainEncoding, One2Many, Many2Many };

inline constexpr std::array kAllArchitectures = {Architecture::Indep,          Architecture::One2One,
                                                 Architecture::InputToken,     Architecture::DomainEncoding,
                                                 Architecture::One2Many,       Architecture::Many2Many};

inline std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::Indep: return "indep";
    case Architecture::One2One: return "one2one";
    case Architecture::InputToken: return "input-token";
    case Architecture::DomainEncoding: return "domain-encoding";
    case Architecture::One2Many: return "one2many";
    case Architecture::Many2Many: return "many2many";
  }
  return "?";
}

inline Architecture parse_architecture(std::string_view s) {
  for (Architecture a : kAllArchitectures)
    if (to_string(a) == s) return a;
  throw Error("unknown architecture '" + std::string(s) +
              "' (expected indep, one2one, input-token, domain-encoding, one2many or many2many)");
}

/// Token <-> id map with stable ids.
class Vocab {
 public:
  Vocab() = default;

  explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], i).second) throw Error("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }

  std::optional<std::size_t> find(std::string_view tok) const {
    auto it = index_.find(tok);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(std::string_view tok) const { return index_.find(tok) != index_.end(); }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// What a model needs to know about a domain: its name, the word counts of
/// its training utterances and the tokens of its training logical forms.
struct DomainSpec {
  std::string name;
  std::map<std::string, int> input_counts;
  std::set<std::string> output_tokens;

  bool operator==(const DomainSpec&) const = default;
};

inline DomainSpec make_domain_spec(std::string name, std::span<const Example> train) {
  DomainSpec spec;
  spec.name = std::move(name);
  for (const auto& ex : train) {
    for (const auto& w : ex.utterance) ++spec.input_counts[w];
    for (const auto& t : ex.logical_form) spec.output_tokens.insert(t);
  }
  return spec;
}

inline std::string domain_token(std::string_view name) { return "@" + std::string(name); }

/// Input vocabulary over the pooled counts of `specs`: <unk> first, then
/// every word seen at least `min_count` times.
inline Vocab input_vocab(std::span<const DomainSpec* const> specs, int min_count = 2,
                         std::span<const std::string> extra = {}) {
  std::map<std::string, int> pooled;
  for (const DomainSpec* s : specs)
    for (const auto& [w, c] : s->input_counts) pooled[w] += c;
  std::vector<std::string> tokens{std::string(kUnk)};
  for (const auto& [w, c] : pooled)
    if (c >= min_count && w != kUnk) tokens.push_back(w);
  for (const auto& e : extra) tokens.push_back(e);
  return Vocab(std::move(tokens));
}

/// Output vocabulary: </s>, <unk>, then the union of logical-form tokens.
inline Vocab output_vocab(std::span<const DomainSpec* const> specs) {
  std::set<std::string> pooled;
  for (const DomainSpec* s : specs) pooled.insert(s->output_tokens.begin(), s->output_tokens.end());
  std::vector<std::string> tokens{std::string(kEos), std::string(kUnk)};
  for (const auto& t : pooled)
    if (t != kEos && t != kUnk) tokens.push_back(t);
  return Vocab(std::move(tokens));
}

struct Encoder {
  std::string name;
  std::size_t embedding = ad::npos;
  seq2seq::LstmCell forward;
  seq2seq::LstmCell backward;
  Vocab vocab;
};

struct Decoder {
  std::string name;
  seq2seq::DecoderParams params;
  Vocab vocab;
};

struct Model {
  Architecture architecture = Architecture::One2One;
  std::size_t hidden = 0;
  std::size_t embedding = 0;
  std::vector<DomainSpec> domains;
  ad::ParameterStore params;
  std::vector<Encoder> encoders;
  std::vector<Decoder> decoders;
  std::vector<std::vector<bool>> masks;  // per domain, over its decoder's vocabulary

  std::size_t domain_count() const noexcept { return domains.size(); }

  std::size_t domain_index(std::string_view name) const {
    for (std::size_t k = 0; k < domains.size(); ++k)
      if (domains[k].name == name) return k;
    throw Error("model has no domain '" + std::string(name) + "'");
  }

  void check_domain(std::size_t k) const {
    if (k >= domains.size()) {
      throw DomainError("domain id " + std::to_string(k) + " out of range for K=" + std::to_string(domains.size()));
    }
  }

  bool per_domain_encoders() const {
    return architecture == Architecture::Indep || architecture == Architecture::Many2Many;
  }
  bool per_domain_decoders() const {
    return architecture == Architecture::Indep || architecture == Architecture::One2Many ||
           architecture == Architecture::Many2Many;
  }

  const Encoder& encoder_for(std::size_t k) const {
    check_domain(k);
    return encoders.at(per_domain_encoders() ? k : 0);
  }
  const Decoder& decoder_for(std::size_t k) const {
    check_domain(k);
    return decoders.at(per_domain_decoders() ? k : 0);
  }
  const Encoder* general_encoder() const {
    return architecture == Architecture::Many2Many ? &encoders.back() : nullptr;
  }
};

inline std::size_t count_parameters(const Model& model) { return model.params.scalar_count(); }

/// Every trainable scalar drawn i.i.d. uniform on [-range, range].
inline void init_uniform(ad::ParameterStore& params, std::uint64_t seed, double range = 0.1) {
  Rng rng(seed);
  for (auto& p : params)
    for (double& v : p.value.values()) v = rng.uniform(-range, range);
}

namespace detail {

inline Encoder add_encoder(ad::ParameterStore& params, std::string name, Vocab vocab, std::size_t emb, std::size_t H) {
  Encoder e;
  e.embedding = params.add("encoder" + name + ".embed", {vocab.size(), emb});
  e.forward = seq2seq::add_lstm(params, "encoder" + name + ".fwd", emb, H);
  e.backward = seq2seq::add_lstm(params, "encoder" + name + ".bwd", emb, H);
  e.name = std::move(name);
  e.vocab = std::move(vocab);
  return e;
}

inline Decoder add_decoder(ad::ParameterStore& params, std::string name, Vocab vocab, std::size_t emb, std::size_t H,
                           std::size_t memory_width, std::size_t domain_inputs) {
  Decoder d;
  const std::string p = "decoder" + name;
  d.params.embedding = params.add(p + ".embed", {vocab.size(), emb});
  d.params.init_weights = params.add(p + ".Ws", {H, memory_width});
  d.params.attention_weights = params.add(p + ".Wa", {memory_width, H});
  d.params.output_weights = params.add(p + ".U", {vocab.size(), H + memory_width});
  d.params.cell = seq2seq::add_lstm(params, p + ".lstm", emb + memory_width + domain_inputs, H);
  d.params.vocab_size = vocab.size();
  d.name = std::move(name);
  d.vocab = std::move(vocab);
  return d;
}

}  // namespace detail

inline Model build_model(Architecture arch, std::span<const DomainSpec> domains, std::size_t hidden,
                         std::size_t embedding, std::uint64_t seed) {
  if (domains.empty()) throw Error("a model needs at least one domain (K=0)");
  if (hidden == 0 || embedding == 0) throw Error("hidden and embedding sizes must be positive");
  {
    std::set<std::string> seen;
    for (const auto& d : domains)
      if (!seen.insert(d.name).second) throw Error("duplicate domain name '" + d.name + "'");
  }
  Model m;
  m.architecture = arch;
  m.hidden = hidden;
  m.embedding = embedding;
  m.domains.assign(domains.begin(), domains.end());
  const std::size_t K = domains.size();
  const std::size_t H = hidden;

  std::vector<const DomainSpec*> all;
  for (const auto& d : m.domains) all.push_back(&d);
  auto single = [&](std::size_t k) { return std::vector<const DomainSpec*>{&m.domains[k]}; };
  auto tag = [&](std::size_t k) { return "[" + m.domains[k].name + "]"; };

  switch (arch) {
    case Architecture::Indep:
      for (std::size_t k = 0; k < K; ++k) {
        m.encoders.push_back(detail::add_encoder(m.params, tag(k), input_vocab(single(k)), embedding, H));
        m.decoders.push_back(detail::add_decoder(m.params, tag(k), output_vocab(single(k)), embedding, H, 2 * H, 0));
      }
      break;
    case Architecture::One2One:
    case Architecture::DomainEncoding:
    case Architecture::InputToken: {
      std::vector<std::string> extra;
      if (arch == Architecture::InputToken)
        for (const auto& d : m.domains) extra.push_back(domain_token(d.name));
      m.encoders.push_back(detail::add_encoder(m.params, "", input_vocab(all, 2, extra), embedding, H));
      m.decoders.push_back(detail::add_decoder(m.params, "", output_vocab(all), embedding, H, 2 * H,
                                               arch == Architecture::DomainEncoding ? K : 0));
      break;
    }
    case Architecture::One2Many:
      m.encoders.push_back(detail::add_encoder(m.params, "", input_vocab(all), embedding, H));
      for (std::size_t k = 0; k < K; ++k)
        m.decoders.push_back(detail::add_decoder(m.params, tag(k), output_vocab(single(k)), embedding, H, 2 * H, 0));
      break;
    case Architecture::Many2Many:
      for (std::size_t k = 0; k < K; ++k)
        m.encoders.push_back(detail::add_encoder(m.params, tag(k), input_vocab(single(k)), embedding, H));
      m.encoders.push_back(detail::add_encoder(m.params, "[*]", input_vocab(all), embedding, H));
      for (std::size_t k = 0; k < K; ++k)
        m.decoders.push_back(detail::add_decoder(m.params, tag(k), output_vocab(single(k)), embedding, H, 4 * H, 0));
      break;
  }

  for (std::size_t k = 0; k < K; ++k) {
    const Vocab& v = m.decoder_for(k).vocab;
    std::vector<bool> allowed(v.size(), false);
    for (std::size_t w = 0; w < v.size(); ++w)
      allowed[w] = v.token(w) == kEos || m.domains[k].output_tokens.contains(v.token(w));
    m.masks.push_back(std::move(allowed));
  }
  init_uniform(m.params, seed);
  return m;
}

inline Tensor domain_onehot(std::size_t k, std::size_t K) {
  if (k >= K) throw DomainError("domain index " + std::to_string(k) + " out of range for K=" + std::to_string(K));
  Tensor t({K});
  t[k] = 1.0;
  return t;
}

/// Prefixes the artificial domain token; only meaningful for input-token models.
inline std::vector<std::string> prepend_domain_token(std::span<const std::string> tokens, const DomainSpec& domain,
                                                     Architecture arch) {
  if (arch != Architecture::InputToken) {
    throw Error("domain tokens are only used by the input-token architecture, not " + std::string(to_string(arch)));
  }
  std::vector<std::string> out{domain_token(domain.name)};
  out.insert(out.end(), tokens.begin(), tokens.end());
  return out;
}

/// Source tokens as the encoder sees them (with the domain token when used).
inline std::vector<std::string> source_tokens(const Model& m, std::span<const std::string> utterance, std::size_t k) {
  m.check_domain(k);
  if (m.architecture == Architecture::InputToken) return prepend_domain_token(utterance, m.domains[k], m.architecture);
  return {utterance.begin(), utterance.end()};
}

/// Joint distribution over a domain's actions with out-of-domain write
/// actions removed before normalisation.
inline seq2seq::OutputDistribution mask_actions(const Model& m, std::span<const double> logits, std::size_t k) {
  m.check_domain(k);
  const auto& allowed = m.masks[k];
  return seq2seq::masked_distribution(logits, allowed.size(), allowed);
}

/// Encoder outputs routed for domain k.
struct SourceEncoding {
  std::vector<std::string> tokens;  // realised source tokens, used by copy actions
  seq2seq::EncoderOutput specific;
  std::optional<seq2seq::EncoderOutput> general;
  seq2seq::AttentionMemory memory;
  ad::Var boundary;  // [h^F_m, h^B_1] (and the general encoder's pair for many2many)
};

inline std::vector<std::size_t> encode_ids(const Vocab& vocab, std::span<const std::string> tokens) {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  const std::size_t unk = *vocab.find(kUnk);
  for (const auto& t : tokens) ids.push_back(vocab.find(t).value_or(unk));
  return ids;
}

inline SourceEncoding encode_for_domain(ad::Graph& g, const Model& m, std::span<const std::string> utterance,
                                        std::size_t k) {
  SourceEncoding s;
  s.tokens = source_tokens(m, utterance, k);
  const Encoder& enc = m.encoder_for(k);
  s.specific = seq2seq::encode_bidirectional(g, encode_ids(enc.vocab, s.tokens), enc.embedding, enc.forward,
                                             enc.backward);
  if (const Encoder* gen = m.general_encoder()) {
    s.general = seq2seq::encode_bidirectional(g, encode_ids(gen->vocab, s.tokens), gen->embedding, gen->forward,
                                              gen->backward);
    std::vector<ad::Var> joint;
    for (std::size_t i = 0; i < s.tokens.size(); ++i)
      joint.push_back(ad::concat(g, {s.specific.states[i], s.general->states[i]}));
    s.memory = seq2seq::make_memory(g, joint);
    s.boundary = ad::concat(g, {s.specific.final_forward, s.specific.first_backward, s.general->final_forward,
                                s.general->first_backward});
  } else {
    s.memory = seq2seq::make_memory(g, s.specific.states);
    s.boundary = ad::concat(g, {s.specific.final_forward, s.specific.first_backward});
  }
  return s;
}

inline std::optional<ad::Var> domain_input(ad::Graph& g, const Model& m, std::size_t k) {
  if (m.architecture != Architecture::DomainEncoding) return std::nullopt;
  return g.constant(domain_onehot(k, m.domain_count()));
}

/// Teacher-forcing targets for a gold logical form (end-of-sequence appended).
inline std::vector<seq2seq::TargetStep> make_targets(const Vocab& vocab, std::span<const std::string> source,
                                                     std::span<const std::string> gold) {
  std::vector<seq2seq::TargetStep> steps;
  const std::size_t unk = *vocab.find(kUnk);
  auto add = [&](const std::string& tok) {
    seq2seq::TargetStep st;
    if (auto id = vocab.find(tok)) st.actions.push_back(*id);
    for (std::size_t i = 0; i < source.size(); ++i)
      if (source[i] == tok) st.actions.push_back(vocab.size() + i);
    if (st.actions.empty()) {
      throw Error("gold token '" + tok + "' is neither in the output vocabulary nor copyable from the input");
    }
    st.next_input = vocab.find(tok).value_or(unk);
    steps.push_back(std::move(st));
  };
  for (const auto& t : gold) add(t);
  add(std::string(kEos));
  return steps;
}

/// Graph node holding the negative log-likelihood of one example.
inline ad::Var example_loss(ad::Graph& g, const Model& m, const Example& ex, bool mask = false) {
  SourceEncoding src = encode_for_domain(g, m, ex.utterance, ex.domain);
  const Decoder& dec = m.decoder_for(ex.domain);
  auto targets = make_targets(dec.vocab, src.tokens, ex.logical_form);
  return seq2seq::sequence_nll(g, dec.params, src.memory, src.boundary, targets, domain_input(g, m, ex.domain),
                               mask ? m.masks[ex.domain] : std::vector<bool>{});
}

inline double sequence_nll(const Model& m, const Example& ex) {
  ad::Graph g(&m.params);
  return g.value(example_loss(g, m, ex))[0];
}

}  // namespace mkb

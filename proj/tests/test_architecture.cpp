#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mkbparse/architecture.hpp"
#include "mkbparse/decoding.hpp"
#include "mkbparse/random.hpp"
#include "oracles.hpp"

using namespace mkb;

namespace {

DomainSpec spec(std::string name, std::vector<std::string> words, std::vector<std::string> outputs) {
  DomainSpec s;
  s.name = std::move(name);
  for (auto& w : words) s.input_counts[w] += 2;
  s.output_tokens.insert(outputs.begin(), outputs.end());
  return s;
}

std::vector<DomainSpec> specs(std::size_t K) {
  std::vector<DomainSpec> out;
  for (std::size_t k = 0; k < K; ++k) {
    const std::string n = "d" + std::to_string(k);
    out.push_back(spec(n, {"find", "show", n + "word", "x" + n}, {"Type." + n, "P" + n, "(", ")", "shared"}));
  }
  return out;
}

// Same sizes for every domain, so parameter counts scale exactly with K.
std::vector<DomainSpec> uniform_specs(std::size_t K) {
  std::vector<DomainSpec> out;
  for (std::size_t k = 0; k < K; ++k) {
    out.push_back(spec("d" + std::to_string(k), {"find", "show", "w"}, {"A", "B", "C"}));
  }
  return out;
}

std::size_t count(Architecture a, std::size_t K, std::size_t H = 8, std::size_t E = 6) {
  auto s = uniform_specs(K);
  return count_parameters(build_model(a, s, H, E, 1));
}

Example example(std::size_t k, std::vector<std::string> u, std::vector<std::string> y) {
  return {k, std::move(u), std::move(y)};
}

}  // namespace

TEST(Architecture, NamesRoundTrip) {
  for (Architecture a : kAllArchitectures) EXPECT_EQ(parse_architecture(to_string(a)), a);
  EXPECT_THROW(parse_architecture("seq2tree"), Error);
}

TEST(BuildModel, RejectsEmptyAndDuplicateDomains) {
  std::vector<DomainSpec> none;
  EXPECT_THROW(build_model(Architecture::One2One, none, 8, 6, 1), Error);
  auto dup = specs(2);
  dup[1].name = dup[0].name;
  EXPECT_THROW(build_model(Architecture::One2One, dup, 8, 6, 1), Error);
  auto ok = specs(1);
  EXPECT_THROW(build_model(Architecture::One2One, ok, 0, 6, 1), Error);
}

TEST(BuildModel, SharedCountIndependentOfK) {
  EXPECT_EQ(count(Architecture::One2One, 2), count(Architecture::One2One, 8));
  EXPECT_EQ(count(Architecture::One2One, 1), count(Architecture::One2One, 5));
}

TEST(BuildModel, IndepScalesLinearly) {
  for (std::size_t K : {2u, 3u, 8u}) EXPECT_EQ(count(Architecture::Indep, K), K * count(Architecture::Indep, 1));
}

TEST(BuildModel, DomainEncodingAddsFourHPerDomain) {
  for (std::size_t K : {1u, 2u, 5u}) {
    for (std::size_t H : {4u, 8u}) {
      EXPECT_EQ(count(Architecture::DomainEncoding, K, H) - count(Architecture::One2One, K, H), 4 * H * K);
    }
  }
}

TEST(BuildModel, InputTokenAddsOneEmbeddingRowPerDomain) {
  for (std::size_t K : {1u, 3u})
    EXPECT_EQ(count(Architecture::InputToken, K, 8, 6) - count(Architecture::One2One, K, 8, 6), 6 * K);
}

TEST(BuildModel, EncoderAndDecoderLayouts) {
  auto s = specs(3);
  const std::size_t H = 8;
  auto m2m = build_model(Architecture::Many2Many, s, H, 6, 1);
  EXPECT_EQ(m2m.encoders.size(), 4u);
  EXPECT_EQ(m2m.decoders.size(), 3u);
  for (const auto& d : m2m.decoders) {
    EXPECT_EQ(m2m.params[d.params.init_weights].value.shape(), (Shape{H, 4 * H}));
    EXPECT_EQ(m2m.params[d.params.attention_weights].value.dim(0), 4 * H);
  }
  auto o2m = build_model(Architecture::One2Many, s, H, 6, 1);
  EXPECT_EQ(o2m.encoders.size(), 1u);
  EXPECT_EQ(o2m.decoders.size(), 3u);
  auto ind = build_model(Architecture::Indep, s, H, 6, 1);
  EXPECT_EQ(ind.encoders.size(), 3u);
  EXPECT_EQ(ind.decoders.size(), 3u);
  for (Architecture a : {Architecture::One2One, Architecture::InputToken, Architecture::DomainEncoding}) {
    auto m = build_model(a, s, H, 6, 1);
    EXPECT_EQ(m.encoders.size(), 1u);
    EXPECT_EQ(m.decoders.size(), 1u);
  }
}

TEST(BuildModel, CountEqualsSumOfShapes) {
  auto s = specs(3);
  for (Architecture a : kAllArchitectures) {
    auto m = build_model(a, s, 5, 4, 2);
    std::size_t total = 0;
    for (const auto& p : m.params) total += shape_size(p.value.shape());
    EXPECT_EQ(count_parameters(m), total);
  }
}

TEST(BuildModel, InitialisationWithinRange) {
  auto s = specs(2);
  auto m = build_model(Architecture::Many2Many, s, 8, 6, 3);
  for (const auto& p : m.params)
    for (double v : p.value.values()) {
      EXPECT_GE(v, -0.1);
      EXPECT_LE(v, 0.1);
    }
}

TEST(Vocab, UnkRuleAndOutputLayout) {
  DomainSpec d;
  d.name = "d";
  d.input_counts = {{"once", 1}, {"twice", 2}, {"many", 9}};
  d.output_tokens = {"B", "A"};
  const DomainSpec* ptr = &d;
  Vocab in = input_vocab(std::span<const DomainSpec* const>(&ptr, 1));
  EXPECT_EQ(in.tokens(), (std::vector<std::string>{"<unk>", "many", "twice"}));
  Vocab out = output_vocab(std::span<const DomainSpec* const>(&ptr, 1));
  EXPECT_EQ(out.tokens(), (std::vector<std::string>{"</s>", "<unk>", "A", "B"}));
}

TEST(DomainOnehot, DefinitionAndRange) {
  EXPECT_EQ(domain_onehot(1, 3), Tensor::vector({0, 1, 0}));
  EXPECT_EQ(domain_onehot(0, 1), Tensor::vector({1}));
  EXPECT_THROW(domain_onehot(3, 3), DomainError);
}

TEST(PrependDomainToken, OnlyForInputToken) {
  DomainSpec housing;
  housing.name = "housing";
  std::vector<std::string> toks{"find", "housing"};
  auto out = prepend_domain_token(toks, housing, Architecture::InputToken);
  EXPECT_EQ(out, (std::vector<std::string>{"@housing", "find", "housing"}));
  EXPECT_EQ(out.size(), toks.size() + 1);
  EXPECT_THROW(prepend_domain_token(toks, housing, Architecture::One2One), Error);
  auto s = specs(2);
  auto m = build_model(Architecture::InputToken, s, 4, 3, 1);
  EXPECT_TRUE(m.encoders[0].vocab.contains("@d0"));
  EXPECT_TRUE(m.encoders[0].vocab.contains("@d1"));
}

TEST(MaskActions, UniformWithOneExcluded) {
  std::vector<DomainSpec> s{spec("a", {"w"}, {"A", "B"}), spec("b", {"w"}, {"C"})};
  auto m = build_model(Architecture::One2One, s, 4, 3, 1);
  // Union vocabulary: </s> <unk> A B C; domain a allows </s> A B.
  ASSERT_EQ(m.decoders[0].vocab.size(), 5u);
  std::vector<double> logits(5, 0.0);
  auto d = mask_actions(m, logits, 0);
  EXPECT_EQ(d.probabilities, (std::vector<double>{1.0 / 3, 0, 1.0 / 3, 1.0 / 3, 0}));
  auto e = mask_actions(m, logits, 1);
  EXPECT_EQ(e.probabilities, (std::vector<double>{0.5, 0, 0, 0, 0.5}));
}

TEST(MaskActions, MatchesSubsetSoftmax) {
  auto s = specs(3);
  auto m = build_model(Architecture::DomainEncoding, s, 4, 3, 1);
  Rng rng(4);
  const std::size_t V = m.decoders[0].vocab.size();
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = rng.below(3);
    const std::size_t copies = 1 + rng.below(4);
    std::vector<double> logits(V + copies);
    for (double& v : logits) v = rng.uniform(-5, 5);
    auto d = mask_actions(m, logits, k);
    std::vector<double> kept;
    std::vector<std::size_t> where;
    for (std::size_t a = 0; a < logits.size(); ++a) {
      if (a >= V || m.masks[k][a]) {
        kept.push_back(logits[a]);
        where.push_back(a);
      }
    }
    auto p = oracle::softmax(kept);
    std::vector<double> want(logits.size(), 0.0);
    for (std::size_t i = 0; i < where.size(); ++i) want[where[i]] = p[i];
    for (std::size_t a = 0; a < logits.size(); ++a) EXPECT_NEAR(d.probabilities[a], want[a], 1e-12);
  }
}

TEST(MaskActions, DomainMaskCoversOwnTokensOnly) {
  auto s = specs(3);
  auto m = build_model(Architecture::One2One, s, 4, 3, 1);
  const Vocab& v = m.decoders[0].vocab;
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t w = 0; w < v.size(); ++w) {
      const bool expect = v.token(w) == kEos || s[k].output_tokens.contains(v.token(w));
      EXPECT_EQ(m.masks[k][w], expect) << v.token(w);
    }
    EXPECT_FALSE(m.masks[k][*v.find(kUnk)]);
  }
}

TEST(EncodeForDomain, ManyToManyContextIsFourH) {
  auto s = specs(2);
  const std::size_t H = 5;
  auto m = build_model(Architecture::Many2Many, s, H, 3, 1);
  ad::Graph g(&m.params);
  std::vector<std::string> u{"find", "d1word", "zzz"};
  auto enc = encode_for_domain(g, m, u, 1);
  EXPECT_EQ(enc.memory.width, 4 * H);
  EXPECT_EQ(g.value(enc.boundary).size(), 4 * H);
  ASSERT_TRUE(enc.general.has_value());
  EXPECT_THROW(encode_for_domain(g, m, u, 2), DomainError);
}

TEST(EncodeForDomain, SharedEncoderIgnoresDomain) {
  auto s = specs(2);
  auto m = build_model(Architecture::One2Many, s, 4, 3, 1);
  std::vector<std::string> u{"find", "show"};
  ad::Graph g(&m.params);
  auto a = encode_for_domain(g, m, u, 0);
  auto b = encode_for_domain(g, m, u, 1);
  for (std::size_t i = 0; i < u.size(); ++i) EXPECT_EQ(g.value(a.specific.states[i]), g.value(b.specific.states[i]));
}

TEST(EncodeForDomain, IndepZeroingOneEncoderAffectsOnlyItsDomain) {
  auto s = uniform_specs(2);
  auto m = build_model(Architecture::Indep, s, 4, 3, 1);
  std::vector<std::string> u{"find", "w"};
  auto states = [&](const Model& model, std::size_t k) {
    ad::Graph g(&model.params);
    auto e = encode_for_domain(g, model, u, k);
    std::vector<Tensor> out;
    for (ad::Var v : e.specific.states) out.push_back(g.value(v));
    return out;
  };
  const auto before0 = states(m, 0), before1 = states(m, 1);
  for (auto& p : m.params)
    if (p.name.starts_with("encoder[d0]")) p.value.fill(0.0);
  EXPECT_NE(states(m, 0), before0);
  EXPECT_EQ(states(m, 1), before1);
}

TEST(ManyToMany, ZeroGeneralEncoderLeavesSpecificAttention) {
  auto s = uniform_specs(2);
  const std::size_t H = 4;
  auto m = build_model(Architecture::Many2Many, s, H, 3, 1);
  for (auto& p : m.params)
    if (p.name.starts_with("encoder[*]")) p.value.fill(0.0);
  ad::Graph g(&m.params);
  std::vector<std::string> u{"find", "w", "show"};
  auto enc = encode_for_domain(g, m, u, 0);
  // With every general weight zero, all general states are exactly zero.
  for (ad::Var v : enc.general->states) EXPECT_EQ(g.value(v), Tensor({2 * H}));
  const Decoder& dec = m.decoder_for(0);
  auto st = seq2seq::init_decoder(g, enc.boundary, dec.params.init_weights);
  auto att = seq2seq::attend(g, st, enc.memory, dec.params.attention_weights);
  for (std::size_t k = 2 * H; k < 4 * H; ++k) EXPECT_EQ(g.value(att.context)[k], 0.0);
}

TEST(ExampleLoss, CopyOnlyTokenIsCredited) {
  std::vector<DomainSpec> s{spec("a", {"find", "w"}, {"A"})};
  auto m = build_model(Architecture::One2One, s, 4, 3, 1);
  // "w" is not an output token but is copyable from position 1.
  auto targets = make_targets(m.decoders[0].vocab, std::vector<std::string>{"find", "w"},
                              std::vector<std::string>{"A", "w"});
  ASSERT_EQ(targets.size(), 3u);
  EXPECT_EQ(targets[1].actions, (std::vector<std::size_t>{m.decoders[0].vocab.size() + 1}));
  EXPECT_EQ(targets[1].next_input, *m.decoders[0].vocab.find(kUnk));
  EXPECT_THROW(make_targets(m.decoders[0].vocab, std::vector<std::string>{"find"}, std::vector<std::string>{"Z"}),
               Error);
  EXPECT_TRUE(std::isfinite(sequence_nll(m, example(0, {"find", "w"}, {"A", "w"}))));
}

TEST(Decoding, MaskedWriteActionsNeverEmitted) {
  auto s = specs(3);
  Rng rng(9);
  for (Architecture a : kAllArchitectures) {
    auto m = build_model(a, s, 6, 4, 5);
    for (auto& p : m.params)
      for (double& v : p.value.values()) v = rng.uniform(-1, 1);
    for (std::size_t k = 0; k < 3; ++k) {
      std::vector<std::string> u{"find", "d" + std::to_string(k) + "word", "show"};
      DecodeSession session(m, u, k);
      for (const auto& h : beam_search(session, 5, 8)) {
        for (std::size_t act : h.actions) {
          if (act < session.write_actions()) {
            EXPECT_TRUE(m.masks[k][act]) << to_string(a) << " domain " << k << " act " << act;
          }
        }
      }
    }
  }
}

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "mkbparse/gradcheck.hpp"
#include "mkbparse/random.hpp"
#include "mkbparse/seq2seq.hpp"
#include "oracles.hpp"

using namespace mkb;
using namespace mkb::seq2seq;
using ad::Graph;
using ad::ParameterStore;
using ad::Var;

namespace {

void randomize(ParameterStore& ps, std::uint64_t seed, double range = 0.5) {
  Rng rng(seed);
  for (auto& p : ps)
    for (double& v : p.value.values()) v = rng.uniform(-range, range);
}

std::vector<double> vec(const Graph& g, Var v) { return g.value(v).values(); }

// Small decoder over a random encoder, shared by several tests.
struct Toy {
  static constexpr std::size_t H = 4, E = 3, Vin = 6, Vout = 5;
  ParameterStore ps;
  std::size_t in_embed, out_embed, Ws, Wa, U;
  LstmCell fwd, bwd, dec;

  explicit Toy(std::uint64_t seed, std::size_t domain_inputs = 0) {
    in_embed = ps.add("in.embed", {Vin, E});
    fwd = add_lstm(ps, "fwd", E, H);
    bwd = add_lstm(ps, "bwd", E, H);
    out_embed = ps.add("out.embed", {Vout, E});
    Ws = ps.add("Ws", {H, 2 * H});
    Wa = ps.add("Wa", {2 * H, H});
    U = ps.add("U", {Vout, 3 * H});
    dec = add_lstm(ps, "dec", E + 2 * H + domain_inputs, H);
    randomize(ps, seed);
  }

  DecoderParams params() const { return {out_embed, Ws, Wa, U, dec, Vout}; }
};

}  // namespace

TEST(Lstm, ZeroWeightsGiveZeroState) {
  ParameterStore ps;
  LstmCell cell = add_lstm(ps, "c", 3, 2);
  Graph g(&ps);
  LstmState s = lstm_step(g, cell, g.constant(Tensor::vector({1, -2, 3})), zero_state(g, 2));
  EXPECT_EQ(g.value(s.h), Tensor({2}));
  EXPECT_EQ(g.value(s.c), Tensor({2}));
}

TEST(Lstm, MatchesScalarLoopOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    ParameterStore ps;
    LstmCell cell = add_lstm(ps, "c", 5, 3);
    randomize(ps, 100 + trial);
    oracle::Vec x(5), h(3), c(3);
    for (double& v : x) v = rng.uniform(-1, 1);
    for (double& v : h) v = rng.uniform(-1, 1);
    for (double& v : c) v = rng.uniform(-1, 1);
    Graph g(&ps);
    LstmState out = lstm_step(g, cell, g.constant(Tensor::vector(x)),
                              {g.constant(Tensor::vector(h)), g.constant(Tensor::vector(c))});
    oracle::State want = oracle::lstm(ps, cell, x, {h, c});
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_NEAR(g.value(out.h)[k], want.h[k], 1e-12);
      EXPECT_NEAR(g.value(out.c)[k], want.c[k], 1e-12);
    }
  }
}

TEST(Lstm, WrongInputWidthThrows) {
  ParameterStore ps;
  LstmCell cell = add_lstm(ps, "c", 3, 2);
  Graph g(&ps);
  EXPECT_THROW(lstm_step(g, cell, g.constant(Tensor({4})), zero_state(g, 2)), DimensionError);
}

TEST(Encoder, LengthOneCombinesOneStepEachWay) {
  Toy t(1);
  Graph g(&t.ps);
  std::vector<std::size_t> ids{3};
  EncoderOutput enc = encode_bidirectional(g, ids, t.in_embed, t.fwd, t.bwd);
  ASSERT_EQ(enc.states.size(), 1u);
  const auto x = oracle::row(t.ps[t.in_embed].value, 3);
  oracle::State zero{oracle::Vec(Toy::H), oracle::Vec(Toy::H)};
  const auto want = oracle::cat(oracle::lstm(t.ps, t.fwd, x, zero).h, oracle::lstm(t.ps, t.bwd, x, zero).h);
  const auto got = vec(g, enc.states[0]);
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(Encoder, StreamsMatchForwardOnlyOracles) {
  Toy t(2);
  std::vector<std::size_t> ids{0, 4, 2, 5};
  Graph g(&t.ps);
  EncoderOutput enc = encode_bidirectional(g, ids, t.in_embed, t.fwd, t.bwd);
  EXPECT_EQ(enc.width, 2 * Toy::H);
  // Forward stream: plain left-to-right run. Backward stream: left-to-right
  // run of the backward cell over the reversed sequence, read in reverse.
  oracle::State s{oracle::Vec(Toy::H), oracle::Vec(Toy::H)};
  std::vector<oracle::Vec> fwd, bwd_rev;
  for (std::size_t id : ids) fwd.push_back((s = oracle::lstm(t.ps, t.fwd, oracle::row(t.ps[t.in_embed].value, id), s)).h);
  s = {oracle::Vec(Toy::H), oracle::Vec(Toy::H)};
  for (auto it = ids.rbegin(); it != ids.rend(); ++it)
    bwd_rev.push_back((s = oracle::lstm(t.ps, t.bwd, oracle::row(t.ps[t.in_embed].value, *it), s)).h);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto want = oracle::cat(fwd[i], bwd_rev[ids.size() - 1 - i]);
    const auto got = vec(g, enc.states[i]);
    ASSERT_EQ(got.size(), 2 * Toy::H);
    for (std::size_t k = 0; k < want.size(); ++k) EXPECT_NEAR(got[k], want[k], 1e-12);
  }
  EXPECT_EQ(vec(g, enc.final_forward), vec(g, ad::split(g, enc.states.back(), {Toy::H, Toy::H})[0]));
  EXPECT_EQ(vec(g, enc.first_backward), vec(g, ad::split(g, enc.states.front(), {Toy::H, Toy::H})[1]));
}

TEST(Encoder, RejectsEmptyAndUnknownIds) {
  Toy t(3);
  Graph g(&t.ps);
  EXPECT_THROW(encode_bidirectional(g, std::vector<std::size_t>{}, t.in_embed, t.fwd, t.bwd), DomainError);
  EXPECT_THROW(encode_bidirectional(g, std::vector<std::size_t>{1, Toy::Vin}, t.in_embed, t.fwd, t.bwd),
               DomainError);
}

TEST(Encoder, WidthIsTwiceHiddenForAnyLength) {
  Toy t(4);
  for (std::size_t m = 1; m <= 6; ++m) {
    Graph g(&t.ps);
    std::vector<std::size_t> ids(m, 1);
    EncoderOutput enc = encode_bidirectional(g, ids, t.in_embed, t.fwd, t.bwd);
    EXPECT_EQ(enc.states.size(), m);
    for (Var b : enc.states) EXPECT_EQ(g.value(b).size(), 2 * Toy::H);
  }
}

TEST(InitDecoder, ZeroWeightsRangeAndOracle) {
  Toy t(5);
  Graph g(&t.ps);
  std::vector<std::size_t> ids{1, 2, 3};
  EncoderOutput enc = encode_bidirectional(g, ids, t.in_embed, t.fwd, t.bwd);
  Var boundary = ad::concat(g, {enc.final_forward, enc.first_backward});
  DecoderState s = init_decoder(g, boundary, t.Ws);
  const auto want = oracle::matvec(t.ps[t.Ws].value, vec(g, boundary));
  for (std::size_t k = 0; k < Toy::H; ++k) {
    EXPECT_NEAR(g.value(s.hidden)[k], std::tanh(want[k]), 1e-12);
    EXPECT_GT(g.value(s.hidden)[k], -1.0);
    EXPECT_LT(g.value(s.hidden)[k], 1.0);
  }
  EXPECT_EQ(g.value(s.cell), Tensor({Toy::H}));
  t.ps[t.Ws].value.fill(0.0);
  Graph g2(&t.ps);
  EXPECT_EQ(g2.value(init_decoder(g2, g2.constant(Tensor({2 * Toy::H}, 0.3)), t.Ws).hidden), Tensor({Toy::H}));
  ParameterStore bad;
  const std::size_t w = bad.add("Ws", {Toy::H, 3});
  Graph g3(&bad);
  EXPECT_THROW(init_decoder(g3, g3.constant(Tensor({2 * Toy::H})), w), DimensionError);
}

TEST(Attention, ZeroWeightsAverageStates) {
  Toy t(6);
  t.ps[t.Wa].value.fill(0.0);
  Graph g(&t.ps);
  std::vector<std::size_t> ids{0, 1, 2};
  EncoderOutput enc = encode_bidirectional(g, ids, t.in_embed, t.fwd, t.bwd);
  AttentionMemory mem = make_memory(g, enc.states);
  DecoderState s = init_decoder(g, ad::concat(g, {enc.final_forward, enc.first_backward}), t.Ws);
  AttentionReadout r = attend(g, s, mem, t.Wa);
  for (double a : g.value(r.weights).values()) EXPECT_NEAR(a, 1.0 / 3, 1e-15);
  for (std::size_t k = 0; k < 2 * Toy::H; ++k) {
    double mean = 0;
    for (Var b : enc.states) mean += g.value(b)[k] / 3;
    EXPECT_NEAR(g.value(r.context)[k], mean, 1e-15);
  }
}

TEST(Attention, SingleStateGetsAllWeight) {
  Toy t(7);
  Graph g(&t.ps);
  std::vector<std::size_t> ids{4};
  EncoderOutput enc = encode_bidirectional(g, ids, t.in_embed, t.fwd, t.bwd);
  AttentionMemory mem = make_memory(g, enc.states);
  DecoderState s = init_decoder(g, ad::concat(g, {enc.final_forward, enc.first_backward}), t.Ws);
  AttentionReadout r = attend(g, s, mem, t.Wa);
  EXPECT_EQ(g.value(r.weights), Tensor::vector({1.0}));
  for (std::size_t k = 0; k < 2 * Toy::H; ++k) EXPECT_NEAR(g.value(r.context)[k], g.value(enc.states[0])[k], 1e-15);
}

TEST(Attention, MatchesDoubleLoopOracle) {
  Toy t(8);
  Graph g(&t.ps);
  std::vector<std::size_t> ids{5, 0, 3, 3};
  EncoderOutput enc = encode_bidirectional(g, ids, t.in_embed, t.fwd, t.bwd);
  AttentionMemory mem = make_memory(g, enc.states);
  DecoderState s = init_decoder(g, ad::concat(g, {enc.final_forward, enc.first_backward}), t.Ws);
  AttentionReadout r = attend(g, s, mem, t.Wa);
  const auto& Wa = t.ps[t.Wa].value;  // (2H x H): score = s' Wa' b
  const auto sj = vec(g, s.hidden);
  oracle::Vec scores;
  for (Var bv : enc.states) {
    const auto b = vec(g, bv);
    double e = 0;
    for (std::size_t a = 0; a < 2 * Toy::H; ++a)
      for (std::size_t h = 0; h < Toy::H; ++h) e += sj[h] * Wa.at(a, h) * b[a];
    scores.push_back(e);
  }
  const auto alpha = oracle::softmax(scores);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    EXPECT_NEAR(g.value(r.scores)[i], scores[i], 1e-12);
    EXPECT_NEAR(g.value(r.weights)[i], alpha[i], 1e-12);
  }
  const double total = std::accumulate(g.value(r.weights).values().begin(), g.value(r.weights).values().end(), 0.0);
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_THROW(attend(g, s, mem, t.Ws), DimensionError);
}

TEST(OutputDistribution, ForcedChoiceAndUniform) {
  std::vector<double> logits{0.3, -1.0, 2.0, 0.5, 0.1};
  auto d = masked_distribution(logits, 5, {false, false, true, false, false});
  EXPECT_EQ(d.probabilities, (std::vector<double>{0, 0, 1, 0, 0}));
  auto u = masked_distribution(std::vector<double>{1, 1, 1, 1}, 4);
  for (double p : u.probabilities) EXPECT_DOUBLE_EQ(p, 0.25);
  EXPECT_THROW(masked_distribution(std::vector<double>{1, 2}, 2, {false, false}), DomainError);
}

TEST(OutputDistribution, JointWriteAndCopyMatchesEnumeration) {
  Toy t(9);
  Graph g(&t.ps);
  std::vector<std::size_t> ids{1, 2, 3};
  EncoderOutput enc = encode_bidirectional(g, ids, t.in_embed, t.fwd, t.bwd);
  AttentionMemory mem = make_memory(g, enc.states);
  DecoderState s = init_decoder(g, ad::concat(g, {enc.final_forward, enc.first_backward}), t.Ws);
  AttentionReadout r = attend(g, s, mem, t.Wa);
  OutputDistribution d = output_distribution(g, s, r, t.U);
  ASSERT_EQ(d.write_actions, Toy::Vout);
  ASSERT_EQ(d.copy_actions(), 3u);
  const auto write = oracle::matvec(t.ps[t.U].value, oracle::cat(vec(g, s.hidden), vec(g, r.context)));
  oracle::Vec all = write;
  for (double e : g.value(r.scores).values()) all.push_back(e);
  double z = 0;
  for (double v : all) z += std::exp(v);
  for (std::size_t a = 0; a < all.size(); ++a) EXPECT_NEAR(d.probabilities[a], std::exp(all[a]) / z, 1e-12);
}

TEST(DecoderStep, ZeroCellAndDomainWidthChecks) {
  Toy t(10);
  Graph g(&t.ps);
  std::vector<std::size_t> ids{1, 2};
  EncoderOutput enc = encode_bidirectional(g, ids, t.in_embed, t.fwd, t.bwd);
  AttentionMemory mem = make_memory(g, enc.states);
  DecoderState s = init_decoder(g, ad::concat(g, {enc.final_forward, enc.first_backward}), t.Ws);
  AttentionReadout r = attend(g, s, mem, t.Wa);
  DecoderState next = decoder_step(g, 2, r, s, t.dec, t.out_embed);
  EXPECT_EQ(next.step, s.step + 1);
  EXPECT_THROW(decoder_step(g, 2, r, s, t.dec, t.out_embed, g.constant(Tensor::vector({1, 0}))), DimensionError);

  for (auto idx : {t.dec.input_weights, t.dec.state_weights, t.dec.bias}) t.ps[idx].value.fill(0.0);
  Graph g2(&t.ps);
  EncoderOutput enc2 = encode_bidirectional(g2, ids, t.in_embed, t.fwd, t.bwd);
  AttentionMemory mem2 = make_memory(g2, enc2.states);
  DecoderState s2 = init_decoder(g2, ad::concat(g2, {enc2.final_forward, enc2.first_backward}), t.Ws);
  DecoderState z = decoder_step(g2, 1, attend(g2, s2, mem2, t.Wa), s2, t.dec, t.out_embed);
  EXPECT_EQ(g2.value(z.hidden), Tensor({Toy::H}));
  EXPECT_EQ(g2.value(z.cell), Tensor({Toy::H}));
}

TEST(DecoderStep, DomainVectorReachesRecurrence) {
  Toy t(11, 2);
  Graph g(&t.ps);
  std::vector<std::size_t> ids{1, 2};
  EncoderOutput enc = encode_bidirectional(g, ids, t.in_embed, t.fwd, t.bwd);
  AttentionMemory mem = make_memory(g, enc.states);
  DecoderState s = init_decoder(g, ad::concat(g, {enc.final_forward, enc.first_backward}), t.Ws);
  AttentionReadout r = attend(g, s, mem, t.Wa);
  EXPECT_THROW(decoder_step(g, 0, r, s, t.dec, t.out_embed), DimensionError);
  auto a = decoder_step(g, 0, r, s, t.dec, t.out_embed, g.constant(Tensor::vector({1, 0})));
  auto b = decoder_step(g, 0, r, s, t.dec, t.out_embed, g.constant(Tensor::vector({0, 1})));
  EXPECT_NE(g.value(a.hidden), g.value(b.hidden));
  // Oracle: the domain one-hot is the last K columns of the LSTM input.
  const auto x = oracle::cat(oracle::cat(oracle::row(t.ps[t.out_embed].value, 0), vec(g, r.context)), {0, 1});
  const auto want = oracle::lstm(t.ps, t.dec, x, {vec(g, s.hidden), vec(g, s.cell)});
  for (std::size_t k = 0; k < Toy::H; ++k) EXPECT_NEAR(g.value(b.hidden)[k], want.h[k], 1e-12);
}

TEST(SequenceNll, UniformStepsGiveLengthTimesLogActions) {
  Toy t(12);
  for (auto idx : {t.Ws, t.Wa, t.U}) t.ps[idx].value.fill(0.0);
  Graph g(&t.ps);
  std::vector<std::size_t> ids{1, 2, 3};
  EncoderOutput enc = encode_bidirectional(g, ids, t.in_embed, t.fwd, t.bwd);
  AttentionMemory mem = make_memory(g, enc.states);
  std::vector<TargetStep> targets{{{2}, 2}, {{4}, 4}, {{0}, 0}};
  Var loss = sequence_nll(g, t.params(), mem, ad::concat(g, {enc.final_forward, enc.first_backward}), targets);
  const double A = Toy::Vout + ids.size();
  EXPECT_NEAR(g.value(loss)[0], 3 * std::log(A), 1e-12);
}

TEST(SequenceNll, ForcedActionsGiveZeroLoss) {
  Toy t(13);
  Graph g(&t.ps);
  std::vector<std::size_t> ids{1, 2};
  EncoderOutput enc = encode_bidirectional(g, ids, t.in_embed, t.fwd, t.bwd);
  AttentionMemory mem = make_memory(g, enc.states);
  // Every write action except the gold one masked and the gold token also
  // copyable from both positions: the credited mass is the full distribution.
  std::vector<TargetStep> targets{{{3, Toy::Vout, Toy::Vout + 1}, 3}};
  Var loss = sequence_nll(g, t.params(), mem, ad::concat(g, {enc.final_forward, enc.first_backward}), targets,
                          std::nullopt, {false, false, false, true, false});
  EXPECT_NEAR(g.value(loss)[0], 0.0, 1e-14);
}

TEST(SequenceNll, CopyMarginalisationMatchesEnumeration) {
  Toy t(14);
  Graph g(&t.ps);
  std::vector<std::size_t> ids{2, 5, 2};
  EncoderOutput enc = encode_bidirectional(g, ids, t.in_embed, t.fwd, t.bwd);
  AttentionMemory mem = make_memory(g, enc.states);
  Var boundary = ad::concat(g, {enc.final_forward, enc.first_backward});
  // Gold token written by action 1 or copied from positions 0 and 2.
  std::vector<TargetStep> targets{{{1, Toy::Vout + 0, Toy::Vout + 2}, 1}};
  Var loss = sequence_nll(g, t.params(), mem, boundary, targets);
  DecoderState s = init_decoder(g, boundary, t.Ws);
  auto d = output_distribution(g, s, attend(g, s, mem, t.Wa), t.U);
  const double credited = d.probabilities[1] + d.probabilities[Toy::Vout] + d.probabilities[Toy::Vout + 2];
  EXPECT_NEAR(g.value(loss)[0], -std::log(credited), 1e-12);
}

TEST(SequenceNll, GradientsMatchFiniteDifferences) {
  Toy t(15, 2);
  std::vector<std::size_t> ids{1, 4, 1, 3};
  std::vector<TargetStep> targets{{{2, Toy::Vout + 1}, 2}, {{3}, 3}, {{1, Toy::Vout, Toy::Vout + 2}, 1}, {{0}, 0}};
  auto loss = [&](Graph& g) {
    EncoderOutput enc = encode_bidirectional(g, ids, t.in_embed, t.fwd, t.bwd);
    AttentionMemory mem = make_memory(g, enc.states);
    return sequence_nll(g, t.params(), mem, ad::concat(g, {enc.final_forward, enc.first_backward}), targets,
                        g.constant(Tensor::vector({0, 1})));
  };
  auto check = ad::check_gradients(t.ps, loss);
  EXPECT_LT(check.max_relative_error, 1e-4) << check.worst_parameter << "[" << check.worst_index << "]";
}

TEST(SequenceNll, BitwiseDeterministic) {
  Toy a(16), b(16);
  std::vector<std::size_t> ids{1, 4, 2};
  std::vector<TargetStep> targets{{{2}, 2}, {{0}, 0}};
  auto run = [&](Toy& t) {
    Graph g(&t.ps);
    EncoderOutput enc = encode_bidirectional(g, ids, t.in_embed, t.fwd, t.bwd);
    return g.value(sequence_nll(g, t.params(), make_memory(g, enc.states),
                                ad::concat(g, {enc.final_forward, enc.first_backward}), targets))[0];
  };
  const double x = run(a), y = run(b);
  EXPECT_EQ(std::memcmp(&x, &y, sizeof x), 0);
}

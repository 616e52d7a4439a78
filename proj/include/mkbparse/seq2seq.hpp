#pragma once

// Bidirectional LSTM encoder and attention decoder with copying.
//
// Decoding step j, given state s_j and encoder memory b_1..b_m:
//   e_ji  = s_j' W_a b_i              (W_a is stored as (width x H))
//   a_j   = softmax(e_j)
//   c_j   = sum_i a_ji b_i
//   write logits = U [s_j, c_j]; copy logits = e_j
//   s_j+1 = LSTM([phi_out(y_j), c_j (, d_k)], s_j)
// with s_1 = tanh(W_s [h^F_m, h^B_1]) and a zero initial cell.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mkbparse/autodiff.hpp"

namespace mkb::seq2seq {

using ad::Graph;
using ad::Var;

struct LstmCell {
  std::size_t input_weights = ad::npos;  // 4H x D
  std::size_t state_weights = ad::npos;  // 4H x H
  std::size_t bias = ad::npos;           // 4H
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
};

inline LstmCell add_lstm(ad::ParameterStore& store, const std::string& prefix, std::size_t input,
                         std::size_t hidden) {
  LstmCell cell;
  cell.input_weights = store.add(prefix + ".Wx", {4 * hidden, input});
  cell.state_weights = store.add(prefix + ".Wh", {4 * hidden, hidden});
  cell.bias = store.add(prefix + ".b", {4 * hidden});
  cell.input_size = input;
  cell.hidden_size = hidden;
  return cell;
}

struct LstmState {
  Var h;
  Var c;
};

inline LstmState zero_state(Graph& g, std::size_t hidden) {
  return {g.constant(Tensor({hidden})), g.constant(Tensor({hidden}))};
}

/// One LSTM update with gate blocks ordered (input, forget, output, candidate).
inline LstmState lstm_step(Graph& g, const LstmCell& cell, Var input, const LstmState& state) {
  if (g.value(input).shape() != Shape{cell.input_size}) {
    throw DimensionError("lstm input has shape " + shape_string(g.value(input).shape()) +
                         ", cell expects [" + std::to_string(cell.input_size) + "]");
  }
  const std::size_t H = cell.hidden_size;
  if (g.value(state.h).shape() != Shape{H} || g.value(state.c).shape() != Shape{H}) {
    throw DimensionError("lstm state width does not match hidden size " + std::to_string(H));
  }
  Var gates = ad::add(g,
                      ad::add(g, ad::matmul(g, g.parameter(cell.input_weights), input),
                              ad::matmul(g, g.parameter(cell.state_weights), state.h)),
                      g.parameter(cell.bias));
  auto parts = ad::split(g, gates, {H, H, H, H});
  Var i = ad::sigmoid(g, parts[0]);
  Var f = ad::sigmoid(g, parts[1]);
  Var o = ad::sigmoid(g, parts[2]);
  Var u = ad::tanh(g, parts[3]);
  Var c = ad::add(g, ad::mul(g, f, state.c), ad::mul(g, i, u));
  Var h = ad::mul(g, o, ad::tanh(g, c));
  return {h, c};
}

struct EncoderOutput {
  std::vector<Var> states;  // b_i = [h^F_i, h^B_i]
  Var final_forward;        // h^F_m
  Var first_backward;       // h^B_1
  std::size_t width = 0;    // 2H
};

inline EncoderOutput encode_bidirectional(Graph& g, std::span<const std::size_t> ids, std::size_t embedding,
                                          const LstmCell& forward, const LstmCell& backward) {
  if (ids.empty()) throw DomainError("cannot encode an empty input sequence");
  Var table = g.parameter(embedding);
  const std::size_t vocab = g.value(table).dim(0);
  std::vector<Var> embedded;
  embedded.reserve(ids.size());
  for (std::size_t id : ids) {
    if (id >= vocab) {
      throw DomainError("token id " + std::to_string(id) + " outside embedding table of " +
                        std::to_string(vocab) + " rows");
    }
    embedded.push_back(ad::pick_row(g, table, id));
  }
  const std::size_t m = ids.size();
  std::vector<Var> fwd(m), bwd(m);
  LstmState s = zero_state(g, forward.hidden_size);
  for (std::size_t i = 0; i < m; ++i) {
    s = lstm_step(g, forward, embedded[i], s);
    fwd[i] = s.h;
  }
  s = zero_state(g, backward.hidden_size);
  for (std::size_t i = m; i-- > 0;) {
    s = lstm_step(g, backward, embedded[i], s);
    bwd[i] = s.h;
  }
  EncoderOutput out;
  out.states.reserve(m);
  for (std::size_t i = 0; i < m; ++i) out.states.push_back(ad::concat(g, {fwd[i], bwd[i]}));
  out.final_forward = fwd[m - 1];
  out.first_backward = bwd[0];
  out.width = forward.hidden_size + backward.hidden_size;
  return out;
}

/// Encoder states stacked as an (m x width) key matrix and its transpose.
struct AttentionMemory {
  Var keys;
  Var keys_t;
  std::size_t length = 0;
  std::size_t width = 0;
};

inline AttentionMemory make_memory(Graph& g, std::span<const Var> states) {
  if (states.empty()) throw DomainError("attention memory needs at least one state");
  const std::size_t width = g.value(states[0]).size();
  Var flat = ad::concat(g, states);
  AttentionMemory mem;
  mem.keys = ad::reshape(g, flat, {states.size(), width});
  mem.keys_t = ad::transpose(g, mem.keys);
  mem.length = states.size();
  mem.width = width;
  return mem;
}

struct DecoderState {
  Var hidden;
  Var cell;
  std::size_t step = 1;
};

inline DecoderState init_decoder(Graph& g, Var boundary, std::size_t init_weights) {
  Var s = ad::tanh(g, ad::matmul(g, g.parameter(init_weights), boundary));
  const std::size_t H = g.value(s).size();
  return {s, g.constant(Tensor({H})), 1};
}

struct AttentionReadout {
  Var scores;   // e_j1..e_jm
  Var weights;  // alpha_j1..alpha_jm
  Var context;  // c_j
};

inline AttentionReadout attend(Graph& g, const DecoderState& state, const AttentionMemory& memory,
                               std::size_t attention_weights) {
  Var Wa = g.parameter(attention_weights);
  const Tensor& wa = g.value(Wa);
  if (wa.rank() != 2 || wa.dim(0) != memory.width || wa.dim(1) != g.value(state.hidden).size()) {
    throw DimensionError("attention weights " + shape_string(wa.shape()) + " incompatible with memory width " +
                         std::to_string(memory.width) + " and state " +
                         shape_string(g.value(state.hidden).shape()));
  }
  Var query = ad::matmul(g, Wa, state.hidden);
  AttentionReadout r;
  r.scores = ad::matmul(g, memory.keys, query);
  r.weights = ad::softmax(g, r.scores);
  r.context = ad::matmul(g, memory.keys_t, r.weights);
  return r;
}

/// Unnormalised scores of all actions: one write action per output token
/// followed by one copy action per input position.
inline Var action_logits(Graph& g, const DecoderState& state, const AttentionReadout& att,
                         std::size_t output_weights) {
  Var features = ad::concat(g, {state.hidden, att.context});
  Var write = ad::matmul(g, g.parameter(output_weights), features);
  return ad::concat(g, {write, att.scores});
}

struct OutputDistribution {
  std::vector<double> probabilities;
  std::size_t write_actions = 0;

  std::size_t copy_actions() const { return probabilities.size() - write_actions; }
};

/// Joint softmax over the unmasked actions. `allowed` covers the write
/// actions only (copy actions are never masked); empty means no mask.
inline OutputDistribution masked_distribution(std::span<const double> logits, std::size_t write_actions,
                                              const std::vector<bool>& allowed = {}) {
  if (!allowed.empty() && allowed.size() != write_actions) {
    throw DimensionError("mask covers " + std::to_string(allowed.size()) + " write actions, expected " +
                         std::to_string(write_actions));
  }
  auto open = [&](std::size_t a) { return a >= write_actions || allowed.empty() || allowed[a]; };
  double mx = -INFINITY;
  for (std::size_t a = 0; a < logits.size(); ++a)
    if (open(a)) mx = std::max(mx, logits[a]);
  if (mx == -INFINITY) throw DomainError("every action is masked; no valid output");
  OutputDistribution d;
  d.write_actions = write_actions;
  d.probabilities.assign(logits.size(), 0.0);
  double z = 0.0;
  for (std::size_t a = 0; a < logits.size(); ++a)
    if (open(a)) z += (d.probabilities[a] = std::exp(logits[a] - mx));
  for (double& p : d.probabilities) p /= z;
  return d;
}

inline OutputDistribution output_distribution(Graph& g, const DecoderState& state, const AttentionReadout& att,
                                              std::size_t output_weights, const std::vector<bool>& allowed = {}) {
  Var logits = action_logits(g, state, att, output_weights);
  const std::size_t copies = g.value(att.scores).size();
  return masked_distribution(g.value(logits).data(), g.value(logits).size() - copies, allowed);
}

inline DecoderState decoder_step(Graph& g, std::size_t prev_token, const AttentionReadout& att,
                                 const DecoderState& state, const LstmCell& cell, std::size_t embedding,
                                 std::optional<Var> domain = std::nullopt) {
  Var token = ad::pick_row(g, g.parameter(embedding), prev_token);
  const std::size_t width = g.value(token).size() + g.value(att.context).size() +
                            (domain ? g.value(*domain).size() : 0);
  if (width != cell.input_size) {
    throw DimensionError("decoder cell expects input width " + std::to_string(cell.input_size) + ", got " +
                         std::to_string(width) + (domain ? " (with domain vector)" : " (without domain vector)"));
  }
  Var input = domain ? ad::concat(g, {token, att.context, *domain}) : ad::concat(g, {token, att.context});
  LstmState next = lstm_step(g, cell, input, {state.hidden, state.cell});
  return {next.h, next.c, state.step + 1};
}

/// Parameters of one attention decoder.
struct DecoderParams {
  std::size_t embedding = ad::npos;          // phi_out: V x emb
  std::size_t init_weights = ad::npos;       // W_s: H x boundary width
  std::size_t attention_weights = ad::npos;  // W_a: memory width x H
  std::size_t output_weights = ad::npos;     // U: V x (H + memory width)
  LstmCell cell;
  std::size_t vocab_size = 0;
};

/// Teacher-forced target for one step: the actions that emit the gold
/// token (its write action and every copy of it) and the output-vocabulary
/// id fed back as the next input.
struct TargetStep {
  std::vector<std::size_t> actions;
  std::size_t next_input = 0;
};

/// Negative log-likelihood of the gold sequence, crediting each gold token
/// with the summed probability of every action that emits it.
inline Var sequence_nll(Graph& g, const DecoderParams& dec, const AttentionMemory& memory, Var boundary,
                        std::span<const TargetStep> targets, std::optional<Var> domain = std::nullopt,
                        const std::vector<bool>& allowed = {}) {
  if (targets.empty()) throw DomainError("empty target sequence");
  std::vector<bool> full_mask;
  if (!allowed.empty()) {
    full_mask = allowed;
    full_mask.resize(dec.vocab_size + memory.length, true);
  }
  DecoderState state = init_decoder(g, boundary, dec.init_weights);
  Var total;
  for (std::size_t j = 0; j < targets.size(); ++j) {
    AttentionReadout att = attend(g, state, memory, dec.attention_weights);
    Var logits = action_logits(g, state, att, dec.output_weights);
    Var step = ad::log_marginal(g, logits, targets[j].actions, full_mask);
    total = total.valid() ? ad::add(g, total, step) : step;
    if (j + 1 < targets.size()) {
      state = decoder_step(g, targets[j].next_input, att, state, dec.cell, dec.embedding, domain);
    }
  }
  return ad::scale(g, total, -1.0);
}

}  // namespace mkb::seq2seq

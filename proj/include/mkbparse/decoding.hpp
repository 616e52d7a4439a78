#pragma once

// Beam search, executor-filtered prediction and evaluation statistics.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mkbparse/architecture.hpp"
#include "mkbparse/dataset.hpp"
#include "mkbparse/executor.hpp"
#include "mkbparse/logical_form.hpp"

namespace mkb {

struct ActionScore {
  std::size_t action = 0;
  std::string token;
  double log_prob = 0.0;
};

/// Incremental decoder driven by beam search. The decoder state may depend
/// on the realised tokens only, never on which action produced them.
template <class D>
concept StepDecoder = requires(D& d, const typename D::State& s, const std::string& tok) {
  { d.start() } -> std::convertible_to<typename D::State>;
  { d.actions(s) } -> std::convertible_to<std::vector<ActionScore>>;
  { d.advance(s, tok) } -> std::convertible_to<typename D::State>;
};

struct Hypothesis {
  std::vector<std::size_t> actions;
  std::vector<std::string> tokens;  // realised tokens, end-of-sequence included once finished
  double log_prob = 0.0;
  bool finished = false;

  /// Logical-form tokens without the end-of-sequence marker.
  std::vector<std::string> output() const {
    std::vector<std::string> out = tokens;
    if (finished && !out.empty()) out.pop_back();
    return out;
  }
};

namespace detail {

// Higher score first; equal scores ordered by tokens.
inline bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.tokens < b.tokens;
}

}  // namespace detail

/// Standard beam search without length normalisation. Candidate extensions
/// realising the same token sequence are merged, keeping the best score.
/// Returns up to `beam` finished hypotheses, best first; empty when none
/// finishes within `max_len` steps.
template <StepDecoder D>
std::vector<Hypothesis> beam_search(D& decoder, std::size_t beam, std::size_t max_len,
                                    std::string_view eos = kEos) {
  if (beam == 0) throw Error("beam size must be positive");
  if (max_len == 0) throw Error("max length must be positive");
  using State = typename D::State;
  struct Live {
    Hypothesis hyp;
    State state;
  };
  std::vector<Live> live;
  live.push_back({Hypothesis{}, decoder.start()});
  std::vector<Hypothesis> finished;
  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    struct Candidate {
      Hypothesis hyp;
      std::size_t parent;
    };
    std::map<std::vector<std::string>, Candidate> merged;
    for (std::size_t p = 0; p < live.size(); ++p) {
      for (const ActionScore& a : decoder.actions(live[p].state)) {
        if (!(a.log_prob > -std::numeric_limits<double>::infinity())) continue;
        Hypothesis h = live[p].hyp;
        h.actions.push_back(a.action);
        h.tokens.push_back(a.token);
        h.log_prob += a.log_prob;
        h.finished = a.token == eos;
        auto it = merged.find(h.tokens);
        if (it == merged.end()) {
          std::vector<std::string> key = h.tokens;
          merged.emplace(std::move(key), Candidate{std::move(h), p});
        } else if (h.log_prob > it->second.hyp.log_prob) {
          it->second = Candidate{std::move(h), p};
        }
      }
    }
    std::vector<Candidate> ranked;
    ranked.reserve(merged.size());
    for (auto& [_, c] : merged) ranked.push_back(std::move(c));
    std::sort(ranked.begin(), ranked.end(),
              [](const Candidate& a, const Candidate& b) { return detail::better(a.hyp, b.hyp); });
    if (ranked.size() > beam) ranked.resize(beam);
    std::vector<Live> next;
    for (auto& c : ranked) {
      if (c.hyp.finished) {
        finished.push_back(std::move(c.hyp));
      } else {
        State s = decoder.advance(live[c.parent].state, c.hyp.tokens.back());
        next.push_back({std::move(c.hyp), std::move(s)});
      }
    }
    live = std::move(next);
    std::sort(finished.begin(), finished.end(), detail::better);
    if (finished.size() > beam) finished.resize(beam);
    // Scores only decrease with length, so a full set of finished
    // hypotheses that beats every live one is final.
    if (finished.size() == beam && !live.empty()) {
      double best_live = -std::numeric_limits<double>::infinity();
      for (const auto& l : live) best_live = std::max(best_live, l.hyp.log_prob);
      if (best_live < finished.back().log_prob) break;
    }
  }
  return finished;
}

/// Picks the most probable token at every step (ties to the smaller token).
template <StepDecoder D>
std::optional<Hypothesis> greedy_decode(D& decoder, std::size_t max_len, std::string_view eos = kEos) {
  auto state = decoder.start();
  Hypothesis h;
  for (std::size_t step = 0; step < max_len; ++step) {
    std::map<std::string, ActionScore> best;
    for (const ActionScore& a : decoder.actions(state)) {
      if (!(a.log_prob > -std::numeric_limits<double>::infinity())) continue;
      auto it = best.find(a.token);
      if (it == best.end() || a.log_prob > it->second.log_prob) best[a.token] = a;
    }
    if (best.empty()) return std::nullopt;
    const ActionScore* pick = nullptr;
    for (const auto& [tok, a] : best)
      if (!pick || a.log_prob > pick->log_prob) pick = &a;
    h.actions.push_back(pick->action);
    h.tokens.push_back(pick->token);
    h.log_prob += pick->log_prob;
    if (pick->token == eos) {
      h.finished = true;
      return h;
    }
    state = decoder.advance(state, pick->token);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Model decoder

/// Decodes one utterance of domain k with the model's masked action
/// distribution over write and copy actions.
class DecodeSession {
 public:
  struct State {
    seq2seq::DecoderState decoder;
    seq2seq::AttentionReadout attention;
  };

  DecodeSession(const Model& model, std::span<const std::string> utterance, std::size_t domain, bool mask = true)
      : model_(model), graph_(&model.params), domain_(domain), mask_(mask) {
    source_ = encode_for_domain(graph_, model, utterance, domain);
    decoder_ = &model.decoder_for(domain);
    domain_vec_ = domain_input(graph_, model, domain);
  }

  State start() {
    seq2seq::DecoderState s = seq2seq::init_decoder(graph_, source_.boundary, decoder_->params.init_weights);
    return {s, seq2seq::attend(graph_, s, source_.memory, decoder_->params.attention_weights)};
  }

  seq2seq::OutputDistribution distribution(const State& s) {
    ad::Var logits = seq2seq::action_logits(graph_, s.decoder, s.attention, decoder_->params.output_weights);
    const Tensor& v = graph_.value(logits);
    if (mask_) return mask_actions(model_, v.data(), domain_);
    return seq2seq::masked_distribution(v.data(), decoder_->vocab.size());
  }

  std::vector<ActionScore> actions(const State& s) {
    const auto d = distribution(s);
    std::vector<ActionScore> out;
    for (std::size_t a = 0; a < d.probabilities.size(); ++a) {
      if (d.probabilities[a] <= 0.0) continue;
      const std::string& tok =
          a < d.write_actions ? decoder_->vocab.token(a) : source_.tokens[a - d.write_actions];
      out.push_back({a, tok, std::log(d.probabilities[a])});
    }
    return out;
  }

  State advance(const State& s, const std::string& token) {
    const std::size_t id = decoder_->vocab.find(token).value_or(*decoder_->vocab.find(kUnk));
    seq2seq::DecoderState next = seq2seq::decoder_step(graph_, id, s.attention, s.decoder, decoder_->params.cell,
                                                       decoder_->params.embedding, domain_vec_);
    return {next, seq2seq::attend(graph_, next, source_.memory, decoder_->params.attention_weights)};
  }

  const Tensor& attention_weights(const State& s) const { return graph_.value(s.attention.weights); }
  const std::vector<std::string>& source_tokens() const { return source_.tokens; }
  std::size_t write_actions() const { return decoder_->vocab.size(); }

 private:
  const Model& model_;
  ad::Graph graph_;
  std::size_t domain_;
  bool mask_;
  SourceEncoding source_;
  const Decoder* decoder_ = nullptr;
  std::optional<ad::Var> domain_vec_;
};

static_assert(StepDecoder<DecodeSession>);

inline std::vector<Hypothesis> beam_search(const Model& model, const Example& ex, std::size_t beam,
                                           std::size_t max_len) {
  DecodeSession session(model, ex.utterance, ex.domain);
  return beam_search(session, beam, max_len);
}

/// Default decoding cap: twice the longest training logical form.
inline std::size_t default_max_len(const Corpus& corpus) {
  std::size_t longest = 1;
  for (const auto& d : corpus.domains)
    for (const auto& ex : d.train) longest = std::max(longest, ex.logical_form.size());
  return 2 * longest;
}

struct Executed {
  std::size_t index = 0;
  Denotation denotation;
};

/// First candidate (in rank order) that parses and executes.
inline std::optional<Executed> pick_executable(const std::vector<std::vector<std::string>>& candidates, const Kb& kb) {
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (auto d = try_execute(candidates[i], kb)) return Executed{i, std::move(*d)};
  }
  return std::nullopt;
}

inline std::optional<Executed> pick_executable(const std::vector<Hypothesis>& hyps, const Kb& kb) {
  std::vector<std::vector<std::string>> c;
  for (const auto& h : hyps) c.push_back(h.output());
  return pick_executable(c, kb);
}

// ---------------------------------------------------------------------------
// Error categories

enum class ErrorCategory { CorrectStructure, ComparativeMismatch, SuperlativeMismatch, Other };

inline constexpr std::array kAllCategories = {ErrorCategory::ComparativeMismatch, ErrorCategory::SuperlativeMismatch,
                                              ErrorCategory::Other, ErrorCategory::CorrectStructure};

inline std::string_view to_string(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::CorrectStructure: return "correct-structure";
    case ErrorCategory::ComparativeMismatch: return "comparative-mismatch";
    case ErrorCategory::SuperlativeMismatch: return "superlative-mismatch";
    case ErrorCategory::Other: return "other";
  }
  return "?";
}

namespace detail {

struct TreeDiff {
  bool comparative = false;
  bool superlative = false;
  bool other = false;
};

// Compares two trees with constants ignored. `degree` is set inside a
// superlative's degree argument.
inline void tree_diff(const lf::LogicalForm& a, const lf::LogicalForm& b, bool degree, TreeDiff& out) {
  using lf::Kind;
  auto superlative = [](Kind k) { return k == Kind::Argmax || k == Kind::Argmin; };
  if (a.kind != b.kind) {
    if (degree || (superlative(a.kind) && superlative(b.kind))) {
      out.superlative = true;
      if (!(superlative(a.kind) && superlative(b.kind))) return;
    } else {
      out.other = true;
      return;
    }
  }
  if (a.kind == Kind::Compare && a.op != b.op) (degree ? out.superlative : out.comparative) = true;
  if (a.args.size() != b.args.size()) {
    (degree ? out.superlative : out.other) = true;
    return;
  }
  for (std::size_t i = 0; i < a.args.size(); ++i) {
    const bool in_degree = degree || (superlative(a.kind) && i == 1);
    tree_diff(a.args[i], b.args[i], in_degree, out);
  }
}

}  // namespace detail

inline ErrorCategory categorize_error(const std::vector<std::string>& predicted, const std::vector<std::string>& gold) {
  lf::LogicalForm p, g;
  try {
    p = lf::parse_lf(predicted);
    g = lf::parse_lf(gold);
  } catch (const ParseError&) {
    return ErrorCategory::Other;
  }
  detail::TreeDiff d;
  detail::tree_diff(p, g, false, d);
  if (d.other || (d.comparative && d.superlative)) return ErrorCategory::Other;
  if (d.comparative) return ErrorCategory::ComparativeMismatch;
  if (d.superlative) return ErrorCategory::SuperlativeMismatch;
  return ErrorCategory::CorrectStructure;
}

// ---------------------------------------------------------------------------
// Evaluation

struct Prediction {
  std::size_t domain = 0;
  std::vector<std::string> utterance;
  std::vector<std::string> gold;
  std::optional<std::vector<std::string>> predicted;  // none: no executable candidate
  bool correct = false;
  ErrorCategory category = ErrorCategory::CorrectStructure;
};

struct DomainReport {
  std::string name;
  std::size_t n_test = 0;
  std::size_t correct = 0;
  std::size_t executor_errors = 0;
  std::map<ErrorCategory, std::size_t> categories;  // over wrong predictions

  double accuracy() const { return n_test ? static_cast<double>(correct) / static_cast<double>(n_test) : 0.0; }
};

struct EvalReport {
  std::vector<DomainReport> domains;
  std::vector<Prediction> predictions;
  std::size_t param_count = 0;

  /// Unweighted mean of per-domain accuracies.
  double average() const {
    if (domains.empty()) return 0.0;
    double s = 0;
    for (const auto& d : domains) s += d.accuracy();
    return s / static_cast<double>(domains.size());
  }
};

/// Ranked candidate token sequences for one example.
using Predictor = std::function<std::vector<std::vector<std::string>>(const Example&)>;

inline Predictor beam_predictor(const Model& model, std::size_t beam, std::size_t max_len) {
  return [&model, beam, max_len](const Example& ex) {
    std::vector<std::vector<std::string>> out;
    for (const auto& h : beam_search(model, ex, beam, max_len)) out.push_back(h.output());
    return out;
  };
}

/// Debug predictor that returns the gold sequence.
inline Predictor gold_echo_predictor() {
  return [](const Example& ex) { return std::vector<std::vector<std::string>>{ex.logical_form}; };
}

/// Denotation accuracy on every domain's test split. Examples are spread
/// over `workers` threads; results are aggregated in corpus order.
inline EvalReport evaluate(const Corpus& corpus, const Predictor& predict, std::size_t workers = 1) {
  std::vector<const Example*> all;
  for (const auto& d : corpus.domains)
    for (const auto& ex : d.test) all.push_back(&ex);
  std::vector<Prediction> preds(all.size());
  auto run = [&](std::size_t i) {
    const Example& ex = *all[i];
    const Kb& kb = corpus.domains.at(ex.domain).kb;
    auto gold = try_execute(ex.logical_form, kb);
    if (!gold) {
      throw Error("gold logical form does not execute in domain '" + corpus.domains[ex.domain].name +
                  "': " + join_tokens(ex.logical_form));
    }
    Prediction p;
    p.domain = ex.domain;
    p.utterance = ex.utterance;
    p.gold = ex.logical_form;
    const auto candidates = predict(ex);
    if (auto picked = pick_executable(candidates, kb)) {
      p.predicted = candidates[picked->index];
      p.correct = picked->denotation == *gold;
    }
    if (!p.correct) p.category = p.predicted ? categorize_error(*p.predicted, p.gold) : ErrorCategory::Other;
    preds[i] = std::move(p);
  };
  workers = std::max<std::size_t>(1, std::min(workers, all.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < all.size(); ++i) run(i);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < all.size(); i += workers) run(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  EvalReport report;
  for (const auto& d : corpus.domains) report.domains.push_back(DomainReport{d.name, 0, 0, 0, {}});
  for (auto& p : preds) {
    DomainReport& r = report.domains.at(p.domain);
    ++r.n_test;
    if (p.correct) {
      ++r.correct;
    } else {
      ++r.categories[p.category];
      if (!p.predicted) ++r.executor_errors;
    }
  }
  report.predictions = std::move(preds);
  return report;
}

inline EvalReport evaluate(const Model& model, const Corpus& corpus, std::size_t beam, std::size_t max_len,
                           std::size_t workers = 1) {
  EvalReport r = evaluate(corpus, beam_predictor(model, beam, max_len), workers);
  r.param_count = count_parameters(model);
  return r;
}

// ---------------------------------------------------------------------------
// Rank correlation

/// 1-based ranks with ties given their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double spearman_rho(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("spearman_rho: length mismatch (" + std::to_string(x.size()) + " vs " +
                                        std::to_string(y.size()) + ")");
  if (x.size() < 2) throw Error("spearman_rho needs at least two observations");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) throw Error("spearman_rho is undefined for a constant input");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace mkb

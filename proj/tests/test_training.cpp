#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "mkbparse/gradcheck.hpp"
#include "mkbparse/training.hpp"

using namespace mkb;

namespace {

TrainConfig tiny_config() {
  TrainConfig c = preset_config("desk");
  c.hidden = 8;
  c.embedding = 6;
  return c;
}

std::vector<Tensor> snapshot(const Model& m) {
  std::vector<Tensor> out;
  for (const auto& p : m.params) out.push_back(p.value);
  return out;
}

}  // namespace

TEST(LearningRate, PublishedSchedule) {
  for (std::size_t e = 1; e <= 30; ++e) {
    const double want = e < 15 ? 0.1 : e < 20 ? 0.05 : e < 25 ? 0.025 : 0.0125;
    EXPECT_EQ(learning_rate(e), want) << e;
  }
  EXPECT_THROW(learning_rate(0), DomainError);
  EXPECT_THROW(learning_rate(31), DomainError);
}

TEST(LearningRate, LongerRunsKeepHalvingOnlyWithAFullInterval) {
  // A halving at epoch s needs epochs s..s+4 to exist.
  EXPECT_EQ(learning_rate(32, 32), 0.0125);
  EXPECT_EQ(learning_rate(34, 34), 0.00625);
  EXPECT_EQ(learning_rate(50, 50), 0.1 / 128);
  EXPECT_EQ(learning_rate(44, 48), 0.1 / 64);
  double prev = 1.0;
  for (std::size_t e = 1; e <= 50; ++e) {
    const double r = learning_rate(e, 50);
    EXPECT_LE(r, prev);
    prev = r;
  }
  EXPECT_EQ(learning_rate(10, 10), 0.1);
}

TEST(TrainConfig, PresetsAndJson) {
  TrainConfig p = preset_config("paper");
  EXPECT_EQ(p.hidden, 200u);
  EXPECT_EQ(p.embedding, 100u);
  EXPECT_EQ(p.epochs, 30u);
  EXPECT_EQ(p.beam, 5u);
  EXPECT_EQ(p.init_range, 0.1);
  TrainConfig d = preset_config("desk");
  EXPECT_EQ(d.hidden, 32u);
  EXPECT_EQ(d.epochs, 30u);
  EXPECT_THROW(preset_config("huge"), Error);
  d.seed = 9;
  d.fraction = 0.25;
  TrainConfig back = train_config_from_json(to_json(d));
  EXPECT_EQ(to_json(back), to_json(d));
  d.fraction = 0;
  EXPECT_THROW(d.validate(), Error);
}

TEST(Init, UniformWithinRange) {
  auto c = fixture::tiny();
  for (Architecture a : kAllArchitectures) {
    Model m = make_model(a, c, preset_config("desk"));
    double lo = 1, hi = -1;
    for (const auto& p : m.params)
      for (double v : p.value.values()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    EXPECT_GE(lo, -0.1);
    EXPECT_LE(hi, 0.1);
    EXPECT_LT(lo, -0.09);  // the range is actually used
    EXPECT_GT(hi, 0.09);
  }
}

TEST(Unk, SingletonsMapToUnk) {
  Corpus c;
  DomainData d;
  d.name = "d";
  d.train = {fixture::ex(0, "list big homes", "A"), fixture::ex(0, "list small homes", "A")};
  d.test = {fixture::ex(0, "list tiny homes", "A")};
  c.domains = {d};
  Corpus u = apply_unk(c);
  EXPECT_EQ(u.domains[0].train[0].utterance, split_tokens("list <unk> homes"));
  EXPECT_EQ(u.domains[0].train[1].utterance, split_tokens("list <unk> homes"));
  EXPECT_EQ(u.domains[0].test[0].utterance, split_tokens("list <unk> homes"));
  EXPECT_EQ(u.domains[0].train[0].logical_form, c.domains[0].train[0].logical_form);

  Model m = make_model(Architecture::One2One, c, tiny_config());
  EXPECT_TRUE(m.encoders[0].vocab.contains("list"));
  EXPECT_FALSE(m.encoders[0].vocab.contains("big"));
}

TEST(Unk, PooledVersusPerDomainCounts) {
  auto c = fixture::tiny();
  // "3" occurs twice in domain a and once in domain b.
  Corpus pooled = apply_unk(c, false), split = apply_unk(c, true);
  EXPECT_EQ(pooled.domains[1].train[0].utterance, split_tokens("show b 3"));
  EXPECT_EQ(split.domains[1].train[0].utterance, split_tokens("show b <unk>"));
  Model indep = make_model(Architecture::Indep, c, tiny_config());
  EXPECT_TRUE(indep.encoders[0].vocab.contains("3"));
  EXPECT_FALSE(indep.encoders[1].vocab.contains("3"));
}

TEST(Sgd, UpdatesExactlyAndOnlyTouchedParameters) {
  ad::ParameterStore store;
  const auto a = store.add("a", {2});
  const auto b = store.add("b", {1});
  store[a].value = Tensor::vector({1.0, 2.0});
  store[b].value = Tensor::vector({5.0});
  ad::Gradients g;
  g.add(a, Tensor::vector({0.5, -1.0}));
  sgd_step(store, g, 0.1);
  EXPECT_EQ(store[a].value, Tensor::vector({1.0 - 0.05, 2.0 + 0.1}));
  EXPECT_EQ(store[b].value, Tensor::vector({5.0}));
  ad::Gradients bad;
  bad.add(b, Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(sgd_step(store, bad, 0.1), DimensionError);
}

TEST(TrainExample, NonFiniteLossIsReported) {
  auto c = fixture::tiny();
  Model m = make_model(Architecture::One2One, c, tiny_config());
  for (auto& p : m.params)
    if (p.name.ends_with(".U")) p.value.fill(std::numeric_limits<double>::quiet_NaN());
  EXPECT_THROW(train_example(m, c.domains[0].train[0], 0.1), TrainingError);
  EXPECT_THROW(train(m, training_pool(c), tiny_config()), TrainingError);
}

TEST(TrainExample, LossDecreasesOnTheTrainedExample) {
  auto c = fixture::tiny();
  Model m = make_model(Architecture::DomainEncoding, c, tiny_config());
  const auto& ex = c.domains[0].train[0];
  const double before = sequence_nll(m, ex);
  const double reported = train_example(m, ex, 0.1);
  EXPECT_DOUBLE_EQ(reported, before);
  EXPECT_LT(sequence_nll(m, ex), before);
}

TEST(Train, DeterministicPerSeed) {
  auto c = fixture::tiny();
  TrainConfig cfg = tiny_config();
  cfg.epochs = 3;
  Model a = make_model(Architecture::Many2Many, c, cfg), b = make_model(Architecture::Many2Many, c, cfg);
  auto la = train(a, training_pool(c), cfg), lb = train(b, training_pool(c), cfg);
  EXPECT_EQ(snapshot(a), snapshot(b));
  ASSERT_EQ(la.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(la[i].mean_loss, lb[i].mean_loss);
  EXPECT_EQ(la[0].examples, 6u);
  cfg.seed = 2;
  Model d = make_model(Architecture::Many2Many, c, cfg);
  train(d, training_pool(c), cfg);
  EXPECT_NE(snapshot(a), snapshot(d));
}

TEST(Train, IndepDomainsDoNotInteract) {
  auto c = fixture::tiny();
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  Model m = make_model(Architecture::Indep, c, cfg);
  const auto before = snapshot(m);
  train(m, std::vector<Example>(c.domains[0].train), cfg);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const bool own = m.params[i].name.find("[a]") != std::string::npos;
    if (own) {
      EXPECT_NE(m.params[i].value, before[i]) << m.params[i].name;
    } else {
      EXPECT_EQ(m.params[i].value, before[i]) << m.params[i].name;
    }
  }
}

TEST(Train, SingleExampleMemorisation) {
  auto c = fixture::tiny();
  // 50 updates at the published rates move the loss by ~10%; the capacity
  // check runs the same trainer at a constant rate of 1.0.
  for (Architecture a : kAllArchitectures) {
    TrainConfig cfg = preset_config("desk");
    cfg.epochs = 50;
    cfg.lr0 = 1.0;
    cfg.halve_from = cfg.epochs + 1;
    Model m = make_model(a, c, cfg);
    const Example ex = c.domains[0].train[0];
    std::size_t reached = 0;
    train(m, {ex}, cfg, [&](const EpochLog& e) {
      if (!reached && e.mean_loss < 0.1) reached = e.epoch;
    });
    EXPECT_LT(sequence_nll(m, ex), 0.1) << to_string(a);
    EXPECT_GT(reached, 0u) << to_string(a);
  }
}

TEST(GradientCheck, EveryArchitectureMatchesFiniteDifferences) {
  auto c = fixture::tiny();
  // One example per domain with a copy-only token and a shared-vocab copy.
  const std::vector<Example> batch = {c.domains[0].test[0], c.domains[1].train[0]};
  for (Architecture a : kAllArchitectures) {
    TrainConfig cfg = tiny_config();
    cfg.init_range = 0.5;
    Model m = make_model(a, c, cfg);
    ASSERT_LE(m.decoders[0].vocab.size(), 12u);
    ASSERT_LE(m.encoders.back().vocab.size(), 12u);
    auto loss = [&](ad::Graph& g) {
      ad::Var total = example_loss(g, m, batch[0]);
      return ad::add(g, total, example_loss(g, m, batch[1]));
    };
    auto r = ad::check_gradients(m.params, loss, 1e-4, 1e-6);
    EXPECT_EQ(r.checked, count_parameters(m));
    EXPECT_LT(r.max_relative_error, 1e-4) << to_string(a) << " worst " << r.worst_parameter << "[" << r.worst_index << "]";
  }
}

TEST(Subsample, CeilOrderAndDeterminism) {
  Corpus full;
  for (std::size_t k = 0; k < 2; ++k) {
    DomainData d;
    d.name = "d" + std::to_string(k);
    for (int i = 0; i < 10; ++i) d.train.push_back(fixture::ex(k, "w" + std::to_string(i), "A"));
    d.test = {fixture::ex(k, "t", "A")};
    full.domains.push_back(d);
  }
  Corpus s = subsample(full, 0.25, 1);
  for (std::size_t k = 0; k < 2; ++k) {
    ASSERT_EQ(s.domains[k].train.size(), 3u);  // ceil(2.5)
    EXPECT_EQ(s.domains[k].test, full.domains[k].test);
    std::vector<std::size_t> idx;
    for (const auto& ex : s.domains[k].train) idx.push_back(std::stoul(ex.utterance[0].substr(1)));
    EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
    EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), idx.size());
  }
  EXPECT_EQ(subsample(full, 0.25, 1).domains[0].train, s.domains[0].train);
  EXPECT_EQ(subsample(full, 1.0, 1).domains[0].train, full.domains[0].train);
  EXPECT_EQ(subsample(full, 0.01, 1).domains[0].train.size(), 1u);
  EXPECT_THROW(subsample(full, 0.0, 1), Error);
  EXPECT_THROW(subsample(full, 1.5, 1), Error);
}

TEST(DevSplit, PartitionsTraining) {
  Corpus full;
  DomainData d;
  d.name = "d";
  for (int i = 0; i < 10; ++i) d.train.push_back(fixture::ex(0, "w" + std::to_string(i), "A"));
  full.domains = {d};
  Corpus s = dev_split(full, 0.2, 4);
  EXPECT_EQ(s.domains[0].train.size(), 8u);
  EXPECT_EQ(s.domains[0].test.size(), 2u);
  std::set<std::string> seen;
  for (const auto* split : {&s.domains[0].train, &s.domains[0].test})
    for (const auto& ex : *split) EXPECT_TRUE(seen.insert(ex.utterance[0]).second);
  EXPECT_EQ(seen.size(), 10u);
  EXPECT_THROW(dev_split(full, 1.0, 4), Error);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  auto c = fixture::tiny();
  for (Architecture a : kAllArchitectures) {
    Model m = make_model(a, c, tiny_config());
    std::stringstream s;
    write_checkpoint(s, m, {{"seed", 1}});
    Checkpoint cp = read_checkpoint(s);
    EXPECT_EQ(cp.model.architecture, a);
    EXPECT_EQ(snapshot(cp.model), snapshot(m));
    EXPECT_EQ(cp.meta.at("seed"), 1);
    EXPECT_EQ(cp.meta.at("parameter_count"), count_parameters(m));
    EXPECT_EQ(sequence_nll(cp.model, c.domains[0].train[0]), sequence_nll(m, c.domains[0].train[0]));
    std::stringstream again;
    write_checkpoint(again, cp.model, {{"seed", 1}});
    std::stringstream first;
    write_checkpoint(first, m, {{"seed", 1}});
    EXPECT_EQ(again.str(), first.str());
  }
}

TEST(Checkpoint, CorruptionIsDetected) {
  auto c = fixture::tiny();
  Model m = make_model(Architecture::One2One, c, tiny_config());
  std::stringstream s;
  write_checkpoint(s, m);
  const std::string text = s.str();
  auto read = [](std::string t) {
    std::istringstream in(t);
    return read_checkpoint(in);
  };
  EXPECT_THROW(read("not a checkpoint\n"), FormatError);
  {
    std::string t = text;
    const auto pos = t.find("\"vocab_hash\":\"") + 14;
    t[pos] = t[pos] == '0' ? '1' : '0';
    EXPECT_THROW(read(t), FormatError);
  }
  {
    // Drop the last parameter line.
    std::string t = text.substr(0, text.rfind('\n', text.size() - 2) + 1);
    EXPECT_THROW(read(t), FormatError);
  }
  {
    // First parameter line: replace its shape field.
    std::string t = text;
    const auto line = t.find('\n', t.find('\n') + 1) + 1;
    const auto a = t.find('\t', line), b = t.find('\t', a + 1);
    t.replace(a + 1, b - a - 1, "1x1");
    EXPECT_THROW(read(t), FormatError);
  }
  EXPECT_NO_THROW(read(text));
}

TEST(Checkpoint, VocabHashTracksVocabulary) {
  auto c = fixture::tiny();
  Model a = make_model(Architecture::One2One, c, tiny_config());
  auto c2 = c;
  c2.domains[0].train.push_back(fixture::ex(0, "show a", "Type.A ⊓ P . 5"));
  Model b = make_model(Architecture::One2One, c2, tiny_config());
  EXPECT_NE(vocab_hash(a), vocab_hash(b));
  EXPECT_EQ(vocab_hash(a), vocab_hash(make_model(Architecture::One2One, c, tiny_config())));
}

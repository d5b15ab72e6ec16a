#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "daan/baseline.hpp"
#include "daan/metrics.hpp"
#include "daan/optim.hpp"
#include "daan/synth.hpp"
#include "daan/train.hpp"
#include "test_util.hpp"

using namespace daan;

TEST(Adam, ZeroGradientLeavesParametersButCountsStep) {
  Parameter p("p", Tensor::vector({0.5, -0.25}));
  std::vector<Parameter*> params{&p};
  AdamState s;
  adam_step(params, s, {});
  adam_step(params, s, {});
  EXPECT_EQ(p.value, Tensor::vector({0.5, -0.25}));
  EXPECT_EQ(s.step, 2u);
}

TEST(Adam, FirstStepOnUnitGradient) {
  Parameter w("w", Tensor::scalar(0.0));
  w.grad = Tensor::scalar(1.0);
  std::vector<Parameter*> params{&w};
  AdamState s;
  adam_step(params, s, {.learning_rate = 0.1});
  EXPECT_NEAR(w.value.item(), -0.1, 1e-8);
  EXPECT_DOUBLE_EQ(w.value.item(), -0.1 / (1.0 + 1e-8));
}

TEST(Adam, ThreeStepsOnQuadraticMatchReference) {
  // f(w) = 0.5 * sum a_i (w_i - c_i)^2
  Rng rng(1);
  const std::size_t n = 6;
  std::vector<double> a(n), c(n), w0(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = uniform(rng, 0.5, 3.0);
    c[i] = uniform(rng, -1, 1);
    w0[i] = uniform(rng, -1, 1);
  }
  Parameter p("w", Tensor::vector(w0));
  std::vector<Parameter*> params{&p};
  AdamState s;
  const AdamConfig cfg{.learning_rate = 0.05};
  std::vector<double> w = w0, m(n, 0.0), v(n, 0.0);
  for (int t = 1; t <= 3; ++t) {
    for (std::size_t i = 0; i < n; ++i) p.grad[i] = a[i] * (p.value[i] - c[i]);
    adam_step(params, s, cfg);
    for (std::size_t i = 0; i < n; ++i) {
      const double g = a[i] * (w[i] - c[i]);
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1.0 - std::pow(0.9, t)), vh = v[i] / (1.0 - std::pow(0.999, t));
      w[i] -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
    }
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(p.value[i], w[i], 1e-12);
  }
}

TEST(EarlyStopping, WorseningFromEpochTwoStopsAtEpochFive) {
  EarlyStopping stop(3);
  const std::vector<double> val{1.0, 0.9, 0.95, 1.0, 1.1, 1.2, 1.3};
  std::size_t stopped = 0;
  for (std::size_t e = 1; e <= val.size(); ++e) {
    stop.update(e, val[e - 1]);
    if (stop.should_stop()) {
      stopped = e;
      break;
    }
  }
  EXPECT_EQ(stopped, 5u);
  EXPECT_EQ(stop.best_epoch(), 2u);
}

namespace {

struct Toy {
  std::vector<Example> rows;
  Vocab vocab;
};

Toy toy(std::uint64_t seed, std::size_t n = 60) {
  SynthConfig sc;
  sc.n_events = 2;
  sc.n_per_event = n / 2;
  sc.seed = seed;
  Toy t;
  t.rows = synth_domains(sc).corpus.examples;
  for (std::size_t i = 0; i < t.rows.size(); ++i) t.rows[i].domain = i < n / 2 ? 0 : 1;
  t.vocab = Vocab::build(t.rows);
  return t;
}

ModelSpec toy_spec(bool adversarial) {
  ModelSpec s = testutil::tiny_spec(2, 2, adversarial);
  s.seq_len = 14;
  s.dropout = 0.2;
  return s;
}

}  // namespace

TEST(Train, SameSeedGivesIdenticalHistory) {
  const Toy t = toy(2);
  auto run = [&] {
    Model m = Model::create(toy_spec(true), t.vocab, 3);
    TrainConfig cfg;
    cfg.max_epochs = 5;
    cfg.batch_size = 16;
    cfg.seed = 4;
    return train(m, {t.rows, t.rows, std::nullopt}, cfg);
  };
  const History a = run(), b = run();
  EXPECT_EQ(a.train_loss, b.train_loss);
  EXPECT_EQ(a.task_loss, b.task_loss);
  EXPECT_EQ(a.domain_loss, b.domain_loss);
  EXPECT_EQ(a.val_loss, b.val_loss);
  EXPECT_EQ(a.best_epoch, b.best_epoch);
}

TEST(Train, RestoresTheBestValidationEpoch) {
  const Toy t = toy(5);
  Model m = Model::create(toy_spec(false), t.vocab, 6);
  TrainConfig cfg;
  cfg.max_epochs = 12;
  cfg.patience = 2;
  cfg.learning_rate = 0.03;
  cfg.batch_size = 8;
  const auto [fit, val] = validation_split(t.rows, 0.3, 7);
  const History h = train(m, {fit, {}, val}, cfg);
  ASSERT_GE(h.best_epoch, 1u);
  const double best = *std::min_element(h.val_loss.begin(), h.val_loss.end());
  EXPECT_EQ(h.val_loss[h.best_epoch - 1], best);
  EXPECT_DOUBLE_EQ(validation_loss(m, val), best);
  if (h.stopped_early) {
    EXPECT_EQ(h.epochs_run, h.best_epoch + cfg.patience);
  }
}

TEST(Train, LockedEmbeddingRowsNeverMove) {
  const Toy t = toy(8);
  Rng rng(9);
  EmbeddingMatrix emb = random_embedding(t.vocab.size(), 5, rng);
  for (std::size_t r = 2; r < t.vocab.size(); r += 3) emb.table.frozen_rows[r] = true;
  const Tensor before = emb.table.value;
  Model m = Model::create(toy_spec(true), t.vocab, std::move(emb), 10);
  TrainConfig cfg;
  cfg.max_epochs = 3;
  cfg.patience = 2;
  cfg.batch_size = 16;
  train(m, {t.rows, t.rows, std::nullopt}, cfg);
  const Tensor& after = m.embedding.table.value;
  bool moved = false;
  for (std::size_t r = 0; r < t.vocab.size(); ++r)
    for (std::size_t k = 0; k < 5; ++k) {
      if (m.embedding.locked(r)) {
        EXPECT_EQ(after.at(r, k), before.at(r, k)) << "row " << r;
      } else {
        moved = moved || after.at(r, k) != before.at(r, k);
      }
    }
  EXPECT_TRUE(moved);
}

TEST(Train, RejectsEmptyDataAndMissingDomains) {
  const Toy t = toy(11);
  Model m = Model::create(toy_spec(true), t.vocab, 12);
  EXPECT_THROW(train(m, {{}, t.rows, std::nullopt}, {}), DataError);
  EXPECT_THROW(train(m, {t.rows, {}, std::nullopt}, {}), ContractError);
  TrainConfig bad;
  bad.patience = 50;
  EXPECT_THROW(train(m, {t.rows, t.rows, std::nullopt}, bad), ParameterError);
}

TEST(Train, NonFiniteLossAbortsWithDiagnostics) {
  const Toy t = toy(13);
  Model m = Model::create(toy_spec(false), t.vocab, 14);
  m.heads[0].output.bias.value[0] = std::nan("");
  TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.patience = 1;
  try {
    train(m, {t.rows, {}, std::nullopt}, cfg);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("task[task1]"), std::string::npos) << msg;
  }
}

TEST(Metrics, PerfectPredictions) {
  const std::vector<int> y{1, 0, 1, 1, 0};
  const Metrics m = compute_metrics(y, y);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.f1_positive, 1.0);
  EXPECT_FALSE(m.degenerate_f1);
}

TEST(Metrics, NoPositivesAnywhereIsDegenerate) {
  const std::vector<int> zeros{0, 0, 0};
  const Metrics m = compute_metrics(zeros, zeros);
  EXPECT_EQ(m.f1_positive, 0.0);
  EXPECT_TRUE(m.degenerate_f1);
  EXPECT_EQ(m.accuracy, 1.0);
}

TEST(Metrics, MatchesConfusionMatrixOracle) {
  Rng rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 60);
    std::vector<int> p(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = bernoulli(rng, 0.5);
      y[i] = bernoulli(rng, 0.4);
    }
    double tp = 0, fp = 0, fn = 0, correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
      correct += p[i] == y[i];
      tp += p[i] && y[i];
      fp += p[i] && !y[i];
      fn += !p[i] && y[i];
    }
    const Metrics m = compute_metrics(p, y);
    EXPECT_EQ(m.confusion.total(), n);
    EXPECT_DOUBLE_EQ(m.accuracy, correct / static_cast<double>(n));
    if (tp + fp > 0 && tp + fn > 0) {
      const double prec = tp / (tp + fp), rec = tp / (tp + fn);
      if (tp > 0) EXPECT_NEAR(m.f1_positive, 2 * prec * rec / (prec + rec), 1e-12);
      else EXPECT_EQ(m.f1_positive, 0.0);
    }
  }
}

TEST(Metrics, ThresholdIsStrictlyAboveHalf) {
  EXPECT_EQ(decide(0.5), 0);
  EXPECT_EQ(decide(0.5000001), 1);
}

TEST(Evaluate, InvariantToTestOrder) {
  const Toy t = toy(16, 80);
  Model m = Model::create(toy_spec(true), t.vocab, 17);
  std::vector<Example> shuffled = t.rows;
  Rng rng(18);
  shuffle(shuffled, rng);
  const EvalResult a = evaluate(m, t.rows, 7), b = evaluate(m, shuffled, 32);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(a.tasks[k].accuracy, b.tasks[k].accuracy);
    EXPECT_EQ(a.tasks[k].f1_positive, b.tasks[k].f1_positive);
  }
  EXPECT_EQ(a.domain_accuracy, b.domain_accuracy);
}

TEST(Baseline, SeparableClustersAreLearned) {
  const SeparableSet s = synth_separable(200, 200, 16, 19);
  const Metrics m = lr_baseline(s.train, s.test, 0, s.vocab, s.embedding);
  EXPECT_GE(m.accuracy, 0.99);
}

TEST(Baseline, ZeroFeaturesPredictMajorityClass) {
  const Vocab v = Vocab::from_tokens({"a", "b"});
  Rng rng(20);
  EmbeddingMatrix emb = random_embedding(v.size(), 3, rng);
  emb.table.value.fill(0.0);
  std::vector<Example> train;
  for (int i = 0; i < 10; ++i) {
    Example e;
    e.tokens = {i % 2 ? "a" : "b"};
    e.labels = {i < 7 ? Label::positive : Label::negative};
    train.push_back(e);
  }
  const Metrics m = lr_baseline(train, train, 0, v, emb);
  EXPECT_EQ(m.confusion.tp + m.confusion.fp, 10u);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.7);
}

TEST(Baseline, Deterministic) {
  const SeparableSet a = synth_separable(60, 60, 8, 21, 0.1, 0.5), b = synth_separable(60, 60, 8, 21, 0.1, 0.5);
  const Metrics ma = lr_baseline(a.train, a.test, 0, a.vocab, a.embedding);
  const Metrics mb = lr_baseline(b.train, b.test, 0, b.vocab, b.embedding);
  EXPECT_EQ(ma.accuracy, mb.accuracy);
  EXPECT_EQ(ma.f1_positive, mb.f1_positive);
}

TEST(Synth, NoiseFreeLabelsFollowSignalTokens) {
  SynthConfig sc;
  sc.noise_rate = 0.0;
  sc.n_tasks = 3;
  const SynthCorpus s = synth_domains(sc);
  for (const Example& e : s.corpus.examples)
    for (std::size_t k = 0; k < 3; ++k) {
      double score = 0.0;  // linear: one unit of weight per signal token
      for (const auto& tok : e.tokens) score += s.is_signal(tok, k) ? 1.0 : 0.0;
      EXPECT_EQ(score > 0.5, e.labels[k] == Label::positive);
    }
}

TEST(Synth, EventsDifferInNuisanceDistribution) {
  const SynthCorpus s = synth_domains({});
  std::map<std::string, std::map<std::string, double>> freq;
  std::map<std::string, double> total;
  for (const Example& e : s.corpus.examples)
    for (const auto& tok : e.tokens) {
      if (s.is_signal(tok, 0) || s.is_signal(tok, 1)) continue;
      freq[e.event_id][tok] += 1;
      total[e.event_id] += 1;
    }
  const auto events = s.corpus.events();
  for (std::size_t a = 0; a < events.size(); ++a)
    for (std::size_t b = a + 1; b < events.size(); ++b) {
      std::set<std::string> keys;
      for (auto& [k, v] : freq[events[a]]) keys.insert(k);
      for (auto& [k, v] : freq[events[b]]) keys.insert(k);
      double tv = 0.0;
      for (const auto& k : keys)
        tv += std::abs(freq[events[a]][k] / total[events[a]] - freq[events[b]][k] / total[events[b]]);
      EXPECT_GT(0.5 * tv, 0.5) << events[a] << " vs " << events[b];
    }
}

TEST(Synth, SeedDeterministic) {
  const SynthCorpus a = synth_domains({.seed = 4}), b = synth_domains({.seed = 4}), c = synth_domains({.seed = 5});
  ASSERT_EQ(a.corpus.examples.size(), b.corpus.examples.size());
  for (std::size_t i = 0; i < a.corpus.examples.size(); ++i) {
    EXPECT_EQ(a.corpus.examples[i].text, b.corpus.examples[i].text);
    EXPECT_EQ(a.corpus.examples[i].labels, b.corpus.examples[i].labels);
  }
  EXPECT_NE(a.corpus.examples[0].text, c.corpus.examples[0].text);
}

TEST(Synth, OrderCorpusHasBalancedBagOfWords) {
  const Corpus c = synth_order(400, 4, 22);
  std::size_t pos = 0;
  for (const Example& e : c.examples) {
    EXPECT_EQ(std::count(e.tokens.begin(), e.tokens.end(), "alpha"), 1);
    EXPECT_EQ(std::count(e.tokens.begin(), e.tokens.end(), "beta"), 1);
    const auto a = std::find(e.tokens.begin(), e.tokens.end(), "alpha");
    const auto b = std::find(e.tokens.begin(), e.tokens.end(), "beta");
    EXPECT_EQ(a < b, e.labels[0] == Label::positive);
    pos += e.labels[0] == Label::positive;
  }
  EXPECT_NEAR(static_cast<double>(pos) / 400.0, 0.5, 0.08);
}

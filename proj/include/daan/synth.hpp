#pragma once

// Synthetic corpora with known ground truth, standing in for the crisis data
// in tests and demos.

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "daan/data.hpp"
#include "daan/random.hpp"

namespace daan {

struct SynthConfig {
  std::size_t n_events = 4;
  std::size_t n_per_event = 400;
  std::size_t n_tasks = 2;
  std::size_t signal_tokens = 5;    // per task
  std::size_t nuisance_tokens = 20; // per event
  std::size_t filler_tokens = 30;   // shared by all events
  std::size_t min_length = 6;
  std::size_t max_length = 14;
  double noise_rate = 0.1;     // label flip probability
  double positive_rate = 0.5;
  double label_rate = 1.0;     // probability a task label is observed
  double nuisance_rate = 0.6;  // share of non-signal slots drawn from the event's own tokens
  // Probability that a positive example also carries its event's cue token
  // for the task. Cues are label-correlated inside an event but never shared
  // across events.
  double cue_rate = 0.0;
  std::uint64_t seed = 1;
};

struct SynthCorpus {
  Corpus corpus;
  std::vector<std::vector<std::string>> signal;    // [task] planted tokens
  std::vector<std::vector<std::string>> nuisance;  // [event]

  bool is_signal(const std::string& token, std::size_t task) const {
    const auto& s = signal.at(task);
    return std::find(s.begin(), s.end(), token) != s.end();
  }
};

/// Events share task-determining signal tokens but each has its own nuisance
/// vocabulary. A positive label for task k plants one of task k's signal
/// tokens; labels are then flipped with probability noise_rate.
inline SynthCorpus synth_domains(const SynthConfig& cfg) {
  if (cfg.n_events == 0 || cfg.n_per_event == 0 || cfg.n_tasks == 0 || cfg.signal_tokens == 0 ||
      cfg.nuisance_tokens == 0 || cfg.filler_tokens == 0) {
    throw ParameterError("synth_domains: sizes must be positive");
  }
  if (cfg.min_length < cfg.n_tasks + 1 || cfg.max_length < cfg.min_length) {
    throw ParameterError("synth_domains: sentence length range too small for the task count");
  }
  Rng rng(cfg.seed);
  SynthCorpus out;
  for (std::size_t k = 0; k < cfg.n_tasks; ++k) {
    out.corpus.tasks.push_back("task" + std::to_string(k + 1));
    std::vector<std::string> s;
    for (std::size_t j = 0; j < cfg.signal_tokens; ++j) s.push_back("sig" + std::to_string(k) + "x" + std::to_string(j));
    out.signal.push_back(std::move(s));
  }
  std::vector<std::string> filler;
  for (std::size_t j = 0; j < cfg.filler_tokens; ++j) filler.push_back("w" + std::to_string(j));
  for (std::size_t e = 0; e < cfg.n_events; ++e) {
    std::vector<std::string> n;
    for (std::size_t j = 0; j < cfg.nuisance_tokens; ++j) n.push_back("ev" + std::to_string(e) + "n" + std::to_string(j));
    out.nuisance.push_back(std::move(n));
  }

  for (std::size_t e = 0; e < cfg.n_events; ++e) {
    const std::string event = "event" + std::to_string(e);
    for (std::size_t i = 0; i < cfg.n_per_event; ++i) {
      const std::size_t len = cfg.min_length + uniform_index(rng, cfg.max_length - cfg.min_length + 1);
      std::vector<std::string> tokens(len);
      for (auto& t : tokens) {
        t = bernoulli(rng, cfg.nuisance_rate) ? out.nuisance[e][uniform_index(rng, cfg.nuisance_tokens)]
                                              : filler[uniform_index(rng, cfg.filler_tokens)];
      }
      std::vector<std::size_t> positions(len);
      for (std::size_t p = 0; p < len; ++p) positions[p] = p;
      shuffle(positions, rng);
      std::size_t next_slot = 0;
      Example ex;
      ex.event_id = event;
      for (std::size_t k = 0; k < cfg.n_tasks; ++k) {
        bool positive = bernoulli(rng, cfg.positive_rate);
        if (positive) {
          tokens[positions[next_slot++ % len]] = out.signal[k][uniform_index(rng, cfg.signal_tokens)];
          if (cfg.cue_rate > 0.0 && bernoulli(rng, cfg.cue_rate)) {
            tokens.push_back("ev" + std::to_string(e) + "cue" + std::to_string(k));
          }
        }
        if (bernoulli(rng, cfg.noise_rate)) positive = !positive;
        const bool observed = bernoulli(rng, cfg.label_rate);
        ex.labels.push_back(!observed ? Label::absent : positive ? Label::positive : Label::negative);
      }
      for (std::size_t t = 0; t < tokens.size(); ++t) ex.text += (t ? " " : "") + tokens[t];
      ex.tokens = tokenize(ex.text);
      out.corpus.examples.push_back(std::move(ex));
    }
  }
  return out;
}

/// Every sentence holds "alpha" and "beta" once among shared fillers; the
/// label is 1 iff "alpha" comes first. Bag-of-words features carry no signal.
inline Corpus synth_order(std::size_t n_examples, std::size_t n_events, std::uint64_t seed,
                          std::size_t min_length = 6, std::size_t max_length = 12,
                          std::size_t filler_tokens = 20) {
  if (n_events == 0 || min_length < 2 || max_length < min_length) {
    throw ParameterError("synth_order: bad configuration");
  }
  Rng rng(seed);
  Corpus c;
  c.tasks = {"order"};
  for (std::size_t i = 0; i < n_examples; ++i) {
    const std::size_t len = min_length + uniform_index(rng, max_length - min_length + 1);
    std::vector<std::string> tokens(len);
    for (auto& t : tokens) t = "w" + std::to_string(uniform_index(rng, filler_tokens));
    const std::size_t a = uniform_index(rng, len);
    std::size_t b = uniform_index(rng, len - 1);
    if (b >= a) ++b;
    tokens[a] = "alpha";
    tokens[b] = "beta";
    Example ex;
    ex.event_id = "event" + std::to_string(i % n_events);
    for (std::size_t t = 0; t < len; ++t) ex.text += (t ? " " : "") + tokens[t];
    ex.tokens = tokenize(ex.text);
    ex.labels = {a < b ? Label::positive : Label::negative};
    c.examples.push_back(std::move(ex));
  }
  return c;
}

inline double standard_normal(Rng& rng) {
  // Box-Muller; 1 - u keeps the log argument positive.
  const double u = 1.0 - uniform01(rng);
  const double v = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * M_PI * v);
}

struct SeparableSet {
  std::vector<Example> train;
  std::vector<Example> test;
  Vocab vocab;
  EmbeddingMatrix embedding;
};

/// Two token groups whose vectors form Gaussian clusters around +mu and -mu;
/// each sentence draws from one group and is labelled by it.
inline SeparableSet synth_separable(std::size_t n_train, std::size_t n_test, std::size_t dim,
                                    std::uint64_t seed, double mu = 0.5, double sigma = 0.3,
                                    std::size_t tokens_per_group = 20) {
  Rng rng(seed);
  std::vector<std::string> names;
  for (std::size_t j = 0; j < tokens_per_group; ++j) names.push_back("pos" + std::to_string(j));
  for (std::size_t j = 0; j < tokens_per_group; ++j) names.push_back("neg" + std::to_string(j));
  SeparableSet s;
  s.vocab = Vocab::from_tokens(names);
  s.embedding = random_embedding(s.vocab.size(), dim, rng);
  for (std::size_t j = 0; j < names.size(); ++j) {
    const double centre = j < tokens_per_group ? mu : -mu;
    const std::size_t row = s.vocab.index(names[j]);
    for (std::size_t k = 0; k < dim; ++k) s.embedding.table.value.at(row, k) = centre + sigma * standard_normal(rng);
  }
  auto sample = [&](std::size_t i) {
    const bool positive = i % 2 == 0;
    const std::size_t len = 4 + uniform_index(rng, 6);
    Example ex;
    ex.event_id = "event0";
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t j = uniform_index(rng, tokens_per_group) + (positive ? 0 : tokens_per_group);
      ex.tokens.push_back(names[j]);
      ex.text += (t ? " " : "") + names[j];
    }
    ex.labels = {positive ? Label::positive : Label::negative};
    return ex;
  };
  for (std::size_t i = 0; i < n_train; ++i) s.train.push_back(sample(i));
  for (std::size_t i = 0; i < n_test; ++i) s.test.push_back(sample(i));
  return s;
}

}  // namespace daan

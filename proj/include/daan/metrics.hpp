#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "daan/data.hpp"
#include "daan/errors.hpp"
#include "daan/models.hpp"

namespace daan {

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
};

struct Metrics {
  double accuracy = 0.0;
  double f1_positive = 0.0;
  double f1_macro = 0.0;
  Confusion confusion;
  // Positive-class F1 fell back to 0 because there were no actual or no
  // predicted positives.
  bool degenerate_f1 = false;
  std::size_t count = 0;
};

namespace detail {

inline double f1_from(std::size_t tp, std::size_t fp, std::size_t fn, bool& degenerate) {
  if (tp + fp == 0 || tp + fn == 0) {
    degenerate = true;
    return 0.0;
  }
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

}  // namespace detail

/// Accuracy and F1 from 0/1 predictions.
inline Metrics compute_metrics(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) {
    throw DimensionError("compute_metrics: " + std::to_string(predicted.size()) +
                         " predictions for " + std::to_string(truth.size()) + " labels");
  }
  Metrics m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predicted[i] == 1, y = truth[i] == 1;
    if (p && y) ++m.confusion.tp;
    else if (p && !y) ++m.confusion.fp;
    else if (!p && y) ++m.confusion.fn;
    else ++m.confusion.tn;
  }
  m.count = truth.size();
  const Confusion& c = m.confusion;
  m.accuracy = m.count == 0 ? 0.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(m.count);
  m.f1_positive = detail::f1_from(c.tp, c.fp, c.fn, m.degenerate_f1);
  bool ignored = false;
  const double f1_negative = detail::f1_from(c.tn, c.fn, c.fp, ignored);
  m.f1_macro = 0.5 * (m.f1_positive + f1_negative);
  return m;
}

/// Positive iff the positive-class probability exceeds 0.5.
inline int decide(double positive_probability) { return positive_probability > 0.5 ? 1 : 0; }

struct EvalResult {
  std::vector<Metrics> tasks;  // one per model task
  double domain_accuracy = std::numeric_limits<double>::quiet_NaN();
};

/// Per-task metrics over the examples labelled for that task.
inline EvalResult evaluate(Model& model, std::span<const Example> examples, std::size_t batch_size = 256) {
  const std::size_t m = model.spec.task_count();
  std::vector<std::vector<int>> predicted(m), truth(m);
  std::size_t domain_hits = 0, domain_total = 0;
  const auto batches = make_batches(examples, model.vocab, model.spec.seq_len, batch_size, nullptr, m);
  for (const Batch& b : batches) {
    const Prediction p = predict(model, b, model.domain.has_value());
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t i = 0; i < b.size; ++i) {
        if (!b.present[k][i]) continue;
        predicted[k].push_back(decide(p.probs[k][i]));
        truth[k].push_back(static_cast<int>(b.labels[k][i]));
      }
    }
    if (!p.domain_probs.empty()) {
      for (std::size_t i = 0; i < b.size; ++i) {
        if (b.domains[i] == kNoDomain) continue;
        const auto& row = p.domain_probs[i];
        const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        domain_hits += best == b.domains[i] ? 1 : 0;
        ++domain_total;
      }
    }
  }
  EvalResult r;
  for (std::size_t k = 0; k < m; ++k) r.tasks.push_back(compute_metrics(predicted[k], truth[k]));
  if (domain_total > 0) {
    r.domain_accuracy = static_cast<double>(domain_hits) / static_cast<double>(domain_total);
  }
  return r;
}

/// Discriminator accuracy over examples carrying a domain index.
inline double domain_accuracy(Model& model, std::span<const Example> examples) {
  if (!model.domain) throw ContractError("domain_accuracy: model has no domain branch");
  std::size_t hits = 0, total = 0;
  const auto batches = make_batches(examples, model.vocab, model.spec.seq_len, 256, nullptr, 0);
  for (const Batch& b : batches) {
    Tape tape;
    ForwardOptions opts;
    opts.tasks = false;
    const ForwardResult r = forward(tape, model, b, opts);
    const Tensor& d = r.domain_probs.value();
    for (std::size_t i = 0; i < b.size; ++i) {
      if (b.domains[i] == kNoDomain) continue;
      std::size_t best = 0;
      for (std::size_t j = 1; j < d.dim(1); ++j) {
        if (d.at(i, j) > d.at(i, best)) best = j;
      }
      hits += best == b.domains[i] ? 1 : 0;
      ++total;
    }
  }
  if (total == 0) throw ContractError("domain_accuracy: no examples with a domain index");
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace daan

#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "daan/data.hpp"
#include "daan/layers.hpp"
#include "daan/metrics.hpp"

namespace daan {

/// Mean of the token vectors (unknown tokens use the <unk> row).
inline std::vector<double> mean_embedding(const std::vector<std::string>& tokens, const Vocab& vocab,
                                          const EmbeddingMatrix& embedding) {
  const std::size_t d = embedding.dim();
  std::vector<double> out(d, 0.0);
  if (tokens.empty()) return out;
  const Tensor& table = embedding.table.value;
  for (const auto& t : tokens) {
    const std::size_t row = vocab.index(t);
    for (std::size_t k = 0; k < d; ++k) out[k] += table.at(row, k);
  }
  for (double& v : out) v /= static_cast<double>(tokens.size());
  return out;
}

/// Binary logistic regression fitted by full-batch gradient descent on
/// standardized features.
class LogisticRegression {
 public:
  struct Options {
    double step = 0.5;
    std::size_t max_epochs = 500;
    double tolerance = 1e-6;
  };

  void fit(const std::vector<std::vector<double>>& x, const std::vector<int>& y, Options opts) {
    if (x.empty() || x.size() != y.size()) throw DimensionError("logistic regression: bad training data");
    const std::size_t n = x.size(), d = x[0].size();
    mean_.assign(d, 0.0);
    scale_.assign(d, 1.0);
    for (const auto& row : x)
      for (std::size_t k = 0; k < d; ++k) mean_[k] += row[k] / static_cast<double>(n);
    for (std::size_t k = 0; k < d; ++k) {
      double var = 0.0;
      for (const auto& row : x) var += (row[k] - mean_[k]) * (row[k] - mean_[k]);
      const double sd = std::sqrt(var / static_cast<double>(n));
      scale_[k] = sd > 1e-12 ? sd : 1.0;
    }
    std::vector<std::vector<double>> z(n, std::vector<double>(d));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < d; ++k) z[i][k] = (x[i][k] - mean_[k]) / scale_[k];

    weights_.assign(d, 0.0);
    bias_ = 0.0;
    double previous = std::numeric_limits<double>::infinity();
    epochs_ = 0;
    for (std::size_t epoch = 0; epoch < opts.max_epochs; ++epoch) {
      std::vector<double> gw(d, 0.0);
      double gb = 0.0, loss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double p = detail::sigmoid(logit_std(z[i]));
        const double q = clip_probability(p);
        loss -= y[i] * std::log(q) + (1 - y[i]) * std::log(1.0 - q);
        const double r = p - y[i];
        for (std::size_t k = 0; k < d; ++k) gw[k] += r * z[i][k];
        gb += r;
      }
      loss /= static_cast<double>(n);
      for (std::size_t k = 0; k < d; ++k) weights_[k] -= opts.step * gw[k] / static_cast<double>(n);
      bias_ -= opts.step * gb / static_cast<double>(n);
      ++epochs_;
      if (std::abs(previous - loss) < opts.tolerance) break;
      previous = loss;
    }
  }

  double probability(const std::vector<double>& x) const {
    std::vector<double> z(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) z[k] = (x[k] - mean_[k]) / scale_[k];
    return detail::sigmoid(logit_std(z));
  }

  std::size_t epochs() const { return epochs_; }
  double bias() const { return bias_; }

 private:
  double logit_std(const std::vector<double>& z) const {
    double s = bias_;
    for (std::size_t k = 0; k < z.size(); ++k) s += weights_[k] * z[k];
    return s;
  }

  std::vector<double> mean_, scale_, weights_;
  double bias_ = 0.0;
  std::size_t epochs_ = 0;
};

/// Logistic regression on averaged word vectors for one task.
inline Metrics lr_baseline(std::span<const Example> train, std::span<const Example> test, std::size_t task,
                           const Vocab& vocab, const EmbeddingMatrix& embedding,
                           LogisticRegression::Options opts = {}) {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (const Example& e : train) {
    if (!e.has_label(task)) continue;
    x.push_back(mean_embedding(e.tokens, vocab, embedding));
    y.push_back(e.labels[task] == Label::positive ? 1 : 0);
  }
  if (x.empty()) throw DataError("lr_baseline: no training rows labelled for the task");
  LogisticRegression model;
  model.fit(x, y, opts);
  std::vector<int> predicted, truth;
  for (const Example& e : test) {
    if (!e.has_label(task)) continue;
    predicted.push_back(decide(model.probability(mean_embedding(e.tokens, vocab, embedding))));
    truth.push_back(e.labels[task] == Label::positive ? 1 : 0);
  }
  return compute_metrics(predicted, truth);
}

}  // namespace daan

#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "daan/data.hpp"
#include "daan/metrics.hpp"
#include "daan/models.hpp"
#include "daan/optim.hpp"

namespace daan {

struct TrainConfig {
  std::size_t max_epochs = 50;
  std::size_t patience = 3;
  std::size_t batch_size = 32;
  double val_split = 0.15;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
  bool verbose = false;

  void validate() const {
    if (max_epochs == 0 || patience == 0 || batch_size == 0) {
      throw ParameterError("max_epochs, patience and batch_size must be positive");
    }
    if (patience >= max_epochs) throw ParameterError("patience must be smaller than max_epochs");
    if (!(val_split >= 0.0 && val_split < 1.0)) throw ParameterError("val_split must lie in [0, 1)");
    if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be positive");
  }

  AdamConfig adam() const { return {learning_rate, beta1, beta2, epsilon}; }
};

/// Tracks the best monitored value; stop once `patience` consecutive epochs
/// fail to improve on it.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Returns true when `value` is a new best.
  bool update(std::size_t epoch, double value) {
    if (value < best_) {
      best_ = value;
      best_epoch_ = epoch;
      wait_ = 0;
      return true;
    }
    ++wait_;
    return false;
  }

  bool should_stop() const { return wait_ >= patience_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_;
  std::size_t wait_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
};

struct TrainData {
  std::vector<Example> labeled;
  std::vector<Example> domains;  // unlabelled rows with a domain index
  // Explicit monitoring set; when absent it is carved out of `labeled`.
  std::optional<std::vector<Example>> validation;
};

struct History {
  std::vector<double> train_loss;   // total objective, per epoch
  std::vector<double> task_loss;    // weighted task part
  std::vector<double> domain_loss;  // discriminator loss (0 without branch)
  std::vector<double> val_loss;     // monitored value
  std::size_t best_epoch = 0;       // 1-based
  std::size_t epochs_run = 0;
  bool stopped_early = false;
};

/// Mean over tasks of the per-task BCE on `examples` (evaluation mode).
inline double validation_loss(Model& model, std::span<const Example> examples) {
  const std::size_t m = model.spec.task_count();
  std::vector<double> sum(m, 0.0);
  std::vector<std::size_t> count(m, 0);
  for (const Batch& b : make_batches(examples, model.vocab, model.spec.seq_len, 256, nullptr, m)) {
    const Prediction p = predict(model, b, false);
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t i = 0; i < b.size; ++i) {
        if (!b.present[k][i]) continue;
        const double q = clip_probability(p.probs[k][i]);
        const double y = b.labels[k][i];
        sum[k] -= y * std::log(q) + (1.0 - y) * std::log(1.0 - q);
        ++count[k];
      }
    }
  }
  double total = 0.0;
  std::size_t tasks = 0;
  for (std::size_t k = 0; k < m; ++k) {
    if (count[k] == 0) continue;
    total += sum[k] / static_cast<double>(count[k]);
    ++tasks;
  }
  return tasks == 0 ? std::numeric_limits<double>::quiet_NaN() : total / static_cast<double>(tasks);
}

namespace detail {

inline std::vector<Tensor> snapshot(Model& model) {
  std::vector<Tensor> out;
  for (Parameter* p : model.parameters()) out.push_back(p->value);
  return out;
}

inline void restore(Model& model, const std::vector<Tensor>& values) {
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace detail

/// Adam with early stopping on validation task loss. Each task batch is
/// paired with one domain batch when the model has a domain branch. The
/// parameters of the best validation epoch are restored at the end.
inline History train(Model& model, const TrainData& data, const TrainConfig& cfg) {
  cfg.validate();
  model.spec.validate();
  if (data.labeled.empty()) throw DataError("training set is empty");
  const bool adversarial = model.domain.has_value();
  if (adversarial && data.domains.empty()) {
    throw ContractError("adversarial training needs unlabelled domain examples");
  }
  for (const Example& e : data.domains) {
    if (adversarial && e.domain >= model.spec.n_domains) {
      throw ContractError("domain example without a valid domain index");
    }
  }

  std::vector<Example> fit_set;
  std::vector<Example> monitor_set;
  if (data.validation) {
    fit_set = data.labeled;
    monitor_set = *data.validation;
  } else {
    auto [a, b] = validation_split(data.labeled, cfg.val_split, cfg.seed);
    fit_set = std::move(a);
    monitor_set = std::move(b);
  }
  if (fit_set.empty()) throw DataError("training set is empty after the validation split");
  // Without held-out rows the training set itself is monitored.
  const std::vector<Example>& monitored = monitor_set.empty() ? fit_set : monitor_set;

  const std::size_t m = model.spec.task_count();
  Rng rng(cfg.seed);
  // Domain batches draw from their own stream so the task-side schedule does
  // not depend on whether a domain branch exists.
  Rng domain_rng(cfg.seed ^ 0xd1b54a32d192ed03ull);
  const auto params = model.parameters();
  AdamState adam;
  const AdamConfig adam_cfg = cfg.adam();
  EarlyStopping stopper(cfg.patience);
  std::vector<Tensor> best = detail::snapshot(model);
  History history;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto batches = make_batches(fit_set, model.vocab, model.spec.seq_len, cfg.batch_size, &rng, m);
    std::vector<Batch> domain_batches;
    if (adversarial) {
      domain_batches = make_batches(data.domains, model.vocab, model.spec.seq_len, cfg.batch_size, &domain_rng, 0);
    }
    double total = 0.0, task_total = 0.0, domain_total = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      Tape tape;
      ForwardOptions opts;
      opts.training = true;
      opts.rng = &rng;
      const Batch* dom = adversarial ? &domain_batches[bi % domain_batches.size()] : nullptr;
      const LossBreakdown loss = training_loss(tape, model, batches[bi], dom, opts, &domain_rng);
      const double value = loss.total.value().item();
      const double dom_value = loss.domain_loss.valid() ? loss.domain_loss.value().item() : 0.0;
      if (!std::isfinite(value)) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch << ", batch " << bi + 1 << ": total=" << value;
        for (std::size_t k = 0; k < loss.task_losses.size(); ++k) {
          os << " task[" << model.spec.tasks[k] << "]=" << loss.task_losses[k].value().item();
        }
        os << " domain=" << dom_value;
        throw NumericalError(os.str());
      }
      tape.backward(loss.total);
      adam_step(params, adam, adam_cfg);
      for (Parameter* p : params) p->zero_grad();
      total += value;
      domain_total += dom_value;
      for (std::size_t k = 0; k < loss.task_losses.size(); ++k) {
        task_total += model.spec.task_weights[k] * loss.task_losses[k].value().item();
      }
    }
    const double nb = static_cast<double>(batches.size());
    history.train_loss.push_back(total / nb);
    history.task_loss.push_back(task_total / nb);
    history.domain_loss.push_back(domain_total / nb);
    const double val = validation_loss(model, monitored);
    if (!std::isfinite(val)) throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch));
    history.val_loss.push_back(val);
    history.epochs_run = epoch;
    if (stopper.update(epoch, val)) best = detail::snapshot(model);
    if (cfg.verbose) {
      std::clog << "epoch " << epoch << " loss " << history.train_loss.back() << " val " << val << '\n';
    }
    if (stopper.should_stop()) {
      history.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  history.best_epoch = stopper.best_epoch();
  detail::restore(model, best);
  return history;
}

}  // namespace daan

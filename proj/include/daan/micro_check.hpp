#pragma once

// Finite-difference verification of the full multi-task adversarial model
// on a tiny configuration.

#include <cstdint>
#include <string>
#include <vector>

#include "daan/data.hpp"
#include "daan/grad_check.hpp"
#include "daan/models.hpp"

namespace daan {

struct MicroCheckConfig {
  std::size_t seq_len = 5;
  std::size_t embed_dim = 8;
  std::size_t hidden = 4;
  std::size_t tasks = 3;
  std::size_t domains = 3;
  std::size_t batch = 4;
  double lambda = 1.0;
  double eps = 1e-5;
  // Parameters are redrawn uniform(-init_scale, init_scale) so the check runs
  // at a generic point rather than at the near-symmetric initialization,
  // where many gradients sit below finite-difference resolution.
  double init_scale = 1.0;
  std::uint64_t seed = 1;
};

struct MicroCheckResult {
  GradCheckResult check;
  std::size_t parameters = 0;  // tensors checked
};

namespace detail {

// Sentences of varying length (some longer than seq_len) over a small
// vocabulary, with a mix of present and absent labels.
inline std::vector<Example> micro_examples(const MicroCheckConfig& cfg, Rng& rng, bool labeled) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < cfg.batch; ++i) {
    Example ex;
    const std::size_t len = 2 + uniform_index(rng, cfg.seq_len + 1);
    for (std::size_t t = 0; t < len; ++t) ex.tokens.push_back("tok" + std::to_string(uniform_index(rng, 10)));
    ex.event_id = "event" + std::to_string(i % cfg.domains);
    if (labeled) {
      for (std::size_t k = 0; k < cfg.tasks; ++k) {
        const bool present = (i + k) % 4 != 3;
        ex.labels.push_back(!present ? Label::absent : bernoulli(rng, 0.5) ? Label::positive : Label::negative);
      }
    } else {
      ex.labels.assign(cfg.tasks, Label::absent);
      ex.domain = i % cfg.domains;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace detail

/// Checks d(total loss)/d(every parameter) with dropout off. The reversal
/// layer is not the gradient of any scalar, so the numeric side replaces it
/// with -lambda * x + (1 + lambda) * x0, where x0 is the pooled encoder output
/// at the unperturbed parameters; that function has the same value at x0 and
/// a true derivative equal to the reversed gradient.
inline MicroCheckResult micro_grad_check(const MicroCheckConfig& cfg = {}) {
  Rng rng(cfg.seed);
  const auto labeled = detail::micro_examples(cfg, rng, true);
  const auto unlabeled = detail::micro_examples(cfg, rng, false);
  std::vector<Example> all = labeled;
  all.insert(all.end(), unlabeled.begin(), unlabeled.end());
  const Vocab vocab = Vocab::build(all);

  ModelSpec spec;
  spec.seq_len = cfg.seq_len;
  spec.embed_dim = cfg.embed_dim;
  spec.hidden = cfg.hidden;
  spec.attention_dim = cfg.hidden;
  spec.head_hidden = 10;
  spec.domain_hidden = 6;
  spec.tasks.clear();
  for (std::size_t k = 0; k < cfg.tasks; ++k) spec.tasks.push_back("task" + std::to_string(k + 1));
  spec.task_weights.clear();
  for (std::size_t k = 0; k < cfg.tasks; ++k) spec.task_weights.push_back(1.0 / static_cast<double>(k + 1));
  spec.n_domains = cfg.domains;
  spec.adversarial = true;
  spec.lambda = cfg.lambda;
  spec.domain_weight = 0.25;
  spec.dropout = 0.0;
  Model model = Model::create(spec, vocab, cfg.seed);
  for (Parameter* p : model.parameters()) {
    const std::size_t width = p->value.cols();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      if (!p->row_frozen(i / width)) p->value[i] = uniform(rng, -cfg.init_scale, cfg.init_scale);
    }
  }

  const Batch task_batch = encode_batch({&labeled[0], &labeled[1], &labeled[2], &labeled[3]}, vocab,
                                        cfg.seq_len, cfg.tasks);
  std::vector<const Example*> dom_rows;
  for (const Example& e : unlabeled) dom_rows.push_back(&e);
  const Batch domain_batch = encode_batch(dom_rows, vocab, cfg.seq_len, 0);

  Tensor anchor;
  {
    Tape tape;
    ForwardOptions opts;
    opts.tasks = false;
    anchor = forward(tape, model, domain_batch, opts).pooled.value();
  }
  const double lambda = cfg.lambda;

  auto analytic = [&](Tape& tape) {
    return training_loss(tape, model, task_batch, &domain_batch, ForwardOptions{}).total;
  };
  auto numeric = [&](Tape& tape) {
    ForwardOptions opts;
    opts.reversal = [&anchor, lambda](const Var& x) {
      Tensor fixed = anchor;
      for (double& v : fixed.data()) v *= 1.0 + lambda;
      return add(scale(x, -lambda), x.tape()->constant(std::move(fixed)));
    };
    return training_loss(tape, model, task_batch, &domain_batch, opts).total;
  };
  const auto params = model.parameters();
  MicroCheckResult out;
  out.check = grad_check(analytic, numeric, params, cfg.eps);
  out.parameters = params.size();
  return out;
}

}  // namespace daan

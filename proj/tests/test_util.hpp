#pragma once

// Small fixtures shared by the unit tests.

#include <string>
#include <vector>

#include "daan/data.hpp"
#include "daan/models.hpp"
#include "daan/random.hpp"

namespace testutil {

inline daan::Tensor random_tensor(daan::Shape shape, daan::Rng& rng, double limit = 1.0) {
  daan::Tensor t(std::move(shape));
  for (double& v : t.data()) v = daan::uniform(rng, -limit, limit);
  return t;
}

// Random sentences over "tok0".."tok9" with random labels; every fourth
// label is absent. Domains cycle over n_domains.
inline std::vector<daan::Example> examples(std::size_t n, std::size_t n_tasks, std::size_t n_domains,
                                           std::size_t max_len, daan::Rng& rng) {
  std::vector<daan::Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    daan::Example ex;
    const std::size_t len = 1 + daan::uniform_index(rng, max_len + 2);
    for (std::size_t t = 0; t < len; ++t) ex.tokens.push_back("tok" + std::to_string(daan::uniform_index(rng, 10)));
    for (std::size_t t = 0; t < len; ++t) ex.text += (t ? " " : "") + ex.tokens[t];
    ex.event_id = "event" + std::to_string(i % n_domains);
    ex.domain = i % n_domains;
    for (std::size_t k = 0; k < n_tasks; ++k) {
      const bool present = (i + k) % 4 != 3;
      ex.labels.push_back(!present ? daan::Label::absent
                          : daan::bernoulli(rng, 0.5) ? daan::Label::positive
                                                      : daan::Label::negative);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

inline daan::ModelSpec tiny_spec(std::size_t n_tasks, std::size_t n_domains, bool adversarial) {
  daan::ModelSpec s;
  s.seq_len = 6;
  s.embed_dim = 5;
  s.hidden = 3;
  s.attention_dim = 4;
  s.head_hidden = 10;
  s.domain_hidden = 6;
  s.tasks.clear();
  for (std::size_t k = 0; k < n_tasks; ++k) s.tasks.push_back("task" + std::to_string(k + 1));
  s.task_weights.assign(n_tasks, 1.0);
  s.n_domains = adversarial ? n_domains : 0;
  s.adversarial = adversarial;
  s.dropout = 0.0;
  return s;
}

inline daan::Batch batch_of(const std::vector<daan::Example>& rows, const daan::Vocab& vocab,
                            std::size_t seq_len, std::size_t n_tasks) {
  std::vector<const daan::Example*> ptrs;
  for (const auto& e : rows) ptrs.push_back(&e);
  return daan::encode_batch(ptrs, vocab, seq_len, n_tasks);
}

// Redraws every trainable entry uniform(-scale, scale).
inline void scramble(daan::Model& model, daan::Rng& rng, double scale = 1.0) {
  for (daan::Parameter* p : model.parameters()) {
    const std::size_t width = p->value.cols();
    for (std::size_t i = 0; i < p->value.size(); ++i)
      if (!p->row_frozen(i / width)) p->value[i] = daan::uniform(rng, -scale, scale);
  }
}

inline std::vector<daan::Tensor> grads_of(const std::vector<daan::Parameter*>& params) {
  std::vector<daan::Tensor> out;
  for (const daan::Parameter* p : params) out.push_back(p->grad);
  return out;
}

}  // namespace testutil

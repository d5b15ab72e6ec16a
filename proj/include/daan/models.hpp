#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "daan/autodiff.hpp"
#include "daan/data.hpp"
#include "daan/layers.hpp"

namespace daan {

enum class ModelKind { st, st_daan, mt_daan, lr };

inline std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::st: return "st";
    case ModelKind::st_daan: return "st-daan";
    case ModelKind::mt_daan: return "mt-daan";
    case ModelKind::lr: return "lr";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  std::string l;
  for (char c : s) l.push_back(c == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (l == "st") return ModelKind::st;
  if (l == "st-daan") return ModelKind::st_daan;
  if (l == "mt-daan") return ModelKind::mt_daan;
  if (l == "lr") return ModelKind::lr;
  throw ParameterError("unknown model kind '" + std::string(s) + "' (expected st, st-daan, mt-daan or lr)");
}

struct ModelSpec {
  std::size_t seq_len = 30;
  std::size_t embed_dim = 300;
  std::size_t hidden = 64;         // per direction
  std::size_t attention_dim = 32;  // attention scorer width
  std::size_t head_hidden = 10;
  std::size_t domain_hidden = 64;
  std::vector<std::string> tasks{"task1"};
  std::size_t n_domains = 0;
  bool adversarial = false;
  double lambda = 1.0;
  std::vector<double> task_weights{1.0};
  double domain_weight = 0.25;
  double dropout = 0.4;
  bool dropout_encoder = true;  // on BiLSTM outputs
  bool dropout_head = true;     // on the context vector feeding each dense head

  std::size_t task_count() const { return tasks.size(); }

  void validate() const {
    if (tasks.empty()) throw ParameterError("model needs at least one task");
    if (task_weights.size() != tasks.size()) {
      throw ParameterError("task weight count " + std::to_string(task_weights.size()) +
                           " does not match task count " + std::to_string(tasks.size()));
    }
    for (double w : task_weights) {
      if (!(w >= 0.0)) throw ParameterError("task weights must be nonnegative");
    }
    if (!(domain_weight >= 0.0)) throw ParameterError("domain weight must be nonnegative");
    if (!(lambda >= 0.0)) throw ParameterError("lambda must be nonnegative");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ParameterError("dropout must lie in [0, 1)");
    if (adversarial && n_domains < 2) {
      throw ParameterError("adversarial training needs at least two source domains, got " +
                           std::to_string(n_domains));
    }
    if (seq_len == 0 || embed_dim == 0 || hidden == 0 || attention_dim == 0 || head_hidden == 0 ||
        domain_hidden == 0) {
      throw ParameterError("model dimensions must be positive");
    }
  }
};

/// Attention head plus dense(head_hidden, relu) -> dense(2, softmax).
struct TaskHead {
  std::string name;
  AttentionHeadParams attention;
  DenseParams hidden;
  DenseParams output;

  void collect(std::vector<Parameter*>& out) {
    attention.collect(out);
    hidden.collect(out);
    output.collect(out);
  }
};

/// Discriminator behind the gradient reversal: dense(relu) -> dense(softmax).
struct DomainBranch {
  DenseParams hidden;
  DenseParams output;

  void collect(std::vector<Parameter*>& out) {
    hidden.collect(out);
    output.collect(out);
  }
};

struct Model {
  ModelSpec spec;
  Vocab vocab;
  EmbeddingMatrix embedding;
  BiLstmParams encoder;
  std::vector<TaskHead> heads;
  std::optional<DomainBranch> domain;

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    embedding.collect(out);
    encoder.collect(out);
    for (TaskHead& h : heads) h.collect(out);
    if (domain) domain->collect(out);
    return out;
  }

  std::vector<Parameter*> encoder_parameters() {
    std::vector<Parameter*> out;
    embedding.collect(out);
    encoder.collect(out);
    return out;
  }

  void zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
  }

  /// Fresh parameters around a given vocabulary and embedding table.
  static Model create(ModelSpec spec, Vocab vocab, EmbeddingMatrix embedding, std::uint64_t seed) {
    spec.validate();
    if (embedding.vocab_size() != vocab.size()) {
      throw DimensionError("embedding rows " + std::to_string(embedding.vocab_size()) +
                           " do not match vocabulary size " + std::to_string(vocab.size()));
    }
    if (embedding.dim() != spec.embed_dim) {
      throw DimensionError("embedding width " + std::to_string(embedding.dim()) +
                           " does not match embed_dim " + std::to_string(spec.embed_dim));
    }
    Rng rng(seed);
    Model m;
    m.spec = std::move(spec);
    m.vocab = std::move(vocab);
    m.embedding = std::move(embedding);
    m.encoder = make_bilstm(m.spec.embed_dim, m.spec.hidden, rng);
    const std::size_t width = 2 * m.spec.hidden;
    for (std::size_t k = 0; k < m.spec.task_count(); ++k) {
      const std::string prefix = "head" + std::to_string(k);
      TaskHead h;
      h.name = m.spec.tasks[k];
      h.attention = make_attention_head(prefix + ".attention", width, m.spec.attention_dim, rng);
      h.hidden = make_dense(prefix + ".hidden", width, m.spec.head_hidden, rng);
      h.output = make_dense(prefix + ".output", m.spec.head_hidden, 2, rng);
      m.heads.push_back(std::move(h));
    }
    if (m.spec.adversarial) {
      DomainBranch d;
      d.hidden = make_dense("domain.hidden", width, m.spec.domain_hidden, rng);
      d.output = make_dense("domain.output", m.spec.domain_hidden, m.spec.n_domains, rng);
      m.domain = std::move(d);
    }
    return m;
  }

  /// Convenience overload drawing a random embedding table from `seed`.
  static Model create(ModelSpec spec, Vocab vocab, std::uint64_t seed) {
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    EmbeddingMatrix emb = random_embedding(vocab.size(), spec.embed_dim, rng);
    return create(std::move(spec), std::move(vocab), std::move(emb), seed);
  }
};

// ---------------------------------------------------------------------------
// Losses

inline constexpr double kProbabilityClip = 1e-7;

inline double clip_probability(double p) {
  return std::clamp(p, kProbabilityClip, 1.0 - kProbabilityClip);
}

/// -(1/N) sum [y log p + (1-y) log(1-p)] with p clipped to [1e-7, 1-1e-7].
inline double bce_loss(std::span<const double> y_hat, std::span<const double> y) {
  if (y_hat.size() != y.size()) {
    throw DimensionError("bce_loss: " + std::to_string(y_hat.size()) + " predictions for " +
                         std::to_string(y.size()) + " labels");
  }
  if (y.empty()) throw DimensionError("bce_loss: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = clip_probability(y_hat[i]);
    total += y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
  }
  return -total / static_cast<double>(y.size());
}

/// Graph version over rows with `present` set. A batch with no labelled rows
/// for the task contributes a constant zero.
inline Var bce_loss(const Var& probs, const std::vector<double>& labels,
                    const std::vector<std::uint8_t>& present) {
  const std::size_t n = probs.value().size();
  if (labels.size() != n || present.size() != n) {
    throw DimensionError("bce_loss: " + std::to_string(n) + " predictions for " +
                         std::to_string(labels.size()) + " labels");
  }
  std::size_t count = 0;
  double total = 0.0;
  auto pd = probs.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    if (!present[i]) continue;
    ++count;
    const double p = clip_probability(pd[i]);
    total += labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  Tape* tape = probs.tape();
  if (count == 0) return tape->constant(Tensor::scalar(0.0));
  const double inv = 1.0 / static_cast<double>(count);
  return tape->record(Tensor::scalar(-total * inv), {probs},
                      [probs, labels, present, inv](const Tensor& g, GradSink& s) {
                        auto pd = probs.value().data();
                        auto dp = s[probs].data();
                        for (std::size_t i = 0; i < pd.size(); ++i) {
                          if (!present[i]) continue;
                          const double p = pd[i];
                          if (p < kProbabilityClip || p > 1.0 - kProbabilityClip) continue;
                          dp[i] += -g[0] * inv * (labels[i] / p - (1.0 - labels[i]) / (1.0 - p));
                        }
                      });
}

/// -(1/N) sum_i sum_j y_ij log p_ij for one-hot y.
inline double domain_cce_loss(const Tensor& y_hat, const Tensor& y) {
  if (y_hat.shape() != y.shape() || y.rank() != 2) {
    throw DimensionError("domain_cce_loss: prediction " + to_string(y_hat.shape()) +
                         " vs labels " + to_string(y.shape()));
  }
  const std::size_t n = y.dim(0), k = y.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t ones = 0;
    double row = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double v = y.at(i, j);
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        throw LabelError("domain_cce_loss: row " + std::to_string(i) + " is not one-hot");
      }
      row += y_hat.at(i, j);
      total += v * std::log(clip_probability(y_hat.at(i, j)));
    }
    if (ones != 1) throw LabelError("domain_cce_loss: row " + std::to_string(i) + " is not one-hot");
    if (std::abs(row - 1.0) > 1e-6) {
      throw ContractError("domain_cce_loss: prediction row " + std::to_string(i) + " does not sum to 1");
    }
  }
  return -total / static_cast<double>(n);
}

/// Graph version; `domains[i]` is the index of row i's source event.
inline Var domain_cce_loss(const Var& probs, const std::vector<std::size_t>& domains) {
  detail::require_rank(probs, 2, "domain_cce_loss");
  const std::size_t n = probs.shape()[0], k = probs.shape()[1];
  if (domains.size() != n) throw DimensionError("domain_cce_loss: label count does not match rows");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (domains[i] >= k) throw LabelError("domain_cce_loss: domain index out of range");
    total += std::log(clip_probability(probs.value().at(i, domains[i])));
  }
  const double inv = 1.0 / static_cast<double>(n);
  return probs.tape()->record(Tensor::scalar(-total * inv), {probs},
                              [probs, domains, inv, k](const Tensor& g, GradSink& s) {
                                Tensor& dp = s[probs];
                                for (std::size_t i = 0; i < domains.size(); ++i) {
                                  const double p = probs.value().at(i, domains[i]);
                                  if (p < kProbabilityClip || p > 1.0 - kProbabilityClip) continue;
                                  dp[i * k + domains[i]] += -g[0] * inv / p;
                                }
                              });
}

/// L_T + w_d * L_d
inline double st_daan_loss(double task_loss, double domain_loss, double domain_weight) {
  return task_loss + domain_weight * domain_loss;
}

inline Var st_daan_loss(const Var& task_loss, const Var& domain_loss, double domain_weight) {
  if (!domain_loss.valid()) return task_loss;
  return add(task_loss, scale(domain_loss, domain_weight));
}

/// sum_k w_k L_Tk + w_d L_d
inline double mt_daan_loss(std::span<const double> task_losses, std::span<const double> weights,
                           double domain_loss, double domain_weight) {
  if (task_losses.size() != weights.size()) {
    throw DimensionError("mt_daan_loss: task loss count does not match weight count");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < task_losses.size(); ++k) total += weights[k] * task_losses[k];
  return total + domain_weight * domain_loss;
}

inline Var mt_daan_loss(const std::vector<Var>& task_losses, std::span<const double> weights,
                        const Var& domain_loss, double domain_weight) {
  if (task_losses.empty() || task_losses.size() != weights.size()) {
    throw DimensionError("mt_daan_loss: task loss count does not match weight count");
  }
  Var total = scale(task_losses[0], weights[0]);
  for (std::size_t k = 1; k < task_losses.size(); ++k) total = add(total, scale(task_losses[k], weights[k]));
  if (!domain_loss.valid()) return total;
  return add(total, scale(domain_loss, domain_weight));
}

/// A message is relevant only when predicted priority and not irrelevant.
inline int covid_relevance(int priority_pred, int irrelevant_pred) {
  if ((priority_pred != 0 && priority_pred != 1) || (irrelevant_pred != 0 && irrelevant_pred != 1)) {
    throw LabelError("covid_relevance: predictions must be 0 or 1");
  }
  return priority_pred == 1 && irrelevant_pred == 0 ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Forward passes

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout
  bool tasks = true;
  bool domain = true;
  // Replaces gradient_reversal on the domain branch input when set.
  std::function<Var(const Var&)> reversal;
};

struct ForwardResult {
  std::size_t steps = 0;  // time steps actually unrolled (longest row)
  Tensor mask;            // [n x steps]
  Var activations;        // [n x steps x 2h]
  Var pooled;             // [n x 2h] domain branch input, before reversal
  std::vector<Var> probs;   // per task, [n] positive-class probability
  std::vector<Var> alphas;  // per task, [n x steps]
  Var domain_probs;         // [n x n_domains], empty without a domain branch
};

/// Shared encoder, one attention head per task, and the adversarial domain
/// branch on mean-pooled activations. Steps past the longest row in the
/// batch are skipped; they are padding everywhere and contribute nothing.
inline ForwardResult forward(Tape& tape, Model& model, const Batch& batch,
                             const ForwardOptions& opts = {}) {
  const ModelSpec& spec = model.spec;
  if (batch.seq_len != spec.seq_len) {
    throw DimensionError("batch sequence length " + std::to_string(batch.seq_len) +
                         " does not match model seq_len " + std::to_string(spec.seq_len));
  }
  if (opts.tasks && batch.task_count() != spec.task_count()) {
    throw ContractError("batch carries label masks for " + std::to_string(batch.task_count()) +
                        " tasks, model has " + std::to_string(spec.task_count()));
  }
  const bool dropping = opts.training && spec.dropout > 0.0;
  if (dropping && !opts.rng) throw ContractError("training forward pass needs an rng for dropout");

  ForwardResult r;
  const std::size_t n = batch.size;
  r.steps = std::max<std::size_t>(1, batch.max_length());
  std::vector<std::size_t> ids(n * r.steps);
  r.mask = Tensor({n, r.steps}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < r.steps; ++t) {
      ids[i * r.steps + t] = batch.ids[i * batch.seq_len + t];
      r.mask.at(i, t) = batch.mask.at(i, t);
    }
  }

  const Var x = embed_batch(tape, model.embedding, std::move(ids), n, r.steps);
  r.activations = bilstm_batch(tape, model.encoder, x, r.mask);
  Rng* rng = opts.rng;
  const Var acts = spec.dropout_encoder && dropping ? dropout(r.activations, spec.dropout, *rng, true)
                                                    : r.activations;

  if (opts.tasks) {
    for (TaskHead& head : model.heads) {
      const AttentionOutput att = attention_head_batch(tape, head.attention, acts, r.mask);
      const Var ctx = spec.dropout_head && dropping ? dropout(att.context, spec.dropout, *rng, true)
                                                    : att.context;
      const Var hidden = dense(tape, head.hidden, ctx, DenseActivation::relu);
      const Var out = dense(tape, head.output, hidden, DenseActivation::softmax);
      r.probs.push_back(column(out, 1));
      r.alphas.push_back(att.alpha);
    }
  }

  if (opts.domain && model.domain) {
    r.pooled = masked_time_mean(acts, r.mask);
    const Var reversed = opts.reversal ? opts.reversal(r.pooled) : gradient_reversal(r.pooled, spec.lambda);
    const Var hidden = dense(tape, model.domain->hidden, reversed, DenseActivation::relu);
    r.domain_probs = dense(tape, model.domain->output, hidden, DenseActivation::softmax);
  }
  return r;
}

struct LossBreakdown {
  Var total;
  std::vector<Var> task_losses;
  Var domain_loss;  // empty when the branch is absent or no domain batch was given
};

/// Weighted task losses on `task_batch` plus w_d times the domain loss on
/// `domain_batch` (pass nullptr to skip the domain term). A non-null
/// `domain_rng` drives dropout on the domain pass instead of opts.rng.
inline LossBreakdown training_loss(Tape& tape, Model& model, const Batch& task_batch,
                                   const Batch* domain_batch, const ForwardOptions& opts,
                                   Rng* domain_rng = nullptr) {
  LossBreakdown out;
  ForwardOptions task_opts = opts;
  task_opts.domain = false;
  const ForwardResult tr = forward(tape, model, task_batch, task_opts);
  for (std::size_t k = 0; k < tr.probs.size(); ++k) {
    out.task_losses.push_back(bce_loss(tr.probs[k], task_batch.labels[k], task_batch.present[k]));
  }
  if (domain_batch && model.domain) {
    ForwardOptions dom_opts = opts;
    dom_opts.tasks = false;
    if (domain_rng) dom_opts.rng = domain_rng;
    const ForwardResult dr = forward(tape, model, *domain_batch, dom_opts);
    out.domain_loss = domain_cce_loss(dr.domain_probs, domain_batch->domains);
  }
  out.total = mt_daan_loss(out.task_losses, model.spec.task_weights, out.domain_loss,
                           model.spec.domain_weight);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation-mode predictions as plain arrays

struct Prediction {
  std::vector<std::vector<double>> probs;                // [task][row]
  std::vector<std::vector<std::vector<double>>> alphas;  // [task][row][seq_len]
  std::vector<std::vector<double>> domain_probs;         // [row][domain]
};

inline Prediction predict(Model& model, const Batch& batch, bool with_domain = true) {
  Tape tape;
  ForwardOptions opts;
  opts.domain = with_domain;
  opts.tasks = batch.task_count() == model.spec.task_count();
  const ForwardResult r = forward(tape, model, batch, opts);
  Prediction p;
  for (std::size_t k = 0; k < r.probs.size(); ++k) {
    const auto pv = r.probs[k].value().data();
    p.probs.emplace_back(pv.begin(), pv.end());
    std::vector<std::vector<double>> rows(batch.size, std::vector<double>(batch.seq_len, 0.0));
    const Tensor& a = r.alphas[k].value();
    for (std::size_t i = 0; i < batch.size; ++i)
      for (std::size_t t = 0; t < r.steps; ++t) rows[i][t] = a.at(i, t);
    p.alphas.push_back(std::move(rows));
  }
  if (r.domain_probs.valid()) {
    const Tensor& d = r.domain_probs.value();
    for (std::size_t i = 0; i < batch.size; ++i) {
      p.domain_probs.emplace_back(d.data().begin() + static_cast<std::ptrdiff_t>(i * d.dim(1)),
                                  d.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d.dim(1)));
    }
  }
  return p;
}

struct SingleTaskOutput {
  std::vector<double> probs;               // [N]
  std::vector<std::vector<double>> alpha;  // [N x T]
};

/// Evaluation-mode forward of a single-task model.
inline SingleTaskOutput st_forward(Model& model, const Batch& batch) {
  if (model.spec.task_count() != 1) {
    throw ContractError("st_forward needs a single-task model, got " +
                        std::to_string(model.spec.task_count()) + " tasks");
  }
  Prediction p = predict(model, batch, false);
  return {std::move(p.probs[0]), std::move(p.alphas[0])};
}

/// Evaluation-mode forward of a multi-task model, including domain probabilities.
inline Prediction mt_daan_forward(Model& model, const Batch& batch) {
  if (batch.task_count() != model.spec.task_count()) {
    throw ContractError("batch is missing label masks for some tasks");
  }
  return predict(model, batch, true);
}

}  // namespace daan

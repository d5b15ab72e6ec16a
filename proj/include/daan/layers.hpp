#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "daan/autodiff.hpp"
#include "daan/random.hpp"

namespace daan {

namespace init {

inline Tensor uniform(Shape shape, double limit, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = daan::uniform(rng, -limit, limit);
  return t;
}

// Glorot/Xavier uniform for a [fan_out x fan_in] matrix.
inline Tensor glorot(std::size_t fan_out, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform({fan_out, fan_in}, limit, rng);
}

constexpr double kRecurrentLimit = 0.08;

}  // namespace init

// ---------------------------------------------------------------------------
// Embedding

/// Token table [V x d]. Row 0 is the padding row: all zeros and locked.
/// Locked rows are stored as Parameter::frozen_rows.
struct EmbeddingMatrix {
  Parameter table;
  // Fraction of non-reserved rows filled from a pretrained file.
  double coverage = 0.0;

  std::size_t vocab_size() const { return table.value.dim(0); }
  std::size_t dim() const { return table.value.dim(1); }
  bool locked(std::size_t row) const { return table.row_frozen(row); }

  void collect(std::vector<Parameter*>& out) { out.push_back(&table); }
};

/// Randomly initialized table with only the padding row locked.
inline EmbeddingMatrix random_embedding(std::size_t vocab_size, std::size_t dim, Rng& rng,
                                        double limit = 0.25) {
  if (vocab_size < 2) throw ParameterError("embedding needs at least the two reserved rows");
  EmbeddingMatrix m;
  Tensor table = init::uniform({vocab_size, dim}, limit, rng);
  for (std::size_t k = 0; k < dim; ++k) table.at(0, k) = 0.0;
  m.table = Parameter("embedding", std::move(table));
  m.table.frozen_rows.assign(vocab_size, false);
  m.table.frozen_rows[0] = true;
  return m;
}

/// ids [T] -> [T x d]. Gradients scatter only into unlocked rows.
inline Var embed(Tape& tape, EmbeddingMatrix& matrix, std::vector<std::size_t> ids) {
  return gather_rows(tape.parameter(matrix.table), std::move(ids), &matrix.table);
}

/// Row-major ids [n x steps] -> [n x steps x d].
inline Var embed_batch(Tape& tape, EmbeddingMatrix& matrix, std::vector<std::size_t> ids,
                       std::size_t n, std::size_t steps) {
  const std::size_t d = matrix.dim();
  return reshape(embed(tape, matrix, std::move(ids)), {n, steps, d});
}

// ---------------------------------------------------------------------------
// BiLSTM

struct LstmGate {
  Parameter weight;  // [h x (d+h)]
  Parameter bias;    // [h]
};

struct LstmCell {
  LstmGate input, forget, output, candidate;

  void collect(std::vector<Parameter*>& out) {
    for (LstmGate* g : {&input, &forget, &output, &candidate}) {
      out.push_back(&g->weight);
      out.push_back(&g->bias);
    }
  }
};

struct BiLstmParams {
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  LstmCell forward;
  LstmCell backward;

  void collect(std::vector<Parameter*>& out) {
    forward.collect(out);
    backward.collect(out);
  }
};

inline LstmCell make_lstm_cell(const std::string& prefix, std::size_t input_dim,
                               std::size_t hidden, Rng& rng) {
  // Input columns [0, input_dim) are Glorot; recurrent columns use kRecurrentLimit.
  const double input_limit = std::sqrt(6.0 / static_cast<double>(input_dim + hidden));
  auto gate = [&](const char* name) {
    Tensor w({hidden, input_dim + hidden});
    for (std::size_t r = 0; r < hidden; ++r) {
      for (std::size_t c = 0; c < input_dim + hidden; ++c) {
        const double limit = c < input_dim ? input_limit : init::kRecurrentLimit;
        w.at(r, c) = uniform(rng, -limit, limit);
      }
    }
    return LstmGate{Parameter(prefix + "." + name + ".weight", std::move(w)),
                    Parameter(prefix + "." + name + ".bias", Tensor({hidden}, 0.0))};
  };
  LstmCell cell;
  cell.input = gate("input");
  cell.forget = gate("forget");
  cell.output = gate("output");
  cell.candidate = gate("candidate");
  return cell;
}

inline BiLstmParams make_bilstm(std::size_t input_dim, std::size_t hidden, Rng& rng) {
  BiLstmParams p;
  p.input_dim = input_dim;
  p.hidden = hidden;
  p.forward = make_lstm_cell("encoder.forward", input_dim, hidden, rng);
  p.backward = make_lstm_cell("encoder.backward", input_dim, hidden, rng);
  return p;
}

namespace detail {

// Checks that every row of a [n x T] mask is ones followed by zeros.
inline void require_prefix_mask(const Tensor& mask) {
  const std::size_t n = mask.rows(), t_len = mask.cols();
  for (std::size_t r = 0; r < n; ++r) {
    bool in_padding = false;
    for (std::size_t t = 0; t < t_len; ++t) {
      const double m = mask[r * t_len + t];
      if (m != 0.0 && m != 1.0) throw ContractError("mask entries must be 0 or 1");
      if (m == 0.0) {
        in_padding = true;
      } else if (in_padding) {
        throw ContractError("mask row " + std::to_string(r) +
                            " is not a prefix of ones followed by zeros");
      }
    }
  }
}

struct LstmState {
  Var hidden;
  Var cell;
};

inline LstmState lstm_step(Tape& tape, LstmCell& cell, const Var& x, const LstmState& prev) {
  const Var z = concat_cols(x, prev.hidden);
  auto gate = [&](LstmGate& g, Activation kind) {
    return activation(linear(z, tape.parameter(g.weight), tape.parameter(g.bias)), kind);
  };
  const Var i = gate(cell.input, Activation::sigmoid);
  const Var f = gate(cell.forget, Activation::sigmoid);
  const Var o = gate(cell.output, Activation::sigmoid);
  const Var g = gate(cell.candidate, Activation::tanh);
  const Var c = add(mul(f, prev.cell), mul(i, g));
  const Var h = mul(o, tanh(c));
  return {h, c};
}

// Runs one direction; returns the emitted activation for every step.
inline std::vector<Var> run_direction(Tape& tape, LstmCell& cell, const Var& x, const Tensor& mask,
                                      std::size_t hidden, bool reverse) {
  const std::size_t n = x.shape()[0], t_len = x.shape()[1];
  LstmState state{tape.constant(Tensor({n, hidden}, 0.0)), tape.constant(Tensor({n, hidden}, 0.0))};
  std::vector<Var> emitted(t_len);
  for (std::size_t k = 0; k < t_len; ++k) {
    const std::size_t t = reverse ? t_len - 1 - k : k;
    std::vector<double> m(n);
    bool all_on = true;
    for (std::size_t r = 0; r < n; ++r) {
      m[r] = mask[r * t_len + t];
      all_on = all_on && m[r] == 1.0;
    }
    const LstmState next = lstm_step(tape, cell, time_slice(x, t), state);
    if (all_on) {
      state = next;
      emitted[t] = state.hidden;
    } else {
      // Padded rows carry their state through and emit zeros.
      state = {blend_rows(next.hidden, state.hidden, m), blend_rows(next.cell, state.cell, m)};
      emitted[t] = scale_rows(state.hidden, m);
    }
  }
  return emitted;
}

}  // namespace detail

/// Batched encoder: x [n x T x d], mask [n x T] -> activations [n x T x 2h],
/// each step the concatenation [forward_state ; backward_state].
inline Var bilstm_batch(Tape& tape, BiLstmParams& params, const Var& x, const Tensor& mask) {
  detail::require_rank(x, 3, "bilstm");
  const std::size_t n = x.shape()[0], t_len = x.shape()[1];
  if (x.shape()[2] != params.input_dim) {
    throw DimensionError("bilstm: input " + to_string(x.shape()) + " does not match input size " +
                         std::to_string(params.input_dim));
  }
  if (mask.shape() != Shape{n, t_len}) {
    throw DimensionError("bilstm: mask " + to_string(mask.shape()) + " does not match input " +
                         to_string(x.shape()));
  }
  detail::require_prefix_mask(mask);
  const auto fwd = detail::run_direction(tape, params.forward, x, mask, params.hidden, false);
  const auto bwd = detail::run_direction(tape, params.backward, x, mask, params.hidden, true);
  std::vector<Var> steps;
  steps.reserve(t_len);
  for (std::size_t t = 0; t < t_len; ++t) steps.push_back(concat_cols(fwd[t], bwd[t]));
  return stack_time(steps);
}

/// Single sequence: x [T x d], mask [T] -> [T x 2h].
inline Var bilstm(Tape& tape, BiLstmParams& params, const Var& x, const std::vector<double>& mask) {
  detail::require_rank(x, 2, "bilstm");
  const std::size_t t_len = x.shape()[0];
  if (mask.size() != t_len) throw DimensionError("bilstm: mask length does not match sequence");
  const Var acts = bilstm_batch(tape, params, reshape(x, {1, t_len, x.shape()[1]}),
                                Tensor({1, t_len}, mask));
  return reshape(acts, {t_len, 2 * params.hidden});
}

// ---------------------------------------------------------------------------
// Attention

struct AttentionHeadParams {
  Parameter projection;  // [s x 2h]
  Parameter bias;        // [s]
  Parameter score;       // [s]

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&projection);
    out.push_back(&bias);
    out.push_back(&score);
  }
};

inline AttentionHeadParams make_attention_head(const std::string& prefix, std::size_t input_dim,
                                               std::size_t score_dim, Rng& rng) {
  AttentionHeadParams p;
  p.projection = Parameter(prefix + ".projection", init::glorot(score_dim, input_dim, rng));
  p.bias = Parameter(prefix + ".bias", Tensor({score_dim}, 0.0));
  p.score = Parameter(prefix + ".score", init::glorot(1, score_dim, rng).reshaped({score_dim}));
  return p;
}

struct AttentionOutput {
  Var context;  // [n x 2h]
  Var alpha;    // [n x T]
};

/// score_k = v . tanh(W a_k + b); alpha = masked softmax; context = sum alpha_k a_k.
inline AttentionOutput attention_head_batch(Tape& tape, AttentionHeadParams& params,
                                            const Var& acts, const Tensor& mask) {
  detail::require_rank(acts, 3, "attention_head");
  const std::size_t n = acts.shape()[0], t_len = acts.shape()[1], width = acts.shape()[2];
  const std::size_t s = params.score.value.size();
  const Var flat = reshape(acts, {n * t_len, width});
  const Var hidden =
      tanh(linear(flat, tape.parameter(params.projection), tape.parameter(params.bias)));
  const Var scores = linear(hidden, reshape(tape.parameter(params.score), {1, s}));
  const Var alpha = masked_softmax(reshape(scores, {n, t_len}), mask);
  return {weighted_time_sum(alpha, acts), alpha};
}

/// Single sequence: acts [T x 2h], mask [T] -> context [2h], alpha [T].
inline AttentionOutput attention_head(Tape& tape, AttentionHeadParams& params, const Var& acts,
                                      const std::vector<double>& mask) {
  detail::require_rank(acts, 2, "attention_head");
  const std::size_t t_len = acts.shape()[0], width = acts.shape()[1];
  if (mask.size() != t_len) throw DimensionError("attention_head: mask length does not match");
  const AttentionOutput out = attention_head_batch(
      tape, params, reshape(acts, {1, t_len, width}), Tensor({1, t_len}, mask));
  return {reshape(out.context, {width}), reshape(out.alpha, {t_len})};
}

// ---------------------------------------------------------------------------
// Dense

enum class DenseActivation { linear, relu, tanh, sigmoid, softmax };

struct DenseParams {
  Parameter weight;  // [out x in]
  Parameter bias;    // [out]

  std::size_t in() const { return weight.value.dim(1); }
  std::size_t out() const { return weight.value.dim(0); }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

inline DenseParams make_dense(const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  return DenseParams{Parameter(prefix + ".weight", init::glorot(out, in, rng)),
                     Parameter(prefix + ".bias", Tensor({out}, 0.0))};
}

/// x [n x in] (or [in]) -> [n x out] (or [out]).
inline Var dense(Tape& tape, DenseParams& params, const Var& x, DenseActivation kind) {
  const bool vector_input = x.value().rank() == 1;
  const Var in = vector_input ? reshape(x, {1, x.shape()[0]}) : x;
  Var y = linear(in, tape.parameter(params.weight), tape.parameter(params.bias));
  switch (kind) {
    case DenseActivation::linear: break;
    case DenseActivation::relu: y = relu(y); break;
    case DenseActivation::tanh: y = tanh(y); break;
    case DenseActivation::sigmoid: y = sigmoid(y); break;
    case DenseActivation::softmax: y = softmax(y); break;
  }
  return vector_input ? reshape(y, {params.out()}) : y;
}

// ---------------------------------------------------------------------------
// Dropout

/// Inverted dropout; evaluation mode returns `x` itself.
inline Var dropout(const Var& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  Tensor keep(x.shape());
  const double survivor = 1.0 / (1.0 - rate);
  for (double& v : keep.data()) v = bernoulli(rng, rate) ? 0.0 : survivor;
  return multiply_constant(x, std::move(keep));
}

}  // namespace daan

#pragma once

// Define-by-run reverse-mode differentiation over dense double tensors.
//
// A Tape is rebuilt for every forward pass. Trainable state lives in
// Parameter objects that outlive the tape; Tape::parameter() aliases them as
// leaves and backward() accumulates into Parameter::grad.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "daan/errors.hpp"
#include "daan/tensor.hpp"

namespace daan {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  // Rows excluded from optimizer updates and from embedding scatter. Empty
  // means no row is frozen.
  std::vector<bool> frozen_rows;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape(), 0.0) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) {
      grad = Tensor(value.shape(), 0.0);
    } else {
      grad.fill(0.0);
    }
  }

  bool row_frozen(std::size_t row) const {
    return row < frozen_rows.size() && frozen_rows[row];
  }
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  // Accumulated gradient; zeros when backward never reached this node.
  Tensor grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class GradSink;

// Receives the upstream gradient of a node and adds contributions into its
// parents through the sink.
using BackwardRule = std::function<void(const Tensor& upstream, GradSink& sink)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), nullptr, {}, nullptr, false); }

  // A leaf that requires grad but is owned by the tape.
  Var variable(Tensor value) { return push(std::move(value), nullptr, {}, nullptr, true); }

  // Leaf aliasing a Parameter. The same Parameter always maps to one node.
  Var parameter(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
      return Var(this, it->second);
    }
    Var v = push(Tensor{}, &p, {}, nullptr, true);
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  Var record(Tensor value, std::vector<Var> parents, BackwardRule rule) {
    bool needs = false;
    for (const Var& p : parents) {
      if (p.tape() != this) throw ContractError("operand recorded on a different tape");
      needs = needs || nodes_[p.id()].requires_grad;
    }
    std::vector<std::size_t> ids;
    ids.reserve(parents.size());
    for (const Var& p : parents) ids.push_back(p.id());
    return push(std::move(value), nullptr, std::move(ids), needs ? std::move(rule) : nullptr,
                needs);
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.param ? n.param->value : n.value;
  }

  Tensor grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    if (n.grad.empty()) return Tensor(value(id).shape(), 0.0);
    return n.grad;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Propagates d(loss)/d(node) to every node that requires grad. Gradients
  /// add onto whatever earlier calls left behind.
  void backward(const Var& loss);

 private:
  friend class GradSink;

  struct Node {
    Tensor value;
    Parameter* param = nullptr;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardRule rule;
    bool requires_grad = false;
  };

  Var push(Tensor value, Parameter* param, std::vector<std::size_t> parents, BackwardRule rule,
           bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.param = param;
    n.parents = std::move(parents);
    n.rule = std::move(rule);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  // deque keeps references to earlier node values stable while recording.
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

class GradSink {
 public:
  bool wants(const Var& v) const { return tape_.requires_grad(v.id()); }

  // Gradient buffer for v, zero-initialized on first touch.
  Tensor& operator[](const Var& v) {
    Tensor& g = grads_[v.id()];
    if (g.empty()) g = Tensor(tape_.value(v.id()).shape(), 0.0);
    return g;
  }

 private:
  friend class Tape;
  GradSink(Tape& tape, std::vector<Tensor>& grads) : tape_(tape), grads_(grads) {}

  Tape& tape_;
  std::vector<Tensor>& grads_;
};

inline const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an empty Var");
  return tape_->value(id_);
}

inline Tensor Var::grad() const {
  if (!tape_) throw ContractError("use of an empty Var");
  return tape_->grad(id_);
}

inline void add_into(Tensor& dst, const Tensor& src) {
  if (dst.empty()) {
    dst = src;
    return;
  }
  if (dst.shape() != src.shape()) {
    throw DimensionError("gradient shape " + to_string(src.shape()) +
                         " does not match " + to_string(dst.shape()));
  }
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

inline void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw ContractError("loss was recorded on a different tape");
  const Tensor& lv = value(loss.id());
  if (lv.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + to_string(lv.shape()));
  }
  std::vector<Tensor> grads(nodes_.size());
  grads[loss.id()] = Tensor(lv.shape(), 1.0);
  GradSink sink(*this, grads);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (grads[i].empty() || !n.requires_grad || !n.rule) continue;
    n.rule(grads[i], sink);
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].empty() || !nodes_[i].requires_grad) continue;
    add_into(nodes_[i].grad, grads[i]);
    if (Parameter* p = nodes_[i].param) add_into(p->grad, grads[i]);
  }
}

// ---------------------------------------------------------------------------
// Operations

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

inline ConstMatrixMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap(t.data().data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

inline MatrixMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatrixMap(t.data().data(), static_cast<Eigen::Index>(rows),
                   static_cast<Eigen::Index>(cols));
}

inline void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " operand, got " + to_string(v.shape()));
  }
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

/// C = A * B for A [n x k], B [k x m].
inline Var matmul(const Var& a, const Var& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + to_string(a.shape()) +
                         " and " + to_string(b.shape()));
  }
  Tensor out({n, m});
  detail::as_matrix(out, n, m).noalias() =
      detail::as_matrix(a.value(), n, k) * detail::as_matrix(b.value(), k, m);
  return a.tape()->record(std::move(out), {a, b}, [a, b, n, k, m](const Tensor& g, GradSink& s) {
    auto dc = detail::as_matrix(g, n, m);
    if (s.wants(a)) {
      detail::as_matrix(s[a], n, k).noalias() += dc * detail::as_matrix(b.value(), k, m).transpose();
    }
    if (s.wants(b)) {
      detail::as_matrix(s[b], k, m).noalias() += detail::as_matrix(a.value(), n, k).transpose() * dc;
    }
  });
}

/// Y = X * W^T + b for X [n x in], W [out x in], b [out]. Pass an empty Var
/// to skip the bias.
inline Var linear(const Var& x, const Var& w, const Var& b = Var()) {
  detail::require_rank(x, 2, "linear");
  detail::require_rank(w, 2, "linear");
  const std::size_t n = x.shape()[0], in = x.shape()[1], out = w.shape()[0];
  if (w.shape()[1] != in) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " does not fit weight " +
                         to_string(w.shape()));
  }
  if (b.valid() && b.value().size() != out) {
    throw DimensionError("linear: bias " + to_string(b.shape()) + " does not fit weight " +
                         to_string(w.shape()));
  }
  Tensor y({n, out});
  auto ym = detail::as_matrix(y, n, out);
  ym.noalias() = detail::as_matrix(x.value(), n, in) * detail::as_matrix(w.value(), out, in).transpose();
  if (b.valid()) {
    ym.rowwise() += detail::as_matrix(b.value(), 1, out).row(0);
  }
  std::vector<Var> parents{x, w};
  if (b.valid()) parents.push_back(b);
  return x.tape()->record(std::move(y), std::move(parents),
                          [x, w, b, n, in, out](const Tensor& g, GradSink& s) {
                            auto dy = detail::as_matrix(g, n, out);
                            if (s.wants(x)) {
                              detail::as_matrix(s[x], n, in).noalias() +=
                                  dy * detail::as_matrix(w.value(), out, in);
                            }
                            if (s.wants(w)) {
                              detail::as_matrix(s[w], out, in).noalias() +=
                                  dy.transpose() * detail::as_matrix(x.value(), n, in);
                            }
                            if (b.valid() && s.wants(b)) {
                              detail::as_matrix(s[b], 1, out).row(0) += dy.colwise().sum();
                            }
                          });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  auto od = out.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](const Tensor& g, GradSink& s) {
    if (s.wants(a)) add_into(s[a], g);
    if (s.wants(b)) add_into(s[b], g);
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.value();
  auto od = out.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](const Tensor& g, GradSink& s) {
    auto gd = g.data();
    if (s.wants(a)) {
      auto da = s[a].data();
      auto bv = b.value().data();
      for (std::size_t i = 0; i < gd.size(); ++i) da[i] += gd[i] * bv[i];
    }
    if (s.wants(b)) {
      auto db = s[b].data();
      auto av = a.value().data();
      for (std::size_t i = 0; i < gd.size(); ++i) db[i] += gd[i] * av[i];
    }
  });
}

inline Var scale(const Var& x, double c) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= c;
  return x.tape()->record(std::move(out), {x}, [x, c](const Tensor& g, GradSink& s) {
    auto dx = s[x].data();
    auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i) dx[i] += c * gd[i];
  });
}

/// Elementwise product with a constant tensor (dropout masks, label weights).
inline Var multiply_constant(const Var& x, Tensor c) {
  if (c.shape() != x.shape()) {
    throw DimensionError("multiply_constant: shape mismatch " + to_string(x.shape()) + " vs " +
                         to_string(c.shape()));
  }
  Tensor out = x.value();
  auto od = out.data();
  auto cd = c.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= cd[i];
  return x.tape()->record(std::move(out), {x}, [x, c = std::move(c)](const Tensor& g, GradSink& s) {
    auto dx = s[x].data();
    auto gd = g.data();
    auto cd = c.data();
    for (std::size_t i = 0; i < gd.size(); ++i) dx[i] += gd[i] * cd[i];
  });
}

enum class Activation { sigmoid, tanh, relu };

inline Var activation(const Var& x, Activation kind) {
  const Tensor& in = x.value();
  if (!all_finite(in)) throw NumericalError("activation: non-finite input");
  Tensor out(in.shape());
  auto id = in.data();
  auto od = out.data();
  switch (kind) {
    case Activation::sigmoid:
      for (std::size_t i = 0; i < id.size(); ++i) od[i] = detail::sigmoid(id[i]);
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < id.size(); ++i) od[i] = std::tanh(id[i]);
      break;
    case Activation::relu:
      for (std::size_t i = 0; i < id.size(); ++i) od[i] = id[i] > 0 ? id[i] : 0.0;
      break;
  }
  Tape* tape = x.tape();
  // The rule reads the output through the node about to be recorded.
  const std::size_t self = tape->size();
  return tape->record(std::move(out), {x}, [x, kind, tape, self](const Tensor& g, GradSink& s) {
    auto y = tape->value(self).data();
    auto gd = g.data();
    auto dx = s[x].data();
    switch (kind) {
      case Activation::sigmoid:
        for (std::size_t i = 0; i < gd.size(); ++i) dx[i] += gd[i] * y[i] * (1.0 - y[i]);
        break;
      case Activation::tanh:
        for (std::size_t i = 0; i < gd.size(); ++i) dx[i] += gd[i] * (1.0 - y[i] * y[i]);
        break;
      case Activation::relu:
        for (std::size_t i = 0; i < gd.size(); ++i) dx[i] += y[i] > 0 ? gd[i] : 0.0;
        break;
    }
  });
}

inline Var sigmoid(const Var& x) { return activation(x, Activation::sigmoid); }
inline Var tanh(const Var& x) { return activation(x, Activation::tanh); }
inline Var relu(const Var& x) { return activation(x, Activation::relu); }

inline Var sum(const Var& x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape()->record(Tensor::scalar(total), {x}, [x](const Tensor& g, GradSink& s) {
    const double gv = g[0];
    for (double& d : s[x].data()) d += gv;
  });
}

inline Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape()->record(std::move(out), {x}, [x](const Tensor& g, GradSink& s) {
    auto dx = s[x].data();
    auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i) dx[i] += gd[i];
  });
}

/// [n x p] ++ [n x q] -> [n x (p+q)]
inline Var concat_cols(const Var& a, const Var& b) {
  detail::require_rank(a, 2, "concat_cols");
  detail::require_rank(b, 2, "concat_cols");
  const std::size_t n = a.shape()[0], p = a.shape()[1], q = b.shape()[1];
  if (b.shape()[0] != n) {
    throw DimensionError("concat_cols: row mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  Tensor out({n, p + q});
  auto om = detail::as_matrix(out, n, p + q);
  om.leftCols(static_cast<Eigen::Index>(p)) = detail::as_matrix(a.value(), n, p);
  om.rightCols(static_cast<Eigen::Index>(q)) = detail::as_matrix(b.value(), n, q);
  return a.tape()->record(std::move(out), {a, b}, [a, b, n, p, q](const Tensor& g, GradSink& s) {
    auto gm = detail::as_matrix(g, n, p + q);
    if (s.wants(a)) detail::as_matrix(s[a], n, p) += gm.leftCols(static_cast<Eigen::Index>(p));
    if (s.wants(b)) detail::as_matrix(s[b], n, q) += gm.rightCols(static_cast<Eigen::Index>(q));
  });
}

/// Columns [begin, begin+count) of a rank-2 tensor.
inline Var slice_cols(const Var& x, std::size_t begin, std::size_t count) {
  detail::require_rank(x, 2, "slice_cols");
  const std::size_t n = x.shape()[0], c = x.shape()[1];
  if (count == 0 || begin + count > c) {
    throw DimensionError("slice_cols: range out of bounds for " + to_string(x.shape()));
  }
  Tensor out({n, count});
  detail::as_matrix(out, n, count) = detail::as_matrix(x.value(), n, c).middleCols(
      static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count));
  return x.tape()->record(std::move(out), {x}, [x, n, c, begin, count](const Tensor& g, GradSink& s) {
    detail::as_matrix(s[x], n, c).middleCols(static_cast<Eigen::Index>(begin),
                                             static_cast<Eigen::Index>(count)) +=
        detail::as_matrix(g, n, count);
  });
}

/// Column j of [n x c] as a vector [n].
inline Var column(const Var& x, std::size_t j) {
  return reshape(slice_cols(x, j, 1), {x.shape()[0]});
}

/// Time step t of a [n x T x h] tensor, as [n x h].
inline Var time_slice(const Var& x, std::size_t t) {
  detail::require_rank(x, 3, "time_slice");
  const std::size_t n = x.shape()[0], steps = x.shape()[1], h = x.shape()[2];
  if (t >= steps) throw DimensionError("time_slice: step out of range for " + to_string(x.shape()));
  Tensor out({n, h});
  const auto in = x.value().data();
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>((r * steps + t) * h), h,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * h));
  }
  return x.tape()->record(std::move(out), {x}, [x, n, steps, h, t](const Tensor& g, GradSink& s) {
    auto dx = s[x].data();
    auto gd = g.data();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t k = 0; k < h; ++k) dx[(r * steps + t) * h + k] += gd[r * h + k];
    }
  });
}

/// T tensors [n x h] -> [n x T x h].
inline Var stack_time(const std::vector<Var>& steps) {
  if (steps.empty()) throw DimensionError("stack_time: no steps");
  for (const Var& v : steps) detail::require_rank(v, 2, "stack_time");
  const std::size_t n = steps[0].shape()[0], h = steps[0].shape()[1], t_len = steps.size();
  for (const Var& v : steps) {
    if (v.shape() != steps[0].shape()) {
      throw DimensionError("stack_time: inconsistent step shape " + to_string(v.shape()));
    }
  }
  Tensor out({n, t_len, h});
  auto od = out.data();
  for (std::size_t t = 0; t < t_len; ++t) {
    auto sd = steps[t].value().data();
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(sd.begin() + static_cast<std::ptrdiff_t>(r * h), h,
                  od.begin() + static_cast<std::ptrdiff_t>((r * t_len + t) * h));
    }
  }
  return steps[0].tape()->record(std::move(out), steps,
                                 [steps, n, h, t_len](const Tensor& g, GradSink& s) {
                                   auto gd = g.data();
                                   for (std::size_t t = 0; t < t_len; ++t) {
                                     if (!s.wants(steps[t])) continue;
                                     auto dd = s[steps[t]].data();
                                     for (std::size_t r = 0; r < n; ++r) {
                                       for (std::size_t k = 0; k < h; ++k) {
                                         dd[r * h + k] += gd[(r * t_len + t) * h + k];
                                       }
                                     }
                                   }
                                 });
}

/// Row-wise m*a + (1-m)*b with a constant per-row weight m.
inline Var blend_rows(const Var& a, const Var& b, std::vector<double> m) {
  detail::require_same_shape(a, b, "blend_rows");
  detail::require_rank(a, 2, "blend_rows");
  const std::size_t n = a.shape()[0], h = a.shape()[1];
  if (m.size() != n) throw DimensionError("blend_rows: weight count does not match rows");
  Tensor out({n, h});
  auto ad = a.value().data(), bd = b.value().data();
  auto od = out.data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < h; ++k) {
      const std::size_t i = r * h + k;
      od[i] = m[r] * ad[i] + (1.0 - m[r]) * bd[i];
    }
  }
  return a.tape()->record(std::move(out), {a, b}, [a, b, m = std::move(m), n, h](const Tensor& g, GradSink& s) {
    auto gd = g.data();
    if (s.wants(a)) {
      auto da = s[a].data();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < h; ++k) da[r * h + k] += m[r] * gd[r * h + k];
    }
    if (s.wants(b)) {
      auto db = s[b].data();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < h; ++k) db[r * h + k] += (1.0 - m[r]) * gd[r * h + k];
    }
  });
}

/// Scales row r of [n x h] by the constant w[r].
inline Var scale_rows(const Var& x, std::vector<double> w) {
  detail::require_rank(x, 2, "scale_rows");
  const std::size_t n = x.shape()[0], h = x.shape()[1];
  if (w.size() != n) throw DimensionError("scale_rows: weight count does not match rows");
  Tensor out = x.value();
  auto od = out.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < h; ++k) od[r * h + k] *= w[r];
  return x.tape()->record(std::move(out), {x}, [x, w = std::move(w), n, h](const Tensor& g, GradSink& s) {
    auto gd = g.data();
    auto dx = s[x].data();
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < h; ++k) dx[r * h + k] += w[r] * gd[r * h + k];
  });
}

namespace detail {

// Softmax over the last dimension; mask (same shape, 0/1) may be empty.
inline Tensor softmax_last(const Tensor& scores, const Tensor* mask) {
  constexpr double kMaskedScore = -1e30;
  const std::size_t c = scores.cols();
  const std::size_t rows = scores.size() / c;
  Tensor out(scores.shape());
  auto sd = scores.data();
  auto od = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * c;
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < c; ++j) {
      const bool on = !mask || (*mask)[base + j] != 0.0;
      const double v = on ? sd[base + j] : sd[base + j] + kMaskedScore;
      od[base + j] = v;
      if (on) {
        any = true;
        mx = std::max(mx, v);
      }
    }
    if (!any) throw ContractError("masked_softmax: degenerate mask with no unmasked position");
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const bool on = !mask || (*mask)[base + j] != 0.0;
      od[base + j] = on ? std::exp(od[base + j] - mx) : 0.0;
      total += od[base + j];
    }
    for (std::size_t j = 0; j < c; ++j) od[base + j] /= total;
  }
  return out;
}

inline BackwardRule softmax_rule(const Var& x, Tape* tape, std::size_t self) {
  return [x, tape, self](const Tensor& g, GradSink& s) {
    const Tensor& p = tape->value(self);
    const std::size_t c = p.cols();
    const std::size_t rows = p.size() / c;
    auto pd = p.data();
    auto gd = g.data();
    auto dx = s[x].data();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += pd[base + j] * gd[base + j];
      for (std::size_t j = 0; j < c; ++j) dx[base + j] += pd[base + j] * (gd[base + j] - dot);
    }
  };
}

}  // namespace detail

/// Softmax over the last dimension.
inline Var softmax(const Var& x) {
  Tensor out = detail::softmax_last(x.value(), nullptr);
  Tape* tape = x.tape();
  const std::size_t self = tape->size();
  return tape->record(std::move(out), {x}, detail::softmax_rule(x, tape, self));
}

/// Softmax over the last dimension where mask==0 positions get exactly zero
/// probability. Each row needs at least one unmasked entry.
inline Var masked_softmax(const Var& scores, const Tensor& mask) {
  if (mask.shape() != scores.shape()) {
    throw DimensionError("masked_softmax: mask " + to_string(mask.shape()) +
                         " does not match scores " + to_string(scores.shape()));
  }
  Tensor out = detail::softmax_last(scores.value(), &mask);
  Tape* tape = scores.tape();
  const std::size_t self = tape->size();
  return tape->record(std::move(out), {scores}, detail::softmax_rule(scores, tape, self));
}

/// Identity forward; multiplies the upstream gradient by -lambda.
inline Var gradient_reversal(const Var& x, double lambda) {
  if (!(lambda >= 0.0)) {
    throw ParameterError("gradient_reversal: lambda must be nonnegative, got " +
                         std::to_string(lambda));
  }
  const double factor = -lambda;
  return x.tape()->record(x.value(), {x}, [x, factor](const Tensor& g, GradSink& s) {
    auto dx = s[x].data();
    auto gd = g.data();
    for (std::size_t i = 0; i < gd.size(); ++i) dx[i] += factor * gd[i];
  });
}

/// out[n] = sum_t alpha[n,t] * acts[n,t,:]
inline Var weighted_time_sum(const Var& alpha, const Var& acts) {
  detail::require_rank(alpha, 2, "weighted_time_sum");
  detail::require_rank(acts, 3, "weighted_time_sum");
  const std::size_t n = acts.shape()[0], t_len = acts.shape()[1], h = acts.shape()[2];
  if (alpha.shape()[0] != n || alpha.shape()[1] != t_len) {
    throw DimensionError("weighted_time_sum: weights " + to_string(alpha.shape()) +
                         " do not match activations " + to_string(acts.shape()));
  }
  Tensor out({n, h});
  auto ad = alpha.value().data(), xd = acts.value().data();
  auto od = out.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t t = 0; t < t_len; ++t) {
      const double w = ad[r * t_len + t];
      for (std::size_t k = 0; k < h; ++k) od[r * h + k] += w * xd[(r * t_len + t) * h + k];
    }
  return acts.tape()->record(std::move(out), {alpha, acts},
                             [alpha, acts, n, t_len, h](const Tensor& g, GradSink& s) {
                               auto gd = g.data();
                               auto ad = alpha.value().data(), xd = acts.value().data();
                               if (s.wants(alpha)) {
                                 auto da = s[alpha].data();
                                 for (std::size_t r = 0; r < n; ++r)
                                   for (std::size_t t = 0; t < t_len; ++t) {
                                     double acc = 0.0;
                                     for (std::size_t k = 0; k < h; ++k)
                                       acc += gd[r * h + k] * xd[(r * t_len + t) * h + k];
                                     da[r * t_len + t] += acc;
                                   }
                               }
                               if (s.wants(acts)) {
                                 auto dx = s[acts].data();
                                 for (std::size_t r = 0; r < n; ++r)
                                   for (std::size_t t = 0; t < t_len; ++t) {
                                     const double w = ad[r * t_len + t];
                                     for (std::size_t k = 0; k < h; ++k)
                                       dx[(r * t_len + t) * h + k] += w * gd[r * h + k];
                                   }
                               }
                             });
}

/// Mean over unmasked time steps of [n x T x h] -> [n x h].
inline Var masked_time_mean(const Var& acts, const Tensor& mask) {
  detail::require_rank(acts, 3, "masked_time_mean");
  const std::size_t n = acts.shape()[0], t_len = acts.shape()[1];
  if (mask.shape() != Shape{n, t_len}) {
    throw DimensionError("masked_time_mean: mask " + to_string(mask.shape()) +
                         " does not match activations " + to_string(acts.shape()));
  }
  Tensor weights({n, t_len});
  for (std::size_t r = 0; r < n; ++r) {
    double count = 0.0;
    for (std::size_t t = 0; t < t_len; ++t) count += mask.at(r, t) != 0.0 ? 1.0 : 0.0;
    if (count == 0.0) throw ContractError("masked_time_mean: row with empty mask");
    for (std::size_t t = 0; t < t_len; ++t) weights.at(r, t) = mask.at(r, t) != 0.0 ? 1.0 / count : 0.0;
  }
  Var w = acts.tape()->constant(std::move(weights));
  return weighted_time_sum(w, acts);
}

/// Row gather from a [V x d] table. Frozen rows of `table_param` receive no
/// gradient.
inline Var gather_rows(const Var& table, std::vector<std::size_t> ids,
                       const Parameter* table_param = nullptr) {
  detail::require_rank(table, 2, "gather_rows");
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  if (ids.empty()) throw DimensionError("gather_rows: no indices");
  for (std::size_t id : ids) {
    if (id >= vocab) {
      throw VocabError("gather_rows: index " + std::to_string(id) +
                       " out of range for vocabulary of size " + std::to_string(vocab));
    }
  }
  Tensor out({ids.size(), d});
  auto td = table.value().data();
  auto od = out.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                od.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return table.tape()->record(
      std::move(out), {table}, [table, ids = std::move(ids), d, table_param](const Tensor& g, GradSink& s) {
        auto dt = s[table].data();
        auto gd = g.data();
        for (std::size_t i = 0; i < ids.size(); ++i) {
          if (table_param && table_param->row_frozen(ids[i])) continue;
          for (std::size_t k = 0; k < d; ++k) dt[ids[i] * d + k] += gd[i * d + k];
        }
      });
}

}  // namespace daan

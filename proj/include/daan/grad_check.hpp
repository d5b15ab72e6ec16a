#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>

#include "daan/autodiff.hpp"

namespace daan {

using LossBuilder = std::function<Var(Tape&)>;

struct GradCheckResult {
  double max_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries = 0;
};

/// Compares backward() against central differences over every entry of
/// `params`.
///
/// `analytic` builds the graph that backward() runs on; `numeric` builds the
/// scalar evaluated at perturbed parameters. They are usually the same
/// function. They differ when the differentiated graph is not the gradient of
/// a single scalar (gradient reversal); the numeric side then supplies an
/// equivalent function whose true derivative matches the intended update.
///
/// Error per entry: |a - n| / max(1e-8, |a| + |n|).
inline GradCheckResult grad_check(const LossBuilder& analytic, const LossBuilder& numeric,
                                  std::span<Parameter* const> params, double eps = 1e-5) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = analytic(tape);
    tape.backward(loss);
  }
  auto evaluate = [&numeric]() {
    Tape tape;
    return numeric(tape).value().item();
  };

  GradCheckResult result;
  for (Parameter* p : params) {
    auto values = p->value.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate();
      values[i] = saved - eps;
      const double down = evaluate();
      values[i] = saved;

      const double num = (up - down) / (2.0 * eps);
      const double ana = p->grad[i];
      const double err = std::abs(ana - num) / std::max(1e-8, std::abs(ana) + std::abs(num));
      ++result.entries;
      if (err > result.max_error || result.entries == 1) {
        result.max_error = err;
        result.worst_parameter = p->name;
        result.worst_index = i;
        result.worst_analytic = ana;
        result.worst_numeric = num;
      }
    }
  }
  return result;
}

inline GradCheckResult grad_check(const LossBuilder& f, std::span<Parameter* const> params,
                                  double eps = 1e-5) {
  return grad_check(f, f, params, eps);
}

}  // namespace daan

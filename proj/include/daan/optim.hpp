#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "daan/autodiff.hpp"

namespace daan {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Tensor> first;   // per parameter
  std::vector<Tensor> second;  // per parameter
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update from the gradients stored on `params`.
/// Frozen rows keep both their values and their moments.
inline void adam_step(std::span<Parameter* const> params, AdamState& state, const AdamConfig& cfg) {
  if (state.first.empty()) {
    for (Parameter* p : params) {
      state.first.emplace_back(p->value.shape(), 0.0);
      state.second.emplace_back(p->value.shape(), 0.0);
    }
  }
  if (state.first.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state tracks " + std::to_string(state.first.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (p.grad.shape() != p.value.shape() || state.first[k].shape() != p.value.shape()) {
      throw DimensionError("adam_step: gradient or moment shape mismatch for " + p.name);
    }
    auto w = p.value.data();
    auto g = p.grad.data();
    auto m = state.first[k].data();
    auto v = state.second[k].data();
    const std::size_t width = p.value.cols();
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!p.frozen_rows.empty() && p.row_frozen(i / width)) continue;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      w[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

}  // namespace daan

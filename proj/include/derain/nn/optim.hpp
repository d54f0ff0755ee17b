#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "derain/nn/layers.hpp"

namespace derain::nn {

struct OptimizerState {
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double lr = 2e-4;
  std::vector<std::vector<double>> m, v;  // one slot per parameter tensor
};

/// One bias-corrected Adam update. Parameters without an accumulated gradient
/// are treated as having a zero gradient.
template <class T>
void adam_step(const ParamList<T>& params, OptimizerState& state) {
  if (!(state.lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].second.size(), 0.0);
      state.v[i].assign(params[i].second.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("optimizer state/parameter count mismatch");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T> p = params[k].second;
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.size()) throw std::invalid_argument("optimizer state shape mismatch for " + params[k].first);
    auto w = p.data();
    const bool has = p.has_grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = has ? static_cast<double>(p.grad()[i]) : 0.0;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / c1, vhat = v[i] / c2;
      w[i] = static_cast<T>(static_cast<double>(w[i]) - state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

/// Cosine annealing from lr_max at step 0 to lr_min at total_steps.
inline double cosine_lr(long step, long total_steps, double lr_max, double lr_min) {
  if (step < 0 || step > total_steps) throw std::out_of_range("cosine_lr: step out of range");
  if (total_steps == 0) return lr_max;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

template <class T>
void zero_grads(const ParamList<T>& params) {
  for (auto [name, t] : params) t.zero_grad();
}

}  // namespace derain::nn

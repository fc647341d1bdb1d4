#ifndef MOPE_OPTIM_HPP_
#define MOPE_OPTIM_HPP_

#include <cmath>
#include <vector>

#include "mope/network.hpp"

namespace mope {

enum class OptimizerKind { adam, sgd_momentum };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;
};

/// Per-parameter moment buffers, zero before the first step.
template <typename T>
struct OptimizerState {
  ParamStore<T> first;   // Adam m / SGD velocity
  ParamStore<T> second;  // Adam v
  long step = 0;
};

template <typename T>
OptimizerState<T> init_optimizer_state(const ParamStore<T>& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

/// v = mu * v + g;  w -= lr * v.
template <typename T>
void sgd_momentum_step(ParamStore<T>& params, const ParamStore<T>& grads,
                       OptimizerState<T>& state, double lr, double mu) {
  ++state.step;
  for (auto& [key, w] : params) {
    const Tensor<T>& g = grads.at(key);
    Tensor<T>& v = state.first.at(key);
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = static_cast<T>(mu * v[i] + g[i]);
      w[i] = static_cast<T>(w[i] - lr * v[i]);
    }
  }
}

/// Adam with bias-corrected moments.
template <typename T>
void adam_step(ParamStore<T>& params, const ParamStore<T>& grads,
               OptimizerState<T>& state, double lr, double beta1, double beta2,
               double eps) {
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (auto& [key, w] : params) {
    const Tensor<T>& g = grads.at(key);
    Tensor<T>& m = state.first.at(key);
    Tensor<T>& v = state.second.at(key);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = beta1 * m[i] + (1.0 - beta1) * gi;
      const double vi = beta2 * v[i] + (1.0 - beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      w[i] = static_cast<T>(w[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
    }
  }
}

template <typename T>
void optimizer_step(const OptimizerConfig& cfg, ParamStore<T>& params,
                    const ParamStore<T>& grads, OptimizerState<T>& state,
                    double lr) {
  if (cfg.kind == OptimizerKind::adam) {
    adam_step(params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.eps);
  } else {
    sgd_momentum_step(params, grads, state, lr, cfg.momentum);
  }
}

/// At `iteration` and after, the rate is divided by `divisor`.
struct LrDrop {
  int iteration = 0;
  double divisor = 10.0;
};

inline double scheduled_lr(double base, const std::vector<LrDrop>& schedule,
                           int iteration) {
  double lr = base;
  for (const auto& d : schedule) {
    if (iteration >= d.iteration) lr /= d.divisor;
  }
  return lr;
}

}  // namespace mope

#endif  // MOPE_OPTIM_HPP_

#pragma once

#include <cmath>

#include "cmllm/nn/parameters.hpp"

namespace cmllm::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  long step = 0;

  AdamState() = default;
  explicit AdamState(const ParameterStore<T>& store) {
    for (const auto& p : store) {
      m.emplace_back(p.value.shape());
      v.emplace_back(p.value.shape());
    }
  }
};

/// One bias-corrected Adam update of every non-frozen parameter. Throws
/// NumericError naming the first parameter whose gradient is not finite.
template <typename T>
void adam_step(ParameterStore<T>& store, const GradientBuffer<T>& grads, AdamState<T>& state, const AdamConfig& cfg) {
  if (grads.size() != store.size() || state.m.size() != store.size()) {
    throw InputError("adam_step: gradient/state layout does not match the parameter store");
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store.at(i).frozen) continue;
    if (!grads.at(i).all_finite()) throw NumericError("non-finite gradient for parameter '" + store.at(i).name + "'");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store.at(i);
    if (p.frozen) continue;
    auto& m = state.m[i].storage();
    auto& v = state.v[i].storage();
    const auto& g = grads.at(i).storage();
    auto& w = p.value.storage();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = cfg.beta1 * static_cast<double>(m[j]) + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * static_cast<double>(v[j]) + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = cfg.lr * (mj / c1) / (std::sqrt(vj / c2) + cfg.eps);
      if (update != 0.0) w[j] = static_cast<T>(static_cast<double>(w[j]) - update);
    }
  }
}

}  // namespace cmllm::nn

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "episteme/errors.hpp"
#include "episteme/mlp.hpp"
#include "episteme/tensor.hpp"

namespace episteme {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment accumulators mirroring a list of parameter tensors.
struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
};

inline AdamState make_adam_state(const std::vector<const Tensor*>& params,
                                 AdamConfig config) {
  AdamState state;
  state.config = config;
  state.first_moment.reserve(params.size());
  state.second_moment.reserve(params.size());
  for (const Tensor* p : params) {
    state.first_moment.push_back(Tensor::zeros(p->shape));
    state.second_moment.push_back(Tensor::zeros(p->shape));
  }
  return state;
}

inline std::vector<const Tensor*> tensor_list(const MlpParams& params) {
  std::vector<const Tensor*> list;
  list.reserve(params.layers.size() * 2);
  for (const auto& layer : params.layers) {
    list.push_back(&layer.weight);
    list.push_back(&layer.bias);
  }
  return list;
}

inline std::vector<Tensor*> mutable_tensor_list(MlpParams& params) {
  std::vector<Tensor*> list;
  list.reserve(params.layers.size() * 2);
  for (auto& layer : params.layers) {
    list.push_back(&layer.weight);
    list.push_back(&layer.bias);
  }
  return list;
}

inline std::vector<const Tensor*> tensor_list(const MlpGrads& grads) {
  std::vector<const Tensor*> list;
  list.reserve(grads.size() * 2);
  for (const auto& layer : grads) {
    list.push_back(&layer.weight);
    list.push_back(&layer.bias);
  }
  return list;
}

inline AdamState make_adam_state(const MlpParams& params, AdamConfig config) {
  return make_adam_state(tensor_list(params), config);
}

/// One bias-corrected Adam update over a list of parameter tensors.
inline void adam_step(const std::vector<Tensor*>& params,
                      const std::vector<const Tensor*>& grads,
                      AdamState& state) {
  if (params.size() != grads.size() ||
      params.size() != state.first_moment.size()) {
    throw std::invalid_argument("adam_step: tensor list size mismatch");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i]->same_shape(state.first_moment[i]) ||
        !params[i]->same_shape(state.first_moment[i])) {
      throw std::invalid_argument("adam_step: shape mismatch");
    }
    if (!all_finite(*grads[i])) {
      throw DivergenceError("adam_step: non-finite gradient");
    }
  }

  state.step += 1;
  const auto& c = state.config;
  const double bias1 =
      1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bias2 =
      1.0 - std::pow(c.beta2, static_cast<double>(state.step));

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i].values;
    auto& v = state.second_moment[i].values;
    auto& p = params[i]->values;
    const auto& g = grads[i]->values;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      p[j] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

inline void adam_step(MlpParams& params, const MlpGrads& grads,
                      AdamState& state) {
  adam_step(mutable_tensor_list(params), tensor_list(grads), state);
}

}  // namespace episteme

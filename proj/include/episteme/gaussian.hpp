#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>

#include "episteme/tensor.hpp"

namespace episteme {

// Log-variance range before exponentiation; keeps stds in
// [exp(-5), exp(5)] even for untrained networks.
inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

inline double clamp_log_var(double lv) {
  return std::clamp(lv, kLogVarMin, kLogVarMax);
}

inline double std_from_log_var(double lv) {
  return std::exp(0.5 * clamp_log_var(lv));
}

/// mean + exp(0.5 * log_var) * noise, elementwise. Pass zero noise to get the
/// mean back unchanged.
inline Tensor reparam_sample(const Tensor& mean, const Tensor& log_var,
                             const Tensor& noise) {
  require_same_shape(mean, log_var, "reparam_sample");
  require_same_shape(mean, noise, "reparam_sample");
  Tensor out = mean;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += std_from_log_var(log_var[i]) * noise[i];
  }
  return out;
}

/// Closed-form KL divergence between diagonal Gaussians,
/// D_KL(N(q_mean, diag q_std^2) || N(p_mean, diag p_std^2)).
inline double kl_diag_gaussians(std::span<const double> q_mean,
                                std::span<const double> q_std,
                                std::span<const double> p_mean,
                                std::span<const double> p_std) {
  const std::size_t n = q_mean.size();
  if (q_std.size() != n || p_mean.size() != n || p_std.size() != n) {
    throw std::invalid_argument("kl_diag_gaussians: shape mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (q_std[i] <= 0.0 || p_std[i] <= 0.0) {
      throw std::invalid_argument("kl_diag_gaussians: non-positive std");
    }
    const double dm = q_mean[i] - p_mean[i];
    acc += std::log(p_std[i] / q_std[i]) +
           (q_std[i] * q_std[i] + dm * dm) / (2.0 * p_std[i] * p_std[i]) - 0.5;
  }
  return acc;
}

inline double kl_diag_gaussians(const Tensor& q_mean, const Tensor& q_std,
                                const Tensor& p_mean, const Tensor& p_std) {
  require_same_shape(q_mean, q_std, "kl_diag_gaussians");
  require_same_shape(q_mean, p_mean, "kl_diag_gaussians");
  require_same_shape(q_mean, p_std, "kl_diag_gaussians");
  return kl_diag_gaussians(std::span<const double>(q_mean.values),
                           std::span<const double>(q_std.values),
                           std::span<const double>(p_mean.values),
                           std::span<const double>(p_std.values));
}

}  // namespace episteme

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "episteme/rng.hpp"
#include "episteme/tensor.hpp"

namespace episteme {

enum class Activation { kIdentity, kTanh, kRelu };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
  }
  throw std::invalid_argument("unknown activation");
}

inline Activation activation_from_name(const std::string& name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "tanh") return Activation::kTanh;
  if (name == "relu") return Activation::kRelu;
  throw std::invalid_argument("unknown activation name: " + name);
}

/// Fully-connected network architecture: layer sizes plus one activation per
/// weight layer. The last activation is usually identity.
struct MlpSpec {
  std::vector<std::size_t> layer_sizes;
  std::vector<Activation> activations;
  std::uint64_t seed = 0;

  std::size_t input_size() const { return layer_sizes.front(); }
  std::size_t output_size() const { return layer_sizes.back(); }
  std::size_t layer_count() const { return activations.size(); }

  void validate() const {
    if (layer_sizes.size() < 2) {
      throw std::invalid_argument("MlpSpec: needs at least 2 layer sizes");
    }
    for (std::size_t s : layer_sizes) {
      if (s == 0) throw std::invalid_argument("MlpSpec: zero layer size");
    }
    if (activations.size() != layer_sizes.size() - 1) {
      throw std::invalid_argument(
          "MlpSpec: activation count must be layer_sizes - 1");
    }
  }
};

// [input, hidden..., output] with `hidden_act` between layers and
// `output_act` on the final boundary.
inline MlpSpec make_mlp_spec(std::vector<std::size_t> sizes,
                             Activation hidden_act, Activation output_act,
                             std::uint64_t seed) {
  MlpSpec spec;
  spec.layer_sizes = std::move(sizes);
  if (spec.layer_sizes.size() >= 2) {
    spec.activations.assign(spec.layer_sizes.size() - 2, hidden_act);
    spec.activations.push_back(output_act);
  }
  spec.seed = seed;
  spec.validate();
  return spec;
}

/// One dense layer: weight is [out, in], bias is [out].
struct LayerParams {
  Tensor weight;
  Tensor bias;
};

using MlpGrads = std::vector<LayerParams>;

struct MlpParams {
  MlpSpec spec;
  std::vector<LayerParams> layers;
};

inline MlpGrads zero_grads_like(const MlpParams& params) {
  MlpGrads grads;
  grads.reserve(params.layers.size());
  for (const auto& layer : params.layers) {
    grads.push_back({Tensor::zeros(layer.weight.shape),
                     Tensor::zeros(layer.bias.shape)});
  }
  return grads;
}

// Glorot-uniform weights, zero biases. Deterministic per spec.seed.
inline MlpParams build_mlp(const MlpSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  MlpParams params;
  params.spec = spec;
  params.layers.reserve(spec.layer_count());
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::size_t in = spec.layer_sizes[l];
    const std::size_t out = spec.layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor w = Tensor::zeros({out, in});
    for (double& v : w.values) v = rng.uniform(-limit, limit);
    params.layers.push_back({std::move(w), Tensor::zeros({out})});
  }
  return params;
}

namespace detail {

inline double apply_activation(Activation a, double x) {
  switch (a) {
    case Activation::kIdentity: return x;
    case Activation::kTanh: return std::tanh(x);
    case Activation::kRelu: return x > 0.0 ? x : 0.0;
  }
  return x;
}

// Derivative expressed through the post-activation value. The ReLU
// subgradient at 0 is 0.
inline double activation_grad_from_output(Activation a, double y) {
  switch (a) {
    case Activation::kIdentity: return 1.0;
    case Activation::kTanh: return 1.0 - y * y;
    case Activation::kRelu: return y > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

struct BatchView {
  std::size_t rows;
  std::size_t cols;
  bool had_batch_dim;
};

inline BatchView batch_view(const Tensor& t, std::size_t expected_cols,
                            const char* what) {
  if (t.shape.size() == 1) {
    if (t.shape[0] != expected_cols) {
      throw std::invalid_argument(std::string(what) + ": size mismatch");
    }
    return {1, expected_cols, false};
  }
  if (t.shape.size() == 2) {
    if (t.shape[1] != expected_cols) {
      throw std::invalid_argument(std::string(what) + ": size mismatch");
    }
    return {t.shape[0], expected_cols, true};
  }
  throw std::invalid_argument(std::string(what) +
                              ": expected rank 1 or 2 tensor");
}

}  // namespace detail

// Forward pass; input is [in] or [batch, in].
inline Tensor mlp_forward(const MlpParams& params, const Tensor& input) {
  const auto view =
      detail::batch_view(input, params.spec.input_size(), "mlp_forward input");
  const std::size_t batch = view.rows;

  std::vector<double> cur(input.values);
  std::size_t cur_cols = view.cols;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    const std::size_t out = layer.weight.shape[0];
    const std::size_t in = layer.weight.shape[1];
    std::vector<double> next(batch * out);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* x = cur.data() + b * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double* w = layer.weight.values.data() + o * in;
        double acc = layer.bias.values[o];
        for (std::size_t i = 0; i < in; ++i) acc += w[i] * x[i];
        next[b * out + o] =
            detail::apply_activation(params.spec.activations[l], acc);
      }
    }
    cur = std::move(next);
    cur_cols = out;
  }

  if (view.had_batch_dim) return Tensor({batch, cur_cols}, std::move(cur));
  return Tensor({cur_cols}, std::move(cur));
}

struct ForwardBackwardResult {
  Tensor output;
  MlpGrads param_grads;
  Tensor input_grad;
};

/// Forward pass plus exact reverse-mode gradients of
/// sum(loss_grad_at_output * output) with respect to parameters and input.
/// Parameter gradients are summed over the batch.
inline ForwardBackwardResult forward_backward(const MlpParams& params,
                                              const Tensor& input,
                                              const Tensor& loss_grad_at_output) {
  const auto view = detail::batch_view(input, params.spec.input_size(),
                                       "forward_backward input");
  const std::size_t batch = view.rows;
  const auto grad_view = detail::batch_view(
      loss_grad_at_output, params.spec.output_size(), "forward_backward grad");
  if (grad_view.rows != batch) {
    throw std::invalid_argument("forward_backward: batch size mismatch");
  }

  // Forward, keeping post-activation values of every layer.
  std::vector<std::vector<double>> acts(params.layers.size() + 1);
  acts[0] = input.values;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    const std::size_t out = layer.weight.shape[0];
    const std::size_t in = layer.weight.shape[1];
    acts[l + 1].resize(batch * out);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* x = acts[l].data() + b * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double* w = layer.weight.values.data() + o * in;
        double acc = layer.bias.values[o];
        for (std::size_t i = 0; i < in; ++i) acc += w[i] * x[i];
        acts[l + 1][b * out + o] =
            detail::apply_activation(params.spec.activations[l], acc);
      }
    }
  }

  ForwardBackwardResult result;
  result.param_grads = zero_grads_like(params);

  // Backward.
  std::vector<double> grad(loss_grad_at_output.values);
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const auto& layer = params.layers[l];
    const std::size_t out = layer.weight.shape[0];
    const std::size_t in = layer.weight.shape[1];
    auto& gw = result.param_grads[l].weight.values;
    auto& gb = result.param_grads[l].bias.values;

    // Through the activation.
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t o = 0; o < out; ++o) {
        grad[b * out + o] *= detail::activation_grad_from_output(
            params.spec.activations[l], acts[l + 1][b * out + o]);
      }
    }

    std::vector<double> grad_in(batch * in, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* x = acts[l].data() + b * in;
      const double* g = grad.data() + b * out;
      for (std::size_t o = 0; o < out; ++o) {
        const double go = g[o];
        gb[o] += go;
        double* gw_row = gw.data() + o * in;
        const double* w = layer.weight.values.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) {
          gw_row[i] += go * x[i];
          grad_in[b * in + i] += go * w[i];
        }
      }
    }
    grad = std::move(grad_in);
  }

  const std::size_t out_cols = params.spec.output_size();
  if (view.had_batch_dim) {
    result.output = Tensor({batch, out_cols}, std::move(acts.back()));
    result.input_grad = Tensor({batch, view.cols}, std::move(grad));
  } else {
    result.output = Tensor({out_cols}, std::move(acts.back()));
    result.input_grad = Tensor({view.cols}, std::move(grad));
  }
  return result;
}

struct GradCheckResult {
  bool ok = false;
  double max_rel_error = 0.0;
};

namespace detail {

// Scalar probe loss for gradient checking: 0.5 * ||output||^2.
inline double quadratic_loss(const MlpParams& params, const Tensor& input) {
  const Tensor out = mlp_forward(params, input);
  double acc = 0.0;
  for (double v : out.values) acc += v * v;
  return 0.5 * acc;
}

// Relative error with a unit floor so near-zero gradients are compared
// absolutely.
inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace detail

inline constexpr double kGradCheckStep = 1e-4;

/// Compares analytic gradients of the quadratic probe loss against central
/// finite differences, entry by entry, over parameters and input.
inline GradCheckResult grad_check_against(const MlpParams& params,
                                          const Tensor& input,
                                          const MlpGrads& analytic_params,
                                          const Tensor& analytic_input,
                                          double tolerance) {
  if (tolerance <= 0.0) {
    throw std::invalid_argument("grad_check: tolerance must be positive");
  }
  const double h = kGradCheckStep;
  GradCheckResult result;
  MlpParams probe = params;

  for (std::size_t l = 0; l < probe.layers.size(); ++l) {
    for (int part = 0; part < 2; ++part) {
      Tensor& tensor =
          part == 0 ? probe.layers[l].weight : probe.layers[l].bias;
      const Tensor& analytic = part == 0 ? analytic_params[l].weight
                                         : analytic_params[l].bias;
      for (std::size_t i = 0; i < tensor.size(); ++i) {
        const double saved = tensor[i];
        tensor[i] = saved + h;
        const double plus = detail::quadratic_loss(probe, input);
        tensor[i] = saved - h;
        const double minus = detail::quadratic_loss(probe, input);
        tensor[i] = saved;
        const double numeric = (plus - minus) / (2.0 * h);
        result.max_rel_error = std::max(
            result.max_rel_error, detail::rel_error(analytic[i], numeric));
      }
    }
  }

  Tensor probe_input = input;
  for (std::size_t i = 0; i < probe_input.size(); ++i) {
    const double saved = probe_input[i];
    probe_input[i] = saved + h;
    const double plus = detail::quadratic_loss(params, probe_input);
    probe_input[i] = saved - h;
    const double minus = detail::quadratic_loss(params, probe_input);
    probe_input[i] = saved;
    const double numeric = (plus - minus) / (2.0 * h);
    result.max_rel_error = std::max(
        result.max_rel_error, detail::rel_error(analytic_input[i], numeric));
  }

  result.ok = result.max_rel_error < tolerance;
  return result;
}

inline GradCheckResult grad_check(const MlpParams& params, const Tensor& input,
                                  double tolerance) {
  const Tensor output = mlp_forward(params, input);
  const auto fb = forward_backward(params, input, output);
  return grad_check_against(params, input, fb.param_grads, fb.input_grad,
                            tolerance);
}

}  // namespace episteme

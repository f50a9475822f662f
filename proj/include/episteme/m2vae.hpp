#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "episteme/adam.hpp"
#include "episteme/errors.hpp"
#include "episteme/gaussian.hpp"
#include "episteme/mlp.hpp"
#include "episteme/rng.hpp"
#include "episteme/serialize.hpp"

namespace episteme {

/// Bit m set means modality m is present in the subset.
using SubsetMask = std::uint32_t;

struct M2vaeConfig {
  std::size_t modality_count = 2;
  std::size_t latent_dim = 2;
  std::vector<std::size_t> obs_dims = {2, 2};
  double beta = 1.0;
  std::vector<std::size_t> hidden = {16, 16};
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;

  void validate() const {
    if (modality_count == 0 || modality_count > 3) {
      throw ConfigError("m2vae: modality_count must be in [1, 3]");
    }
    if (latent_dim == 0) throw ConfigError("m2vae: latent_dim must be positive");
    if (obs_dims.size() != modality_count) {
      throw ConfigError("m2vae: obs_dims length must equal modality_count");
    }
    for (std::size_t d : obs_dims) {
      if (d == 0) throw ConfigError("m2vae: zero observation dimension");
    }
    if (beta < 0.0) throw ConfigError("m2vae: beta must be non-negative");
    if (batch_size == 0) throw ConfigError("m2vae: batch_size must be positive");
  }

  SubsetMask full_mask() const {
    return static_cast<SubsetMask>((1u << modality_count) - 1u);
  }
};

/// Per-PoI Gaussian belief z = (mu, sigma) in latent space.
struct LatentEmbedding {
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline LatentEmbedding unit_prior(std::size_t latent_dim) {
  return {std::vector<double>(latent_dim, 0.0),
          std::vector<double>(latent_dim, 1.0)};
}

/// One optional observation vector per modality slot.
struct ObservationSet {
  std::vector<std::optional<std::vector<double>>> slots;

  static ObservationSet empty(std::size_t modality_count) {
    ObservationSet obs;
    obs.slots.resize(modality_count);
    return obs;
  }

  static ObservationSet single(std::size_t modality_count,
                               std::size_t modality,
                               std::vector<double> vector) {
    ObservationSet obs = empty(modality_count);
    obs.slots.at(modality) = std::move(vector);
    return obs;
  }

  SubsetMask present_mask() const {
    SubsetMask mask = 0;
    for (std::size_t m = 0; m < slots.size(); ++m) {
      if (slots[m].has_value()) mask |= (1u << m);
    }
    return mask;
  }

  std::size_t present_count() const {
    std::size_t n = 0;
    for (const auto& s : slots) n += s.has_value() ? 1 : 0;
    return n;
  }
};

// "0", "1", "0+1", ...: sorted modality indices joined by '+'.
inline std::string subset_key(SubsetMask mask) {
  std::ostringstream key;
  bool first = true;
  for (std::size_t m = 0; m < 32; ++m) {
    if (mask & (1u << m)) {
      if (!first) key << '+';
      key << m;
      first = false;
    }
  }
  return key.str();
}

inline SubsetMask subset_from_key(const std::string& key) {
  SubsetMask mask = 0;
  std::istringstream in(key);
  std::string part;
  while (std::getline(in, part, '+')) {
    mask |= (1u << static_cast<std::size_t>(std::stoul(part)));
  }
  return mask;
}

/// One encoder per non-empty modality subset, one decoder per modality.
/// Every encoder maps its concatenated observations to (mean, log-variance)
/// of the shared latent space; every decoder maps a latent point back to one
/// modality's observation.
struct M2vaeParams {
  M2vaeConfig config;
  std::map<SubsetMask, MlpParams> encoders;
  std::vector<MlpParams> decoders;
};

namespace detail {

inline std::size_t subset_input_dim(const M2vaeConfig& config,
                                    SubsetMask mask) {
  std::size_t dim = 0;
  for (std::size_t m = 0; m < config.modality_count; ++m) {
    if (mask & (1u << m)) dim += config.obs_dims[m];
  }
  return dim;
}

// Stable index of a subset in enumeration order (mask 1, 2, 3, ...).
inline std::size_t subset_index(const M2vaeConfig& config, SubsetMask mask) {
  return static_cast<std::size_t>(mask) - 1;
}

inline std::vector<std::size_t> net_sizes(std::size_t in,
                                          const std::vector<std::size_t>& hidden,
                                          std::size_t out) {
  std::vector<std::size_t> sizes;
  sizes.push_back(in);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

}  // namespace detail

inline M2vaeParams build_m2vae(const M2vaeConfig& config) {
  config.validate();
  M2vaeParams params;
  params.config = config;
  for (SubsetMask mask = 1; mask <= config.full_mask(); ++mask) {
    const std::size_t in = detail::subset_input_dim(config, mask);
    params.encoders[mask] = build_mlp(make_mlp_spec(
        detail::net_sizes(in, config.hidden, 2 * config.latent_dim),
        Activation::kTanh, Activation::kIdentity,
        derive_seed(config.seed, mask)));
  }
  for (std::size_t m = 0; m < config.modality_count; ++m) {
    params.decoders.push_back(build_mlp(make_mlp_spec(
        detail::net_sizes(config.latent_dim, config.hidden,
                          config.obs_dims[m]),
        Activation::kTanh, Activation::kIdentity,
        derive_seed(config.seed, 1000 + m))));
  }
  return params;
}

namespace detail {

inline Tensor concat_present(const M2vaeConfig& config,
                             const ObservationSet& obs) {
  std::vector<double> input;
  for (std::size_t m = 0; m < config.modality_count; ++m) {
    if (!obs.slots[m].has_value()) continue;
    const auto& v = *obs.slots[m];
    if (v.size() != config.obs_dims[m]) {
      throw std::invalid_argument("observation dimension mismatch for slot " +
                                  std::to_string(m));
    }
    input.insert(input.end(), v.begin(), v.end());
  }
  return Tensor::row(std::move(input));
}

}  // namespace detail

/// Deterministic encoding of the present modality slots through the matching
/// subset encoder; std comes from the exponentiated half log-variance.
inline LatentEmbedding encode_subset(const M2vaeParams& params,
                                     const ObservationSet& obs) {
  const SubsetMask mask = obs.present_mask();
  if (mask == 0) {
    throw std::invalid_argument("encode_subset: empty observation set");
  }
  const auto it = params.encoders.find(mask);
  if (it == params.encoders.end()) {
    throw std::invalid_argument("encode_subset: no encoder for subset " +
                                subset_key(mask));
  }
  const Tensor out =
      mlp_forward(it->second, detail::concat_present(params.config, obs));
  const std::size_t d = params.config.latent_dim;
  LatentEmbedding z;
  z.mean.assign(out.values.begin(),
                out.values.begin() + static_cast<std::ptrdiff_t>(d));
  z.stddev.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    z.stddev[i] = std_from_log_var(out.values[d + i]);
  }
  return z;
}

/// Decodes the embedding mean through every modality decoder; no sampling.
inline ObservationSet decode_all(const M2vaeParams& params,
                                 const LatentEmbedding& z) {
  if (z.mean.size() != params.config.latent_dim) {
    throw std::invalid_argument("decode_all: latent dimension mismatch");
  }
  ObservationSet obs = ObservationSet::empty(params.config.modality_count);
  const Tensor latent = Tensor::row(std::vector<double>(z.mean));
  for (std::size_t m = 0; m < params.config.modality_count; ++m) {
    obs.slots[m] = mlp_forward(params.decoders[m], latent).values;
  }
  return obs;
}

struct M2vaeGrads {
  std::map<SubsetMask, MlpGrads> encoders;
  std::vector<MlpGrads> decoders;
};

struct ElboResult {
  double loss = 0.0;
  M2vaeGrads grads;
};

/// Negative ELBO over a batch of complete observation sets: for every
/// non-empty subset, reconstruct all modalities from one reparameterized
/// sample of the subset posterior and add beta times the KL to the unit
/// prior. Loss and gradients are averaged over the batch.
///
/// `noise` has shape [batch, 2^M - 1, latent_dim], one draw per sample and
/// subset.
inline ElboResult elbo_and_grads(const M2vaeParams& params,
                                 const std::vector<ObservationSet>& batch,
                                 const Tensor& noise) {
  const M2vaeConfig& config = params.config;
  const std::size_t batch_size = batch.size();
  if (batch_size == 0) {
    throw std::invalid_argument("elbo_and_grads: empty batch");
  }
  const std::size_t subset_count = config.full_mask();
  const std::size_t d = config.latent_dim;
  if (noise.shape !=
      std::vector<std::size_t>{batch_size, subset_count, d}) {
    throw std::invalid_argument("elbo_and_grads: noise shape mismatch");
  }
  for (const auto& obs : batch) {
    if (obs.present_mask() != config.full_mask()) {
      throw std::invalid_argument(
          "elbo_and_grads: training batches need all modality slots");
    }
  }

  ElboResult result;
  for (const auto& [mask, encoder] : params.encoders) {
    result.grads.encoders[mask] = zero_grads_like(encoder);
  }
  for (const auto& decoder : params.decoders) {
    result.grads.decoders.push_back(zero_grads_like(decoder));
  }

  double loss = 0.0;
  for (const auto& [mask, encoder] : params.encoders) {
    const std::size_t in_dim = detail::subset_input_dim(config, mask);
    const std::size_t s_idx = detail::subset_index(config, mask);

    // Stack encoder inputs for the whole batch.
    Tensor enc_in = Tensor::zeros({batch_size, in_dim});
    for (std::size_t b = 0; b < batch_size; ++b) {
      std::size_t offset = 0;
      for (std::size_t m = 0; m < config.modality_count; ++m) {
        if (!(mask & (1u << m))) continue;
        const auto& v = *batch[b].slots[m];
        std::copy(v.begin(), v.end(),
                  enc_in.values.begin() +
                      static_cast<std::ptrdiff_t>(b * in_dim + offset));
        offset += config.obs_dims[m];
      }
    }

    const Tensor enc_out = mlp_forward(encoder, enc_in);  // [B, 2d]

    // Reparameterized latent sample per batch element.
    Tensor z = Tensor::zeros({batch_size, d});
    std::vector<double> lv(batch_size * d);
    std::vector<double> half_std_eps(batch_size * d);  // dz/dlv
    std::vector<char> lv_clamped(batch_size * d, 0);
    for (std::size_t b = 0; b < batch_size; ++b) {
      for (std::size_t i = 0; i < d; ++i) {
        const double raw = enc_out.values[b * 2 * d + d + i];
        const double clamped = clamp_log_var(raw);
        lv_clamped[b * d + i] = (raw != clamped) ? 1 : 0;
        lv[b * d + i] = clamped;
        const double eps =
            noise.values[(b * subset_count + s_idx) * d + i];
        const double sd = std::exp(0.5 * clamped);
        z.values[b * d + i] = enc_out.values[b * 2 * d + i] + sd * eps;
        half_std_eps[b * d + i] = 0.5 * sd * eps;
      }
    }

    // Reconstruct every modality from this subset's sample.
    Tensor dz = Tensor::zeros({batch_size, d});
    for (std::size_t m = 0; m < config.modality_count; ++m) {
      const std::size_t out_dim = config.obs_dims[m];
      const Tensor recon = mlp_forward(params.decoders[m], z);
      Tensor recon_grad = Tensor::zeros({batch_size, out_dim});
      for (std::size_t b = 0; b < batch_size; ++b) {
        const auto& target = *batch[b].slots[m];
        for (std::size_t i = 0; i < out_dim; ++i) {
          const double diff = recon.values[b * out_dim + i] - target[i];
          loss += diff * diff;
          recon_grad.values[b * out_dim + i] = 2.0 * diff;
        }
      }
      const auto fb = forward_backward(params.decoders[m], z, recon_grad);
      auto& acc = result.grads.decoders[m];
      for (std::size_t l = 0; l < acc.size(); ++l) {
        for (std::size_t i = 0; i < acc[l].weight.size(); ++i) {
          acc[l].weight[i] += fb.param_grads[l].weight[i];
        }
        for (std::size_t i = 0; i < acc[l].bias.size(); ++i) {
          acc[l].bias[i] += fb.param_grads[l].bias[i];
        }
      }
      for (std::size_t i = 0; i < dz.size(); ++i) {
        dz.values[i] += fb.input_grad.values[i];
      }
    }

    // KL(q || N(0, I)) per element plus its gradient, then the chain back
    // into (mean, log-variance).
    Tensor enc_grad = Tensor::zeros({batch_size, 2 * d});
    for (std::size_t b = 0; b < batch_size; ++b) {
      for (std::size_t i = 0; i < d; ++i) {
        const double mu = enc_out.values[b * 2 * d + i];
        const double l = lv[b * d + i];
        const double var = std::exp(l);
        loss += config.beta * 0.5 * (var + mu * mu - 1.0 - l);

        double dmu = dz.values[b * d + i] + config.beta * mu;
        double dlv = dz.values[b * d + i] * half_std_eps[b * d + i] +
                     config.beta * 0.5 * (var - 1.0);
        if (lv_clamped[b * d + i]) dlv = 0.0;  // clamp pass-through
        enc_grad.values[b * 2 * d + i] = dmu;
        enc_grad.values[b * 2 * d + d + i] = dlv;
      }
    }
    const auto fb_enc = forward_backward(encoder, enc_in, enc_grad);
    auto& enc_acc = result.grads.encoders[mask];
    for (std::size_t l = 0; l < enc_acc.size(); ++l) {
      for (std::size_t i = 0; i < enc_acc[l].weight.size(); ++i) {
        enc_acc[l].weight[i] += fb_enc.param_grads[l].weight[i];
      }
      for (std::size_t i = 0; i < enc_acc[l].bias.size(); ++i) {
        enc_acc[l].bias[i] += fb_enc.param_grads[l].bias[i];
      }
    }
  }

  const double scale = 1.0 / static_cast<double>(batch_size);
  result.loss = loss * scale;
  if (!std::isfinite(result.loss)) {
    throw DivergenceError("elbo_and_grads: non-finite loss");
  }
  for (auto& [mask, grads] : result.grads.encoders) {
    for (auto& layer : grads) {
      for (double& v : layer.weight.values) v *= scale;
      for (double& v : layer.bias.values) v *= scale;
    }
  }
  for (auto& grads : result.grads.decoders) {
    for (auto& layer : grads) {
      for (double& v : layer.weight.values) v *= scale;
      for (double& v : layer.bias.values) v *= scale;
    }
  }
  return result;
}

struct M2vaeOptimizer {
  std::map<SubsetMask, AdamState> encoders;
  std::vector<AdamState> decoders;
};

inline M2vaeOptimizer make_m2vae_optimizer(const M2vaeParams& params,
                                           AdamConfig config) {
  M2vaeOptimizer opt;
  for (const auto& [mask, encoder] : params.encoders) {
    opt.encoders[mask] = make_adam_state(encoder, config);
  }
  for (const auto& decoder : params.decoders) {
    opt.decoders.push_back(make_adam_state(decoder, config));
  }
  return opt;
}

/// One pass of shuffled mini-batch Adam updates; returns the mean batch loss.
inline double train_epoch(M2vaeParams& params,
                          const std::vector<ObservationSet>& dataset,
                          M2vaeOptimizer& optimizer, std::size_t batch_size,
                          Rng& rng) {
  if (dataset.empty()) {
    throw std::invalid_argument("train_epoch: empty dataset");
  }
  if (batch_size == 0) {
    throw std::invalid_argument("train_epoch: zero batch size");
  }
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) {  // Fisher-Yates
    std::swap(order[i - 1], order[rng.uniform_index(i)]);
  }

  const std::size_t subset_count = params.config.full_mask();
  const std::size_t d = params.config.latent_dim;
  double loss_sum = 0.0;
  std::size_t batch_count = 0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, order.size());
    std::vector<ObservationSet> batch;
    batch.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);

    Tensor noise = Tensor::zeros({batch.size(), subset_count, d});
    for (double& v : noise.values) v = rng.normal();

    const ElboResult elbo = elbo_and_grads(params, batch, noise);
    loss_sum += elbo.loss;
    batch_count += 1;

    for (auto& [mask, encoder] : params.encoders) {
      adam_step(encoder, elbo.grads.encoders.at(mask), optimizer.encoders.at(mask));
    }
    for (std::size_t m = 0; m < params.decoders.size(); ++m) {
      adam_step(params.decoders[m], elbo.grads.decoders[m], optimizer.decoders[m]);
    }
  }
  return loss_sum / static_cast<double>(batch_count);
}

/// Belief fusion. A never-observed PoI (all-zero visit mask) is encoded from
/// the fresh observation alone. Otherwise the prior is decoded to all
/// modalities, the observing robot's slot is overwritten with the fresh
/// observation, and the full set is re-encoded with the all-modalities
/// encoder.
inline LatentEmbedding fuse(const M2vaeParams& params,
                            const LatentEmbedding& prior,
                            const ObservationSet& new_obs,
                            SubsetMask visited_mask) {
  if (new_obs.present_count() != 1) {
    throw std::invalid_argument("fuse: exactly one fresh modality expected");
  }
  if (visited_mask == 0) {
    return encode_subset(params, new_obs);
  }
  ObservationSet reconstructed = decode_all(params, prior);
  for (std::size_t m = 0; m < params.config.modality_count; ++m) {
    if (new_obs.slots[m].has_value()) {
      reconstructed.slots[m] = new_obs.slots[m];
    }
  }
  return encode_subset(params, reconstructed);
}

// Checkpoint layout: {config, encoders:{subset-key: mlp}, decoders:[mlp]}.
inline Json m2vae_config_to_json(const M2vaeConfig& config) {
  Json j;
  j["modality_count"] = config.modality_count;
  j["latent_dim"] = config.latent_dim;
  j["obs_dims"] = config.obs_dims;
  j["beta"] = config.beta;
  j["hidden"] = config.hidden;
  j["learning_rate"] = config.learning_rate;
  j["batch_size"] = config.batch_size;
  j["epochs"] = config.epochs;
  j["seed"] = config.seed;
  return j;
}

inline M2vaeConfig m2vae_config_from_json(const Json& j) {
  M2vaeConfig config;
  config.modality_count = j.at("modality_count").get<std::size_t>();
  config.latent_dim = j.at("latent_dim").get<std::size_t>();
  config.obs_dims = j.at("obs_dims").get<std::vector<std::size_t>>();
  config.beta = j.at("beta").get<double>();
  config.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  config.learning_rate = j.at("learning_rate").get<double>();
  config.batch_size = j.at("batch_size").get<std::size_t>();
  config.epochs = j.at("epochs").get<std::size_t>();
  config.seed = j.at("seed").get<std::uint64_t>();
  config.validate();
  return config;
}

inline Json m2vae_to_json(const M2vaeParams& params) {
  Json j;
  j["config"] = m2vae_config_to_json(params.config);
  Json encoders;
  for (const auto& [mask, encoder] : params.encoders) {
    encoders[subset_key(mask)] = mlp_to_json(encoder);
  }
  j["encoders"] = std::move(encoders);
  Json decoders = Json::array();
  for (const auto& decoder : params.decoders) {
    decoders.push_back(mlp_to_json(decoder));
  }
  j["decoders"] = std::move(decoders);
  return j;
}

inline M2vaeParams m2vae_from_json(const Json& j) {
  M2vaeParams params;
  params.config = m2vae_config_from_json(j.at("config"));
  for (const auto& [key, value] : j.at("encoders").items()) {
    params.encoders[subset_from_key(key)] = mlp_from_json(value);
  }
  if (params.encoders.size() !=
      static_cast<std::size_t>(params.config.full_mask())) {
    throw ConfigError("m2vae checkpoint: wrong encoder count");
  }
  for (const auto& value : j.at("decoders")) {
    params.decoders.push_back(mlp_from_json(value));
  }
  if (params.decoders.size() != params.config.modality_count) {
    throw ConfigError("m2vae checkpoint: wrong decoder count");
  }
  return params;
}

inline void save_m2vae(const M2vaeParams& params, const std::string& path) {
  write_json_file(path, m2vae_to_json(params));
}

inline M2vaeParams load_m2vae(const std::string& path) {
  return m2vae_from_json(read_json_file(path));
}

}  // namespace episteme

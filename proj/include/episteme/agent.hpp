#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "episteme/adam.hpp"
#include "episteme/errors.hpp"
#include "episteme/mlp.hpp"
#include "episteme/perceived_env.hpp"
#include "episteme/rng.hpp"
#include "episteme/serialize.hpp"

namespace episteme {

struct EpsilonSchedule {
  double eps_start = 1.0;
  double eps_end = 0.05;
  std::size_t decay_steps = 10000;

  // Linear interpolation clamped at eps_end; monotone non-increasing.
  double at(std::size_t step) const {
    if (decay_steps == 0 || step >= decay_steps) return eps_end;
    const double frac =
        static_cast<double>(step) / static_cast<double>(decay_steps);
    return eps_start + (eps_end - eps_start) * frac;
  }
};

struct AgentConfig {
  std::size_t input_dim = 6;  // I*d_z + I by default
  std::vector<std::size_t> trunk_hidden = {32, 32};
  std::size_t head_count = 2;    // M
  std::size_t action_count = 3;  // I + 1, last action is NOP
  double gamma = 0.95;
  std::size_t replay_capacity = 10000;
  std::size_t batch_size = 64;
  std::size_t target_sync_interval = 250;
  EpsilonSchedule epsilon;
  double learning_rate = 5e-4;
  std::uint64_t seed = 0;

  void validate() const {
    if (input_dim == 0) throw ConfigError("agent: input_dim must be positive");
    if (trunk_hidden.empty()) {
      throw ConfigError("agent: trunk needs at least one hidden layer");
    }
    if (head_count == 0) throw ConfigError("agent: need at least one head");
    if (action_count < 2) {
      throw ConfigError("agent: need at least one slot plus NOP");
    }
    if (gamma < 0.0 || gamma >= 1.0) {
      throw ConfigError("agent: gamma must be in [0, 1)");
    }
    if (replay_capacity == 0) {
      throw ConfigError("agent: replay capacity must be positive");
    }
    if (batch_size == 0) throw ConfigError("agent: batch_size must be positive");
    if (target_sync_interval == 0) {
      throw ConfigError("agent: target_sync_interval must be positive");
    }
    if (epsilon.eps_start < 0.0 || epsilon.eps_start > 1.0 ||
        epsilon.eps_end < 0.0 || epsilon.eps_end > 1.0) {
      throw ConfigError("agent: epsilon bounds must lie in [0, 1]");
    }
  }
};

/// Shared trunk plus one Q-value head per modality. The trunk output is a
/// tanh feature layer; each head is a linear readout of action values.
struct MultiHeadQNet {
  AgentConfig config;
  MlpParams trunk;
  std::vector<MlpParams> heads;
};

inline MultiHeadQNet build_qnet(const AgentConfig& config) {
  config.validate();
  MultiHeadQNet net;
  net.config = config;

  std::vector<std::size_t> trunk_sizes;
  trunk_sizes.push_back(config.input_dim);
  trunk_sizes.insert(trunk_sizes.end(), config.trunk_hidden.begin(),
                     config.trunk_hidden.end());
  net.trunk = build_mlp(make_mlp_spec(trunk_sizes, Activation::kTanh,
                                      Activation::kTanh,
                                      derive_seed(config.seed, 0)));
  for (std::size_t h = 0; h < config.head_count; ++h) {
    net.heads.push_back(build_mlp(make_mlp_spec(
        {config.trunk_hidden.back(), config.action_count},
        Activation::kIdentity, Activation::kIdentity,
        derive_seed(config.seed, 1 + h))));
  }
  return net;
}

inline std::vector<double> q_values(const MultiHeadQNet& net,
                                    const PolicyState& state,
                                    std::size_t head) {
  if (head >= net.heads.size()) {
    throw std::invalid_argument("q_values: head index out of range");
  }
  const Tensor features =
      mlp_forward(net.trunk, Tensor::row(std::vector<double>(state.values)));
  return mlp_forward(net.heads[head], features).values;
}

namespace detail {

// Highest-value action among valid slots and NOP, lowest index on ties.
inline std::size_t masked_argmax(const std::vector<double>& q,
                                 const std::vector<bool>& mask) {
  const std::size_t nop = q.size() - 1;
  std::size_t best = nop;
  double best_value = q[nop];
  for (std::size_t i = mask.size(); i-- > 0;) {
    if (!mask[i]) continue;
    if (q[i] >= best_value) {  // scanning high to low keeps lowest-index ties
      best = i;
      best_value = q[i];
    }
  }
  return best;
}

inline double masked_max(const std::vector<double>& q,
                         const std::vector<bool>& mask) {
  return q[masked_argmax(q, mask)];
}

}  // namespace detail

/// Epsilon-greedy with action masking. Explores uniformly over the valid
/// slots plus NOP; exploits by masked argmax. NOP is always available.
inline std::size_t select_action(const MultiHeadQNet& net,
                                 const PolicyState& state, std::size_t head,
                                 double epsilon, Rng& rng) {
  if (epsilon < 0.0 || epsilon > 1.0) {
    throw std::invalid_argument("select_action: epsilon out of range");
  }
  const std::size_t nop = net.config.action_count - 1;
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < state.mask.size(); ++i) {
    if (state.mask[i]) valid.push_back(i);
  }
  if (epsilon > 0.0 && rng.uniform() < epsilon) {
    const std::size_t pick = rng.uniform_index(valid.size() + 1);
    return pick == valid.size() ? nop : valid[pick];
  }
  if (valid.empty()) return nop;
  return detail::masked_argmax(q_values(net, state, head), state.mask);
}

/// Replay record: policy state, action, round team reward, successor policy
/// state, terminal flag, and the modality head that acted.
struct Transition {
  PolicyState state;
  std::size_t action = 0;
  double reward = 0.0;
  PolicyState next_state;
  bool done = false;
  std::size_t head = 0;
};

/// Fixed-capacity ring buffer with uniform sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) {
      throw std::invalid_argument("ReplayBuffer: zero capacity");
    }
    entries_.reserve(capacity);
  }

  void push(Transition transition) {
    if (entries_.size() < capacity_) {
      entries_.push_back(std::move(transition));
    } else {
      entries_[insert_count_ % capacity_] = std::move(transition);
    }
    insert_count_ += 1;
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t insert_count() const { return insert_count_; }
  const Transition& at(std::size_t i) const { return entries_.at(i); }

  std::vector<Transition> sample(std::size_t count, Rng& rng) const {
    if (entries_.empty()) {
      throw std::invalid_argument("ReplayBuffer: sampling from empty buffer");
    }
    std::vector<Transition> batch;
    batch.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      batch.push_back(entries_[rng.uniform_index(entries_.size())]);
    }
    return batch;
  }

 private:
  std::size_t capacity_;
  std::uint64_t insert_count_ = 0;
  std::vector<Transition> entries_;
};

/// One Adam state spanning the trunk and every head; heads keep their own
/// moment clocks so an untouched head is left bit-identical.
struct QNetOptimizer {
  AdamState trunk;
  std::vector<AdamState> heads;
};

inline QNetOptimizer make_qnet_optimizer(const MultiHeadQNet& net) {
  AdamConfig adam;
  adam.learning_rate = net.config.learning_rate;
  QNetOptimizer opt;
  opt.trunk = make_adam_state(net.trunk, adam);
  for (const auto& head : net.heads) {
    opt.heads.push_back(make_adam_state(head, adam));
  }
  return opt;
}

inline MultiHeadQNet sync_target(const MultiHeadQNet& net) { return net; }

/// One TD step on a replay batch: targets come from the target network with
/// invalid slots excluded from the max, the squared TD error is averaged
/// over the batch, and Adam updates the trunk plus every head that appears
/// in the batch. Returns the mean TD loss.
inline double train_batch(MultiHeadQNet& net, const MultiHeadQNet& target_net,
                          const std::vector<Transition>& batch, double gamma,
                          QNetOptimizer& optimizer) {
  if (batch.empty()) {
    throw std::invalid_argument("train_batch: empty batch");
  }
  if (gamma < 0.0 || gamma >= 1.0) {
    throw std::invalid_argument("train_batch: gamma must be in [0, 1)");
  }
  const std::size_t input_dim = net.config.input_dim;
  const std::size_t action_count = net.config.action_count;
  const std::size_t total = batch.size();

  std::vector<std::vector<std::size_t>> by_head(net.heads.size());
  for (std::size_t i = 0; i < total; ++i) {
    if (batch[i].head >= net.heads.size()) {
      throw std::invalid_argument("train_batch: head index out of range");
    }
    if (batch[i].action >= action_count) {
      throw std::invalid_argument("train_batch: action index out of range");
    }
    by_head[batch[i].head].push_back(i);
  }

  MlpGrads trunk_grads = zero_grads_like(net.trunk);
  double loss_sum = 0.0;

  for (std::size_t h = 0; h < net.heads.size(); ++h) {
    const auto& items = by_head[h];
    if (items.empty()) continue;
    const std::size_t rows = items.size();

    Tensor states = Tensor::zeros({rows, input_dim});
    Tensor next_states = Tensor::zeros({rows, input_dim});
    for (std::size_t r = 0; r < rows; ++r) {
      const Transition& t = batch[items[r]];
      if (t.state.values.size() != input_dim ||
          t.next_state.values.size() != input_dim) {
        throw std::invalid_argument("train_batch: policy state size mismatch");
      }
      std::copy(t.state.values.begin(), t.state.values.end(),
                states.values.begin() + static_cast<std::ptrdiff_t>(r * input_dim));
      std::copy(t.next_state.values.begin(), t.next_state.values.end(),
                next_states.values.begin() +
                    static_cast<std::ptrdiff_t>(r * input_dim));
    }

    // Bootstrap targets from the target network.
    const Tensor target_features = mlp_forward(target_net.trunk, next_states);
    const Tensor target_q = mlp_forward(target_net.heads[h], target_features);
    std::vector<double> targets(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const Transition& t = batch[items[r]];
      double y = t.reward;
      if (!t.done) {
        std::vector<double> q_next(
            target_q.values.begin() +
                static_cast<std::ptrdiff_t>(r * action_count),
            target_q.values.begin() +
                static_cast<std::ptrdiff_t>((r + 1) * action_count));
        y += gamma * detail::masked_max(q_next, t.next_state.mask);
      }
      targets[r] = y;
    }

    // Live forward, TD loss, and gradient at the taken actions.
    const Tensor features = mlp_forward(net.trunk, states);
    const Tensor q = mlp_forward(net.heads[h], features);
    Tensor q_grad = Tensor::zeros({rows, action_count});
    for (std::size_t r = 0; r < rows; ++r) {
      const Transition& t = batch[items[r]];
      const double td = q.values[r * action_count + t.action] - targets[r];
      loss_sum += td * td;
      q_grad.values[r * action_count + t.action] =
          2.0 * td / static_cast<double>(total);
    }

    const auto head_fb = forward_backward(net.heads[h], features, q_grad);
    adam_step(net.heads[h], head_fb.param_grads, optimizer.heads[h]);

    const auto trunk_fb =
        forward_backward(net.trunk, states, head_fb.input_grad);
    for (std::size_t l = 0; l < trunk_grads.size(); ++l) {
      for (std::size_t i = 0; i < trunk_grads[l].weight.size(); ++i) {
        trunk_grads[l].weight[i] += trunk_fb.param_grads[l].weight[i];
      }
      for (std::size_t i = 0; i < trunk_grads[l].bias.size(); ++i) {
        trunk_grads[l].bias[i] += trunk_fb.param_grads[l].bias[i];
      }
    }
  }

  adam_step(net.trunk, trunk_grads, optimizer.trunk);

  const double loss = loss_sum / static_cast<double>(total);
  if (!std::isfinite(loss)) {
    throw DivergenceError("train_batch: non-finite TD loss");
  }
  return loss;
}

inline Json agent_config_to_json(const AgentConfig& config) {
  Json j;
  j["input_dim"] = config.input_dim;
  j["trunk_hidden"] = config.trunk_hidden;
  j["head_count"] = config.head_count;
  j["action_count"] = config.action_count;
  j["gamma"] = config.gamma;
  j["replay_capacity"] = config.replay_capacity;
  j["batch_size"] = config.batch_size;
  j["target_sync_interval"] = config.target_sync_interval;
  j["eps_start"] = config.epsilon.eps_start;
  j["eps_end"] = config.epsilon.eps_end;
  j["eps_decay_steps"] = config.epsilon.decay_steps;
  j["learning_rate"] = config.learning_rate;
  j["seed"] = config.seed;
  return j;
}

inline AgentConfig agent_config_from_json(const Json& j) {
  AgentConfig config;
  config.input_dim = j.at("input_dim").get<std::size_t>();
  config.trunk_hidden = j.at("trunk_hidden").get<std::vector<std::size_t>>();
  config.head_count = j.at("head_count").get<std::size_t>();
  config.action_count = j.at("action_count").get<std::size_t>();
  config.gamma = j.at("gamma").get<double>();
  config.replay_capacity = j.at("replay_capacity").get<std::size_t>();
  config.batch_size = j.at("batch_size").get<std::size_t>();
  config.target_sync_interval = j.at("target_sync_interval").get<std::size_t>();
  config.epsilon.eps_start = j.at("eps_start").get<double>();
  config.epsilon.eps_end = j.at("eps_end").get<double>();
  config.epsilon.decay_steps = j.at("eps_decay_steps").get<std::size_t>();
  config.learning_rate = j.at("learning_rate").get<double>();
  config.seed = j.at("seed").get<std::uint64_t>();
  config.validate();
  return config;
}

// Checkpoint layout: {config, trunk, heads:[...], train_step}.
inline Json agent_to_json(const MultiHeadQNet& net, std::uint64_t train_step) {
  Json j;
  j["config"] = agent_config_to_json(net.config);
  j["trunk"] = mlp_to_json(net.trunk);
  Json heads = Json::array();
  for (const auto& head : net.heads) heads.push_back(mlp_to_json(head));
  j["heads"] = std::move(heads);
  j["train_step"] = train_step;
  return j;
}

struct AgentCheckpoint {
  MultiHeadQNet net;
  std::uint64_t train_step = 0;
};

inline AgentCheckpoint agent_from_json(const Json& j) {
  AgentCheckpoint ckpt;
  ckpt.net.config = agent_config_from_json(j.at("config"));
  ckpt.net.trunk = mlp_from_json(j.at("trunk"));
  for (const auto& head : j.at("heads")) {
    ckpt.net.heads.push_back(mlp_from_json(head));
  }
  if (ckpt.net.heads.size() != ckpt.net.config.head_count) {
    throw ConfigError("agent checkpoint: wrong head count");
  }
  ckpt.train_step = j.at("train_step").get<std::uint64_t>();
  return ckpt;
}

inline void save_agent(const MultiHeadQNet& net, std::uint64_t train_step,
                       const std::string& path) {
  write_json_file(path, agent_to_json(net, train_step));
}

inline AgentCheckpoint load_agent(const std::string& path) {
  return agent_from_json(read_json_file(path));
}

}  // namespace episteme

#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "episteme/agent.hpp"
#include "episteme/config.hpp"
#include "episteme/errors.hpp"
#include "episteme/m2vae.hpp"
#include "episteme/observation_model.hpp"
#include "episteme/perceived_env.hpp"
#include "episteme/rng.hpp"
#include "episteme/serialize.hpp"
#include "episteme/world.hpp"

namespace episteme {

// Seed streams hanging off run.seed. Training and evaluation episodes get
// disjoint blocks so evaluation worlds never depend on training length.
namespace seed_stream {
inline constexpr std::uint64_t kDataset = 1;
inline constexpr std::uint64_t kVaeInit = 2;
inline constexpr std::uint64_t kVaeTrain = 3;
inline constexpr std::uint64_t kAgentInit = 4;
inline constexpr std::uint64_t kAgentAction = 5;
inline constexpr std::uint64_t kReplay = 6;
inline constexpr std::uint64_t kTrainEpisodeBase = 1000;
inline constexpr std::uint64_t kEvalEpisodeBase = 1u << 24;
inline constexpr std::uint64_t kEvalActionBase = 1u << 25;
}  // namespace seed_stream

struct LabeledSample {
  std::size_t class_id = 0;
  ObservationSet obs;
};

inline std::vector<LabeledSample> generate_triangle_dataset(
    std::size_t count, std::size_t class_count, std::size_t modality_count,
    const std::vector<std::size_t>& obs_dims, double sigma_obs, Rng& rng) {
  std::vector<LabeledSample> samples;
  samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    LabeledSample sample;
    sample.class_id = i % class_count;  // balanced by construction
    sample.obs = ObservationSet::empty(modality_count);
    for (std::size_t m = 0; m < modality_count; ++m) {
      sample.obs.slots[m] = sample_class_observation(
          m, sample.class_id, class_count, obs_dims[m], sigma_obs, rng);
    }
    samples.push_back(std::move(sample));
  }
  return samples;
}

inline Json labeled_sample_to_json(const LabeledSample& sample) {
  Json obs;
  for (std::size_t m = 0; m < sample.obs.slots.size(); ++m) {
    if (sample.obs.slots[m].has_value()) {
      obs[std::to_string(m)] = *sample.obs.slots[m];
    }
  }
  return Json{{"class", sample.class_id}, {"obs", std::move(obs)}};
}

inline LabeledSample labeled_sample_from_json(const Json& j,
                                              std::size_t modality_count) {
  LabeledSample sample;
  sample.class_id = j.at("class").get<std::size_t>();
  sample.obs = ObservationSet::empty(modality_count);
  for (const auto& [key, value] : j.at("obs").items()) {
    const std::size_t m = static_cast<std::size_t>(std::stoul(key));
    if (m >= modality_count) {
      throw ConfigError("dataset: modality slot out of range");
    }
    sample.obs.slots[m] = value.get<std::vector<double>>();
  }
  return sample;
}

inline void ensure_parent_dir(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(parent, ec);
  if (ec) throw IoError("cannot create directory " + parent.string());
}

inline void save_dataset(const std::vector<LabeledSample>& samples,
                         const std::string& path) {
  ensure_parent_dir(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& sample : samples) {
    out << labeled_sample_to_json(sample).dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<LabeledSample> load_dataset(const std::string& path,
                                               std::size_t modality_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::vector<LabeledSample> samples;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded()) throw IoError("malformed dataset line in " + path);
    samples.push_back(labeled_sample_from_json(j, modality_count));
  }
  return samples;
}

/// Append-only JSON Lines sink, flushed after every record.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path) {
    ensure_parent_dir(path);
    out_.open(path, std::ios::binary);
    if (!out_) throw IoError("cannot open metrics file: " + path);
  }

  void write(const Json& record) {
    out_ << record.dump() << '\n';
    out_.flush();
    if (!out_) throw IoError("metrics write failed");
  }

 private:
  std::ofstream out_;
};

struct MetricsRecord {
  std::size_t episode = 0;
  std::size_t total_requests = 0;
  double episodic_return = 0.0;
  std::size_t episode_length = 0;
  double mean_kl = 0.0;
  std::vector<std::size_t> actions_per_modality;
  double epsilon = 0.0;
  std::uint64_t wall_ms = 0;
};

inline Json metrics_record_to_json(const MetricsRecord& r) {
  return Json{{"episode", r.episode},
              {"total_requests", r.total_requests},
              {"return", r.episodic_return},
              {"length", r.episode_length},
              {"mean_kl", r.mean_kl},
              {"actions_per_modality", r.actions_per_modality},
              {"epsilon", r.epsilon},
              {"wall_ms", r.wall_ms}};
}

inline MetricsRecord metrics_record_from_json(const Json& j) {
  MetricsRecord r;
  r.episode = j.at("episode").get<std::size_t>();
  r.total_requests = j.at("total_requests").get<std::size_t>();
  r.episodic_return = j.at("return").get<double>();
  r.episode_length = j.at("length").get<std::size_t>();
  r.mean_kl = j.at("mean_kl").get<double>();
  r.actions_per_modality =
      j.at("actions_per_modality").get<std::vector<std::size_t>>();
  r.epsilon = j.at("epsilon").get<double>();
  r.wall_ms = j.at("wall_ms").get<std::uint64_t>();
  return r;
}

inline std::size_t run_gen_dataset(const RunConfig& config,
                                   const std::string& out_path,
                                   std::size_t count) {
  Rng rng(derive_seed(config.run.seed, seed_stream::kDataset));
  const auto samples = generate_triangle_dataset(
      count, config.world.class_count, config.vae.modality_count,
      config.vae.obs_dims, config.world.sigma_obs, rng);
  save_dataset(samples, out_path);
  return samples.size();
}

struct PretrainResult {
  double first_epoch_loss = 0.0;
  double final_loss = 0.0;
  std::size_t epochs = 0;
};

/// Pre-trains the VAE on a dataset file and writes the checkpoint plus a
/// per-epoch loss log.
inline PretrainResult run_pretrain(const RunConfig& config,
                                   const std::string& data_path,
                                   const std::string& checkpoint_out,
                                   const std::string& metrics_path = "") {
  const auto labeled = load_dataset(data_path, config.vae.modality_count);
  if (labeled.empty()) throw IoError("dataset is empty: " + data_path);
  std::vector<ObservationSet> dataset;
  dataset.reserve(labeled.size());
  for (const auto& sample : labeled) dataset.push_back(sample.obs);

  M2vaeConfig vae_config = config.vae;
  vae_config.seed = derive_seed(config.run.seed, seed_stream::kVaeInit);
  M2vaeParams params = build_m2vae(vae_config);

  AdamConfig adam;
  adam.learning_rate = vae_config.learning_rate;
  M2vaeOptimizer optimizer = make_m2vae_optimizer(params, adam);
  Rng rng(derive_seed(config.run.seed, seed_stream::kVaeTrain));

  std::optional<MetricsWriter> metrics;
  if (!metrics_path.empty()) metrics.emplace(metrics_path);

  PretrainResult result;
  result.epochs = vae_config.epochs;
  for (std::size_t epoch = 1; epoch <= vae_config.epochs; ++epoch) {
    const double loss =
        train_epoch(params, dataset, optimizer, vae_config.batch_size, rng);
    if (!std::isfinite(loss)) {
      throw DivergenceError("pretrain: non-finite epoch loss");
    }
    if (epoch == 1) result.first_epoch_loss = loss;
    result.final_loss = loss;
    if (metrics) metrics->write(Json{{"epoch", epoch}, {"loss", loss}});
  }

  ensure_parent_dir(checkpoint_out);
  save_m2vae(params, checkpoint_out);
  return result;
}

enum class EvalPolicy { kLearned, kRandom, kGreedyNearest };

inline EvalPolicy eval_policy_from_name(const std::string& name) {
  if (name == "learned") return EvalPolicy::kLearned;
  if (name == "random") return EvalPolicy::kRandom;
  if (name == "greedy_nearest") return EvalPolicy::kGreedyNearest;
  throw ConfigError("unknown policy: " + name);
}

namespace detail {

struct RoundItem {
  std::size_t robot = 0;
  PolicyState state;
  std::size_t action = 0;
  StepResult result;
};

inline std::size_t random_valid_action(const PolicyState& state,
                                       std::size_t nop, Rng& rng) {
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < state.mask.size(); ++i) {
    if (state.mask[i]) valid.push_back(i);
  }
  const std::size_t pick = rng.uniform_index(valid.size() + 1);
  return pick == valid.size() ? nop : valid[pick];
}

inline Json trace_record(std::size_t t, const RoundItem& item,
                         std::size_t modality) {
  return Json{{"t", t},
              {"k", item.robot},
              {"modality", modality},
              {"action", item.action},
              {"poi", item.result.info.poi},
              {"r_k", item.result.reward},
              {"kl", item.result.info.kl},
              {"distance", item.result.info.distance},
              {"done", item.result.done}};
}

}  // namespace detail

struct TrainOptions {
  std::size_t max_agent_requests = 0;  // 0 = use config value
  std::string metrics_path;            // default: <out_dir>/train_metrics.jsonl
  std::string trace_path;              // default: <out_dir>/train_trace.jsonl
};

struct TrainResult {
  std::size_t episodes = 0;
  std::size_t agent_requests = 0;
  std::size_t train_steps = 0;
  double final_epsilon = 0.0;
};

/// Round-robin meta-agent training against the perceived environment.
/// Per round, every robot is requested once through its modality head; the
/// round's mean reward is written into all of the round's transitions.
inline TrainResult run_train(const RunConfig& config,
                             const std::string& vae_checkpoint,
                             const std::string& agent_checkpoint_out,
                             const TrainOptions& options = {}) {
  auto vae = std::make_shared<const M2vaeParams>(load_m2vae(vae_checkpoint));
  if (vae->config.modality_count != config.vae.modality_count ||
      vae->config.latent_dim != config.vae.latent_dim ||
      vae->config.obs_dims != config.vae.obs_dims) {
    throw ConfigError("VAE checkpoint does not match the run config");
  }

  AgentConfig agent_config = config.agent;
  agent_config.seed = derive_seed(config.run.seed, seed_stream::kAgentInit);
  MultiHeadQNet net = build_qnet(agent_config);
  MultiHeadQNet target = sync_target(net);
  QNetOptimizer optimizer = make_qnet_optimizer(net);
  ReplayBuffer buffer(agent_config.replay_capacity);

  Rng action_rng(derive_seed(config.run.seed, seed_stream::kAgentAction));
  Rng replay_rng(derive_seed(config.run.seed, seed_stream::kReplay));

  const std::string metrics_path =
      options.metrics_path.empty()
          ? config.run.out_dir + "/train_metrics.jsonl"
          : options.metrics_path;
  const std::string trace_path = options.trace_path.empty()
                                     ? config.run.out_dir + "/train_trace.jsonl"
                                     : options.trace_path;
  MetricsWriter metrics(metrics_path);
  MetricsWriter trace(trace_path);

  const std::size_t budget = options.max_agent_requests > 0
                                 ? options.max_agent_requests
                                 : config.run.train_agent_requests;
  const std::size_t robot_count = config.world.robot_count;

  TrainResult result;
  std::size_t requests = 0;
  std::size_t train_steps = 0;
  for (std::size_t episode = 0; requests < budget; ++episode) {
    WorldConfig world_config = config.world;
    world_config.seed = derive_seed(
        config.run.seed, seed_stream::kTrainEpisodeBase + 2 * episode);
    PerceivedEnv env(world_config, vae, config.env);
    Rng env_rng(derive_seed(config.run.seed,
                            seed_stream::kTrainEpisodeBase + 2 * episode + 1));

    const auto episode_start = std::chrono::steady_clock::now();
    double episodic_return = 0.0;
    std::size_t episode_length = 0;
    double kl_sum = 0.0;
    std::size_t kl_count = 0;
    std::vector<std::size_t> actions_per_modality(config.vae.modality_count,
                                                  0);
    double epsilon_now = agent_config.epsilon.at(requests);

    while (!env.done() && requests < budget) {
      std::vector<detail::RoundItem> round;
      for (std::size_t k = 0; k < robot_count && requests < budget; ++k) {
        if (env.done()) break;
        detail::RoundItem item;
        item.robot = k;
        item.state = env.build_policy_state(k);
        epsilon_now = agent_config.epsilon.at(requests);
        item.action = select_action(net, item.state, env.robot_modality(k),
                                    epsilon_now, action_rng);
        item.result = env.step(k, item.action, env_rng);
        trace.write(
            detail::trace_record(requests, item, env.robot_modality(k)));
        requests += 1;
        episode_length += 1;
        if (item.action != env.nop_action()) {
          kl_sum += item.result.info.kl;
          kl_count += 1;
          actions_per_modality[env.robot_modality(k)] += 1;
        }
        round.push_back(std::move(item));
      }
      if (round.empty()) break;

      std::vector<double> rewards;
      rewards.reserve(round.size());
      for (const auto& item : round) rewards.push_back(item.result.reward);
      const double round_reward = team_reward(rewards);
      episodic_return += round_reward;

      const bool round_done = env.done();
      for (auto& item : round) {
        Transition transition;
        transition.state = std::move(item.state);
        transition.action = item.action;
        transition.reward = round_reward;
        transition.next_state = env.build_policy_state(item.robot);
        transition.done = round_done;
        transition.head = env.robot_modality(item.robot);
        buffer.push(std::move(transition));
      }

      if (buffer.size() >= config.warmup_transitions) {
        for (std::size_t i = 0; i < round.size(); ++i) {
          const auto batch = buffer.sample(agent_config.batch_size, replay_rng);
          train_batch(net, target, batch, agent_config.gamma, optimizer);
          train_steps += 1;
          if (train_steps % agent_config.target_sync_interval == 0) {
            target = sync_target(net);
          }
        }
      }
    }

    MetricsRecord record;
    record.episode = episode;
    record.total_requests = requests;
    record.episodic_return = episodic_return;
    record.episode_length = episode_length;
    record.mean_kl = kl_count > 0 ? kl_sum / static_cast<double>(kl_count) : 0.0;
    record.actions_per_modality = actions_per_modality;
    record.epsilon = epsilon_now;
    record.wall_ms = static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::steady_clock::now() - episode_start)
            .count());
    metrics.write(metrics_record_to_json(record));

    result.episodes = episode + 1;
    if (config.run.checkpoint_interval_episodes > 0 &&
        (episode + 1) % config.run.checkpoint_interval_episodes == 0) {
      ensure_parent_dir(agent_checkpoint_out);
      save_agent(net, train_steps, agent_checkpoint_out);
    }
  }

  ensure_parent_dir(agent_checkpoint_out);
  save_agent(net, train_steps, agent_checkpoint_out);
  result.agent_requests = requests;
  result.train_steps = train_steps;
  result.final_epsilon = agent_config.epsilon.at(requests);
  return result;
}

struct EvalSummary {
  std::size_t episodes = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double mean_length = 0.0;
  double std_length = 0.0;
};

inline Json eval_summary_to_json(const EvalSummary& s) {
  return Json{{"episodes", s.episodes},
              {"mean_return", s.mean_return},
              {"std_return", s.std_return},
              {"mean_length", s.mean_length},
              {"std_length", s.std_length}};
}

/// Greedy (epsilon = 0) rollouts over a fixed evaluation seed set shared by
/// all policies. The learned policy needs an agent checkpoint; the baselines
/// ignore it.
inline EvalSummary run_eval(const RunConfig& config,
                            const std::string& vae_checkpoint,
                            const std::string& agent_checkpoint,
                            EvalPolicy policy, std::size_t episodes,
                            const std::string& metrics_path = "") {
  if (episodes == 0) throw ConfigError("eval: episodes must be positive");
  auto vae = std::make_shared<const M2vaeParams>(load_m2vae(vae_checkpoint));

  std::optional<MultiHeadQNet> net;
  if (policy == EvalPolicy::kLearned) {
    AgentCheckpoint ckpt = load_agent(agent_checkpoint);
    if (ckpt.net.config.input_dim != config.agent.input_dim ||
        ckpt.net.config.head_count != config.vae.modality_count ||
        ckpt.net.config.action_count != config.env.candidate_count + 1) {
      throw ConfigError("agent checkpoint does not match the run config");
    }
    net = std::move(ckpt.net);
  }

  std::optional<MetricsWriter> metrics;
  if (!metrics_path.empty()) metrics.emplace(metrics_path);

  const std::size_t robot_count = config.world.robot_count;
  std::vector<double> returns;
  std::vector<double> lengths;
  returns.reserve(episodes);
  lengths.reserve(episodes);

  for (std::size_t i = 0; i < episodes; ++i) {
    WorldConfig world_config = config.world;
    world_config.seed =
        derive_seed(config.run.seed, seed_stream::kEvalEpisodeBase + 2 * i);
    PerceivedEnv env(world_config, vae, config.env);
    Rng env_rng(derive_seed(config.run.seed,
                            seed_stream::kEvalEpisodeBase + 2 * i + 1));
    Rng policy_rng(
        derive_seed(config.run.seed, seed_stream::kEvalActionBase + i));

    const auto episode_start = std::chrono::steady_clock::now();
    double episodic_return = 0.0;
    std::size_t episode_length = 0;
    double kl_sum = 0.0;
    std::size_t kl_count = 0;
    std::vector<std::size_t> actions_per_modality(config.vae.modality_count,
                                                  0);

    while (!env.done()) {
      std::vector<double> rewards;
      for (std::size_t k = 0; k < robot_count; ++k) {
        if (env.done()) break;
        const PolicyState state = env.build_policy_state(k);
        std::size_t action = env.nop_action();
        switch (policy) {
          case EvalPolicy::kLearned:
            action = select_action(*net, state, env.robot_modality(k), 0.0,
                                   policy_rng);
            break;
          case EvalPolicy::kRandom:
            action = detail::random_valid_action(state, env.nop_action(),
                                                 policy_rng);
            break;
          case EvalPolicy::kGreedyNearest:
            action = (!state.mask.empty() && state.mask[0])
                         ? 0
                         : env.nop_action();
            break;
        }
        const StepResult result = env.step(k, action, env_rng);
        episode_length += 1;
        rewards.push_back(result.reward);
        if (action != env.nop_action()) {
          kl_sum += result.info.kl;
          kl_count += 1;
          actions_per_modality[env.robot_modality(k)] += 1;
        }
      }
      if (rewards.empty()) break;
      episodic_return += team_reward(rewards);
    }

    returns.push_back(episodic_return);
    lengths.push_back(static_cast<double>(episode_length));
    if (metrics) {
      MetricsRecord record;
      record.episode = i;
      record.total_requests = episode_length;
      record.episodic_return = episodic_return;
      record.episode_length = episode_length;
      record.mean_kl =
          kl_count > 0 ? kl_sum / static_cast<double>(kl_count) : 0.0;
      record.actions_per_modality = actions_per_modality;
      record.epsilon = 0.0;
      record.wall_ms = static_cast<std::uint64_t>(
          std::chrono::duration_cast<std::chrono::milliseconds>(
              std::chrono::steady_clock::now() - episode_start)
              .count());
      metrics->write(metrics_record_to_json(record));
    }
  }

  auto mean_of = [](const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += x;
    return sum / static_cast<double>(v.size());
  };
  auto std_of = [&](const std::vector<double>& v, double mean) {
    double sum = 0.0;
    for (double x : v) sum += (x - mean) * (x - mean);
    return std::sqrt(sum / static_cast<double>(v.size()));
  };

  EvalSummary summary;
  summary.episodes = episodes;
  summary.mean_return = mean_of(returns);
  summary.std_return = std_of(returns, summary.mean_return);
  summary.mean_length = mean_of(lengths);
  summary.std_length = std_of(lengths, summary.mean_length);
  return summary;
}

}  // namespace episteme

#pragma once

#include <charconv>
#include <cstdlib>
#include <set>
#include <string>
#include <vector>

#include "episteme/agent.hpp"
#include "episteme/errors.hpp"
#include "episteme/m2vae.hpp"
#include "episteme/perceived_env.hpp"
#include "episteme/serialize.hpp"
#include "episteme/world.hpp"

namespace episteme {

struct RunSettings {
  std::uint64_t seed = 1;
  std::size_t train_agent_requests = 50000;
  std::size_t eval_episodes = 100;
  std::size_t checkpoint_interval_episodes = 500;
  std::string out_dir = "out";
  std::string vae_checkpoint;
  std::string agent_checkpoint;
};

/// Full pipeline configuration. Every field has a default; the JSON schema
/// is strict (unknown keys are rejected) and cross-field consistency is
/// validated after parsing.
struct RunConfig {
  WorldConfig world;
  M2vaeConfig vae;
  EnvConfig env;
  AgentConfig agent;
  RunSettings run;
  std::size_t warmup_transitions = 500;
};

namespace detail {

class SectionParser {
 public:
  SectionParser(const Json& j, std::string section)
      : json_(j), section_(std::move(section)) {
    if (!json_.is_object()) {
      throw ConfigError("config section '" + section_ + "' must be an object");
    }
  }

  template <typename T>
  void read(const char* key, T& out) {
    handled_.insert(key);
    if (!json_.contains(key)) return;
    try {
      out = json_.at(key).get<T>();
    } catch (const Json::exception&) {
      throw ConfigError("config key '" + section_ + "." + key +
                        "' has the wrong type");
    }
  }

  void finish() const {
    for (const auto& [key, value] : json_.items()) {
      if (!handled_.contains(key)) {
        throw ConfigError("unknown config key '" + section_ + "." + key + "'");
      }
    }
  }

 private:
  const Json& json_;
  std::string section_;
  std::set<std::string> handled_;
};

inline const Json& section_or_empty(const Json& j, const char* name,
                                    const Json& empty) {
  return j.contains(name) ? j.at(name) : empty;
}

}  // namespace detail

inline RunConfig default_run_config() { return RunConfig{}; }

/// Cross-field consistency checks; fills the derived agent fields.
inline void validate_run_config(RunConfig& config) {
  config.vae.validate();

  config.world.modality_count = config.vae.modality_count;
  config.world.obs_dims = config.vae.obs_dims;
  config.world.validate();
  config.env.validate();

  const std::size_t expected_input =
      config.env.policy_state_dim(config.vae.latent_dim);
  if (config.agent.input_dim != expected_input) {
    throw ConfigError(
        "agent.trunk_input (" + std::to_string(config.agent.input_dim) +
        ") must equal env.candidates*vae.latent_dim + env.candidates (" +
        std::to_string(expected_input) + ")" +
        (config.env.include_std_in_state ? " with include_std_in_state doubling the embedding block"
                                         : ""));
  }
  config.agent.head_count = config.vae.modality_count;
  config.agent.action_count = config.env.candidate_count + 1;
  config.agent.validate();
  if (config.run.eval_episodes == 0) {
    throw ConfigError("run.eval_episodes must be positive");
  }
}

inline RunConfig parse_run_config(const Json& j) {
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  RunConfig config;
  const Json empty = Json::object();

  {
    detail::SectionParser p(detail::section_or_empty(j, "world", empty),
                            "world");
    p.read("width", config.world.width);
    p.read("height", config.world.height);
    p.read("pois", config.world.poi_count);
    p.read("robots", config.world.robot_count);
    p.read("robot_modalities", config.world.robot_modalities);
    p.read("class_count", config.world.class_count);
    p.read("sigma_obs", config.world.sigma_obs);
    p.finish();
  }
  {
    detail::SectionParser p(detail::section_or_empty(j, "vae", empty), "vae");
    p.read("modalities", config.vae.modality_count);
    p.read("latent_dim", config.vae.latent_dim);
    p.read("obs_dims", config.vae.obs_dims);
    p.read("beta", config.vae.beta);
    p.read("hidden", config.vae.hidden);
    p.read("learning_rate", config.vae.learning_rate);
    p.read("batch_size", config.vae.batch_size);
    p.read("epochs", config.vae.epochs);
    p.finish();
  }
  {
    detail::SectionParser p(detail::section_or_empty(j, "env", empty), "env");
    p.read("candidates", config.env.candidate_count);
    p.read("kappa", config.env.kappa);
    p.read("lambda", config.env.lambda);
    p.read("max_rounds", config.env.max_rounds);
    std::string direction = kl_direction_name(config.env.kl_direction);
    p.read("kl_direction", direction);
    config.env.kl_direction = kl_direction_from_name(direction);
    p.read("include_std_in_state", config.env.include_std_in_state);
    p.finish();
  }
  {
    detail::SectionParser p(detail::section_or_empty(j, "agent", empty),
                            "agent");
    p.read("trunk_input", config.agent.input_dim);
    p.read("trunk_hidden", config.agent.trunk_hidden);
    p.read("gamma", config.agent.gamma);
    p.read("replay_capacity", config.agent.replay_capacity);
    p.read("batch_size", config.agent.batch_size);
    p.read("target_sync_interval", config.agent.target_sync_interval);
    p.read("eps_start", config.agent.epsilon.eps_start);
    p.read("eps_end", config.agent.epsilon.eps_end);
    p.read("eps_decay_steps", config.agent.epsilon.decay_steps);
    p.read("learning_rate", config.agent.learning_rate);
    p.read("warmup_transitions", config.warmup_transitions);
    p.finish();
  }
  {
    detail::SectionParser p(detail::section_or_empty(j, "run", empty), "run");
    p.read("seed", config.run.seed);
    p.read("train_agent_requests", config.run.train_agent_requests);
    p.read("eval_episodes", config.run.eval_episodes);
    p.read("checkpoint_interval_episodes",
           config.run.checkpoint_interval_episodes);
    p.read("out_dir", config.run.out_dir);
    p.read("vae_checkpoint", config.run.vae_checkpoint);
    p.read("agent_checkpoint", config.run.agent_checkpoint);
    p.finish();
  }

  for (const auto& [key, value] : j.items()) {
    static const std::set<std::string> sections = {"world", "vae", "env",
                                                   "agent", "run"};
    if (!sections.contains(key)) {
      throw ConfigError("unknown config section '" + key + "'");
    }
  }

  validate_run_config(config);
  return config;
}

inline void apply_seed_override(RunConfig& config) {
  const char* env = std::getenv("EPISTEME_SEED");
  if (env == nullptr || *env == '\0') return;
  std::uint64_t seed = 0;
  const char* end = env + std::string_view(env).size();
  const auto [ptr, ec] = std::from_chars(env, end, seed);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("EPISTEME_SEED is not an unsigned integer: " +
                      std::string(env));
  }
  config.run.seed = seed;
}

/// Loads a config file, applying defaults for absent fields. An all-default
/// config comes from an empty file or `{}`. The EPISTEME_SEED environment
/// variable overrides run.seed.
inline RunConfig load_config(const std::string& path) {
  std::string text = read_text_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) text = "{}";
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("invalid JSON in " + path);
  RunConfig config = parse_run_config(j);
  apply_seed_override(config);
  return config;
}

inline Json run_config_to_json(const RunConfig& config) {
  Json j;
  j["world"] = {{"width", config.world.width},
                {"height", config.world.height},
                {"pois", config.world.poi_count},
                {"robots", config.world.robot_count},
                {"robot_modalities", config.world.robot_modalities},
                {"class_count", config.world.class_count},
                {"sigma_obs", config.world.sigma_obs}};
  j["vae"] = {{"modalities", config.vae.modality_count},
              {"latent_dim", config.vae.latent_dim},
              {"obs_dims", config.vae.obs_dims},
              {"beta", config.vae.beta},
              {"hidden", config.vae.hidden},
              {"learning_rate", config.vae.learning_rate},
              {"batch_size", config.vae.batch_size},
              {"epochs", config.vae.epochs}};
  j["env"] = {{"candidates", config.env.candidate_count},
              {"kappa", config.env.kappa},
              {"lambda", config.env.lambda},
              {"max_rounds", config.env.max_rounds},
              {"kl_direction", kl_direction_name(config.env.kl_direction)},
              {"include_std_in_state", config.env.include_std_in_state}};
  j["agent"] = {{"trunk_input", config.agent.input_dim},
                {"trunk_hidden", config.agent.trunk_hidden},
                {"gamma", config.agent.gamma},
                {"replay_capacity", config.agent.replay_capacity},
                {"batch_size", config.agent.batch_size},
                {"target_sync_interval", config.agent.target_sync_interval},
                {"eps_start", config.agent.epsilon.eps_start},
                {"eps_end", config.agent.epsilon.eps_end},
                {"eps_decay_steps", config.agent.epsilon.decay_steps},
                {"learning_rate", config.agent.learning_rate},
                {"warmup_transitions", config.warmup_transitions}};
  j["run"] = {{"seed", config.run.seed},
              {"train_agent_requests", config.run.train_agent_requests},
              {"eval_episodes", config.run.eval_episodes},
              {"checkpoint_interval_episodes",
               config.run.checkpoint_interval_episodes},
              {"out_dir", config.run.out_dir},
              {"vae_checkpoint", config.run.vae_checkpoint},
              {"agent_checkpoint", config.run.agent_checkpoint}};
  return j;
}

}  // namespace episteme

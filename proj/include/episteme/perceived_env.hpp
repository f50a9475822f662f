#pragma once

#include <memory>
#include <stdexcept>
#include <vector>

#include "episteme/errors.hpp"
#include "episteme/gaussian.hpp"
#include "episteme/m2vae.hpp"
#include "episteme/world.hpp"

namespace episteme {

enum class KlDirection { kOldNew, kNewOld };

inline const char* kl_direction_name(KlDirection d) {
  return d == KlDirection::kOldNew ? "old_new" : "new_old";
}

inline KlDirection kl_direction_from_name(const std::string& name) {
  if (name == "old_new") return KlDirection::kOldNew;
  if (name == "new_old") return KlDirection::kNewOld;
  throw ConfigError("unknown kl_direction: " + name);
}

struct EnvConfig {
  std::size_t candidate_count = 2;  // I
  double kappa = 1.0;
  double lambda = 0.01;       // movement penalty per unit distance
  std::size_t max_rounds = 40;  // T_max
  KlDirection kl_direction = KlDirection::kOldNew;
  bool include_std_in_state = false;

  void validate() const {
    if (candidate_count == 0) {
      throw ConfigError("env: candidate_count must be positive");
    }
    if (kappa <= 0.0) throw ConfigError("env: kappa must be positive");
    if (lambda < 0.0) throw ConfigError("env: lambda must be non-negative");
    if (max_rounds == 0) throw ConfigError("env: max_rounds must be positive");
  }

  std::size_t policy_state_dim(std::size_t latent_dim) const {
    const std::size_t per_slot =
        include_std_in_state ? 2 * latent_dim : latent_dim;
    return candidate_count * per_slot + candidate_count;
  }
};

/// Fixed-size policy input: candidate embedding means in candidate order,
/// then normalized path distances. Missing slots are zero-padded and flagged
/// invalid in the mask.
struct PolicyState {
  std::vector<double> values;
  std::vector<bool> mask;

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (bool b : mask) n += b ? 1 : 0;
    return n;
  }
};

/// Internal state of the perceived environment: per-PoI beliefs, per-PoI
/// visit masks over modalities, robot poses, and the agent-request counter.
struct BeliefState {
  std::vector<LatentEmbedding> embeddings;
  std::vector<std::uint32_t> visit_masks;
  std::vector<RobotPose> poses;
  std::size_t step_count = 0;
};

inline constexpr int kNoPoi = -1;

struct StepInfo {
  int poi = kNoPoi;
  double kl = 0.0;
  int distance = 0;
};

struct StepResult {
  PolicyState next_state;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

/// kappa-scaled KL divergence between successive beliefs. Non-negative;
/// zero exactly when the belief did not move.
inline double epistemic_reward(const LatentEmbedding& z_old,
                               const LatentEmbedding& z_new, double kappa,
                               KlDirection direction = KlDirection::kOldNew) {
  if (kappa <= 0.0) {
    throw std::invalid_argument("epistemic_reward: kappa must be positive");
  }
  const LatentEmbedding& q =
      direction == KlDirection::kOldNew ? z_old : z_new;
  const LatentEmbedding& p =
      direction == KlDirection::kOldNew ? z_new : z_old;
  return kappa * kl_diag_gaussians(
                     std::span<const double>(q.mean),
                     std::span<const double>(q.stddev),
                     std::span<const double>(p.mean),
                     std::span<const double>(p.stddev));
}

inline double team_reward(const std::vector<double>& per_robot_rewards) {
  if (per_robot_rewards.empty()) {
    throw std::invalid_argument("team_reward: empty reward list");
  }
  double sum = 0.0;
  for (double r : per_robot_rewards) sum += r;
  return sum / static_cast<double>(per_robot_rewards.size());
}

/// Wraps the simulator with belief maintenance and the epistemic reward.
/// Construction performs the reset: fresh world, unit-prior beliefs, cleared
/// visit masks.
class PerceivedEnv {
 public:
  PerceivedEnv(const WorldConfig& world_config,
               std::shared_ptr<const M2vaeParams> vae, EnvConfig config)
      : world_(GridWorld::reset(world_config)),
        vae_(std::move(vae)),
        config_(config) {
    config_.validate();
    if (!vae_) throw ConfigError("perceived env: missing VAE parameters");
    if (vae_->config.modality_count != world_config.modality_count ||
        vae_->config.obs_dims != world_config.obs_dims) {
      throw ConfigError(
          "perceived env: VAE checkpoint does not match world observation "
          "model");
    }
    const std::size_t n = world_.poi_count();
    state_.embeddings.assign(n, unit_prior(vae_->config.latent_dim));
    state_.visit_masks.assign(n, 0);
    state_.poses = world_.robots();
    state_.step_count = 0;
  }

  const BeliefState& state() const { return state_; }
  const GridWorld& world() const { return world_; }
  const EnvConfig& config() const { return config_; }
  std::size_t robot_count() const { return world_.config().robot_count; }
  std::size_t robot_modality(std::size_t robot) const {
    return world_.config().robot_modalities.at(robot);
  }
  std::size_t nop_action() const { return config_.candidate_count; }

  bool done() const {
    return all_visited() ||
           state_.step_count >= config_.max_rounds * robot_count();
  }

  std::vector<std::size_t> candidates(std::size_t robot) const {
    return world_.candidate_pois(robot, state_.visit_masks,
                                 config_.candidate_count);
  }

  PolicyState build_policy_state(std::size_t robot) const {
    const auto cands = candidates(robot);
    const std::size_t d = vae_->config.latent_dim;
    const std::size_t slots = config_.candidate_count;
    const double distance_scale =
        1.0 / static_cast<double>(world_.config().width +
                                  world_.config().height);

    PolicyState ps;
    ps.values.assign(config_.policy_state_dim(d), 0.0);
    ps.mask.assign(slots, false);
    const std::size_t per_slot = config_.include_std_in_state ? 2 * d : d;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const auto& z = state_.embeddings[cands[i]];
      for (std::size_t j = 0; j < d; ++j) {
        ps.values[i * per_slot + j] = z.mean[j];
      }
      if (config_.include_std_in_state) {
        for (std::size_t j = 0; j < d; ++j) {
          ps.values[i * per_slot + d + j] = z.stddev[j];
        }
      }
      ps.values[slots * per_slot + i] =
          static_cast<double>(world_.path_distance(robot, cands[i])) *
          distance_scale;
      ps.mask[i] = true;
    }
    return ps;
  }

  std::vector<PolicyState> initial_policy_states() const {
    std::vector<PolicyState> states;
    states.reserve(robot_count());
    for (std::size_t k = 0; k < robot_count(); ++k) {
      states.push_back(build_policy_state(k));
    }
    return states;
  }

  /// Executes one agent request. Candidate slots select drive-and-observe
  /// on that PoI followed by belief fusion; the NOP action marks the robot's
  /// current candidate set as visited for its modality and pays zero.
  StepResult step(std::size_t robot, std::size_t action, Rng& rng) {
    if (robot >= robot_count()) {
      throw std::invalid_argument("step: robot index out of range");
    }
    if (done()) throw std::invalid_argument("step: episode already finished");

    const auto cands = candidates(robot);
    const std::uint32_t bit = 1u << robot_modality(robot);

    StepResult result;
    if (action == nop_action()) {
      for (std::size_t n : cands) state_.visit_masks[n] |= bit;
      result.reward = 0.0;
    } else {
      if (action > nop_action()) {
        throw std::invalid_argument("step: action index out of range");
      }
      if (action >= cands.size()) {
        throw std::invalid_argument("step: masked action slot selected");
      }
      const std::size_t poi = cands[action];
      const auto [obs, distance] = world_.execute_drive(robot, poi, rng);
      state_.poses[robot] = world_.robots()[robot];

      const ObservationSet fresh = ObservationSet::single(
          vae_->config.modality_count, obs.modality, obs.vector);
      const LatentEmbedding fused =
          fuse(*vae_, state_.embeddings[poi], fresh, state_.visit_masks[poi]);
      const double kl = epistemic_reward(state_.embeddings[poi], fused,
                                         config_.kappa, config_.kl_direction);
      state_.embeddings[poi] = fused;
      state_.visit_masks[poi] |= bit;

      result.reward = kl - config_.lambda * static_cast<double>(distance);
      result.info.poi = static_cast<int>(poi);
      result.info.kl = kl;
      result.info.distance = distance;
    }

    state_.step_count += 1;
    result.done = done();
    result.next_state = build_policy_state(robot);
    return result;
  }

 private:
  bool all_visited() const {
    const std::uint32_t full =
        (1u << world_.config().modality_count) - 1u;
    for (std::uint32_t mask : state_.visit_masks) {
      if (mask != full) return false;
    }
    return true;
  }

  GridWorld world_;
  std::shared_ptr<const M2vaeParams> vae_;
  EnvConfig config_;
  BeliefState state_;
};

}  // namespace episteme

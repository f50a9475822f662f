#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "episteme/errors.hpp"
#include "episteme/observation_model.hpp"
#include "episteme/rng.hpp"

namespace episteme {

struct WorldConfig {
  std::size_t width = 10;
  std::size_t height = 10;
  std::size_t poi_count = 4;    // N
  std::size_t robot_count = 3;  // K
  std::vector<std::size_t> robot_modalities = {0, 1, 0};
  std::size_t modality_count = 2;  // M
  std::vector<std::size_t> obs_dims = {2, 2};
  std::size_t class_count = 3;
  double sigma_obs = 0.2;
  std::uint64_t seed = 1;

  void validate() const {
    if (width == 0 || height == 0) throw ConfigError("world: empty grid");
    if (poi_count == 0) throw ConfigError("world: need at least one PoI");
    if (robot_count == 0) throw ConfigError("world: need at least one robot");
    if (class_count == 0) throw ConfigError("world: need at least one class");
    if (robot_modalities.size() != robot_count) {
      throw ConfigError("world: robot_modalities length must equal robot count");
    }
    for (std::size_t m : robot_modalities) {
      if (m >= modality_count) {
        throw ConfigError("world: robot modality " + std::to_string(m) +
                          " out of range");
      }
    }
    if (obs_dims.size() != modality_count) {
      throw ConfigError("world: obs_dims length must equal modality_count");
    }
    if (sigma_obs < 0.0) throw ConfigError("world: negative sigma_obs");
    if (poi_count + robot_count > width * height) {
      throw ConfigError("world: not enough cells for PoIs and robots");
    }
  }
};

struct Cell {
  int x = 0;
  int y = 0;
  bool operator==(const Cell&) const = default;
};

inline int manhattan_distance(const Cell& a, const Cell& b) {
  return std::abs(a.x - b.x) + std::abs(a.y - b.y);
}

struct Poi {
  Cell cell;
  std::size_t class_id = 0;
};

struct RobotPose {
  Cell cell;
  std::size_t modality = 0;
};

struct Observation {
  std::size_t modality = 0;
  std::vector<double> vector;
  std::size_t poi_index = 0;
};

/// Ground-truth simulator: open grid, Manhattan metric, drive-and-observe
/// macro actions. PoI classes stay inside this class; they leave only
/// through sampled observations and the debug snapshot.
class GridWorld {
 public:
  static GridWorld reset(const WorldConfig& config) {
    config.validate();
    Rng rng(config.seed);

    // Distinct cells for PoIs then robots, via a full shuffle of the grid.
    std::vector<std::size_t> cells(config.width * config.height);
    std::iota(cells.begin(), cells.end(), 0);
    for (std::size_t i = cells.size(); i > 1; --i) {
      std::swap(cells[i - 1], cells[rng.uniform_index(i)]);
    }

    GridWorld world;
    world.config_ = config;
    for (std::size_t n = 0; n < config.poi_count; ++n) {
      Poi poi;
      poi.cell = world.cell_at(cells[n]);
      poi.class_id = rng.uniform_index(config.class_count);
      world.pois_.push_back(poi);
    }
    for (std::size_t k = 0; k < config.robot_count; ++k) {
      RobotPose robot;
      robot.cell = world.cell_at(cells[config.poi_count + k]);
      robot.modality = config.robot_modalities[k];
      world.robots_.push_back(robot);
    }
    return world;
  }

  // Fixed placement, for tests and tooling.
  static GridWorld with_layout(const WorldConfig& config,
                               std::vector<Poi> pois,
                               std::vector<RobotPose> robots) {
    config.validate();
    if (pois.size() != config.poi_count ||
        robots.size() != config.robot_count) {
      throw std::invalid_argument("with_layout: placement count mismatch");
    }
    GridWorld world;
    world.config_ = config;
    world.pois_ = std::move(pois);
    world.robots_ = std::move(robots);
    for (const auto& poi : world.pois_) {
      world.require_inside(poi.cell);
      if (poi.class_id >= config.class_count) {
        throw std::invalid_argument("with_layout: class out of range");
      }
    }
    for (const auto& robot : world.robots_) world.require_inside(robot.cell);
    return world;
  }

  const WorldConfig& config() const { return config_; }
  const std::vector<RobotPose>& robots() const { return robots_; }
  std::size_t poi_count() const { return pois_.size(); }
  Cell poi_cell(std::size_t poi_index) const {
    return pois_.at(poi_index).cell;
  }

  Observation sample_observation(std::size_t poi_index, std::size_t modality,
                                 Rng& rng) const {
    if (poi_index >= pois_.size() || modality >= config_.modality_count) {
      throw std::invalid_argument("sample_observation: index out of range");
    }
    Observation obs;
    obs.modality = modality;
    obs.poi_index = poi_index;
    obs.vector = sample_class_observation(
        modality, pois_[poi_index].class_id, config_.class_count,
        config_.obs_dims[modality], config_.sigma_obs, rng);
    return obs;
  }

  int path_distance(std::size_t robot_index, std::size_t poi_index) const {
    return manhattan_distance(robots_.at(robot_index).cell,
                              pois_.at(poi_index).cell);
  }

  /// Moves the robot onto the PoI cell and samples a fresh observation.
  /// Returns the observation and the Manhattan distance travelled.
  std::pair<Observation, int> execute_drive(std::size_t robot_index,
                                            std::size_t poi_index, Rng& rng) {
    const int distance = path_distance(robot_index, poi_index);
    robots_.at(robot_index).cell = pois_.at(poi_index).cell;
    return {sample_observation(poi_index, robots_[robot_index].modality, rng),
            distance};
  }

  /// Up to `max_candidates` PoIs the robot's modality has not yet observed,
  /// nearest first, ties broken by ascending PoI index.
  std::vector<std::size_t> candidate_pois(
      std::size_t robot_index, const std::vector<std::uint32_t>& visit_masks,
      std::size_t max_candidates) const {
    if (visit_masks.size() != pois_.size()) {
      throw std::invalid_argument("candidate_pois: visit mask count mismatch");
    }
    if (max_candidates == 0) {
      throw std::invalid_argument("candidate_pois: need at least one slot");
    }
    const std::uint32_t bit = 1u << robots_.at(robot_index).modality;
    std::vector<std::size_t> unvisited;
    for (std::size_t n = 0; n < pois_.size(); ++n) {
      if (!(visit_masks[n] & bit)) unvisited.push_back(n);
    }
    std::sort(unvisited.begin(), unvisited.end(),
              [&](std::size_t a, std::size_t b) {
                const int da = path_distance(robot_index, a);
                const int db = path_distance(robot_index, b);
                return da != db ? da < db : a < b;
              });
    if (unvisited.size() > max_candidates) unvisited.resize(max_candidates);
    return unvisited;
  }

  // Debug export; the only place ground-truth classes leave the simulator.
  nlohmann::json snapshot() const {
    nlohmann::json j;
    j["config"] = {{"width", config_.width},
                   {"height", config_.height},
                   {"pois", config_.poi_count},
                   {"robots", config_.robot_count},
                   {"class_count", config_.class_count},
                   {"sigma_obs", config_.sigma_obs},
                   {"seed", config_.seed}};
    nlohmann::json pois = nlohmann::json::array();
    for (const auto& poi : pois_) {
      pois.push_back({{"cell", {poi.cell.x, poi.cell.y}},
                      {"class", poi.class_id}});
    }
    j["pois"] = std::move(pois);
    nlohmann::json robots = nlohmann::json::array();
    for (const auto& robot : robots_) {
      robots.push_back({{"cell", {robot.cell.x, robot.cell.y}},
                        {"modality", robot.modality}});
    }
    j["robots"] = std::move(robots);
    return j;
  }

 private:
  Cell cell_at(std::size_t flat_index) const {
    return {static_cast<int>(flat_index % config_.width),
            static_cast<int>(flat_index / config_.width)};
  }

  void require_inside(const Cell& cell) const {
    if (cell.x < 0 || cell.y < 0 ||
        cell.x >= static_cast<int>(config_.width) ||
        cell.y >= static_cast<int>(config_.height)) {
      throw std::invalid_argument("cell outside grid");
    }
  }

  WorldConfig config_;
  std::vector<Poi> pois_;
  std::vector<RobotPose> robots_;
};

}  // namespace episteme

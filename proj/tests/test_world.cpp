#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <set>

#include "episteme/world.hpp"

using namespace episteme;

namespace {

WorldConfig small_config() {
  WorldConfig config;
  config.seed = 3;
  return config;
}

}  // namespace

TEST_CASE("reset_world is deterministic per seed", "[world]") {
  const auto a = GridWorld::reset(small_config());
  const auto b = GridWorld::reset(small_config());
  REQUIRE(a.snapshot() == b.snapshot());

  WorldConfig other = small_config();
  other.seed = 4;
  REQUIRE(GridWorld::reset(other).snapshot() != a.snapshot());
}

TEST_CASE("placement uses distinct cells for PoIs and robots", "[world]") {
  const auto world = GridWorld::reset(small_config());
  std::set<std::pair<int, int>> occupied;
  const auto j = world.snapshot();
  for (const auto& poi : j["pois"]) {
    occupied.insert({poi["cell"][0].get<int>(), poi["cell"][1].get<int>()});
  }
  for (const auto& robot : j["robots"]) {
    occupied.insert(
        {robot["cell"][0].get<int>(), robot["cell"][1].get<int>()});
  }
  REQUIRE(occupied.size() == 7);  // N=4 PoIs + K=3 robots
}

TEST_CASE("classes are drawn roughly uniformly", "[world]") {
  WorldConfig config;
  config.width = 60;
  config.height = 60;
  config.poi_count = 3000;
  config.robot_count = 1;
  config.robot_modalities = {0};
  config.seed = 11;
  const auto world = GridWorld::reset(config);
  std::array<std::size_t, 3> counts{0, 0, 0};
  const auto snapshot = world.snapshot();
  for (const auto& poi : snapshot["pois"]) {
    counts[poi["class"].get<std::size_t>()] += 1;
  }
  for (std::size_t c = 0; c < 3; ++c) {
    const double freq = static_cast<double>(counts[c]) / 3000.0;
    REQUIRE(freq >= 0.30);
    REQUIRE(freq <= 0.37);
  }
}

TEST_CASE("infeasible placement is rejected", "[world]") {
  WorldConfig config;
  config.width = 2;
  config.height = 2;
  config.poi_count = 3;
  config.robot_count = 2;
  config.robot_modalities = {0, 1};
  REQUIRE_THROWS_AS(GridWorld::reset(config), ConfigError);
}

TEST_CASE("noise-free observations reproduce the class table", "[world]") {
  WorldConfig config = small_config();
  config.sigma_obs = 0.0;
  config.poi_count = 3;
  // One PoI per class on a fixed layout.
  std::vector<Poi> pois{{{0, 0}, 0}, {{1, 0}, 1}, {{2, 0}, 2}};
  std::vector<RobotPose> robots{{{5, 5}, 0}, {{6, 5}, 1}, {{7, 5}, 0}};
  const auto world = GridWorld::with_layout(config, pois, robots);

  Rng rng(1);
  REQUIRE(world.sample_observation(2, 0, rng).vector ==
          std::vector<double>{1.0, 0.0});
  // Designed ambiguity: classes 0 and 1 coincide under modality 0.
  REQUIRE(world.sample_observation(0, 0, rng).vector ==
          std::vector<double>{-1.0, 0.0});
  REQUIRE(world.sample_observation(1, 0, rng).vector ==
          std::vector<double>{-1.0, 0.0});
  // ...and classes 1 and 2 coincide under modality 1.
  REQUIRE(world.sample_observation(1, 1, rng).vector ==
          std::vector<double>{1.0, 0.0});
  REQUIRE(world.sample_observation(2, 1, rng).vector ==
          std::vector<double>{1.0, 0.0});
  REQUIRE(world.sample_observation(0, 1, rng).vector ==
          std::vector<double>{-1.0, 0.0});
}

TEST_CASE("noisy observations center on the table mean", "[world]") {
  WorldConfig config = small_config();
  config.poi_count = 1;
  const auto world = GridWorld::with_layout(
      config, {{{0, 0}, 2}}, {{{5, 5}, 0}, {{6, 5}, 1}, {{7, 5}, 0}});
  Rng rng(42);
  double sum_x = 0.0, sum_y = 0.0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto obs = world.sample_observation(0, 0, rng);
    sum_x += obs.vector[0];
    sum_y += obs.vector[1];
  }
  REQUIRE(sum_x / draws == Catch::Approx(1.0).margin(0.01));
  REQUIRE(sum_y / draws == Catch::Approx(0.0).margin(0.01));
}

TEST_CASE("execute_drive moves the robot and reports the distance",
          "[world]") {
  WorldConfig config = small_config();
  config.poi_count = 2;
  auto world = GridWorld::with_layout(
      config, {{{3, 4}, 0}, {{0, 0}, 1}},
      {{{0, 0}, 0}, {{3, 4}, 1}, {{9, 9}, 0}});
  Rng rng(1);

  // Robot already on the PoI cell: distance 0, pose unchanged.
  const auto [obs1, d1] = world.execute_drive(1, 0, rng);
  REQUIRE(d1 == 0);
  REQUIRE(world.robots()[1].cell == Cell{3, 4});

  const auto [obs0, d0] = world.execute_drive(0, 0, rng);
  REQUIRE(d0 == 7);
  REQUIRE(world.robots()[0].cell == Cell{3, 4});

  // Co-location is allowed; a third robot can join the same PoI.
  const auto [obs2, d2] = world.execute_drive(2, 0, rng);
  REQUIRE(d2 == 11);
  REQUIRE(world.robots()[2].cell == Cell{3, 4});
}

TEST_CASE("drive distance always equals the pre-move path distance",
          "[world]") {
  auto world = GridWorld::reset(small_config());
  Rng rng(8);
  for (int i = 0; i < 50; ++i) {
    const std::size_t robot = rng.uniform_index(3);
    const std::size_t poi = rng.uniform_index(4);
    const int expected = world.path_distance(robot, poi);
    const auto [obs, travelled] = world.execute_drive(robot, poi, rng);
    REQUIRE(travelled == expected);
  }
}

TEST_CASE("path_distance is the Manhattan metric", "[world]") {
  REQUIRE(manhattan_distance({1, 1}, {1, 1}) == 0);
  REQUIRE(manhattan_distance({1, 1}, {4, 1}) == 3);
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const Cell a{static_cast<int>(rng.uniform_index(50)),
                 static_cast<int>(rng.uniform_index(50))};
    const Cell b{static_cast<int>(rng.uniform_index(50)),
                 static_cast<int>(rng.uniform_index(50))};
    REQUIRE(manhattan_distance(a, b) == manhattan_distance(b, a));
    REQUIRE(manhattan_distance(a, b) >= 0);
  }
}

TEST_CASE("candidate_pois filters by the robot's own modality", "[world]") {
  WorldConfig config = small_config();
  config.poi_count = 4;
  // Distances from robot 0 at (0,0): PoI0=5, PoI1=2, PoI2=2, PoI3=9.
  const auto world = GridWorld::with_layout(
      config,
      {{{2, 3}, 0}, {{1, 1}, 0}, {{0, 2}, 0}, {{9, 0}, 0}},
      {{{0, 0}, 0}, {{5, 5}, 1}, {{6, 6}, 0}});

  std::vector<std::uint32_t> none(4, 0);
  REQUIRE(world.candidate_pois(0, none, 2) ==
          std::vector<std::size_t>{1, 2});
  REQUIRE(world.candidate_pois(0, none, 4) ==
          std::vector<std::size_t>{1, 2, 0, 3});

  // All PoIs visited by this modality: empty list.
  std::vector<std::uint32_t> all(4, 0b01);
  REQUIRE(world.candidate_pois(0, all, 2).empty());

  // Visited by a different modality only: still a candidate.
  std::vector<std::uint32_t> other(4, 0b10);
  REQUIRE(world.candidate_pois(0, other, 2) ==
          std::vector<std::size_t>{1, 2});
}

TEST_CASE("candidate lists are sorted and duplicate-free", "[world]") {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    WorldConfig config;
    config.width = 8;
    config.height = 8;
    config.poi_count = 6;
    config.robot_count = 2;
    config.robot_modalities = {0, 1};
    config.seed = rng.next_u64();
    const auto world = GridWorld::reset(config);

    std::vector<std::uint32_t> masks(6);
    for (auto& m : masks) m = static_cast<std::uint32_t>(rng.uniform_index(4));
    const auto cands = world.candidate_pois(0, masks, 4);

    std::set<std::size_t> seen;
    int prev_distance = -1;
    std::size_t prev_index = 0;
    for (std::size_t n : cands) {
      REQUIRE(!seen.contains(n));
      seen.insert(n);
      const int d = world.path_distance(0, n);
      if (prev_distance >= 0) {
        const bool strictly_later =
            d > prev_distance || (d == prev_distance && n > prev_index);
        REQUIRE(strictly_later);
      }
      prev_distance = d;
      prev_index = n;
      REQUIRE((masks[n] & 0b01) == 0);
    }
  }
}

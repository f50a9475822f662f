#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "episteme/serialize.hpp"

namespace {

const std::string kTmp = "cli_test_tmp";

int run_cli(const std::string& args) {
  const std::string command =
      std::string(EPISTEME_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(command.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

struct TmpDir {
  TmpDir() {
    std::filesystem::remove_all(kTmp);
    std::filesystem::create_directories(kTmp);
  }
  ~TmpDir() { std::filesystem::remove_all(kTmp); }
};

}  // namespace

TEST_CASE("usage errors exit with the config error code", "[cli]") {
  REQUIRE(run_cli("") == 2);
  REQUIRE(run_cli("gen-data") == 2);  // missing --out
  REQUIRE(run_cli("frobnicate") == 2);
}

TEST_CASE("config and io failures map to distinct exit codes", "[cli]") {
  TmpDir guard;
  episteme::write_text_file(kTmp + "/bad.json", R"({"world": {"widht": 1}})");
  REQUIRE(run_cli("gen-data --config " + kTmp + "/bad.json --out " + kTmp +
                  "/d.jsonl") == 2);
  REQUIRE(run_cli("gen-data --config " + kTmp + "/missing.json --out " +
                  kTmp + "/d.jsonl") == 4);
  REQUIRE(run_cli("pretrain --data " + kTmp + "/missing.jsonl --out " + kTmp +
                  "/v.json") == 4);
  REQUIRE(run_cli("eval --policy warp --vae x --episodes 1") == 2);
}

TEST_CASE("tiny pipeline runs through the CLI", "[cli]") {
  TmpDir guard;
  episteme::write_text_file(
      kTmp + "/cfg.json",
      R"({"vae": {"epochs": 2},
          "run": {"seed": 11, "train_agent_requests": 30,
                   "out_dir": ")" +
          kTmp + R"(/out"}})");

  REQUIRE(run_cli("gen-data --config " + kTmp + "/cfg.json --out " + kTmp +
                  "/data.jsonl --n 60") == 0);
  REQUIRE(run_cli("pretrain --config " + kTmp + "/cfg.json --data " + kTmp +
                  "/data.jsonl --out " + kTmp + "/vae.json") == 0);
  REQUIRE(run_cli("train --config " + kTmp + "/cfg.json --vae " + kTmp +
                  "/vae.json --out " + kTmp + "/agent.json") == 0);
  REQUIRE(run_cli("eval --config " + kTmp + "/cfg.json --vae " + kTmp +
                  "/vae.json --agent " + kTmp +
                  "/agent.json --policy learned --episodes 3 --out " + kTmp +
                  "/eval.jsonl") == 0);
  REQUIRE(run_cli("eval --config " + kTmp + "/cfg.json --vae " + kTmp +
                  "/vae.json --policy greedy_nearest --episodes 3") == 0);
  REQUIRE(std::filesystem::exists(kTmp + "/eval.jsonl"));
  REQUIRE(std::filesystem::exists(kTmp + "/out/train_trace.jsonl"));
}

TEST_CASE("EPISTEME_SEED overrides the configured seed", "[cli]") {
  TmpDir guard;
  episteme::write_text_file(kTmp + "/cfg.json", R"({"run": {"seed": 11}})");
  const std::string base = "gen-data --config " + kTmp + "/cfg.json --n 30";

  REQUIRE(run_cli(base + " --out " + kTmp + "/a.jsonl") == 0);
  setenv("EPISTEME_SEED", "12", 1);
  REQUIRE(run_cli(base + " --out " + kTmp + "/b.jsonl") == 0);
  setenv("EPISTEME_SEED", "11", 1);
  REQUIRE(run_cli(base + " --out " + kTmp + "/c.jsonl") == 0);
  unsetenv("EPISTEME_SEED");

  const auto a = episteme::read_text_file(kTmp + "/a.jsonl");
  const auto b = episteme::read_text_file(kTmp + "/b.jsonl");
  const auto c = episteme::read_text_file(kTmp + "/c.jsonl");
  REQUIRE(a != b);
  REQUIRE(a == c);
}

// Command-line front end for the active-sensing pipeline:
//   gen-data -> pretrain -> train -> eval
// Exit codes: 0 success, 2 config error, 3 numeric divergence, 4 I/O.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "episteme/config.hpp"
#include "episteme/harness.hpp"

namespace {

using episteme::RunConfig;

RunConfig load_or_default(const std::string& config_path) {
  if (config_path.empty()) {
    RunConfig config = episteme::default_run_config();
    episteme::validate_run_config(config);
    episteme::apply_seed_override(config);
    return config;
  }
  return episteme::load_config(config_path);
}

std::string require_path(const std::string& flag_value,
                         const std::string& fallback, const char* what) {
  if (!flag_value.empty()) return flag_value;
  if (!fallback.empty()) return fallback;
  throw episteme::ConfigError(std::string("missing ") + what +
                              " (flag or config run section)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-robot active sensing with epistemic rewards"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_path;
  std::string data_path;
  std::string vae_path;
  std::string agent_path;
  std::string policy_name = "learned";
  std::size_t sample_count = 600;
  std::size_t episodes = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate a training dataset");
  gen->add_option("--config", config_path, "Run config JSON");
  gen->add_option("--out", out_path, "Dataset output path (JSON Lines)")
      ->required();
  gen->add_option("--n", sample_count, "Number of samples");

  auto* pretrain = app.add_subcommand("pretrain", "Pre-train the M2VAE");
  pretrain->add_option("--config", config_path, "Run config JSON");
  pretrain->add_option("--data", data_path, "Dataset path")->required();
  pretrain->add_option("--out", out_path, "VAE checkpoint output path")
      ->required();

  auto* train = app.add_subcommand("train", "Train the meta-agent");
  train->add_option("--config", config_path, "Run config JSON");
  train->add_option("--vae", vae_path, "VAE checkpoint path");
  train->add_option("--out", out_path, "Agent checkpoint output path")
      ->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a policy");
  eval->add_option("--config", config_path, "Run config JSON");
  eval->add_option("--vae", vae_path, "VAE checkpoint path");
  eval->add_option("--agent", agent_path, "Agent checkpoint path");
  eval->add_option("--policy", policy_name,
                   "learned, random, or greedy_nearest");
  eval->add_option("--episodes", episodes, "Evaluation episode count");
  eval->add_option("--out", out_path, "Per-episode metrics output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const RunConfig config = load_or_default(config_path);

    if (gen->parsed()) {
      const std::size_t written =
          episteme::run_gen_dataset(config, out_path, sample_count);
      std::cout << episteme::Json{{"samples", written}, {"path", out_path}}
                       .dump()
                << "\n";
      return 0;
    }

    if (pretrain->parsed()) {
      const auto result = episteme::run_pretrain(
          config, data_path, out_path,
          config.run.out_dir + "/pretrain_metrics.jsonl");
      std::cout << episteme::Json{{"epochs", result.epochs},
                                  {"first_epoch_loss", result.first_epoch_loss},
                                  {"final_loss", result.final_loss},
                                  {"checkpoint", out_path}}
                       .dump()
                << "\n";
      return 0;
    }

    if (train->parsed()) {
      const std::string vae = require_path(
          vae_path, config.run.vae_checkpoint, "VAE checkpoint (--vae)");
      const auto result = episteme::run_train(config, vae, out_path);
      std::cout << episteme::Json{{"episodes", result.episodes},
                                  {"agent_requests", result.agent_requests},
                                  {"train_steps", result.train_steps},
                                  {"final_epsilon", result.final_epsilon},
                                  {"checkpoint", out_path}}
                       .dump()
                << "\n";
      return 0;
    }

    if (eval->parsed()) {
      const auto policy = episteme::eval_policy_from_name(policy_name);
      const std::string vae = require_path(
          vae_path, config.run.vae_checkpoint, "VAE checkpoint (--vae)");
      std::string agent;
      if (policy == episteme::EvalPolicy::kLearned) {
        agent = require_path(agent_path, config.run.agent_checkpoint,
                             "agent checkpoint (--agent)");
      }
      const std::size_t n =
          episodes > 0 ? episodes : config.run.eval_episodes;
      const auto summary =
          episteme::run_eval(config, vae, agent, policy, n, out_path);
      episteme::Json j = episteme::eval_summary_to_json(summary);
      j["policy"] = policy_name;
      std::cout << j.dump() << "\n";
      return 0;
    }
  } catch (const episteme::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const episteme::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const episteme::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

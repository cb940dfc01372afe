#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mgdin/experiment.hpp"
#include "mgdin/kernels.hpp"

namespace {

// Exit codes: 0 success, 1 config error, 2 data error, 3 numeric failure.
int run(int argc, char** argv) {
  CLI::App app{"MGDIN: multi-granularity deferred-interaction CTR experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string checkpoint_path;
  std::optional<std::uint64_t> seed;
  bool force = false;
  int jobs = 1;
  bool serial_backend = false;

  app.add_flag("--serial", serial_backend, "Use the serial kernel backend");

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("--config", config_path, "Experiment config (JSON)");
    if (needs_config) opt->required();
    cmd->add_option("--out", out_dir, "Output directory (overrides config)");
    cmd->add_option("--seed", seed, "Seed override");
    cmd->add_option("--jobs", jobs, "Concurrent runs for ablate/sweep");
    cmd->add_flag("--force", force, "Overwrite existing outputs");
  };

  auto* generate = app.add_subcommand("generate", "Write a synthetic dataset");
  add_common(generate, true);
  auto* train = app.add_subcommand("train", "Train and evaluate one model");
  add_common(train, true);
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  add_common(eval, true);
  eval->add_option("checkpoint", checkpoint_path, "Checkpoint file")->required();
  auto* ablate = app.add_subcommand("ablate", "Run MGDIN, w/o MG and w/o DI variants");
  add_common(ablate, true);
  auto* sweep = app.add_subcommand("sweep", "Run the configured hyperparameter sweep");
  add_common(sweep, true);
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "Finite-difference check of every trainable parameter");
  add_common(gradcheck, false);

  CLI11_PARSE(app, argc, argv);

  if (serial_backend) mgdin::kernels::set_backend(mgdin::kernels::Backend::Serial);

  try {
    if (generate->parsed()) {
      auto config = mgdin::load_experiment_config(config_path);
      if (out_dir.empty())
        throw mgdin::ConfigError("generate: --out <directory> is required");
      mgdin::cmd_generate(config, out_dir, force);
    } else if (train->parsed()) {
      auto config = mgdin::load_experiment_config(config_path);
      mgdin::cmd_train(config, seed, out_dir);
    } else if (eval->parsed()) {
      auto config = mgdin::load_experiment_config(config_path);
      mgdin::cmd_eval(config, checkpoint_path, out_dir);
    } else if (ablate->parsed()) {
      auto config = mgdin::load_experiment_config(config_path);
      mgdin::cmd_ablate(config, out_dir, jobs);
    } else if (sweep->parsed()) {
      auto config = mgdin::load_experiment_config(config_path);
      mgdin::cmd_sweep(config, out_dir, jobs);
    } else if (gradcheck->parsed()) {
      std::optional<mgdin::ExperimentConfig> config;
      if (!config_path.empty()) config = mgdin::load_experiment_config(config_path);
      mgdin::cmd_gradcheck(config, seed.value_or(7), std::cout);
    }
  } catch (const mgdin::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const mgdin::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const mgdin::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }

// Experiment runner: parses a JSON experiment config, dispatches to the
// engines, and persists reproducible CSV/JSON artifacts.

#include <CLI11.hpp>

#include <iostream>

#include "gansde/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"gansde - minimax SGA training dynamics and their SDE approximations"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::int64_t seed_override = -1;
  bool validate_only = false;

  for (const auto& kind : gansde::experiment_kinds()) {
    auto* sub = app.add_subcommand(kind, "run a " + kind + " experiment");
    sub->add_option("--config", config_path, "experiment config (JSON)")->required();
    sub->add_option("--seed", seed_override, "override the config seed");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_flag("--validate-only", validate_only, "parse and validate the config, then exit");
  }

  CLI11_PARSE(app, argc, argv);
  const std::string sub = app.get_subcommands().front()->get_name();

  try {
    gansde::ExperimentConfig cfg = gansde::parse_config(config_path);
    if (cfg.experiment != sub)
      throw gansde::Error("config declares experiment `" + cfg.experiment + "` but subcommand is `" + sub +
                          "`");
    if (seed_override >= 0) {
      cfg.seed = static_cast<std::uint64_t>(seed_override);
      cfg.echo["seed"] = cfg.seed;
    }
    if (validate_only) {
      std::cout << "config OK\n";
      return 0;
    }
    std::string out = !out_dir.empty() ? out_dir : cfg.out_dir.value_or("out-" + cfg.experiment);
    const int status = gansde::run_experiment(cfg, out);
    std::cout << "wrote " << out << " (status " << status << ")\n";
    return status;
  } catch (const gansde::InconclusiveError& e) {
    std::cerr << "inconclusive: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "inrank/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Incremental low-rank learning experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", inrank::kToolVersion);

  inrank::RunOptions opts;
  std::uint64_t seed = 0;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"theory-verify", "Compare simulated and trained mode trajectories with the closed form"},
      {"glrl-demo", "Greedy low-rank learning on a planted deep linear task"},
      {"train", "Train a dense or incrementally factorized network"},
      {"spectrum-trace", "Train and record cumulative-update spectra"},
  };
  std::vector<CLI::App*> subs;
  std::vector<CLI::Option*> seed_opts;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opts.config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", opts.out_dir, "Output directory")->required();
    seed_opts.push_back(sub->add_option("--seed", seed, "Seed; overrides INRANK_LAB_SEED and the config"));
    sub->add_flag("--plot", opts.plot, "Write SVG plots");
    sub->add_option("--set", opts.overrides, "Override section.key=value (repeatable)")->take_all();
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : inrank::exit_config;
  }

  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (subs[i]->parsed()) {
      opts.command = subs[i]->get_name();
      if (seed_opts[i]->count() > 0) opts.seed = seed;
    }
  }
  return inrank::run_experiment(opts);
}

// spmlab: batch experiments for the stochastic porous media lab.
//
//   spmlab <subcommand> --config <path> [--set k=v]... [--seed N] [--paths N] [--out DIR]

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "spm/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Stochastic porous media lab"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  std::size_t paths = 0;
  std::string out;

  for (const auto& name : spm::subcommand_names()) {
    CLI::App* sub = app.add_subcommand(name, "run the " + name + " pipeline");
    sub->add_option("--config", config, "experiment configuration (JSON)")->required();
    sub->add_option("--set", sets, "override a config entry, e.g. solver.dt=0.001")->take_all();
    sub->add_option("--seed", seed, "master seed (run.master_seed)");
    sub->add_option("--paths", paths, "ensemble size (run.n_paths)");
    sub->add_option("--out", out, "output directory (run.output_dir)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : spm::exit_config_error;
  }

  const CLI::App* chosen = app.get_subcommands().front();
  if (chosen->count("--seed")) sets.push_back("run.master_seed=" + std::to_string(seed));
  if (chosen->count("--paths")) sets.push_back("run.n_paths=" + std::to_string(paths));
  if (chosen->count("--out")) sets.push_back("run.output_dir=" + nlohmann::json(out).dump());
  return spm::run_subcommand(chosen->get_name(), config, sets, std::cout, std::cerr);
}

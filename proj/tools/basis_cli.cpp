#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>

#include "basis/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Annealed Langevin source separation experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::optional<std::string> out;

  const char* tasks[] = {"separate", "colorize", "train-scorenet", "eval", "grad-experiment", "ablation"};
  for (const char* name : tasks) {
    auto* sub = app.add_subcommand(name, std::string("run the ") + name + " task");
    sub->add_option("--config", config_path, "flat key = value config file")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--jobs", jobs, "worker threads (default: available parallelism)")->check(CLI::PositiveNumber);
    sub->add_option("--out", out, "output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  const std::string task = app.get_subcommands().front()->get_name();
  try {
    const auto cfg = basis::Config::load(config_path);
    basis::RunOverrides overrides{task, seed, jobs, out};
    const auto experiment = basis::ExperimentConfig::from(cfg, overrides);
    basis::log(basis::LogLevel::info, "running " + task + " into " + experiment.out);
    const auto dir = basis::run_experiment(experiment);
    dir.flush();
    basis::log(basis::LogLevel::info, "wrote " + std::to_string(dir.files().size()) + " artifacts");
    std::cout << experiment.out << "/metrics.json\n";
  } catch (const basis::Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", std::string(basis::errc_name(e.code())).c_str(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: E_INTERNAL: %s\n", e.what());
    return 3;
  }
  return 0;
}

// pcmm: fit proportional mean models to multi-mode panel count data,
// run simulation studies, and export fitted baseline curves.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>

#include "pcmm/commands.hpp"

int main(int argc, char** argv) {
  using namespace pcmm::cli;
  CLI::App app{"Proportional mean model for panel count data with multiple modes of recurrence"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::vector<double> grid;
  int time_decimals = -1;

  auto add_fit_options = [&](CLI::App* sub) {
    sub->add_option("--epsilon", cfg.fit.epsilon, "Relative objective change that stops the fit")
        ->capture_default_str();
    sub->add_option("--max-iter", cfg.fit.max_iter, "Maximum alternating sweeps")->capture_default_str();
    sub->add_option("--time-decimals", time_decimals, "Round observation times to this many decimals");
  };

  auto* fit = app.add_subcommand("fit", "Fit a panel CSV (id,time,n1..nk,z1..zd)");
  fit->add_option("--input", cfg.input, "Panel CSV")->required()->check(CLI::ExistingFile);
  fit->add_option("--out", cfg.out, "Output directory")->capture_default_str();
  add_fit_options(fit);
  std::map<std::string, pcmm::InferenceMethod> methods{
      {"bootstrap", pcmm::InferenceMethod::bootstrap}, {"sandwich", pcmm::InferenceMethod::sandwich}};
  fit->add_option("--inference", cfg.inference, "Standard error method")
      ->transform(CLI::CheckedTransformer(methods, CLI::ignore_case))
      ->default_str("bootstrap");
  fit->add_option("--boot-reps", cfg.boot_reps, "Bootstrap replicates")->capture_default_str()
      ->check(CLI::Range(2, 1000000));

  auto* sim = app.add_subcommand("simulate", "Run a Monte Carlo study from a config file");
  sim->add_option("--config", cfg.config, "Study config (key = value)")->required()
      ->check(CLI::ExistingFile);
  sim->add_option("--out", cfg.out, "Output directory")->capture_default_str();

  auto* base = app.add_subcommand("baseline", "Sample fitted baseline curves on a grid");
  base->add_option("--input", cfg.input, "Directory written by `fit`, or a panel CSV to fit");
  base->add_option("--out", cfg.out, "Output directory")->capture_default_str();
  base->add_option("--grid", grid, "Comma-separated evaluation times (default: knots)")->delimiter(',');
  add_fit_options(base);

  for (auto* sub : {fit, sim, base}) {
    sub->add_option("--seed", cfg.seed, "Seed for all randomness")->capture_default_str();
    sub->add_option("--threads", cfg.threads, "Worker threads (0 = all cores)")->capture_default_str();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  if (time_decimals >= 0) cfg.time_decimals = time_decimals;
  if (fit->parsed()) cfg.command = Command::fit;
  if (sim->parsed()) cfg.command = Command::simulate;
  if (base->parsed()) {
    cfg.command = Command::baseline;
    const bool out_given = base->get_option("--out")->count() > 0;
    if (cfg.input.empty()) cfg.input = cfg.out;
    else if (!out_given && std::filesystem::is_directory(cfg.input)) cfg.out = cfg.input;
    if (!grid.empty()) cfg.grid = grid;
  }
  try {
    return run(cfg, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
}

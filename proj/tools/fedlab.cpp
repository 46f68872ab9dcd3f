// fedlab: command-line front end.
//   fedlab run --config cfg.json [--seed N] [--out DIR] [--workers N]
//   fedlab grid --config cfg.json [--seed N] [--out DIR] [--workers N]
//   fedlab verify [--config cfg.json] [--seed N]
//   fedlab counterexample [--a A] [--alpha ALPHA] [--rounds R] [--eta ETA]

#include <iostream>

#include "CLI11.hpp"

#include "fedlab/harness/commands.hpp"

namespace {

void add_common(CLI::App* cmd, std::string& config,
                std::uint64_t& seed, std::string& out, std::size_t& workers, bool config_required) {
  auto* c = cmd->add_option("--config", config, "Experiment config (JSON)");
  if (config_required) c->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", seed, "Override the run seed");
  cmd->add_option("--out", out, "Override the output directory");
  cmd->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  using namespace fedlab::harness;
  CLI::App app{"Deterministic federated optimization lab"};
  app.require_subcommand(1);

  Overrides o;
  std::string config, out;
  std::uint64_t seed = 0;
  std::size_t workers = 0;

  auto* run = app.add_subcommand("run", "Run one experiment; writes trace.jsonl and summary.csv");
  add_common(run, config, seed, out, workers, true);
  auto* grid = app.add_subcommand("grid", "Grid search; one directory per cell plus leaderboard.csv");
  add_common(grid, config, seed, out, workers, true);
  auto* verify = app.add_subcommand("verify", "Run the invariant suite");
  verify->add_option("--config", config, "Config whose Newton-Schulz coefficients to check")
      ->check(CLI::ExistingFile);
  verify->add_option("--seed", seed, "Seed for the randomized checks");

  CounterexampleArgs ce;
  auto* counter = app.add_subcommand("counterexample",
                                     "LocalMuon vs FedMuon on the two-client counterexample");
  counter->add_option("--a", ce.a, "Client offset a > 0")->capture_default_str();
  counter->add_option("--alpha", ce.alpha, "Momentum parameter in (0, 1]")->capture_default_str();
  counter->add_option("--rounds", ce.rounds, "Communication rounds")->capture_default_str();
  counter->add_option("--eta", ce.eta, "Stepsize")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  auto given = [](CLI::App* cmd, const char* flag) { return cmd->count(flag) > 0; };
  CLI::App* cmd = app.get_subcommands().front();
  if (cmd != counter) {
    if (given(cmd, "--config")) o.config = config;
    if (given(cmd, "--seed")) o.seed = seed;
    if (cmd != verify) {
      if (given(cmd, "--out")) o.out = out;
      if (given(cmd, "--workers")) o.workers = workers;
    }
  }

  if (cmd == run) return cli_run(o, std::cout, std::cerr);
  if (cmd == grid) return cli_grid(o, std::cout, std::cerr);
  if (cmd == verify) return cli_verify(o, std::cout, std::cerr);
  return cli_counterexample(ce, std::cout, std::cerr);
}

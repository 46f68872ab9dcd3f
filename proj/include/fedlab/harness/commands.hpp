#pragma once

// Subcommands behind the `fedlab` executable. Each returns a process exit code
// and writes human-readable output to `out` and diagnostics to `err`.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedlab/fedproto.hpp"
#include "fedlab/harness/config.hpp"

namespace fedlab::harness {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,      // bad flags, unreadable or unwritable files
  kExitConfig = 2,     // schema or value errors in the config
  kExitNumerical = 3,  // run aborted on a non-finite value
  kExitInvariant = 4,  // verify found a failing invariant
};

// Name of the environment variable that overrides the worker count.
inline constexpr const char* kWorkersEnv = "FEDLAB_WORKERS";

struct Overrides {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<std::size_t> workers;
};

// Precedence: command-line flag, then environment, then config file.
// Throws ConfigError for an unparsable environment value.
void apply_overrides(ExperimentConfig& cfg, const Overrides& o);

// Runs one experiment, streaming trace.jsonl and then summary.csv into `dir`.
RunResult run_to_directory(const ExperimentConfig& cfg, const RoundConfig& rc,
                           const Problem& problem, const std::filesystem::path& dir);

// Gradient norm dual to the configured LMO ball, read off a record.
double dual_grad(const RoundTrace& t, const NormKind& dual);

struct GridCell {
  std::size_t index = 0;
  double eta = 0.0;
  std::optional<double> eta_vector;
  double alpha = 0.0;
  std::optional<int> ns_iters;

  RoundConfig apply(const RoundConfig& base) const;
};

// Cartesian product in the order eta, eta_vector, alpha, ns_iters (last varies
// fastest). Lists absent from the grid take the base config value.
std::vector<GridCell> expand_grid(const ExperimentConfig& cfg);

struct LeaderboardRow {
  GridCell cell;
  std::size_t runs = 0;
  std::size_t aborted = 0;
  double final_loss = 0.0;      // mean over seeds of the last record's loss
  double mean_dual_grad = 0.0;  // mean over seeds of the per-run mean over records
  bool selected = false;        // lowest finite final_loss
};

inline constexpr const char* kLeaderboardHeader =
    "cell,eta,eta_vector,alpha,ns_iters,runs,aborted,final_loss,mean_dual_grad,selected";

// Per-run summary statistics used by the leaderboard.
struct RunScore {
  double final_loss = 0.0;
  double mean_dual_grad = 0.0;
};
RunScore score_run(const std::vector<RoundTrace>& traces, const NormKind& dual);

std::filesystem::path cell_directory(const std::filesystem::path& out, std::size_t cell);
std::filesystem::path run_directory(const std::filesystem::path& out, std::size_t cell,
                                    std::uint64_t seed);

int cli_run(const Overrides& o, std::ostream& out, std::ostream& err);
int cli_grid(const Overrides& o, std::ostream& out, std::ostream& err);
int cli_verify(const Overrides& o, std::ostream& out, std::ostream& err);

struct CounterexampleArgs {
  double a = 1.0;
  double alpha = 0.5;
  std::size_t rounds = 20;
  double eta = 0.01;
};
int cli_counterexample(const CounterexampleArgs& args, std::ostream& out, std::ostream& err);

}  // namespace fedlab::harness

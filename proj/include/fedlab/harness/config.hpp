#pragma once

// Experiment configuration file (JSON). Schema is documented in README.md.
// Everything is validated before any compute or filesystem side effect.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedlab/fedproto.hpp"
#include "fedlab/problems.hpp"

namespace fedlab::harness {

struct ProblemSpec {
  std::string type;  // counterexample | matrix_quadratic | toy_classification
  // counterexample
  double a = 1.0;
  std::optional<double> x0;  // defaults to -a/4
  // matrix_quadratic
  MatrixQuadraticOptions quadratic;
  // toy_classification
  ToyClassificationOptions toy;
  // Data/initialization seed; follows the run seed when absent.
  std::optional<std::uint64_t> seed;
};

struct GridSpec {
  std::vector<double> eta;
  std::vector<double> eta_vector;
  std::vector<double> alpha;
  std::vector<int> ns_iters;
};

struct ExperimentConfig {
  ProblemSpec problem;
  RoundConfig round;
  std::size_t rounds = 100;
  std::size_t cadence = 1;
  bool track_kappa = true;
  bool wallclock = false;
  std::filesystem::path output = "out";
  std::vector<std::uint64_t> seeds;  // grid mode; defaults to {round.seed}
  std::optional<GridSpec> grid;
};

// Throws ConfigError; the message lists every offending key.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

// Builds the objective for the given run seed.
std::unique_ptr<Problem> make_problem(const ProblemSpec& spec, std::size_t clients,
                                      std::uint64_t run_seed);

// Norm in which gradients are judged for this configuration (dual of the LMO ball).
NormKind dual_metric_norm(const RoundConfig& cfg);

}  // namespace fedlab::harness

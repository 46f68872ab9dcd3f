#pragma once

// Federated round engine for FedMuon and its baselines (LocalMuon, FedAvg,
// SCAFFOLD). Clients are simulated in-process; the only data crossing the
// client/server boundary is what a networked deployment would send:
//   server -> client: X(r), C(r)
//   client -> server: ClientUpdate {id, X_i(r,K) - X(r), C_i(r+1)}

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fedlab/optim.hpp"
#include "fedlab/params.hpp"
#include "fedlab/problems.hpp"
#include "fedlab/trace.hpp"

namespace fedlab {

enum class Algorithm { FedMuon, LocalMuon, FedAvg, Scaffold };
enum class BaseOptimizer { Sgd, Momentum, Adam };
enum class MomentumInit { Zero, StochasticGradient };

std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& s);
std::string to_string(BaseOptimizer o);
BaseOptimizer parse_base_optimizer(const std::string& s);

struct RoundConfig {
  std::size_t clients = 16;  // n
  std::size_t sampled = 8;   // S
  std::size_t local_steps = 5;  // K
  double eta = 0.001;
  // Stepsize for vector/scalar layers under FedMuon/LocalMuon; defaults to eta.
  std::optional<double> eta_vector;
  double alpha = 0.1;
  Algorithm algorithm = Algorithm::FedMuon;
  // Direction map for matrix layers under FedMuon/LocalMuon.
  DirectionMap direction = DirectionMap::exact(NormKind::spectral());
  StepScaling scaling = StepScaling::SqrtMaxDim;
  // Local optimizer for FedAvg and SCAFFOLD (state reset every round).
  BaseOptimizer base_optimizer = BaseOptimizer::Sgd;
  double momentum_beta = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double noise_sigma = 0.0;
  MomentumInit momentum_init = MomentumInit::Zero;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  double vector_eta() const noexcept { return eta_vector.value_or(eta); }
  // Throws ConfigError naming the offending field.
  void validate() const;
};

struct ClientState {
  std::size_t id = 0;
  Params x;  // X_i after the client's last participation
  Params m;  // momentum, carried across rounds including unsampled ones
  Params c;  // control variate C_i
};

struct ServerState {
  Params x;
  Params c;
  std::vector<Params> c_registry;  // server copy of every C_i
  std::size_t round = 0;
};

struct ClientUpdate {
  std::size_t id = 0;
  Params delta;  // X_i(r,K) - X(r)
  Params c_new;  // C_i(r+1)
};

struct LocalRoundResult {
  ClientState client;
  ClientUpdate update;
  // delta after each local step k = 0..K (index 0 is all zeros); only when requested.
  std::vector<Params> step_deltas;
  // Smallest kappa seen among Newton-Schulz inputs this round.
  std::optional<double> min_kappa;
};

// Uniform size-S subset of [0, n) via a seeded partial Fisher-Yates shuffle,
// returned in ascending order. Throws ConfigError unless 1 <= S <= n.
std::vector<std::size_t> sample_clients(std::size_t n, std::size_t s, Rng& rng);
std::vector<std::size_t> sample_clients_for_round(const RoundConfig& cfg, std::size_t round);

// One client's K local steps of cfg.algorithm starting from the server state.
LocalRoundResult local_round(const ClientState& client, const Params& x_global,
                             const Params& c_global, const RoundConfig& cfg,
                             const Problem& problem, std::size_t round, bool record_steps = false,
                             bool track_kappa = false);

// X <- X + (1/n) sum delta_i, C <- C + (1/n) sum (C_i_new - C_i_old), summed in id order.
// Throws ProtocolError on duplicate or out-of-range ids.
ServerState server_aggregate(const ServerState& server, const std::vector<ClientUpdate>& updates,
                             const RoundConfig& cfg);

struct Initialization {
  ServerState server;
  std::vector<ClientState> clients;
};

// Round-0 state: X(0) from the problem, M_i(0,0) per cfg.momentum_init,
// C_i(0) = M_i(0,0), C(0) = mean_i C_i(0).
Initialization initialize(const RoundConfig& cfg, const Problem& problem);

struct RunOptions {
  std::size_t rounds = 100;
  // Emit records every `cadence` rounds (plus the final server model).
  std::size_t cadence = 1;
  bool track_kappa = true;
  bool wallclock = false;
  std::function<void(const RoundTrace&)> on_record;
  // Called with the server state after every round (and once before round 0).
  std::function<void(const ServerState&, const std::vector<ClientState>&)> on_round;
};

struct RunResult {
  std::vector<RoundTrace> traces;
  ServerState server;
  std::vector<ClientState> clients;
  bool aborted = false;
  std::string message;
};

// Executes R rounds. A non-finite loss or parameter aborts the run; the result
// then carries the records emitted so far and a diagnostic message.
RunResult run(const RoundConfig& cfg, const Problem& problem, const RunOptions& opts);

// Metrics of the global objective at x under the given Schatten exponent.
RoundTrace measure(const Problem& problem, const Params& x, double phat);

// Exponent p used for the grad_schatten_phat metric.
double metric_exponent(const RoundConfig& cfg, std::optional<double> running_kappa);

}  // namespace fedlab

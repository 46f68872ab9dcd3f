#include "fedlab/fedproto.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <thread>

#include "fedlab/error.hpp"

namespace fedlab {

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::FedMuon: return "fedmuon";
    case Algorithm::LocalMuon: return "localmuon";
    case Algorithm::FedAvg: return "fedavg";
    case Algorithm::Scaffold: return "scaffold";
  }
  return "?";
}

Algorithm parse_algorithm(const std::string& s) {
  if (s == "fedmuon") return Algorithm::FedMuon;
  if (s == "localmuon") return Algorithm::LocalMuon;
  if (s == "fedavg") return Algorithm::FedAvg;
  if (s == "scaffold") return Algorithm::Scaffold;
  throw ConfigError("unknown algorithm '" + s + "' (expected fedmuon, localmuon, fedavg, scaffold)");
}

std::string to_string(BaseOptimizer o) {
  switch (o) {
    case BaseOptimizer::Sgd: return "sgd";
    case BaseOptimizer::Momentum: return "momentum";
    case BaseOptimizer::Adam: return "adam";
  }
  return "?";
}

BaseOptimizer parse_base_optimizer(const std::string& s) {
  if (s == "sgd") return BaseOptimizer::Sgd;
  if (s == "momentum") return BaseOptimizer::Momentum;
  if (s == "adam") return BaseOptimizer::Adam;
  throw ConfigError("unknown base optimizer '" + s + "' (expected sgd, momentum, adam)");
}

void RoundConfig::validate() const {
  if (clients < 1) throw ConfigError("clients: must be >= 1");
  if (sampled < 1 || sampled > clients)
    throw ConfigError("sampled: must satisfy 1 <= sampled <= clients (got " +
                      std::to_string(sampled) + " of " + std::to_string(clients) + ")");
  if (local_steps < 1) throw ConfigError("local_steps: must be >= 1");
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("eta: must be positive");
  if (eta_vector && !(*eta_vector > 0.0)) throw ConfigError("eta_vector: must be positive");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha: must lie in (0, 1]");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
    throw ConfigError("noise_sigma: must be finite and >= 0");
  if (!(momentum_beta >= 0.0 && momentum_beta < 1.0))
    throw ConfigError("momentum_beta: must lie in [0, 1)");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("adam betas: must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps: must be positive");
  if (workers < 1) throw ConfigError("workers: must be >= 1");
  if (direction.mode() == DirectionMap::Mode::NewtonSchulz) direction.ns().validate();
  if (direction.mode() == DirectionMap::Mode::Exact) {
    const auto t = direction.ball().tag();
    if (t == NormKind::Tag::Trace || t == NormKind::Tag::Schatten)
      throw ConfigError("lmo.norm: no exact oracle for the " + direction.ball().name() + " ball");
  }
}

std::vector<std::size_t> sample_clients(std::size_t n, std::size_t s, Rng& rng) {
  if (s < 1 || s > n)
    throw ConfigError("sample_clients: need 1 <= S <= n (S=" + std::to_string(s) +
                      ", n=" + std::to_string(n) + ")");
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  for (std::size_t i = 0; i < s; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(s);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<std::size_t> sample_clients_for_round(const RoundConfig& cfg, std::size_t round) {
  if (cfg.sampled == cfg.clients) {
    std::vector<std::size_t> all(cfg.clients);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  Rng rng = make_rng({cfg.seed, static_cast<std::uint64_t>(Stream::Sampling), round});
  return sample_clients(cfg.clients, cfg.sampled, rng);
}

namespace {

constexpr std::uint64_t kInitRound = std::numeric_limits<std::uint64_t>::max();

NoiseChannel noise_for(const RoundConfig& cfg, std::size_t client, std::uint64_t round,
                       std::size_t step) {
  return NoiseChannel(cfg.noise_sigma,
                      make_rng({cfg.seed, static_cast<std::uint64_t>(Stream::Noise), client,
                                round, step}));
}

// FedAvg/SCAFFOLD local optimizer, one state per layer.
class BaseOptimizerState {
 public:
  BaseOptimizerState(const RoundConfig& cfg, const Params& like) : kind_(cfg.base_optimizer) {
    for (const auto& m : like) {
      const double beta = kind_ == BaseOptimizer::Momentum ? cfg.momentum_beta : 0.0;
      sgd_.push_back(SgdMomentumState{Mat(m.rows(), m.cols()), beta});
      adam_.push_back(AdamState{Mat(m.rows(), m.cols()), Mat(m.rows(), m.cols()), cfg.adam_beta1,
                                cfg.adam_beta2, cfg.adam_eps, 0});
    }
  }

  Mat step(std::size_t layer, const Mat& x, const Mat& g, double eta) {
    if (kind_ == BaseOptimizer::Adam) {
      auto [s, nx] = adam_step(adam_[layer], x, g, eta);
      adam_[layer] = std::move(s);
      return nx;
    }
    auto [s, nx] = sgd_momentum_step(sgd_[layer], x, g, eta);
    sgd_[layer] = std::move(s);
    return nx;
  }

 private:
  BaseOptimizer kind_;
  std::vector<SgdMomentumState> sgd_;
  std::vector<AdamState> adam_;
};

LocalRoundResult muon_local_round(const ClientState& client, const Params& x_global,
                                  const Params& c_global, const RoundConfig& cfg,
                                  const Problem& problem, std::size_t round, bool record_steps,
                                  bool track_kappa) {
  const auto& layers = problem.layers();
  const bool corrected = cfg.algorithm == Algorithm::FedMuon;
  const DirectionMap vector_map = DirectionMap::identity();

  LocalRoundResult out;
  out.client = client;
  Params& m = out.client.m;
  Params delta = zeros_like(x_global);
  Params x = x_global;
  if (record_steps) out.step_deltas.push_back(delta);

  for (std::size_t k = 0; k < cfg.local_steps; ++k) {
    NoiseChannel noise = noise_for(cfg, client.id, round, k);
    const Params g = problem.stoch_grad(client.id, x, noise);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      m[l] = momentum_update(MomentumState{std::move(m[l]), cfg.alpha}, g[l]).m;
      const bool matrix = layers[l].role == LayerRole::Matrix;
      const DirectionMap& map = matrix ? cfg.direction : vector_map;
      Mat v = m[l];
      if (corrected) {
        v -= client.c[l];
        v += c_global[l];
      }
      if (track_kappa && map.mode() == DirectionMap::Mode::NewtonSchulz) {
        const auto s = singular_values(v);
        if (!s.empty() && s[0] > 0.0) {
          const double kappa = effective_p(s, map.ns().iters).kappa;
          out.min_kappa = out.min_kappa ? std::min(*out.min_kappa, kappa) : kappa;
        }
      }
      const Mat d = map(v);
      const double step = !matrix          ? cfg.vector_eta()
                          : map.is_lmo()   ? per_layer_stepsize(cfg.eta, layers[l], cfg.scaling)
                                           : cfg.eta;
      delta[l].axpy(step, d);
      x[l] = x_global[l];
      x[l] += delta[l];
    }
    if (record_steps) out.step_deltas.push_back(delta);
  }
  out.client.x = x;
  out.client.c = m;  // C_i(r+1) <- M_i(r,K)
  out.update = ClientUpdate{client.id, std::move(delta), m};
  return out;
}

LocalRoundResult fedavg_local_round(const ClientState& client, const Params& x_global,
                                    const RoundConfig& cfg, const Problem& problem,
                                    std::size_t round, bool record_steps) {
  LocalRoundResult out;
  out.client = client;
  BaseOptimizerState opt(cfg, x_global);
  Params x = x_global;
  if (record_steps) out.step_deltas.push_back(zeros_like(x_global));
  for (std::size_t k = 0; k < cfg.local_steps; ++k) {
    NoiseChannel noise = noise_for(cfg, client.id, round, k);
    const Params g = problem.stoch_grad(client.id, x, noise);
    for (std::size_t l = 0; l < x.size(); ++l) x[l] = opt.step(l, x[l], g[l], cfg.eta);
    if (record_steps) out.step_deltas.push_back(sub(x, x_global));
  }
  out.client.x = x;
  out.update = ClientUpdate{client.id, sub(x, x_global), client.c};
  return out;
}

// SCAFFOLD with the control variate set to the client's most recent stochastic
// gradient; written independently of the Muon path.
LocalRoundResult scaffold_local_round(const ClientState& client, const Params& x_global,
                                      const Params& c_global, const RoundConfig& cfg,
                                      const Problem& problem, std::size_t round,
                                      bool record_steps) {
  LocalRoundResult out;
  out.client = client;
  BaseOptimizerState opt(cfg, x_global);
  Params y = x_global;
  Params last_grad = client.c;
  if (record_steps) out.step_deltas.push_back(zeros_like(x_global));
  for (std::size_t k = 0; k < cfg.local_steps; ++k) {
    NoiseChannel noise = noise_for(cfg, client.id, round, k);
    Params g = problem.stoch_grad(client.id, y, noise);
    for (std::size_t l = 0; l < y.size(); ++l) {
      Mat corrected = g[l] - client.c[l] + c_global[l];
      y[l] = opt.step(l, y[l], corrected, cfg.eta);
    }
    last_grad = std::move(g);
    if (record_steps) out.step_deltas.push_back(sub(y, x_global));
  }
  out.client.x = y;
  out.client.c = last_grad;
  out.update = ClientUpdate{client.id, sub(y, x_global), std::move(last_grad)};
  return out;
}

}  // namespace

LocalRoundResult local_round(const ClientState& client, const Params& x_global,
                             const Params& c_global, const RoundConfig& cfg,
                             const Problem& problem, std::size_t round, bool record_steps,
                             bool track_kappa) {
  require_same_layout(client.m, x_global, "local_round");
  require_same_layout(client.c, c_global, "local_round");
  switch (cfg.algorithm) {
    case Algorithm::FedMuon:
    case Algorithm::LocalMuon:
      return muon_local_round(client, x_global, c_global, cfg, problem, round, record_steps,
                              track_kappa);
    case Algorithm::FedAvg:
      return fedavg_local_round(client, x_global, cfg, problem, round, record_steps);
    case Algorithm::Scaffold:
      return scaffold_local_round(client, x_global, c_global, cfg, problem, round, record_steps);
  }
  throw ConfigError("local_round: unknown algorithm");
}

ServerState server_aggregate(const ServerState& server, const std::vector<ClientUpdate>& updates,
                             const RoundConfig& cfg) {
  const std::size_t n = server.c_registry.size();
  if (n != cfg.clients)
    throw ProtocolError("server_aggregate: registry holds " + std::to_string(n) +
                        " clients, config says " + std::to_string(cfg.clients));
  std::vector<const ClientUpdate*> ordered;
  std::vector<bool> seen(n, false);
  for (const auto& u : updates) {
    if (u.id >= n) throw ProtocolError("server_aggregate: unknown client id " + std::to_string(u.id));
    if (seen[u.id]) throw ProtocolError("server_aggregate: duplicate client id " + std::to_string(u.id));
    seen[u.id] = true;
    ordered.push_back(&u);
  }
  std::sort(ordered.begin(), ordered.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) { return a->id < b->id; });

  const double w = 1.0 / static_cast<double>(n);
  ServerState next = server;
  Params dx = zeros_like(server.x);
  Params dc = zeros_like(server.c);
  for (const ClientUpdate* u : ordered) {
    axpy(dx, 1.0, u->delta);
    axpy(dc, 1.0, sub(u->c_new, server.c_registry[u->id]));
    next.c_registry[u->id] = u->c_new;
  }
  axpy(next.x, w, dx);
  axpy(next.c, w, dc);
  next.round = server.round + 1;
  return next;
}

Initialization initialize(const RoundConfig& cfg, const Problem& problem) {
  cfg.validate();
  if (problem.num_clients() != cfg.clients)
    throw ConfigError("clients: problem '" + problem.name() + "' has " +
                      std::to_string(problem.num_clients()) + " clients, config says " +
                      std::to_string(cfg.clients));
  Initialization init;
  init.server.x = problem.initial_point();
  init.server.c = zeros_like(init.server.x);
  const double w = 1.0 / static_cast<double>(cfg.clients);
  for (std::size_t i = 0; i < cfg.clients; ++i) {
    ClientState c{i, init.server.x, zeros_like(init.server.x), zeros_like(init.server.x)};
    if (cfg.momentum_init == MomentumInit::StochasticGradient) {
      NoiseChannel noise = noise_for(cfg, i, kInitRound, 0);
      c.m = problem.stoch_grad(i, init.server.x, noise);
      if (cfg.algorithm == Algorithm::FedAvg) c.m = zeros_like(init.server.x);
      c.c = c.m;
      axpy(init.server.c, w, c.c);
    }
    init.server.c_registry.push_back(c.c);
    init.clients.push_back(std::move(c));
  }
  return init;
}

double metric_exponent(const RoundConfig& cfg, std::optional<double> running_kappa) {
  if (cfg.algorithm == Algorithm::FedAvg || cfg.algorithm == Algorithm::Scaffold) return 2.0;
  switch (cfg.direction.mode()) {
    case DirectionMap::Mode::Identity: return 2.0;
    case DirectionMap::Mode::Exact:
      return cfg.direction.ball().tag() == NormKind::Tag::Spectral ? 1.0 : 2.0;
    case DirectionMap::Mode::NewtonSchulz:
      if (cfg.direction.ns().iters == 0 || !running_kappa) return 2.0;
      return effective_p_from_kappa(*running_kappa, cfg.direction.ns().iters);
  }
  return 2.0;
}

RoundTrace measure(const Problem& problem, const Params& x, double phat) {
  RoundTrace t;
  t.loss = problem.global_loss(x);
  t.phat = phat;
  const Params g = problem.global_grad(x);
  std::vector<double> all;
  for (const auto& block : g) {
    const auto s = singular_values(block);
    t.grad_spectral = std::max(t.grad_spectral, s.front());
    all.insert(all.end(), s.begin(), s.end());
  }
  for (double v : all) t.grad_trace += v;
  t.grad_frobenius = schatten_from_singular_values(all, 2.0);
  t.grad_schatten_phat = schatten_from_singular_values(all, phat);
  t.accuracy = problem.accuracy(x);
  return t;
}

RunResult run(const RoundConfig& cfg, const Problem& problem, const RunOptions& opts) {
  if (opts.cadence < 1) throw ConfigError("metrics.cadence: must be >= 1");
  Initialization init = initialize(cfg, problem);
  RunResult result;
  result.server = std::move(init.server);
  result.clients = std::move(init.clients);
  const auto t0 = std::chrono::steady_clock::now();
  std::optional<double> running_kappa;
  const double w = 1.0 / static_cast<double>(cfg.clients);

  // Non-finite records are not emitted; they end the run.
  auto emit = [&](RoundTrace t) -> bool {
    if (!std::isfinite(t.loss) || !std::isfinite(t.grad_frobenius)) {
      result.aborted = true;
      result.message = "non-finite loss at round " + std::to_string(t.round) + ", step " +
                       std::to_string(t.step);
      return false;
    }
    if (opts.wallclock)
      t.wallclock_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                           std::chrono::steady_clock::now() - t0)
                           .count();
    result.traces.push_back(t);
    if (opts.on_record) opts.on_record(t);
    return true;
  };

  if (opts.on_round) opts.on_round(result.server, result.clients);

  std::size_t r = 0;
  try {
    for (; r < opts.rounds; ++r) {
      const bool record = r % opts.cadence == 0;
      const auto ids = sample_clients_for_round(cfg, r);
      std::vector<LocalRoundResult> locals(ids.size());
      std::vector<std::exception_ptr> errors(ids.size());
      auto work = [&](std::size_t slot) {
        try {
          locals[slot] = local_round(result.clients[ids[slot]], result.server.x, result.server.c,
                                     cfg, problem, r, record, opts.track_kappa);
        } catch (...) {
          errors[slot] = std::current_exception();
        }
      };
      const std::size_t nthreads = std::min(cfg.workers, ids.size());
      if (nthreads <= 1) {
        for (std::size_t s = 0; s < ids.size(); ++s) work(s);
      } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < nthreads; ++t)
          pool.emplace_back([&, t] {
            for (std::size_t s = t; s < ids.size(); s += nthreads) work(s);
          });
      }
      for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

      for (const auto& l : locals)
        if (l.min_kappa)
          running_kappa = running_kappa ? std::min(*running_kappa, *l.min_kappa) : *l.min_kappa;

      if (record) {
        const double phat = metric_exponent(cfg, running_kappa);
        for (std::size_t k = 0; k < cfg.local_steps; ++k) {
          Params xk = result.server.x;
          Params sum = zeros_like(xk);
          for (const auto& l : locals) axpy(sum, 1.0, l.step_deltas[k]);
          axpy(xk, w, sum);
          RoundTrace t = measure(problem, xk, phat);
          t.round = static_cast<std::int64_t>(r);
          t.step = static_cast<std::int64_t>(k);
          t.running_kappa = running_kappa;
          if (!emit(t)) return result;
        }
      }

      std::vector<ClientUpdate> updates;
      updates.reserve(locals.size());
      for (auto& l : locals) {
        updates.push_back(std::move(l.update));
        result.clients[l.client.id] = std::move(l.client);
      }
      result.server = server_aggregate(result.server, updates, cfg);
      if (!all_finite(result.server.x)) {
        result.aborted = true;
        result.message = "non-finite server parameters after round " + std::to_string(r);
        return result;
      }
      if (opts.on_round) opts.on_round(result.server, result.clients);
    }
    RoundTrace final_record =
        measure(problem, result.server.x, metric_exponent(cfg, running_kappa));
    final_record.round = static_cast<std::int64_t>(opts.rounds);
    final_record.step = 0;
    final_record.running_kappa = running_kappa;
    emit(final_record);
  } catch (const NumericalError& e) {
    result.aborted = true;
    result.message = "numerical failure in round " + std::to_string(r) + ": " + e.what();
  }
  return result;
}

}  // namespace fedlab

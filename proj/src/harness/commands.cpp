#include "fedlab/harness/commands.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

#include "fedlab/error.hpp"
#include "fedlab/harness/invariants.hpp"
#include "fedlab/harness/trace_io.hpp"

namespace fedlab::harness {

namespace fs = std::filesystem;

namespace {

std::size_t parse_workers(const std::string& text, const std::string& origin) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != text.size() || v == 0)
    throw ConfigError(origin + ": expected a positive integer, got '" + text + "'");
  return static_cast<std::size_t>(v);
}

ExperimentConfig load_with_overrides(const Overrides& o) {
  if (!o.config) throw ConfigError("--config is required");
  ExperimentConfig cfg = load_config(*o.config);
  apply_overrides(cfg, o);
  return cfg;
}

// Maps an exception from configuration or problem construction to an exit code.
int report(const std::exception& e, std::ostream& err) {
  err << "error: " << e.what() << '\n';
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const NumericalError*>(&e)) return kExitNumerical;
  return kExitUsage;
}

std::string cell_value(const std::optional<double>& v) { return v ? format_real(*v) : ""; }

}  // namespace

void apply_overrides(ExperimentConfig& cfg, const Overrides& o) {
  if (const char* env = std::getenv(kWorkersEnv); env && *env)
    cfg.round.workers = parse_workers(env, kWorkersEnv);
  if (o.workers) {
    if (*o.workers == 0) throw ConfigError("--workers: must be positive");
    cfg.round.workers = *o.workers;
  }
  if (o.seed) {
    cfg.round.seed = *o.seed;
    cfg.seeds = {*o.seed};
  }
  if (o.out) cfg.output = *o.out;
}

double dual_grad(const RoundTrace& t, const NormKind& dual) {
  switch (dual.tag()) {
    case NormKind::Tag::Trace: return t.grad_trace;
    case NormKind::Tag::Spectral: return t.grad_spectral;
    default: return t.grad_frobenius;
  }
}

RunResult run_to_directory(const ExperimentConfig& cfg, const RoundConfig& rc,
                           const Problem& problem, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream trace(dir / "trace.jsonl", std::ios::binary);
  if (!trace) throw Error("cannot write " + (dir / "trace.jsonl").string());
  RunOptions opts;
  opts.rounds = cfg.rounds;
  opts.cadence = cfg.cadence;
  opts.track_kappa = cfg.track_kappa;
  opts.wallclock = cfg.wallclock;
  opts.on_record = [&](const RoundTrace& t) { trace << emit_jsonl(t) << '\n'; };
  RunResult result = run(rc, problem, opts);
  trace.close();
  write_summary_csv(dir / "summary.csv", result.traces);
  return result;
}

int cli_run(const Overrides& o, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg;
  std::unique_ptr<Problem> problem;
  try {
    cfg = load_with_overrides(o);
    problem = make_problem(cfg.problem, cfg.round.clients, cfg.round.seed);
    if (problem->num_clients() != cfg.round.clients)
      throw ConfigError("clients: problem has " + std::to_string(problem->num_clients()) +
                        " clients");
  } catch (const std::exception& e) {
    return report(e, err);
  }

  RunResult result;
  try {
    result = run_to_directory(cfg, cfg.round, *problem, cfg.output);
  } catch (const std::exception& e) {
    return report(e, err);
  }
  out << "wrote " << (cfg.output / "trace.jsonl").string() << " (" << result.traces.size()
      << " records) and " << (cfg.output / "summary.csv").string() << '\n';
  if (!result.traces.empty()) {
    const RoundTrace& last = result.traces.back();
    const NormKind dual = dual_metric_norm(cfg.round);
    out << "final round " << last.round << ": loss " << format_real(last.loss) << ", "
        << dual.name() << "-norm gradient " << format_real(dual_grad(last, dual)) << '\n';
  }
  out << "rho (trace/frobenius bound) " << format_real(problem->dual_frobenius_ratio()) << '\n';
  if (result.aborted) {
    err << "error: run aborted: " << result.message << '\n';
    return kExitNumerical;
  }
  return kExitOk;
}

RoundConfig GridCell::apply(const RoundConfig& base) const {
  RoundConfig rc = base;
  rc.eta = eta;
  if (eta_vector) rc.eta_vector = eta_vector;
  rc.alpha = alpha;
  if (ns_iters) {
    NsConfig ns = rc.direction.ns();
    ns.iters = *ns_iters;
    rc.direction = DirectionMap::newton_schulz(ns);
  }
  return rc;
}

std::vector<GridCell> expand_grid(const ExperimentConfig& cfg) {
  if (!cfg.grid) throw ConfigError("grid: missing (required by the grid command)");
  const GridSpec& g = *cfg.grid;
  const RoundConfig& base = cfg.round;
  const std::vector<double> etas = g.eta.empty() ? std::vector<double>{base.eta} : g.eta;
  std::vector<std::optional<double>> eta_vectors;
  if (g.eta_vector.empty()) eta_vectors.push_back(base.eta_vector);
  for (double v : g.eta_vector) eta_vectors.emplace_back(v);
  const std::vector<double> alphas = g.alpha.empty() ? std::vector<double>{base.alpha} : g.alpha;
  std::vector<std::optional<int>> iters;
  if (g.ns_iters.empty()) iters.push_back(std::nullopt);
  for (int t : g.ns_iters) iters.emplace_back(t);

  std::vector<GridCell> cells;
  for (double eta : etas)
    for (const auto& ev : eta_vectors)
      for (double alpha : alphas)
        for (const auto& t : iters) cells.push_back(GridCell{cells.size(), eta, ev, alpha, t});
  return cells;
}

RunScore score_run(const std::vector<RoundTrace>& traces, const NormKind& dual) {
  if (traces.empty()) return {std::nan(""), std::nan("")};
  double sum = 0.0;
  for (const auto& t : traces) sum += dual_grad(t, dual);
  return {traces.back().loss, sum / static_cast<double>(traces.size())};
}

fs::path cell_directory(const fs::path& out, std::size_t cell) {
  char name[32];
  std::snprintf(name, sizeof name, "cell_%03zu", cell);
  return out / name;
}

fs::path run_directory(const fs::path& out, std::size_t cell, std::uint64_t seed) {
  return cell_directory(out, cell) / ("seed_" + std::to_string(seed));
}

int cli_grid(const Overrides& o, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg;
  std::vector<GridCell> cells;
  std::map<std::uint64_t, std::unique_ptr<Problem>> problems;
  try {
    cfg = load_with_overrides(o);
    cells = expand_grid(cfg);
    for (const GridCell& c : cells) c.apply(cfg.round).validate();
    for (std::uint64_t seed : cfg.seeds)
      if (!problems.count(seed))
        problems[seed] = make_problem(cfg.problem, cfg.round.clients, seed);
  } catch (const std::exception& e) {
    return report(e, err);
  }

  struct Job {
    std::size_t cell;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& c : cells)
    for (std::uint64_t s : cfg.seeds) jobs.push_back(Job{c.index, s});

  const NormKind dual = dual_metric_norm(cfg.round);
  std::vector<RunScore> scores(jobs.size());
  std::vector<bool> aborted(jobs.size(), false);
  std::vector<std::string> failures(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        RoundConfig rc = cells[jobs[j].cell].apply(cfg.round);
        rc.seed = jobs[j].seed;
        rc.workers = 1;
        const RunResult r = run_to_directory(cfg, rc, *problems.at(jobs[j].seed),
                                             run_directory(cfg.output, jobs[j].cell, jobs[j].seed));
        scores[j] = score_run(r.traces, dual);
        aborted[j] = r.aborted;
        if (r.aborted) failures[j] = r.message;
      } catch (const std::exception& e) {
        aborted[j] = true;
        failures[j] = e.what();
        scores[j] = {std::nan(""), std::nan("")};
      }
    }
  };
  {
    const std::size_t nthreads = std::max<std::size_t>(1, std::min(cfg.round.workers, jobs.size()));
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < nthreads; ++t) pool.emplace_back(worker);
    worker();
  }

  std::vector<LeaderboardRow> rows;
  for (const GridCell& c : cells) {
    LeaderboardRow row{c};
    double loss = 0.0, grad = 0.0;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      if (jobs[j].cell != c.index) continue;
      ++row.runs;
      row.aborted += aborted[j] ? 1 : 0;
      loss += aborted[j] ? std::nan("") : scores[j].final_loss;
      grad += aborted[j] ? std::nan("") : scores[j].mean_dual_grad;
    }
    row.final_loss = loss / static_cast<double>(row.runs);
    row.mean_dual_grad = grad / static_cast<double>(row.runs);
    rows.push_back(row);
  }
  LeaderboardRow* best = nullptr;
  for (auto& r : rows)
    if (std::isfinite(r.final_loss) && (!best || r.final_loss < best->final_loss)) best = &r;
  if (best) best->selected = true;

  const fs::path board = cfg.output / "leaderboard.csv";
  {
    std::ofstream csv(board);
    if (!csv) {
      err << "error: cannot write " << board.string() << '\n';
      return kExitUsage;
    }
    csv << kLeaderboardHeader << '\n';
    for (const auto& r : rows)
      csv << r.cell.index << ',' << format_real(r.cell.eta) << ',' << cell_value(r.cell.eta_vector)
          << ',' << format_real(r.cell.alpha) << ','
          << (r.cell.ns_iters ? std::to_string(*r.cell.ns_iters) : "") << ',' << r.runs << ','
          << r.aborted << ',' << format_real(r.final_loss) << ','
          << format_real(r.mean_dual_grad) << ',' << (r.selected ? 1 : 0) << '\n';
  }

  for (std::size_t j = 0; j < jobs.size(); ++j)
    if (aborted[j])
      err << "warning: cell " << jobs[j].cell << " seed " << jobs[j].seed << " aborted: "
          << failures[j] << '\n';
  out << cells.size() << " cells x " << cfg.seeds.size() << " seeds; leaderboard "
      << board.string() << '\n';
  if (!best) {
    err << "error: every grid run aborted\n";
    return kExitNumerical;
  }
  out << "selected cell " << best->cell.index << ": eta " << format_real(best->cell.eta)
      << ", alpha " << format_real(best->cell.alpha) << ", final loss "
      << format_real(best->final_loss) << '\n';
  return kExitOk;
}

int cli_verify(const Overrides& o, std::ostream& out, std::ostream& err) {
  VerifyOptions opts;
  try {
    if (o.config) {
      const ExperimentConfig cfg = load_config(*o.config);
      if (cfg.round.direction.mode() == DirectionMap::Mode::NewtonSchulz)
        opts.ns = cfg.round.direction.ns();
    }
  } catch (const std::exception& e) {
    return report(e, err);
  }
  if (o.seed) opts.seed = *o.seed;

  const auto results = run_invariants(opts);
  std::size_t width = 9;
  for (const auto& r : results) width = std::max(width, r.name.size());
  out << std::left << std::setw(static_cast<int>(width)) << "invariant" << "  result  detail\n";
  std::size_t failed = 0;
  for (const auto& r : results) {
    out << std::left << std::setw(static_cast<int>(width)) << r.name << "  "
        << (r.pass ? "PASS" : "FAIL") << "    " << r.detail << '\n';
    if (!r.pass) ++failed;
  }
  if (failed) {
    err << failed << " invariant(s) failed:";
    for (const auto& r : results)
      if (!r.pass) err << ' ' << r.name;
    err << '\n';
    return kExitInvariant;
  }
  out << "all " << results.size() << " invariants passed\n";
  return kExitOk;
}

int cli_counterexample(const CounterexampleArgs& args, std::ostream& out, std::ostream& err) {
  std::unique_ptr<CounterexampleProblem> problem;
  RoundConfig rc;
  try {
    if (!(args.alpha > 0.0 && args.alpha <= 1.0)) throw ConfigError("--alpha: must lie in (0, 1]");
    problem = std::make_unique<CounterexampleProblem>(args.a, -args.a / 4.0);
    rc.clients = 2;
    rc.sampled = 2;
    rc.local_steps = 1;
    rc.eta = args.eta;
    rc.alpha = args.alpha;
    rc.validate();
  } catch (const std::exception& e) {
    return report(e, err);
  }

  RunOptions opts;
  opts.rounds = args.rounds;
  std::vector<double> grad2[2];
  const Algorithm algos[2] = {Algorithm::LocalMuon, Algorithm::FedMuon};
  for (int i = 0; i < 2; ++i) {
    rc.algorithm = algos[i];
    const RunResult r = run(rc, *problem, opts);
    if (r.aborted) {
      err << "error: " << to_string(algos[i]) << " aborted: " << r.message << '\n';
      return kExitNumerical;
    }
    for (const auto& t : r.traces) grad2[i].push_back(t.grad_frobenius * t.grad_frobenius);
  }

  const double floor = problem->stagnation_floor();
  out << "a = " << format_real(args.a) << ", alpha = " << format_real(args.alpha)
      << ", eta = " << format_real(args.eta) << ", floor a^2/16 = " << format_real(floor) << '\n';
  out << "round,localmuon_grad2,fedmuon_grad2,floor\n";
  for (std::size_t r = 0; r < grad2[0].size(); ++r)
    out << r << ',' << format_real(grad2[0][r]) << ',' << format_real(grad2[1][r]) << ','
        << format_real(floor) << '\n';
  return kExitOk;
}

}  // namespace fedlab::harness

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <sys/wait.h>

#include "json.hpp"

#include "fedlab/error.hpp"
#include "fedlab/harness/commands.hpp"
#include "fedlab/harness/config.hpp"
#include "fedlab/harness/invariants.hpp"
#include "fedlab/harness/trace_io.hpp"

using namespace fedlab;
using namespace fedlab::harness;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fedlab_test_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path write_json(const fs::path& p, const json& j) {
  std::ofstream(p) << j.dump(2);
  return p;
}

std::string config_error(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(FEDLAB_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

const json kQuadratic = {{"problem", {{"type", "matrix_quadratic"}, {"k", 6}, {"d1", 4}, {"d2", 3}}},
                         {"clients", 4},
                         {"sampled", 2},
                         {"local_steps", 2},
                         {"rounds", 8},
                         {"noise_sigma", 0.05},
                         {"seed", 3}};

}  // namespace

TEST(Config, DefaultsMirrorExperimentalSetup) {
  const ExperimentConfig c = parse_config({{"problem", {{"type", "toy_classification"}}}});
  EXPECT_EQ(c.round.clients, 16u);
  EXPECT_EQ(c.round.sampled, 8u);
  EXPECT_EQ(c.round.local_steps, 5u);
  EXPECT_EQ(c.round.algorithm, Algorithm::FedMuon);
  EXPECT_EQ(c.round.direction.mode(), DirectionMap::Mode::Exact);
  EXPECT_EQ(c.rounds, 100u);
  EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{0});
  EXPECT_FALSE(c.grid.has_value());
}

TEST(Config, CounterexampleDefaults) {
  const ExperimentConfig c = parse_config({{"problem", {{"type", "counterexample"}, {"a", 2.0}}}});
  EXPECT_EQ(c.round.clients, 2u);
  EXPECT_EQ(c.round.sampled, 2u);
  EXPECT_EQ(c.round.local_steps, 1u);
  const auto p = make_problem(c.problem, 2, 0);
  EXPECT_EQ(p->initial_point()[0](0, 0), -0.5);
}

TEST(Config, FullSchemaParses) {
  const json j = {
      {"problem", {{"type", "matrix_quadratic"}, {"k", 5}, {"d1", 3}, {"d2", 2}, {"seed", 9}}},
      {"algorithm", "scaffold"},
      {"clients", 6},
      {"sampled", 3},
      {"local_steps", 4},
      {"rounds", 12},
      {"eta", 0.02},
      {"eta_vector", 0.2},
      {"alpha", 0.3},
      {"lmo", {{"mode", "newton_schulz"}, {"iters", 3}, {"coefficients", {2.0, -1.5, 0.5}}}},
      {"step_scaling", "none"},
      {"base_optimizer", {{"type", "adam"}, {"beta1", 0.8}}},
      {"noise_sigma", 0.1},
      {"momentum_init", "stochastic_gradient"},
      {"seed", 4},
      {"seeds", {4, 5}},
      {"metrics", {{"cadence", 3}, {"track_kappa", false}, {"wallclock", true}}},
      {"grid", {{"eta", {0.1, 0.01}}, {"ns_iters", {1, 2}}}},
      {"output", "somewhere"},
      {"workers", 2}};
  const ExperimentConfig c = parse_config(j);
  EXPECT_EQ(c.round.algorithm, Algorithm::Scaffold);
  EXPECT_EQ(c.round.direction.ns().iters, 3);
  EXPECT_EQ(c.round.direction.ns().a, 2.0);
  EXPECT_EQ(c.round.scaling, StepScaling::None);
  EXPECT_EQ(c.round.base_optimizer, BaseOptimizer::Adam);
  EXPECT_EQ(c.round.adam_beta1, 0.8);
  EXPECT_EQ(c.round.momentum_init, MomentumInit::StochasticGradient);
  EXPECT_EQ(c.round.vector_eta(), 0.2);
  EXPECT_EQ(c.cadence, 3u);
  EXPECT_FALSE(c.track_kappa);
  EXPECT_TRUE(c.wallclock);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{4, 5}));
  EXPECT_EQ(c.problem.seed, 9u);
  EXPECT_EQ(c.output, "somewhere");
  EXPECT_EQ(expand_grid(c).size(), 4u);
}

TEST(Config, ErrorListsEveryOffendingKey) {
  const std::string msg = config_error({{"problem", {{"type", "matrix_quadratic"}, {"dd", 3}}},
                                        {"algo", "fedmuon"},
                                        {"clients", -1},
                                        {"lmo", {{"mode", "nope"}}},
                                        {"metrics", {{"cadense", 2}}}});
  for (const char* key : {"problem.dd", "algo", "clients", "lmo.mode", "metrics.cadense"})
    EXPECT_NE(msg.find(key), std::string::npos) << key << " missing from: " << msg;
}

TEST(Config, RejectsBadValues) {
  EXPECT_NE(config_error({{"problem", {{"type", "nope"}}}}), "");
  EXPECT_NE(config_error(json::object()), "");
  EXPECT_NE(config_error({{"problem", {{"type", "toy_classification"}}}, {"alpha", 1.5}}), "");
  EXPECT_NE(config_error({{"problem", {{"type", "toy_classification"}}}, {"sampled", 20}}), "");
  EXPECT_NE(config_error({{"problem", {{"type", "toy_classification"}}}, {"grid", json::object()}}), "");
  EXPECT_NE(config_error({{"problem", {{"type", "toy_classification"}}}, {"grid", {{"ns_iters", {1}}}}}),
            "");
  EXPECT_NE(config_error({{"problem", {{"type", "counterexample"}}}, {"clients", 3}}), "");
  EXPECT_NE(config_error({{"problem", {{"type", "toy_classification"}}}, {"eta", "fast"}}), "");
}

TEST(Config, LoadReportsUnreadableAndInvalidFiles) {
  const fs::path dir = scratch("load");
  EXPECT_THROW(load_config(dir / "missing.json"), ConfigError);
  std::ofstream(dir / "broken.json") << "{ not json";
  EXPECT_THROW(load_config(dir / "broken.json"), ConfigError);
}

TEST(Config, DualMetricNorm) {
  RoundConfig rc;
  EXPECT_EQ(dual_metric_norm(rc), NormKind::trace());
  rc.direction = DirectionMap::newton_schulz(NsConfig{});
  EXPECT_EQ(dual_metric_norm(rc), NormKind::trace());
  rc.direction = DirectionMap::exact(NormKind::frobenius());
  EXPECT_EQ(dual_metric_norm(rc), NormKind::frobenius());
  rc.algorithm = Algorithm::FedAvg;
  EXPECT_EQ(dual_metric_norm(rc), NormKind::frobenius());
}

TEST(Overrides, FlagBeatsEnvironmentBeatsFile) {
  ExperimentConfig c = parse_config({{"problem", {{"type", "counterexample"}}}, {"workers", 2}});
  ::setenv(kWorkersEnv, "3", 1);
  apply_overrides(c, {});
  EXPECT_EQ(c.round.workers, 3u);
  Overrides o;
  o.workers = 5;
  o.seed = 11;
  o.out = "elsewhere";
  apply_overrides(c, o);
  EXPECT_EQ(c.round.workers, 5u);
  EXPECT_EQ(c.round.seed, 11u);
  EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{11});
  EXPECT_EQ(c.output, "elsewhere");
  ::setenv(kWorkersEnv, "many", 1);
  EXPECT_THROW(apply_overrides(c, {}), ConfigError);
  ::unsetenv(kWorkersEnv);
}

TEST(TraceIo, EmitsDocumentedSchema) {
  RoundTrace t;
  t.round = 3;
  t.step = 1;
  t.loss = 0.5;
  t.grad_frobenius = 0.25;
  t.grad_trace = 0.375;
  t.grad_spectral = 0.125;
  t.grad_schatten_phat = 0.3;
  t.phat = 1.5;
  t.running_kappa = 0.1;
  EXPECT_EQ(emit_jsonl(t),
            "{\"round\":3,\"step\":1,\"loss\":0.5,\"grad_frobenius\":0.25,\"grad_trace\":0.375,"
            "\"grad_spectral\":0.125,\"grad_schatten_phat\":0.3,\"phat\":1.5,\"running_kappa\":0.1,"
            "\"accuracy\":null,\"wallclock_ns\":0}");
}

TEST(TraceIo, RoundTripIsExact) {
  RoundTrace t;
  t.round = 123456789;
  t.step = 4;
  t.loss = 0.1 + 0.2;
  t.grad_frobenius = 1.0 / 3.0;
  t.grad_trace = 2.0 / 3.0;
  t.grad_spectral = 5e-324;
  t.grad_schatten_phat = 1e300;
  t.phat = 1.0000000000000002;
  t.accuracy = 0.9375;
  t.wallclock_ns = 987654321012;
  EXPECT_EQ(parse_jsonl(emit_jsonl(t)), t);
  const auto c = check_trace_records(61);
  EXPECT_TRUE(c.pass) << c.detail;
}

TEST(TraceIo, ParseRejectsMalformedRecords) {
  EXPECT_THROW(parse_jsonl("{\"round\":1}"), ConfigError);
  EXPECT_THROW(parse_jsonl("[1,2]"), ConfigError);
  EXPECT_THROW(parse_jsonl("{oops"), ConfigError);
}

TEST(TraceIo, SummaryKeepsStepZeroRows) {
  RoundTrace a, b, c;
  a.loss = 1.0 / 3.0;
  b.step = 1;
  c.round = 1;
  c.accuracy = 0.5;
  std::ostringstream os;
  write_summary_csv(os, {a, b, c});
  EXPECT_EQ(os.str(), std::string(kSummaryHeader) + "\n" +
                          "0,0.33333333333333331,0,0,0,0,2,,\n"
                          "1,0,0,0,0,0,2,,0.5\n");
}

TEST(CliRun, WritesTraceAndSummary) {
  const fs::path dir = scratch("run");
  write_json(dir / "cfg.json", kQuadratic);
  Overrides o;
  o.config = dir / "cfg.json";
  o.out = dir / "out";
  std::ostringstream out, err;
  ASSERT_EQ(cli_run(o, out, err), kExitOk) << err.str();
  const auto traces = read_jsonl(dir / "out" / "trace.jsonl");
  EXPECT_EQ(traces.size(), 8u * 2u + 1u);
  const auto rows = read_csv(dir / "out" / "summary.csv");
  EXPECT_EQ(rows.size(), 1u + 8u + 1u);
}

TEST(CliRun, MalformedConfigWritesNothing) {
  const fs::path dir = scratch("malformed");
  json bad = kQuadratic;
  bad["bogus"] = 1;
  write_json(dir / "cfg.json", bad);
  Overrides o;
  o.config = dir / "cfg.json";
  o.out = dir / "out";
  std::ostringstream out, err;
  EXPECT_EQ(cli_run(o, out, err), kExitConfig);
  EXPECT_NE(err.str().find("bogus"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(CliRun, NumericalAbortHasDistinctExitCode) {
  const fs::path dir = scratch("abort");
  json cfg = kQuadratic;
  cfg["algorithm"] = "fedavg";
  cfg["eta"] = 1000.0;
  cfg["rounds"] = 100;
  write_json(dir / "cfg.json", cfg);
  Overrides o;
  o.config = dir / "cfg.json";
  o.out = dir / "out";
  std::ostringstream out, err;
  EXPECT_EQ(cli_run(o, out, err), kExitNumerical);
  EXPECT_NE(kExitNumerical, kExitConfig);
  // Records emitted before the abort are kept and parse cleanly.
  EXPECT_NO_THROW(read_jsonl(dir / "out" / "trace.jsonl"));
}

TEST(CliRun, RerunIsByteIdentical) {
  const fs::path dir = scratch("determinism");
  json cfg = kQuadratic;
  cfg["lmo"] = {{"mode", "newton_schulz"}, {"iters", 2}};
  write_json(dir / "cfg.json", cfg);
  Overrides o;
  o.config = dir / "cfg.json";
  std::ostringstream out, err;
  o.out = dir / "a";
  ASSERT_EQ(cli_run(o, out, err), kExitOk);
  o.out = dir / "b";
  o.workers = 3;
  ASSERT_EQ(cli_run(o, out, err), kExitOk);
  EXPECT_EQ(slurp(dir / "a" / "trace.jsonl"), slurp(dir / "b" / "trace.jsonl"));
  o.seed = 99;
  o.out = dir / "c";
  ASSERT_EQ(cli_run(o, out, err), kExitOk);
  EXPECT_NE(slurp(dir / "a" / "trace.jsonl"), slurp(dir / "c" / "trace.jsonl"));
}

TEST(CliRun, CounterexampleMatchesGoldenFiles) {
  const fs::path dir = scratch("golden");
  for (const std::string name : {"counterexample_localmuon", "counterexample_fedmuon"}) {
    Overrides o;
    o.config = fs::path(FEDLAB_GOLDEN_DIR) / (name + ".json");
    o.out = dir / name;
    std::ostringstream out, err;
    ASSERT_EQ(cli_run(o, out, err), kExitOk) << err.str();
    EXPECT_EQ(slurp(dir / name / "trace.jsonl"),
              slurp(fs::path(FEDLAB_GOLDEN_DIR) / (name + ".jsonl")))
        << name;
  }
  // LocalMuon: constant gradient norm in the summary.
  const auto rows = read_csv(dir / "counterexample_localmuon" / "summary.csv");
  for (std::size_t r = 1; r < rows.size(); ++r) EXPECT_EQ(rows[r][2], "0.25");
  // FedMuon: final gradient at least 10x below the initial one.
  const auto fed = read_jsonl(dir / "counterexample_fedmuon" / "trace.jsonl");
  EXPECT_LT(fed.back().grad_frobenius * 10.0, fed.front().grad_frobenius);
}

TEST(CliGrid, LeaderboardAveragesPerRunFiles) {
  const fs::path dir = scratch("grid");
  json cfg = kQuadratic;
  cfg["seeds"] = {1, 2};
  cfg["grid"] = {{"eta", {0.01, 0.001}}, {"alpha", {0.1, 0.5}}};
  cfg["workers"] = 3;
  write_json(dir / "cfg.json", cfg);
  Overrides o;
  o.config = dir / "cfg.json";
  o.out = dir / "out";
  std::ostringstream out, err;
  ASSERT_EQ(cli_grid(o, out, err), kExitOk) << err.str();

  const auto rows = read_csv(dir / "out" / "leaderboard.csv");
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0].size(), 10u);
  const NormKind dual = NormKind::trace();
  std::size_t selected = 0;
  double best = 1e300;
  std::size_t best_cell = 0;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const std::size_t cell = std::stoul(rows[r][0]);
    EXPECT_EQ(rows[r][5], "2");
    double loss = 0.0, grad = 0.0;
    for (std::uint64_t seed : {1, 2}) {
      const auto traces = read_jsonl(run_directory(dir / "out", cell, seed) / "trace.jsonl");
      const RunScore s = score_run(traces, dual);
      loss += s.final_loss / 2.0;
      grad += s.mean_dual_grad / 2.0;
    }
    EXPECT_DOUBLE_EQ(std::stod(rows[r][7]), loss);
    EXPECT_DOUBLE_EQ(std::stod(rows[r][8]), grad);
    if (loss < best) {
      best = loss;
      best_cell = cell;
    }
    if (rows[r][9] == "1") ++selected;
  }
  EXPECT_EQ(selected, 1u);
  EXPECT_EQ(rows[best_cell + 1][9], "1");
}

TEST(CliGrid, SingletonGridMatchesRun) {
  const fs::path dir = scratch("singleton");
  json cfg = kQuadratic;
  cfg["eta"] = 0.004;
  cfg["alpha"] = 0.2;
  write_json(dir / "run.json", cfg);
  cfg["grid"] = {{"eta", {0.004}}, {"alpha", {0.2}}};
  write_json(dir / "grid.json", cfg);
  std::ostringstream out, err;
  Overrides o;
  o.config = dir / "run.json";
  o.out = dir / "run";
  ASSERT_EQ(cli_run(o, out, err), kExitOk);
  o.config = dir / "grid.json";
  o.out = dir / "grid";
  ASSERT_EQ(cli_grid(o, out, err), kExitOk);
  EXPECT_EQ(slurp(dir / "run" / "trace.jsonl"),
            slurp(run_directory(dir / "grid", 0, 3) / "trace.jsonl"));
}

TEST(CliGrid, StepsizeGridHasFourCellsPerSeed) {
  const ExperimentConfig c = parse_config(
      {{"problem", {{"type", "toy_classification"}}},
       {"grid", {{"eta", {0.001, 0.0001}}, {"eta_vector", {0.1, 0.01}}}}});
  const auto cells = expand_grid(c);
  ASSERT_EQ(cells.size(), 4u);
  EXPECT_EQ(cells[1].eta, 0.001);
  EXPECT_EQ(cells[1].eta_vector, 0.01);
  EXPECT_EQ(cells[2].eta, 0.0001);
}

TEST(CliGrid, MissingGridIsConfigError) {
  const fs::path dir = scratch("nogrid");
  write_json(dir / "cfg.json", kQuadratic);
  Overrides o;
  o.config = dir / "cfg.json";
  o.out = dir / "out";
  std::ostringstream out, err;
  EXPECT_EQ(cli_grid(o, out, err), kExitConfig);
  EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(CliCounterexample, PrintsFloorAndBothColumns) {
  std::ostringstream out, err;
  ASSERT_EQ(cli_counterexample({2.0, 0.5, 30, 0.01}, out, err), kExitOk);
  const std::string s = out.str();
  EXPECT_NE(s.find("floor a^2/16 = 0.25"), std::string::npos);
  std::istringstream lines(s);
  std::string line;
  std::getline(lines, line);
  std::getline(lines, line);
  EXPECT_EQ(line, "round,localmuon_grad2,fedmuon_grad2,floor");
  double last_fed = 1.0;
  int rows = 0;
  while (std::getline(lines, line)) {
    std::stringstream ss(line);
    std::string r, local, fed, floor;
    std::getline(ss, r, ',');
    std::getline(ss, local, ',');
    std::getline(ss, fed, ',');
    std::getline(ss, floor, ',');
    EXPECT_EQ(local, "0.25");
    last_fed = std::stod(fed);
    ++rows;
  }
  EXPECT_EQ(rows, 31);
  EXPECT_LT(last_fed, 0.25);
  EXPECT_EQ(cli_counterexample({1.0, 1.5, 3, 0.01}, out, err), kExitConfig);
}

TEST(CliVerify, FreshSuitePasses) {
  std::ostringstream out, err;
  EXPECT_EQ(cli_verify({}, out, err), kExitOk) << out.str() << err.str();
  EXPECT_NE(out.str().find("fedproto.localmuon_stagnation"), std::string::npos);
}

TEST(CliVerify, PerturbedCoefficientsFailPolynomialBound) {
  const fs::path dir = scratch("verify");
  write_json(dir / "cfg.json",
             {{"problem", {{"type", "counterexample"}}},
              {"lmo", {{"mode", "newton_schulz"}, {"coefficients", {2.0, -1.25, 0.375}}}}});
  Overrides o;
  o.config = dir / "cfg.json";
  std::ostringstream out, err;
  EXPECT_EQ(cli_verify(o, out, err), kExitInvariant);
  EXPECT_NE(err.str().find("lmo.ns_polynomial_bound"), std::string::npos);
}

TEST(Executable, ExitCodes) {
  const fs::path dir = scratch("exe");
  write_json(dir / "bad.json", {{"problem", {{"type", "counterexample"}}}, {"zzz", 1}});
  EXPECT_EQ(run_cli("run --config " + (dir / "bad.json").string() + " --out " +
                    (dir / "out").string()),
            kExitConfig);
  EXPECT_FALSE(fs::exists(dir / "out"));
  EXPECT_EQ(run_cli("run"), kExitUsage);
  EXPECT_EQ(run_cli("frobnicate"), kExitUsage);
  EXPECT_EQ(run_cli("counterexample --a 1 --rounds 5"), kExitOk);
  EXPECT_EQ(run_cli("--help"), kExitOk);
}

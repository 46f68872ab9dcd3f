// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fedlab/fedproto.hpp"
#include "fedlab/harness/commands.hpp"
#include "fedlab/harness/config.hpp"
#include "fedlab/harness/invariants.hpp"

using namespace fedlab;
using namespace fedlab::harness;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kSeed = 20240601;

struct Criterion {
  int id;
  std::string title;
  double budget_s;  // runtime bound, 0 when none is stated
  std::function<CheckOutcome()> body;
};

CheckOutcome both(const CheckOutcome& a, const CheckOutcome& b) {
  return {a.pass && b.pass, a.detail + "; " + b.detail};
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

RunResult run_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  RoundConfig rc = cfg.round;
  rc.seed = seed;
  const auto problem = make_problem(cfg.problem, rc.clients, seed);
  RunOptions opts;
  opts.rounds = cfg.rounds;
  opts.cadence = cfg.cadence;
  opts.track_kappa = cfg.track_kappa;
  return run(rc, *problem, opts);
}

// Best over the stepsize grid of the mean trace-norm gradient over the last
// tenth of the rounds. Diverged runs count as +inf.
double tail_gradient(const std::string& algorithm, double heterogeneity, std::uint64_t seed) {
  constexpr std::size_t kRounds = 300;
  const std::vector<double> etas = {1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001, 0.0003};
  double best = std::numeric_limits<double>::infinity();
  for (double eta : etas) {
    const ExperimentConfig cfg = parse_config(
        {{"problem", {{"type", "matrix_quadratic"}, {"heterogeneity", heterogeneity}}},
         {"algorithm", algorithm},
         {"clients", 8},
         {"sampled", 4},
         {"local_steps", 5},
         {"rounds", kRounds},
         {"eta", eta},
         {"alpha", 0.5},
         {"metrics", {{"track_kappa", false}}}});
    const RunResult res = run_config(cfg, seed);
    if (res.aborted) continue;
    double sum = 0.0;
    std::size_t count = 0;
    for (const RoundTrace& t : res.traces)
      if (t.round >= kRounds - kRounds / 10) {
        sum += t.grad_trace;
        ++count;
      }
    if (count > 0 && std::isfinite(sum)) best = std::min(best, sum / static_cast<double>(count));
  }
  return best;
}

CheckOutcome heterogeneity_trend() {
  CheckOutcome out;
  std::ostringstream detail;
  for (std::uint64_t seed : {1, 2, 3}) {
    const double het = tail_gradient("localmuon", 1.0, seed) / tail_gradient("fedmuon", 1.0, seed);
    const double hom = tail_gradient("localmuon", 0.0, seed) / tail_gradient("fedmuon", 0.0, seed);
    // The homogeneous gap is judged one-sided: LocalMuon must not trail by 1.5x.
    const bool ok = het >= 5.0 && hom < 1.5;
    out.pass = out.pass && ok;
    detail << "seed " << seed << ": local/fed " << fmt(het) << " (zeta>0), " << fmt(hom)
           << " (zeta=0)" << (ok ? "" : " <-") << "; ";
  }
  out.detail = detail.str();
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mad(const std::vector<double>& v) {
  const double m = median(v);
  std::vector<double> dev;
  for (double x : v) dev.push_back(std::abs(x - m));
  return median(dev);
}

CheckOutcome inexactness_trend() {
  const std::vector<int> iters = {0, 1, 2, 4};
  const std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<double> med, noise;
  std::ostringstream detail;
  for (int t : iters) {
    std::vector<double> finals;
    for (std::uint64_t seed : seeds) {
      double best = std::numeric_limits<double>::infinity();
      for (double eta : {0.001, 0.0001})
        for (double eta_vector : {0.1, 0.01}) {
          const ExperimentConfig cfg = parse_config(
              {{"problem", {{"type", "toy_classification"}}},
               {"algorithm", "fedmuon"},
               {"rounds", 150},
               {"eta", eta},
               {"eta_vector", eta_vector},
               {"lmo", {{"mode", "newton_schulz"}, {"iters", t}}},
               {"metrics", {{"cadence", 150}, {"track_kappa", false}}}});
          const RunResult res = run_config(cfg, seed);
          if (!res.aborted && !res.traces.empty())
            best = std::min(best, res.traces.back().loss);
        }
      finals.push_back(best);
    }
    med.push_back(median(finals));
    noise.push_back(1.4826 * mad(finals) / std::sqrt(static_cast<double>(seeds.size())));
    detail << "T=" << t << " median " << fmt(med.back()) << " (se " << fmt(noise.back()) << "); ";
  }
  CheckOutcome out;
  for (std::size_t i = 0; i + 1 < med.size(); ++i)
    if (med[i + 1] > med[i] + std::max(noise[i], noise[i + 1])) {
      out.pass = false;
      detail << "increase at T=" << iters[i + 1] << "; ";
    }
  const double first = med[0] - med[1];
  for (std::size_t i = 1; i + 1 < med.size(); ++i)
    if (!(first > med[i] - med[i + 1])) {
      out.pass = false;
      detail << "T=0->1 gain " << fmt(first) << " not largest; ";
    }
  out.detail = detail.str();
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

CheckOutcome cli_determinism() {
  const fs::path dir = fs::temp_directory_path() / "fedlab_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::vector<json> configs = {
      {{"problem", {{"type", "toy_classification"}}},
       {"rounds", 10},
       {"lmo", {{"mode", "newton_schulz"}, {"iters", 3}}},
       {"noise_sigma", 0.01},
       {"seed", 7}},
      {{"problem", {{"type", "matrix_quadratic"}}},
       {"algorithm", "scaffold"},
       {"base_optimizer", {{"type", "adam"}}},
       {"rounds", 20},
       {"noise_sigma", 0.1},
       {"seed", 7}}};
  CheckOutcome out;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const fs::path cfg = dir / ("cfg" + std::to_string(i) + ".json");
    std::ofstream(cfg) << configs[i].dump(2);
    std::string traces[2];
    for (int rep = 0; rep < 2; ++rep) {
      Overrides o;
      o.config = cfg;
      o.seed = 7;
      o.out = dir / ("out" + std::to_string(i) + "_" + std::to_string(rep));
      std::ostringstream sink, err;
      if (cli_run(o, sink, err) != kExitOk) return {false, "run failed: " + err.str()};
      traces[rep] = slurp(*o.out / "trace.jsonl");
    }
    const bool same = !traces[0].empty() && traces[0] == traces[1];
    out.pass = out.pass && same;
    out.detail += configs[i]["problem"]["type"].get<std::string>() + ": " +
                  std::to_string(traces[0].size()) + " bytes " + (same ? "identical" : "DIFFER") +
                  "; ";
  }
  fs::remove_all(dir);
  return out;
}

}  // namespace

int main() {
  const NsConfig analyzed = NsConfig::analyzed(0);
  const std::vector<Criterion> criteria = {
      {1, "localmuon stagnation", 1.0,
       [] { return check_localmuon_stagnation(10000, {0.25, 0.5, 1.0}); }},
      {2, "fedmuon escapes the floor", 5.0,
       [] { return check_fedmuon_escape(10000, {0.01, 0.001}, {0.25, 0.5, 1.0}); }},
      {3, "scaffold equivalence", 5.0, [] { return check_scaffold_equivalence(100, kSeed, 1e-10); }},
      {4, "spectral lmo pairing", 0.0, [] { return check_spectral_lmo(1000, kSeed, 1e-8); }},
      {5, "newton-schulz sandwich", 0.0,
       [&] { return check_ns_sandwich(analyzed, 1000, 12, kSeed, 1e-8); }},
      {6, "effective-p formula", 0.0, [] { return check_effective_p(); }},
      {7, "polynomial bound", 0.0, [&] { return check_ns_polynomial(analyzed, 100000, 1e-12); }},
      {8, "norm inequalities", 0.0, [] { return check_norm_inequalities(1000, kSeed, 1e-10); }},
      {9, "gradient oracle fidelity", 0.0,
       [] { return both(check_gradients(kSeed, 1e-5), check_noise_channel(20000, kSeed)); }},
      {10, "heterogeneity trend", 30.0, heterogeneity_trend},
      {11, "inexactness trend", 300.0, inexactness_trend},
      {12, "cli determinism", 0.0, cli_determinism},
  };

  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    CheckOutcome out;
    try {
      out = c.body();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::string timing = fmt(secs) + " s";
    if (c.budget_s > 0.0) {
      timing += " (budget " + fmt(c.budget_s) + " s)";
      if (secs > c.budget_s) {
        out.pass = false;
        out.detail += "; over runtime budget";
      }
    }
    if (!out.pass) ++failed;
    std::printf("criterion %2d %-28s %s  [%s]  %s\n", c.id, c.title.c_str(),
                out.pass ? "PASS" : "FAIL", timing.c_str(), out.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu criteria, %d failed\n", criteria.size(), failed);
  return failed == 0 ? 0 : 1;
}

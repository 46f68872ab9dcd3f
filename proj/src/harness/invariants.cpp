#include "fedlab/harness/invariants.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

#include "fedlab/error.hpp"
#include "fedlab/fedproto.hpp"
#include "fedlab/harness/trace_io.hpp"
#include "fedlab/linalg.hpp"
#include "fedlab/optim.hpp"
#include "fedlab/problems.hpp"

namespace fedlab::harness {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Mat gaussian(std::size_t r, std::size_t c, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Mat m(r, c);
  for (double& v : m.data()) v = g(rng);
  return m;
}

// Accumulates violations and the worst value of one monitored quantity.
class Tally {
 public:
  explicit Tally(std::string what) : what_(std::move(what)) {}
  void observe(double v) { worst_ = std::max(worst_, v); }
  void fail(const std::string& why) {
    if (failures_++ == 0) first_ = why;
  }
  void require(bool ok, const std::string& why) {
    if (!ok) fail(why);
  }
  CheckOutcome outcome(std::size_t cases) const {
    std::ostringstream os;
    os << cases << " cases, " << what_ << ' ' << fmt(worst_);
    if (failures_) os << "; " << failures_ << " violation(s), first: " << first_;
    return {failures_ == 0, os.str()};
  }

 private:
  std::string what_;
  double worst_ = 0.0;
  std::size_t failures_ = 0;
  std::string first_;
};

Params finite_difference(const Problem& p, std::size_t client, const Params& x) {
  Params fd = zeros_like(x);
  Params y = x;
  for (std::size_t l = 0; l < x.size(); ++l) {
    auto xs = x[l].data();
    auto ys = y[l].data();
    auto out = fd[l].data();
    for (std::size_t e = 0; e < xs.size(); ++e) {
      const double h = 1e-5 * std::max(1.0, std::abs(xs[e]));
      ys[e] = xs[e] + h;
      const double up = p.loss(client, y);
      ys[e] = xs[e] - h;
      const double down = p.loss(client, y);
      ys[e] = xs[e];
      out[e] = (up - down) / (2.0 * h);
    }
  }
  return fd;
}

RoundConfig counterexample_config(Algorithm algo, double eta, double alpha) {
  RoundConfig rc;
  rc.clients = 2;
  rc.sampled = 2;
  rc.local_steps = 1;
  rc.eta = eta;
  rc.alpha = alpha;
  rc.algorithm = algo;
  return rc;
}

MatrixQuadraticProblem small_quadratic(std::size_t clients, std::uint64_t seed) {
  MatrixQuadraticOptions o;
  o.clients = clients;
  o.seed = seed;
  return MatrixQuadraticProblem(o);
}

ToyClassificationProblem small_toy(std::size_t clients, std::uint64_t seed) {
  ToyClassificationOptions o;
  o.clients = clients;
  o.hidden = 5;
  o.beta = 0.5;
  o.data.samples = 120;
  o.data.feature_dim = 4;
  o.data.classes = 3;
  o.data.seed = seed;
  o.seed = seed;
  return ToyClassificationProblem(o);
}

std::string serialize_run(const RoundConfig& rc, const Problem& p, std::size_t rounds) {
  RunOptions opts;
  opts.rounds = rounds;
  std::string out;
  opts.on_record = [&](const RoundTrace& t) { out += emit_jsonl(t) + "\n"; };
  const RunResult r = run(rc, p, opts);
  if (r.aborted) throw NumericalError("run aborted: " + r.message);
  return out;
}

}  // namespace

Mat random_test_matrix(Rng& rng, std::size_t max_rows, std::size_t max_cols) {
  std::uniform_int_distribution<std::size_t> rows(1, max_rows), cols(1, max_cols);
  const std::size_t r = rows(rng), c = cols(rng);
  const std::size_t k = std::min(r, c);
  switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
    case 0:
      return gaussian(r, c, rng);
    case 1: {
      const std::size_t rank = std::uniform_int_distribution<std::size_t>(1, k)(rng);
      return matmul(gaussian(r, rank, rng), gaussian(rank, c, rng));
    }
    case 2: {
      // Singular spectrum spread over up to eight decades.
      const double decades = std::uniform_real_distribution<double>(0.0, 8.0)(rng);
      std::vector<double> s(k);
      for (std::size_t i = 0; i < k; ++i)
        s[i] = std::pow(10.0, -decades * static_cast<double>(i) / std::max<double>(1.0, k - 1.0));
      const SvdResult left = svd(gaussian(r, k, rng));
      const SvdResult right = svd(gaussian(k, c, rng));
      return matmul(matmul(left.u, Mat::diag(s)), right.vt);
    }
    default: {
      const double scale = std::pow(10.0, std::uniform_real_distribution<double>(-3.0, 2.0)(rng));
      return gaussian(r, c, rng) * scale;
    }
  }
}

CheckOutcome check_svd(std::size_t trials, std::uint64_t seed) {
  Rng rng = make_rng({seed, static_cast<std::uint64_t>(Stream::Verify), 1});
  Tally t("max relative residual");
  for (std::size_t i = 0; i < trials; ++i) {
    const Mat a = random_test_matrix(rng, 32, 48);
    const SvdResult f = svd(a);
    const double scale = std::max(frobenius_norm(a), 1e-300);
    const Mat recon = matmul(matmul(f.u, Mat::diag(f.s)), f.vt);
    const double res = frobenius_norm(recon - a) / scale;
    const std::size_t k = f.s.size();
    const double ortho_u = max_abs(matmul_tn(f.u, f.u) - Mat::identity(k));
    const double ortho_v = max_abs(gram_rows(f.vt) - Mat::identity(k));
    t.observe(std::max({res, ortho_u, ortho_v}));
    t.require(res <= 1e-10, "reconstruction residual " + fmt(res) + " for " + shape_str(a));
    t.require(ortho_u <= 1e-10 && ortho_v <= 1e-10, "orthonormality " + shape_str(a));
    for (std::size_t j = 0; j < k; ++j) {
      t.require(f.s[j] >= 0.0 && (j == 0 || f.s[j] <= f.s[j - 1]), "singular value order");
      double big = 0.0;
      for (std::size_t r = 0; r < f.u.rows(); ++r)
        if (std::abs(f.u(r, j)) > std::abs(big)) big = f.u(r, j);
      t.require(big >= 0.0, "sign convention in column " + std::to_string(j));
    }
  }
  return t.outcome(trials);
}

CheckOutcome check_norm_inequalities(std::size_t trials, std::uint64_t seed, double tol) {
  Rng rng = make_rng({seed, static_cast<std::uint64_t>(Stream::Verify), 2});
  Tally t("max relative excess");
  const std::vector<double> ps = {1.0, 1.25, 1.5, 2.0, 3.0, 4.0, 8.0};
  for (std::size_t i = 0; i < trials; ++i) {
    const Mat a = random_test_matrix(rng, 32, 48);
    const double f = norm(a, NormKind::frobenius());
    const double tr = norm(a, NormKind::trace());
    const double sp = norm(a, NormKind::spectral());
    const double root = std::sqrt(static_cast<double>(std::min(a.rows(), a.cols())));
    t.observe(std::max(f / tr - 1.0, tr / (root * f) - 1.0));
    t.require(f <= tr * (1.0 + tol), "frobenius > trace for " + shape_str(a));
    t.require(tr <= root * f * (1.0 + tol), "trace > sqrt(min dim) * frobenius for " + shape_str(a));
    double prev = tr;
    for (double p : ps) {
      const double v = norm(a, NormKind::schatten(p));
      t.require(v <= prev * (1.0 + tol), "schatten norm increased at p = " + fmt(p));
      prev = v;
    }
    t.require(sp <= prev * (1.0 + tol), "spectral norm above schatten-8");
  }
  return t.outcome(trials);
}

CheckOutcome check_spectral_lmo(std::size_t trials, std::uint64_t seed, double tol) {
  Rng rng = make_rng({seed, static_cast<std::uint64_t>(Stream::Verify), 3});
  Tally t("max deviation");
  for (std::size_t i = 0; i < trials; ++i) {
    const Mat g = random_test_matrix(rng, 32, 48);
    const Mat d = lmo_exact(g, NormKind::spectral());
    const double pair = std::abs(inner(g, d) + norm(g, NormKind::trace()));
    const double unit = std::abs(norm(d, NormKind::spectral()) - 1.0);
    t.observe(std::max(pair, unit));
    t.require(pair <= tol, "pairing off by " + fmt(pair) + " for " + shape_str(g));
    t.require(unit <= tol, "spectral norm of lmo off by " + fmt(unit));
  }
  const Mat zero(3, 4);
  t.require(lmo_exact(zero, NormKind::spectral()) == zero, "zero input must map to zero");
  return t.outcome(trials);
}

CheckOutcome check_frobenius_lmo(std::size_t trials, std::uint64_t seed, double tol) {
  Rng rng = make_rng({seed, static_cast<std::uint64_t>(Stream::Verify), 4});
  Tally t("max relative deviation");
  for (std::size_t i = 0; i < trials; ++i) {
    const Mat g = random_test_matrix(rng, 32, 48);
    const Mat d = lmo_exact(g, NormKind::frobenius());
    const double f = frobenius_norm(g);
    const double pair = std::abs(inner(g, d) + f) / f;
    const double unit = std::abs(frobenius_norm(d) - 1.0);
    t.observe(std::max(pair, unit));
    t.require(pair <= tol && unit <= tol, "frobenius lmo off for " + shape_str(g));
  }
  return t.outcome(trials);
}

CheckOutcome check_ns_polynomial(const NsConfig& ns, std::size_t points, double tol) {
  Tally t("max violation");
  const double sum = ns.a + ns.b + ns.c;
  t.observe(std::abs(sum - 1.0));
  t.require(std::abs(sum - 1.0) <= tol, "a + b + c = " + fmt(sum) + " (phi(1) != 1)");
  for (std::size_t i = 0; i <= points; ++i) {
    const double x = static_cast<double>(i) / static_cast<double>(points);
    const double gap = 1.0 - ns.phi(x);
    const double cap = std::pow(1.0 - x, 1.5);
    t.observe(std::max(-gap, gap - cap));
    if (gap < -tol) t.fail("1 - phi(" + fmt(x) + ") = " + fmt(gap) + " < 0");
    else if (gap > cap + tol) t.fail("1 - phi(" + fmt(x) + ") exceeds (1 - x)^1.5");
  }
  return t.outcome(points + 1);
}

CheckOutcome check_ns_sandwich(const NsConfig& ns, std::size_t trials, int max_iters,
                               std::uint64_t seed, double tol) {
  Rng rng = make_rng({seed, static_cast<std::uint64_t>(Stream::Verify), 5});
  Tally t("max bound excess");
  std::size_t cases = 0;
  for (std::size_t i = 0; i < trials; ++i) {
    const Mat g = random_test_matrix(rng, 32, 48);
    const std::vector<double> s = singular_values(g);
    double tr = 0.0;
    for (double v : s) tr += v;
    for (int it = 0; it <= max_iters; ++it) {
      ++cases;
      NsConfig cfg = ns;
      cfg.iters = it;
      const Mat out = lmo_newton_schulz(g, cfg);
      if (it == 0 && !(out == lmo_exact(g, NormKind::frobenius())))
        t.fail("T = 0 output differs from -g/||g||_F for " + shape_str(g));
      const double sp = singular_values(out).front();
      const double ip = inner(g, out);
      const double p = effective_p(s, it).p;
      const double upper = -schatten_from_singular_values(s, p);
      t.observe(std::max({sp - 1.0, -tr - ip, ip - upper}));
      if (sp > 1.0 + 1e-6) t.fail("spectral norm " + fmt(sp) + " at T = " + std::to_string(it));
      if (ip < -tr - tol) t.fail("below -||g||_tr at T = " + std::to_string(it));
      if (ip > upper + tol)
        t.fail("above -||g||_p (p = " + fmt(p) + ") by " + fmt(ip - upper) + " at T = " +
               std::to_string(it) + " for " + shape_str(g));
    }
  }
  return t.outcome(cases);
}

CheckOutcome check_effective_p() {
  Tally t("|p(0.5, 10) - 1|");
  const std::vector<double> kappas = {1e-6, 1e-3, 0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.999};
  for (double k : kappas) {
    t.require(effective_p_from_kappa(k, 0) == 2.0, "p(T=0) != 2 at kappa " + fmt(k));
    double prev = 2.0;
    for (int it = 1; it <= 30; ++it) {
      const double p = effective_p_from_kappa(k, it);
      t.require(p <= prev && p >= 1.0, "p increased at T = " + std::to_string(it) + ", kappa " +
                                           fmt(k));
      prev = p;
    }
  }
  const double dev = std::abs(effective_p_from_kappa(0.5, 10) - 1.0);
  t.observe(dev);
  t.require(dev <= 1e-6, "p(0.5, 10) = " + fmt(1.0 + dev));
  return t.outcome(kappas.size() * 31 + 1);
}

CheckOutcome check_optimizers(std::uint64_t seed) {
  Rng rng = make_rng({seed, static_cast<std::uint64_t>(Stream::Verify), 6});
  Tally t("max momentum error");
  std::size_t cases = 0;
  for (double alpha : {0.1, 0.5, 1.0}) {
    MomentumState st{gaussian(4, 3, rng), alpha};
    for (int k = 0; k < 20; ++k, ++cases) {
      const Mat g = gaussian(4, 3, rng);
      const MomentumState next = momentum_update(st, g);
      t.require(next.m.same_shape(g), "momentum shape changed");
      const Mat expect = st.m * (1.0 - alpha) + g * alpha;
      const double err = max_abs(next.m - expect);
      t.observe(err);
      t.require(err <= 1e-15 * std::max(1.0, max_abs(expect)), "momentum is not (1-a)m + a g");
      st = next;
    }
  }
  AdamState adam{Mat(3, 5), Mat(3, 5)};
  Mat x = gaussian(3, 5, rng);
  for (int k = 0; k < 50; ++k, ++cases) {
    auto [next, nx] = adam_step(adam, x, gaussian(3, 5, rng), 1e-2);
    for (double v : next.v.data()) t.require(v >= 0.0, "adam second moment negative");
    adam = std::move(next);
    x = std::move(nx);
  }
  const LayerSpec big{LayerRole::Matrix, 256, 64, "w"};
  const LayerSpec bias{LayerRole::Vector, 256, 1, "b"};
  t.require(std::abs(per_layer_stepsize(0.001, big) - 0.016) <= 1e-15, "matrix stepsize scaling");
  t.require(per_layer_stepsize(0.001, bias) == 0.001, "vector layers must not be scaled");
  t.require(per_layer_stepsize(0.001, big, StepScaling::None) == 0.001, "scaling rule none");
  return t.outcome(cases + 3);
}

CheckOutcome check_gradients(std::uint64_t seed, double rel_tol) {
  Rng rng = make_rng({seed, static_cast<std::uint64_t>(Stream::Verify), 7});
  Tally t("max relative error");
  std::size_t cases = 0;
  const CounterexampleProblem ce(1.3, -0.2);
  const MatrixQuadraticProblem quad = small_quadratic(3, seed);
  const ToyClassificationProblem toy = small_toy(4, seed);
  const std::vector<const Problem*> problems = {&ce, &quad, &toy};
  std::normal_distribution<double> jitter(0.0, 0.5);
  for (const Problem* p : problems) {
    for (std::size_t c = 0; c < p->num_clients(); ++c) {
      Params x = p->initial_point();
      for (auto& m : x)
        for (double& v : m.data()) v += jitter(rng);
      const Params g = p->grad(c, x);
      const Params fd = finite_difference(*p, c, x);
      const double err = frobenius_norm(sub(fd, g)) / std::max(frobenius_norm(g), 1e-12);
      t.observe(err);
      t.require(err <= rel_tol, p->name() + " client " + std::to_string(c) + " relative error " +
                                    fmt(err));
      ++cases;
    }
  }
  return t.outcome(cases);
}

CheckOutcome check_noise_channel(std::size_t draws, std::uint64_t seed) {
  Tally t("max standardized deviation");
  const double sigma = 0.7;
  const Params like = {Mat(3, 4), Mat(5, 1)};
  const double d = static_cast<double>(total_size(like));
  NoiseChannel ch(sigma, make_rng({seed, static_cast<std::uint64_t>(Stream::Verify), 8}));
  Params mean = zeros_like(like);
  double sq = 0.0;
  const double w = 1.0 / static_cast<double>(draws);
  for (std::size_t i = 0; i < draws; ++i) {
    const Params n = ch.draw(like);
    axpy(mean, w, n);
    const double f = frobenius_norm(n);
    sq += f * f * w;
  }
  const double entry_se = sigma / std::sqrt(d) / std::sqrt(static_cast<double>(draws));
  double worst = 0.0;
  for (const auto& m : mean)
    for (double v : m.data()) worst = std::max(worst, std::abs(v) / entry_se);
  const double sq_se = sigma * sigma * std::sqrt(2.0 / d) / std::sqrt(static_cast<double>(draws));
  const double sq_z = std::abs(sq - sigma * sigma) / sq_se;
  t.observe(std::max(worst, sq_z));
  t.require(worst <= 5.0, "entry mean " + fmt(worst) + " standard errors from zero");
  t.require(sq_z <= 5.0, "E||noise||^2 " + fmt(sq_z) + " standard errors from sigma^2");

  // Stochastic gradients average to the exact gradient.
  const CounterexampleProblem ce(1.0, -0.25);
  NoiseChannel ch2(sigma, make_rng({seed, static_cast<std::uint64_t>(Stream::Verify), 9}));
  const Params x = ce.initial_point();
  double acc = 0.0;
  for (std::size_t i = 0; i < draws; ++i) acc += ce.stoch_grad(1, x, ch2)[0](0, 0) * w;
  const double z = std::abs(acc - ce.grad(1, x)[0](0, 0)) /
                   (sigma / std::sqrt(static_cast<double>(draws)));
  t.observe(z);
  t.require(z <= 5.0, "stochastic gradient biased by " + fmt(z) + " standard errors");

  NoiseChannel silent(0.0, Rng(1));
  t.require(all_finite(silent.draw(like)) && frobenius_norm(silent.draw(like)) == 0.0,
            "sigma = 0 must add nothing");
  return t.outcome(draws);
}

CheckOutcome check_dirichlet_partition(std::uint64_t seed) {
  Tally t("min shard size");
  std::vector<int> labels(1000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 10);
  std::size_t cases = 0;
  double smallest = 1e300;
  for (double beta : {0.01, 0.1, 1.0, 100.0}) {
    for (std::size_t n : {1u, 3u, 16u, 64u}) {
      Rng rng = make_rng({seed, static_cast<std::uint64_t>(Stream::Partition), n});
      const auto shards = dirichlet_partition(labels, n, beta, rng);
      ++cases;
      t.require(shards.size() == n, "wrong shard count");
      std::set<std::size_t> seen;
      std::size_t total = 0;
      for (const auto& s : shards) {
        t.require(!s.empty(), "empty shard at beta " + fmt(beta) + ", n " + std::to_string(n));
        smallest = std::min(smallest, static_cast<double>(s.size()));
        total += s.size();
        seen.insert(s.begin(), s.end());
      }
      t.require(total == labels.size() && seen.size() == labels.size(),
                "shards must partition the dataset");
    }
  }
  t.observe(smallest);
  return t.outcome(cases);
}

CheckOutcome check_counterexample_analytics() {
  Tally t("max error");
  for (double a : {1.0, 2.0}) {
    const CounterexampleProblem p(a, -a / 4.0);
    for (double x : {-3.0, -a / 2.0, -a / 4.0, 0.0, 1.7}) {
      const double g = p.global_grad({Mat::scalar(x)})[0](0, 0);
      t.observe(std::abs(g - (x + a / 2.0)));
      t.require(std::abs(g - (x + a / 2.0)) <= 1e-15, "grad f(x) != x + a/2");
    }
    const Params xs = {Mat::scalar(p.minimizer())};
    t.require(p.minimizer() == -a / 2.0 && p.global_grad(xs)[0](0, 0) == 0.0, "minimizer");
    const double g1 = p.grad(0, xs)[0](0, 0), g2 = p.grad(1, xs)[0](0, 0);
    const double zeta2 = 0.5 * (g1 * g1 + g2 * g2);
    const double z = p.heterogeneity(xs).zeta;
    t.require(zeta2 == a * a / 4.0 && z * z == zeta2, "zeta*^2 != a^2/4");
    const double floor_grad = p.global_grad(p.initial_point())[0](0, 0);
    t.require(floor_grad * floor_grad == a * a / 16.0 && p.stagnation_floor() == a * a / 16.0,
              "floor != a^2/16");
  }
  return t.outcome(2);
}

CheckOutcome check_localmuon_stagnation(std::size_t rounds, const std::vector<double>& alphas) {
  Tally t("max |X(r) - X(0)|");
  const CounterexampleProblem p(1.0, -0.25);
  const double x0 = p.initial_point()[0](0, 0);
  std::size_t cases = 0;
  for (double alpha : alphas) {
    const RoundConfig rc = counterexample_config(Algorithm::LocalMuon, 0.01, alpha);
    RunOptions opts;
    opts.rounds = rounds;
    bool moved = false, off_floor = false;
    opts.on_round = [&](const ServerState& s, const std::vector<ClientState>&) {
      const double x = s.x[0](0, 0);
      t.observe(std::abs(x - x0));
      if (x != x0) moved = true;
    };
    opts.on_record = [&](const RoundTrace& r) {
      if (r.grad_frobenius * r.grad_frobenius != p.stagnation_floor()) off_floor = true;
    };
    const RunResult r = run(rc, p, opts);
    cases += r.traces.size();
    t.require(!r.aborted, "run aborted");
    t.require(r.traces.size() == rounds + 1, "missing records");
    t.require(!moved, "X(r) drifted at alpha " + fmt(alpha));
    t.require(!off_floor, "grad^2 left a^2/16 at alpha " + fmt(alpha));
  }
  return t.outcome(cases);
}

CheckOutcome check_fedmuon_escape(std::size_t rounds, const std::vector<double>& etas,
                                  const std::vector<double>& alphas) {
  Tally t("worst best-of-grid grad^2");
  const CounterexampleProblem p(1.0, -0.25);
  const double target = p.stagnation_floor() / 100.0;
  for (double alpha : alphas) {
    double best = 1e300;
    for (double eta : etas) {
      RunOptions opts;
      opts.rounds = rounds;
      double low = 1e300;
      opts.on_record = [&](const RoundTrace& r) {
        low = std::min(low, r.grad_frobenius * r.grad_frobenius);
      };
      const RunResult r = run(counterexample_config(Algorithm::FedMuon, eta, alpha), p, opts);
      t.require(!r.aborted, "run aborted");
      best = std::min(best, low);
    }
    t.observe(best);
    t.require(best < target, "alpha " + fmt(alpha) + ": best grad^2 " + fmt(best) +
                                 " not below " + fmt(target));
  }
  return t.outcome(alphas.size() * etas.size());
}

CheckOutcome check_scaffold_equivalence(std::size_t rounds, std::uint64_t seed, double tol) {
  Tally t("max Frobenius distance");
  const MatrixQuadraticProblem p = small_quadratic(8, seed);
  RoundConfig rc;
  rc.clients = 8;
  rc.sampled = 4;
  rc.local_steps = 5;
  rc.eta = 0.5 / p.smoothness();
  rc.noise_sigma = 0.1;
  rc.seed = seed;
  rc.alpha = 1.0;
  rc.algorithm = Algorithm::FedMuon;
  rc.direction = DirectionMap::identity();
  RoundConfig sc = rc;
  sc.algorithm = Algorithm::Scaffold;
  sc.base_optimizer = BaseOptimizer::Sgd;

  std::vector<Params> a, b;
  RunOptions opts;
  opts.rounds = rounds;
  opts.on_round = [&](const ServerState& s, const std::vector<ClientState>&) { a.push_back(s.x); };
  const RunResult ra = run(rc, p, opts);
  opts.on_round = [&](const ServerState& s, const std::vector<ClientState>&) { b.push_back(s.x); };
  const RunResult rb = run(sc, p, opts);
  t.require(!ra.aborted && !rb.aborted, "run aborted");
  t.require(a.size() == rounds + 1 && b.size() == rounds + 1, "trajectory length");
  for (std::size_t r = 0; r < std::min(a.size(), b.size()); ++r) {
    const double d = frobenius_norm(sub(a[r], b[r]));
    t.observe(d);
    t.require(d <= tol, "round " + std::to_string(r) + " distance " + fmt(d));
  }
  // Guard against a vacuous pass: the iterates must actually move.
  t.require(frobenius_norm(sub(a.back(), a.front())) > 1e-3, "trajectory did not move");
  return t.outcome(a.size());
}

CheckOutcome check_partial_participation(std::uint64_t seed) {
  Tally t("max |C - mean C_i|");
  const ToyClassificationProblem p = small_toy(6, seed);
  RoundConfig rc;
  rc.clients = 6;
  rc.sampled = 2;
  rc.local_steps = 3;
  rc.eta = 0.01;
  rc.noise_sigma = 0.1;
  rc.momentum_init = MomentumInit::StochasticGradient;
  rc.seed = seed;
  std::size_t cases = 0;
  for (Algorithm algo : {Algorithm::FedMuon, Algorithm::Scaffold}) {
    rc.algorithm = algo;
    std::optional<std::vector<ClientState>> prev;
    std::size_t round = 0;
    RunOptions opts;
    opts.rounds = 15;
    opts.on_round = [&](const ServerState& s, const std::vector<ClientState>& clients) {
      Params mean = zeros_like(s.c);
      for (const auto& c : s.c_registry) axpy(mean, 1.0 / static_cast<double>(rc.clients), c);
      const double gap = frobenius_norm(sub(mean, s.c));
      t.observe(gap);
      t.require(gap <= 1e-12 * std::max(1.0, frobenius_norm(mean)), "C != mean C_i");
      for (std::size_t i = 0; i < clients.size(); ++i)
        t.require(s.c_registry[i] == clients[i].c, "server registry out of sync");
      if (prev) {
        const auto ids = sample_clients_for_round(rc, round);
        for (std::size_t i = 0; i < clients.size(); ++i) {
          if (std::binary_search(ids.begin(), ids.end(), i)) continue;
          t.require(clients[i].m == (*prev)[i].m && clients[i].c == (*prev)[i].c,
                    "unsampled client " + std::to_string(i) + " changed in round " +
                        std::to_string(round));
        }
        ++round;
      }
      prev = clients;
      ++cases;
    };
    const RunResult r = run(rc, p, opts);
    t.require(!r.aborted, "run aborted");
  }
  return t.outcome(cases);
}

CheckOutcome check_sampling(std::uint64_t seed) {
  Tally t("rounds checked");
  RoundConfig rc;
  rc.clients = 16;
  rc.sampled = 8;
  rc.seed = seed;
  std::size_t cases = 0;
  for (std::size_t r = 0; r < 200; ++r, ++cases) {
    const auto ids = sample_clients_for_round(rc, r);
    t.require(ids.size() == rc.sampled, "wrong sample size");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      t.require(ids[i] < rc.clients, "id out of range");
      t.require(i == 0 || ids[i - 1] < ids[i], "ids not sorted and distinct");
    }
    t.require(ids == sample_clients_for_round(rc, r), "sampling not deterministic");
  }
  rc.sampled = rc.clients;
  const auto all = sample_clients_for_round(rc, 0);
  for (std::size_t i = 0; i < all.size(); ++i) t.require(all[i] == i, "S = n must take everyone");
  t.observe(static_cast<double>(cases));
  return t.outcome(cases + 1);
}

CheckOutcome check_trace_records(std::uint64_t seed) {
  Tally t("max frobenius/trace ratio");
  std::size_t cases = 0;
  auto inspect = [&](const RoundConfig& rc, const Problem& p, std::size_t rounds) {
    double rank_bound = 0.0;
    for (const auto& l : p.layers()) rank_bound += static_cast<double>(std::min(l.rows, l.cols));
    RunOptions opts;
    opts.rounds = rounds;
    opts.on_record = [&](const RoundTrace& r) {
      ++cases;
      t.require(parse_jsonl(emit_jsonl(r)) == r, "JSONL round trip changed a record");
      t.require(r.grad_frobenius >= 0 && r.grad_trace >= 0 && r.grad_spectral >= 0 &&
                    r.grad_schatten_phat >= 0,
                "negative norm field");
      t.require(r.grad_frobenius <= r.grad_trace * (1.0 + 1e-12), "grad_frobenius > grad_trace");
      t.require(r.grad_trace <= std::sqrt(rank_bound) * r.grad_frobenius * (1.0 + 1e-12),
                "grad_trace > sqrt(rank) * grad_frobenius");
      if (r.grad_trace > 0) t.observe(r.grad_frobenius / r.grad_trace);
    };
    const RunResult res = run(rc, p, opts);
    t.require(!res.aborted, "run aborted");
  };
  RoundConfig rc;
  rc.clients = 8;
  rc.sampled = 4;
  rc.noise_sigma = 0.05;
  rc.seed = seed;
  rc.direction = DirectionMap::newton_schulz(NsConfig::analyzed(3));
  const MatrixQuadraticProblem quad = small_quadratic(8, seed);
  rc.eta = 0.05 / std::sqrt(quad.smoothness());
  inspect(rc, quad, 10);
  const ToyClassificationProblem toy = small_toy(8, seed);
  rc.eta = 0.01;
  inspect(rc, toy, 5);
  return t.outcome(cases);
}

CheckOutcome check_determinism(std::uint64_t seed) {
  Tally t("runs compared");
  const ToyClassificationProblem p = small_toy(8, seed);
  RoundConfig rc;
  rc.clients = 8;
  rc.sampled = 4;
  rc.eta = 0.01;
  rc.noise_sigma = 0.1;
  rc.seed = seed;
  const std::string a = serialize_run(rc, p, 10);
  rc.workers = 4;
  const std::string b = serialize_run(rc, p, 10);
  t.observe(2);
  t.require(!a.empty() && a == b, "JSONL differs between runs");
  return t.outcome(2);
}

std::vector<InvariantResult> run_invariants(const VerifyOptions& o) {
  const std::uint64_t s = o.seed;
  const std::vector<std::pair<std::string, std::function<CheckOutcome()>>> suite = {
      {"matlin.svd", [&] { return check_svd(100, s); }},
      {"matlin.norm_inequalities", [&] { return check_norm_inequalities(200, s, 1e-10); }},
      {"lmo.spectral_pairing", [&] { return check_spectral_lmo(200, s, 1e-8); }},
      {"lmo.frobenius_pairing", [&] { return check_frobenius_lmo(200, s, 1e-12); }},
      {"lmo.ns_polynomial_bound", [&] { return check_ns_polynomial(o.ns, 100000, 1e-12); }},
      {"lmo.ns_sandwich", [&] { return check_ns_sandwich(o.ns, 60, 12, s, 1e-8); }},
      {"lmo.effective_p", [] { return check_effective_p(); }},
      {"optim.update_rules", [&] { return check_optimizers(s); }},
      {"problems.gradient_fd", [&] { return check_gradients(s, 1e-5); }},
      {"problems.noise_channel", [&] { return check_noise_channel(20000, s); }},
      {"problems.dirichlet_partition", [&] { return check_dirichlet_partition(s); }},
      {"problems.counterexample_analytics", [] { return check_counterexample_analytics(); }},
      {"fedproto.localmuon_stagnation",
       [] { return check_localmuon_stagnation(10000, {0.25, 0.5, 1.0}); }},
      {"fedproto.fedmuon_escape",
       [] { return check_fedmuon_escape(10000, {0.01, 0.001}, {0.25, 0.5, 1.0}); }},
      {"fedproto.scaffold_equivalence", [&] { return check_scaffold_equivalence(100, s, 1e-10); }},
      {"fedproto.partial_participation", [&] { return check_partial_participation(s); }},
      {"fedproto.sampling", [&] { return check_sampling(s); }},
      {"harness.trace_records", [&] { return check_trace_records(s); }},
      {"harness.determinism", [&] { return check_determinism(s); }},
  };
  std::vector<InvariantResult> out;
  for (const auto& [name, fn] : suite) {
    try {
      const CheckOutcome c = fn();
      out.push_back({name, c.pass, c.detail});
    } catch (const std::exception& e) {
      out.push_back({name, false, std::string("exception: ") + e.what()});
    }
  }
  return out;
}

}  // namespace fedlab::harness

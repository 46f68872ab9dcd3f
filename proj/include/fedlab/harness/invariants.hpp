#pragma once

// Property checks across all modules. Each check is deterministic given its
// seed; `verify` runs them with small trial counts, the acceptance suite with
// the full ones.

#include <cstdint>
#include <string>
#include <vector>

#include "fedlab/lmo.hpp"
#include "fedlab/mat.hpp"
#include "fedlab/rng.hpp"

namespace fedlab::harness {

struct CheckOutcome {
  bool pass = true;
  std::string detail;
};

// Random test matrix of size up to max_rows x max_cols: Gaussian, low-rank,
// ill-conditioned or scaled, chosen at random.
Mat random_test_matrix(Rng& rng, std::size_t max_rows, std::size_t max_cols);

// Reconstruction, orthonormality, ordering and sign convention of the SVD.
CheckOutcome check_svd(std::size_t trials, std::uint64_t seed);
// ||A||_F <= ||A||_tr <= sqrt(min(d1, d2)) ||A||_F and Schatten norms non-increasing in p.
CheckOutcome check_norm_inequalities(std::size_t trials, std::uint64_t seed, double tol);
// <g, lmo(g)> = -||g||_tr and ||lmo(g)||_sp = 1 for the exact spectral oracle.
CheckOutcome check_spectral_lmo(std::size_t trials, std::uint64_t seed, double tol);
// <g, lmo(g)> = -||g||_F and ||lmo(g)||_F = 1 for the exact Frobenius oracle.
CheckOutcome check_frobenius_lmo(std::size_t trials, std::uint64_t seed, double tol);
// 0 <= 1 - phi(x) <= (1 - x)^1.5 on a uniform grid of [0, 1], plus phi(1) = 1.
CheckOutcome check_ns_polynomial(const NsConfig& ns, std::size_t points, double tol);
// ||out||_sp <= 1 + 1e-6 and -||g||_tr <= <g, out> <= -||g||_p + tol for T = 0..max_iters;
// T = 0 must return -g/||g||_F exactly.
CheckOutcome check_ns_sandwich(const NsConfig& ns, std::size_t trials, int max_iters,
                               std::uint64_t seed, double tol);
// p(T=0) = 2 exactly, p non-increasing in T, p(0.5, 10) within 1e-6 of 1.
CheckOutcome check_effective_p();
// Momentum is a convex combination, Adam second moments stay non-negative,
// per-layer stepsizes follow sqrt(max(rows, cols)).
CheckOutcome check_optimizers(std::uint64_t seed);
// Analytic gradients against central finite differences on every problem.
CheckOutcome check_gradients(std::uint64_t seed, double rel_tol);
// Noise channel: zero mean and E||noise||_F^2 = sigma^2 within 5 standard errors.
CheckOutcome check_noise_channel(std::size_t draws, std::uint64_t seed);
// Shards are disjoint, non-empty and cover the dataset.
CheckOutcome check_dirichlet_partition(std::uint64_t seed);
// grad f(x) = x + a/2, x* = -a/2, zeta*^2 = a^2/4, floor a^2/16.
CheckOutcome check_counterexample_analytics();
// LocalMuon leaves X(r) = X(0) bit-exactly with grad^2 = a^2/16 every round.
CheckOutcome check_localmuon_stagnation(std::size_t rounds, const std::vector<double>& alphas);
// FedMuon reaches grad^2 < floor/100 for some eta in the grid.
CheckOutcome check_fedmuon_escape(std::size_t rounds, const std::vector<double>& etas,
                                  const std::vector<double>& alphas);
// FedMuon with the identity map and alpha = 1 tracks SCAFFOLD within tol (Frobenius).
CheckOutcome check_scaffold_equivalence(std::size_t rounds, std::uint64_t seed, double tol);
// C = mean_i C_i after each round; unsampled clients keep M_i and C_i bit-exactly.
CheckOutcome check_partial_participation(std::uint64_t seed);
// Sampled sets are sorted, distinct, in range, of size S and seed-deterministic.
CheckOutcome check_sampling(std::uint64_t seed);
// parse(emit(t)) == t and the norm ordering of every record of a short run.
CheckOutcome check_trace_records(std::uint64_t seed);
// Two runs (one single-threaded, one with 4 workers) serialize identically.
CheckOutcome check_determinism(std::uint64_t seed);

struct VerifyOptions {
  NsConfig ns = NsConfig::analyzed(5);
  std::uint64_t seed = 20240601;
};

struct InvariantResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

std::vector<InvariantResult> run_invariants(const VerifyOptions& opts);

}  // namespace fedlab::harness

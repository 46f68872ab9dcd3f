#pragma once

// Linear minimization oracles over norm unit balls:
//   lmo(G) = argmin_{||D|| <= 1} <G, D>
// exact versions for the Frobenius, spectral and Euclidean balls, and the
// Newton-Schulz approximation of the spectral one.

#include <cstdint>
#include <utility>
#include <vector>

#include "fedlab/linalg.hpp"
#include "fedlab/mat.hpp"

namespace fedlab {

// Odd polynomial iteration G <- a G + b (G G^T) G + c (G G^T)^2 G.
struct NsConfig {
  double a = 15.0 / 8.0;
  double b = -5.0 / 4.0;
  double c = 3.0 / 8.0;
  int iters = 5;

  static NsConfig analyzed(int iters) { return NsConfig{15.0 / 8.0, -5.0 / 4.0, 3.0 / 8.0, iters}; }

  // Scalar polynomial acting on each singular value.
  double phi(double x) const noexcept {
    const double x2 = x * x;
    return x * (a + x2 * (b + c * x2));
  }
  // True for the coefficient triple the sandwich guarantees are proven for.
  bool is_analyzed() const noexcept {
    return a == 15.0 / 8.0 && b == -5.0 / 4.0 && c == 3.0 / 8.0;
  }
  // Throws ConfigError on negative iteration count or non-finite coefficients.
  void validate() const;
};

// Exact oracle. Spectral: -U_r V_r^T over the numerically nonzero singular
// triplets; Frobenius/EuclideanVec: -g/||g||_F. Zero input gives the zero
// matrix. Trace and Schatten balls throw UnsupportedError.
Mat lmo_exact(const Mat& g, const NormKind& kind);

// Returns -G^(T) from the Newton-Schulz iteration started at g/||g||_F. The
// iteration runs on the side with the smaller Gram matrix. Zero input gives zero.
Mat lmo_newton_schulz(const Mat& g, const NsConfig& cfg);

struct EffectiveP {
  double kappa;  // min nonzero singular value / sqrt(sum of squares), in (0, 1]
  double p;      // effective Schatten exponent in [1, 2]
};

// p = 1 + log(1 - (1 - kappa)^(1.5^T)) / log(kappa). T = 0 gives exactly 2;
// kappa = 1 gives the limit value 1 for T >= 1. Values below
// kRankTolerance * max are ignored. Throws UndefinedOracleError if none remain.
EffectiveP effective_p(const std::vector<double>& singular_values, int iters);

// Same formula from a known kappa (used for the running minimum across a run).
double effective_p_from_kappa(double kappa, int iters);

// (mean_i lmo(m_i), lmo(mean_i m_i)) -- the two sides of the averaging bias.
std::pair<Mat, Mat> lmo_bias_witness(const std::vector<Mat>& ms, const NormKind& kind);

}  // namespace fedlab

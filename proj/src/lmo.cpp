#include "fedlab/lmo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedlab/error.hpp"

namespace fedlab {

void NsConfig::validate() const {
  if (iters < 0) throw ConfigError("newton-schulz: iteration count must be >= 0");
  if (!std::isfinite(a) || !std::isfinite(b) || !std::isfinite(c))
    throw ConfigError("newton-schulz: coefficients must be finite");
}

Mat lmo_exact(const Mat& g, const NormKind& kind) {
  switch (kind.tag()) {
    case NormKind::Tag::EuclideanVec:
      if (!g.is_vector())
        throw DimensionError("lmo_exact: euclidean ball needs a vector, got " + shape_str(g));
      [[fallthrough]];
    case NormKind::Tag::Frobenius: {
      const double n = frobenius_norm(g);
      if (!std::isfinite(n)) throw NumericalError("lmo_exact: non-finite input");
      if (n == 0.0) return Mat(g.rows(), g.cols());
      Mat d = g;
      for (double& v : d.data()) v = -v / n;
      return d;
    }
    case NormKind::Tag::Spectral: {
      const SvdResult f = svd(g);
      const std::size_t rank = numerical_rank(f.s);
      Mat d(g.rows(), g.cols());
      for (std::size_t j = 0; j < rank; ++j)
        for (std::size_t r = 0; r < g.rows(); ++r) {
          const double ur = f.u(r, j);
          for (std::size_t c = 0; c < g.cols(); ++c) d(r, c) -= ur * f.vt(j, c);
        }
      return d;
    }
    case NormKind::Tag::Trace:
    case NormKind::Tag::Schatten:
      break;
  }
  throw UnsupportedError("lmo_exact: no oracle for the " + kind.name() + " ball");
}

Mat lmo_newton_schulz(const Mat& g, const NsConfig& cfg) {
  cfg.validate();
  const double n = frobenius_norm(g);
  if (!std::isfinite(n)) throw NumericalError("lmo_newton_schulz: non-finite input");
  if (n == 0.0) return Mat(g.rows(), g.cols());

  const bool transpose = g.rows() > g.cols();
  Mat x = transpose ? g.transposed() : g;
  for (double& v : x.data()) v /= n;
  for (int t = 0; t < cfg.iters; ++t) {
    const Mat a = gram_rows(x);
    Mat poly = a * cfg.b;
    poly.axpy(cfg.c, matmul(a, a));
    Mat next = x * cfg.a;
    next += matmul(poly, x);
    x = std::move(next);
  }
  x *= -1.0;
  return transpose ? x.transposed() : x;
}

double effective_p_from_kappa(double kappa, int iters) {
  if (iters < 0) throw ConfigError("effective_p: iteration count must be >= 0");
  if (!(kappa > 0.0)) throw UndefinedOracleError("effective_p: kappa must be positive");
  if (iters == 0) return 2.0;
  if (kappa >= 1.0) return 1.0;
  const double decay = std::pow(1.0 - kappa, std::pow(1.5, iters));
  const double p = 1.0 + std::log1p(-decay) / std::log(kappa);
  return std::clamp(p, 1.0, 2.0);
}

EffectiveP effective_p(const std::vector<double>& singular_values, int iters) {
  double top = 0.0;
  for (double s : singular_values) top = std::max(top, s);
  if (!(top > 0.0)) throw UndefinedOracleError("effective_p: all singular values are zero");
  const double cutoff = kRankTolerance * top;
  double smallest = top;
  double sumsq = 0.0;
  for (double s : singular_values) {
    if (s <= cutoff) continue;
    smallest = std::min(smallest, s);
    const double r = s / top;
    sumsq += r * r;
  }
  const double kappa = std::min(1.0, (smallest / top) / std::sqrt(sumsq));
  return EffectiveP{kappa, effective_p_from_kappa(kappa, iters)};
}

std::pair<Mat, Mat> lmo_bias_witness(const std::vector<Mat>& ms, const NormKind& kind) {
  if (ms.size() < 2) throw DimensionError("lmo_bias_witness: need at least two matrices");
  Mat mean_of_lmo(ms[0].rows(), ms[0].cols());
  Mat mean(ms[0].rows(), ms[0].cols());
  const double w = 1.0 / static_cast<double>(ms.size());
  for (const Mat& m : ms) {
    require_same_shape(ms[0], m, "lmo_bias_witness");
    mean_of_lmo.axpy(w, lmo_exact(m, kind));
    mean.axpy(w, m);
  }
  return {std::move(mean_of_lmo), lmo_exact(mean, kind)};
}

}  // namespace fedlab

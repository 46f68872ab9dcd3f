#include "fedlab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fedlab/error.hpp"

namespace fedlab {
namespace {

// Thin SVD for rows >= cols. Hestenes one-sided Jacobi: rotate column pairs of
// a working copy until all pairs are orthogonal; the rotations accumulate into V.
SvdResult svd_tall(const Mat& a, const SvdOptions& opts) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Mat w = a;
  Mat v = Mat::identity(n);

  bool converged = false;
  double residual = 0.0;
  for (int sweep = 0; sweep < opts.max_sweeps && !converged; ++sweep) {
    converged = true;
    residual = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p);
          const double wq = w(i, q);
          alpha += wp * wp;
          beta += wq * wq;
          gamma += wp * wq;
        }
        const double denom = std::sqrt(alpha) * std::sqrt(beta);
        if (denom == 0.0) continue;
        const double rel = std::abs(gamma) / denom;
        residual = std::max(residual, rel);
        if (rel <= opts.tolerance) continue;
        converged = false;

        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
        const double c = 1.0 / std::hypot(1.0, t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p);
          const double wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p);
          const double vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
  }
  if (!converged) {
    std::ostringstream os;
    os << "svd: one-sided Jacobi did not converge in " << opts.max_sweeps
       << " sweeps (max relative off-diagonal " << residual << ")";
    throw NumericalError(os.str(), residual);
  }

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += w(i, j) * w(i, j);
    norms[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  SvdResult r{Mat(m, n), std::vector<double>(n), Mat(n, n)};
  const double cutoff = kRankTolerance * norms[order[0]];
  std::vector<bool> valid(n, false);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    r.s[j] = norms[src];
    for (std::size_t i = 0; i < n; ++i) r.vt(j, i) = v(i, src);
    if (norms[src] > cutoff && norms[src] > 0.0) {
      valid[j] = true;
      for (std::size_t i = 0; i < m; ++i) r.u(i, j) = w(i, src) / norms[src];
    }
  }

  // Complete u columns of zero singular values: pick the standard basis vector
  // with the largest residual after projecting out the columns already fixed.
  for (std::size_t j = 0; j < n; ++j) {
    if (valid[j]) continue;
    std::vector<double> best;
    double best_norm = -1.0;
    for (std::size_t e = 0; e < m; ++e) {
      std::vector<double> x(m, 0.0);
      x[e] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t c = 0; c < n; ++c) {
          if (!valid[c]) continue;
          double d = 0.0;
          for (std::size_t i = 0; i < m; ++i) d += r.u(i, c) * x[i];
          for (std::size_t i = 0; i < m; ++i) x[i] -= d * r.u(i, c);
        }
      }
      const double nx = std::sqrt(std::inner_product(x.begin(), x.end(), x.begin(), 0.0));
      if (nx > best_norm + 1e-12) {
        best_norm = nx;
        best = std::move(x);
      }
    }
    for (std::size_t i = 0; i < m; ++i) r.u(i, j) = best[i] / best_norm;
    valid[j] = true;
  }
  return r;
}

void apply_sign_convention(SvdResult& r) {
  const std::size_t m = r.u.rows();
  const std::size_t k = r.u.cols();
  for (std::size_t j = 0; j < k; ++j) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double a = std::abs(r.u(i, j));
      if (a > best) {
        best = a;
        arg = i;
      }
    }
    if (r.u(arg, j) < 0.0) {
      for (std::size_t i = 0; i < m; ++i) r.u(i, j) = -r.u(i, j);
      for (std::size_t i = 0; i < r.vt.cols(); ++i) r.vt(j, i) = -r.vt(j, i);
    }
  }
}

void require_finite(const Mat& a, const char* op) {
  if (!a.all_finite()) throw NumericalError(std::string(op) + ": non-finite input");
}

}  // namespace

SvdResult svd(const Mat& a, const SvdOptions& opts) {
  require_finite(a, "svd");
  SvdResult r;
  if (a.rows() >= a.cols()) {
    r = svd_tall(a, opts);
  } else {
    SvdResult t = svd_tall(a.transposed(), opts);
    r.u = t.vt.transposed();
    r.s = std::move(t.s);
    r.vt = t.u.transposed();
  }
  apply_sign_convention(r);
  return r;
}

std::vector<double> singular_values(const Mat& a) { return svd(a).s; }

std::size_t numerical_rank(const std::vector<double>& s) {
  if (s.empty() || s[0] <= 0.0) return 0;
  const double cutoff = kRankTolerance * s[0];
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [&](double x) { return x > cutoff; }));
}

NormKind NormKind::schatten(double p) {
  if (!(p >= 1.0)) throw ConfigError("Schatten norm requires p >= 1, got " + std::to_string(p));
  return NormKind(Tag::Schatten, p);
}

std::string NormKind::name() const {
  switch (tag_) {
    case Tag::Frobenius: return "frobenius";
    case Tag::Spectral: return "spectral";
    case Tag::Trace: return "trace";
    case Tag::EuclideanVec: return "euclidean";
    case Tag::Schatten: {
      std::ostringstream os;
      os << "schatten:" << p_;
      return os.str();
    }
  }
  return "?";
}

NormKind NormKind::parse(const std::string& s) {
  if (s == "frobenius") return frobenius();
  if (s == "spectral") return spectral();
  if (s == "trace") return trace();
  if (s == "euclidean") return euclidean_vec();
  if (s.rfind("schatten:", 0) == 0) {
    try {
      std::size_t used = 0;
      const double p = std::stod(s.substr(9), &used);
      if (used == s.size() - 9) return schatten(p);
    } catch (const std::logic_error&) {
    }
  }
  throw ConfigError("unknown norm '" + s + "'");
}

double schatten_from_singular_values(const std::vector<double>& s, double p) {
  const double top = s.empty() ? 0.0 : *std::max_element(s.begin(), s.end());
  if (top == 0.0) return 0.0;
  double acc = 0.0;
  for (double x : s) acc += std::pow(x / top, p);
  return top * std::pow(acc, 1.0 / p);
}

double norm(const Mat& a, const NormKind& kind) {
  require_finite(a, "norm");
  switch (kind.tag()) {
    case NormKind::Tag::Frobenius:
      return frobenius_norm(a);
    case NormKind::Tag::EuclideanVec:
      if (!a.is_vector())
        throw DimensionError("norm: euclidean norm needs a vector, got " + shape_str(a));
      return frobenius_norm(a);
    case NormKind::Tag::Spectral:
      return singular_values(a).front();
    case NormKind::Tag::Trace: {
      const auto s = singular_values(a);
      return std::accumulate(s.begin(), s.end(), 0.0);
    }
    case NormKind::Tag::Schatten:
      return schatten_from_singular_values(singular_values(a), kind.p());
  }
  return 0.0;
}

NormKind dual_norm_kind(const NormKind& kind) {
  switch (kind.tag()) {
    case NormKind::Tag::Spectral: return NormKind::trace();
    case NormKind::Tag::Trace: return NormKind::spectral();
    case NormKind::Tag::Frobenius: return NormKind::frobenius();
    case NormKind::Tag::EuclideanVec: return NormKind::euclidean_vec();
    case NormKind::Tag::Schatten: break;
  }
  throw UnsupportedError("dual_norm_kind: no dual offered for " + kind.name());
}

Mat psd_solve(const Mat& h, const Mat& b) {
  if (h.rows() != h.cols() || h.rows() != b.rows())
    throw DimensionError("psd_solve: incompatible shapes " + shape_str(h) + ", " + shape_str(b));
  const SvdResult f = svd(h);
  const std::size_t rank = numerical_rank(f.s);
  // x = V * S^+ * U^T * b
  Mat utb = matmul_tn(f.u, b);
  for (std::size_t j = 0; j < utb.rows(); ++j) {
    const double scale = j < rank ? 1.0 / f.s[j] : 0.0;
    for (std::size_t c = 0; c < utb.cols(); ++c) utb(j, c) *= scale;
  }
  return matmul_tn(f.vt, utb);
}

}  // namespace fedlab

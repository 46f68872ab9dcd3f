#pragma once

#include <string>
#include <vector>

#include "fedlab/mat.hpp"

namespace fedlab {

// Thin SVD: a = u * diag(s) * vt with k = min(rows, cols).
struct SvdResult {
  Mat u;                  // rows x k, orthonormal columns
  std::vector<double> s;  // length k, non-increasing, non-negative
  Mat vt;                 // k x cols, orthonormal rows
};

struct SvdOptions {
  int max_sweeps = 100;
  double tolerance = 1e-12;  // relative off-diagonal tolerance of the Gram matrix
};

// One-sided Jacobi on the smaller Gram dimension. Sign convention: the entry of
// largest magnitude in each left singular vector is non-negative (vt row flipped
// to match). Columns of u belonging to (numerically) zero singular values are
// completed to an orthonormal set deterministically.
// Throws NumericalError on non-finite input or when the sweep cap is reached.
SvdResult svd(const Mat& a, const SvdOptions& opts = {});

std::vector<double> singular_values(const Mat& a);

// Relative threshold below which a singular value counts as zero.
inline constexpr double kRankTolerance = 1e-12;

// Number of singular values above kRankTolerance * s[0].
std::size_t numerical_rank(const std::vector<double>& s);

class NormKind {
 public:
  enum class Tag { Frobenius, Spectral, Trace, Schatten, EuclideanVec };

  static NormKind frobenius() { return NormKind(Tag::Frobenius, 2.0); }
  static NormKind spectral() { return NormKind(Tag::Spectral, 0.0); }
  static NormKind trace() { return NormKind(Tag::Trace, 1.0); }
  static NormKind euclidean_vec() { return NormKind(Tag::EuclideanVec, 2.0); }
  // Throws ConfigError unless p >= 1.
  static NormKind schatten(double p);

  Tag tag() const noexcept { return tag_; }
  // Schatten exponent; meaningful only for Tag::Schatten.
  double p() const noexcept { return p_; }

  std::string name() const;
  // Parses "frobenius", "spectral", "trace", "euclidean", "schatten:<p>".
  static NormKind parse(const std::string& s);

  friend bool operator==(const NormKind& a, const NormKind& b) {
    return a.tag_ == b.tag_ && (a.tag_ != Tag::Schatten || a.p_ == b.p_);
  }

 private:
  NormKind(Tag t, double p) : tag_(t), p_(p) {}
  Tag tag_;
  double p_;
};

// Schatten norm of a singular-value list, evaluated with scaling to avoid overflow.
double schatten_from_singular_values(const std::vector<double>& s, double p);

// Throws DimensionError for EuclideanVec on a non-vector, NumericalError on non-finite input.
double norm(const Mat& a, const NormKind& kind);

// Spectral <-> Trace; Frobenius and EuclideanVec are self-dual. Schatten(p) throws
// UnsupportedError.
NormKind dual_norm_kind(const NormKind& kind);

// Minimum-norm solution of h * x = b for symmetric positive semidefinite h,
// via the SVD pseudo-inverse (singular values below kRankTolerance * s1 dropped).
Mat psd_solve(const Mat& h, const Mat& b);

}  // namespace fedlab

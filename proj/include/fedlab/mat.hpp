#pragma once

// Dense row-major matrix of doubles plus the handful of BLAS-like kernels the
// rest of the library needs. Sizes here are small (at most a few thousand
// entries per side), so everything is written as plain loops.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fedlab {

class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data);
  Mat(std::initializer_list<std::initializer_list<double>> rows);

  static Mat zeros(std::size_t rows, std::size_t cols) { return Mat(rows, cols); }
  static Mat identity(std::size_t n);
  static Mat diag(std::span<const double> values);
  static Mat scalar(double v) { return Mat(1, 1, v); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool same_shape(const Mat& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool is_vector() const noexcept { return rows_ == 1 || cols_ == 1; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  Mat transposed() const;
  bool all_finite() const noexcept;
  void set_zero() noexcept;

  Mat& operator+=(const Mat& o);
  Mat& operator-=(const Mat& o);
  Mat& operator*=(double s) noexcept;
  // this += s * o
  Mat& axpy(double s, const Mat& o);

  friend Mat operator+(Mat a, const Mat& b) { return a += b; }
  friend Mat operator-(Mat a, const Mat& b) { return a -= b; }
  friend Mat operator*(Mat a, double s) { return a *= s; }
  friend Mat operator*(double s, Mat a) { return a *= s; }
  friend Mat operator-(Mat a) { return a *= -1.0; }

  friend bool operator==(const Mat& a, const Mat& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

std::string shape_str(const Mat& a);

// Throws DimensionError unless a and b have identical shapes.
void require_same_shape(const Mat& a, const Mat& b, const char* op);

Mat matmul(const Mat& a, const Mat& b);
// a * a^T
Mat gram_rows(const Mat& a);
// a^T * b
Mat matmul_tn(const Mat& a, const Mat& b);

// Sum of elementwise products.
double inner(const Mat& a, const Mat& b);
double frobenius_norm(const Mat& a);
double max_abs(const Mat& a);

}  // namespace fedlab

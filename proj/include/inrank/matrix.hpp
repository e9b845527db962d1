#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "inrank/errors.hpp"

namespace inrank {

/// Dense row-major matrix of doubles.
///
/// Sized constructors require positive dimensions; a default-constructed
/// matrix is the empty 0x0 placeholder.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols) {
    if (rows == 0 || cols == 0) {
      throw ShapeError("matrix dimensions must be positive, got " + shape_string(rows, cols));
    }
    data_.assign(rows * cols, fill);
  }

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows == 0 || cols == 0) {
      throw ShapeError("matrix dimensions must be positive, got " + shape_string(rows, cols));
    }
    if (data_.size() != rows * cols) {
      throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_string(rows, cols));
    }
  }

  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    if (rows_ == 0 || cols_ == 0) throw ShapeError("matrix literal must be non-empty");
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> d) {
    Matrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::string shape() const { return shape_string(rows_, cols_); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept { return {data_.data() + i * cols_, cols_}; }

  std::vector<double> col(std::size_t j) const {
    std::vector<double> c(rows_);
    for (std::size_t i = 0; i < rows_; ++i) c[i] = (*this)(i, j);
    return c;
  }

  void set_col(std::size_t j, std::span<const double> c) {
    if (c.size() != rows_) throw ShapeError("column length mismatch for " + shape());
    for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = c[i];
  }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  /// Copy of the sub-block [r0, r0+nr) x [c0, c0+nc).
  Matrix block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const {
    if (r0 + nr > rows_ || c0 + nc > cols_) {
      throw ShapeError("block exceeds bounds of " + shape());
    }
    Matrix b(nr, nc);
    for (std::size_t i = 0; i < nr; ++i)
      for (std::size_t j = 0; j < nc; ++j) b(i, j) = (*this)(r0 + i, c0 + j);
    return b;
  }

  Matrix leading_cols(std::size_t k) const { return block(0, 0, rows_, k); }
  Matrix leading_rows(std::size_t k) const { return block(0, 0, k, cols_); }

  Matrix& operator+=(const Matrix& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    require_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) noexcept {
    for (double& x : data_) x *= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }
  friend Matrix operator-(Matrix a) { return a *= -1.0; }

  bool operator==(const Matrix& o) const = default;

  double frobenius_norm() const noexcept {
    double s = 0.0;
    for (double x : data_) s += x * x;
    return std::sqrt(s);
  }

  double max_abs() const noexcept {
    double m = 0.0;
    for (double x : data_) m = std::max(m, std::abs(x));
    return m;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  static std::string shape_string(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
  }

 private:
  void require_same_shape(const Matrix& o, const char* op) const {
    if (rows_ != o.rows_ || cols_ != o.cols_) {
      throw ShapeError(std::string("shape mismatch in ") + op + ": " + shape() + " vs " + o.shape());
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// a * b.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul shape mismatch: " + a.shape() + " * " + b.shape());
  }
  Matrix c(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* ci = c.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* bk = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

/// aᵀ * b without forming the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn shape mismatch: (" + a.shape() + ")^T * " + b.shape());
  }
  Matrix c(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* bk = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* ci = c.row(i).data();
      for (std::size_t j = 0; j < n; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

/// a * bᵀ without forming the transpose.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt shape mismatch: " + a.shape() + " * (" + b.shape() + ")^T");
  }
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto bj = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < ai.size(); ++k) s += ai[k] * bj[k];
      c(i, j) = s;
    }
  }
  return c;
}

/// Frobenius inner product <a, b>.
inline double frobenius_dot(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("frobenius_dot shape mismatch: " + a.shape() + " vs " + b.shape());
  }
  double s = 0.0;
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) s += da[i] * db[i];
  return s;
}

/// [a | b]: columns of b appended to a.
inline Matrix hconcat(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ShapeError("hconcat row mismatch: " + a.shape() + " | " + b.shape());
  Matrix c(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::copy(a.row(i).begin(), a.row(i).end(), c.row(i).begin());
    std::copy(b.row(i).begin(), b.row(i).end(), c.row(i).begin() + static_cast<long>(a.cols()));
  }
  return c;
}

/// [a; b]: rows of b appended below a.
inline Matrix vconcat(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("vconcat column mismatch: " + a.shape() + " ; " + b.shape());
  std::vector<double> d(a.data().begin(), a.data().end());
  d.insert(d.end(), b.data().begin(), b.data().end());
  return Matrix(a.rows() + b.rows(), a.cols(), std::move(d));
}

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

}  // namespace inrank

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace d2quant {

// Dense row-major matrix of 32-bit reals. Value-constructing paths reject
// non-finite entries; reductions over entries accumulate in double.
class Matrix {
 public:
  Matrix() = default;
  // zero-filled
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> values);

  static Matrix from_rows(std::initializer_list<std::initializer_list<float>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  const float& operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }

  std::span<float> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const float> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  std::vector<float>& data() noexcept { return data_; }
  const std::vector<float>& data() const noexcept { return data_; }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const noexcept;

  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
// a * b^T; the common shape for x * W^T projections
Matrix matmul_nt(const Matrix& a, const Matrix& b);

// sum_i a[i,j] * b[i,j]
double col_dot(const Matrix& a, const Matrix& b, std::size_t j);

// y[t] = x[t] / sqrt(mean(x[t]^2) + eps) * gamma + bias, per row
Matrix rmsnorm(const Matrix& x, std::span<const float> gamma,
               std::span<const float> bias, float eps);

Matrix softmax_rows(const Matrix& x);
Matrix silu(const Matrix& x);
Matrix add(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& x);

// per-row mean / population variance (divide by the row length)
std::vector<double> row_mean(const Matrix& x);
std::vector<double> row_var(const Matrix& x);

// ||a - b||_F^2 accumulated in double
double frob_sq_diff(const Matrix& a, const Matrix& b);
double frob_norm(const Matrix& a);

// column j of m scaled by v[j] / divided by v[j]
Matrix scale_cols(const Matrix& m, std::span<const float> v);
Matrix divide_cols(const Matrix& m, std::span<const float> v);
Matrix scale_rows(const Matrix& m, std::span<const float> v);

std::vector<float> col_abs_max(const Matrix& m);

}  // namespace d2quant

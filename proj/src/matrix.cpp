// SPDX-License-Identifier: Apache-2.0
#include "d2quant/matrix.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "d2quant/threading.hpp"

namespace d2quant {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_nonempty(const Matrix& m, const char* op) {
  require(!m.empty(), std::string(op) + ": empty input");
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  require(a.same_shape(b), std::string(op) + ": shape mismatch (" +
                               std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                               " vs " + std::to_string(b.rows()) + "x" +
                               std::to_string(b.cols()) + ")");
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {
  require(rows > 0 && cols > 0, "Matrix: dimensions must be positive");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  require(rows > 0 && cols > 0, "Matrix: dimensions must be positive");
  require(data_.size() == rows * cols, "Matrix: data length " +
                                           std::to_string(data_.size()) +
                                           " does not equal rows*cols");
  require(all_finite(), "Matrix: non-finite entry");
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  require(rows.size() > 0 && rows.begin()->size() > 0, "Matrix: empty literal");
  std::vector<float> values;
  values.reserve(rows.size() * rows.begin()->size());
  const std::size_t cols = rows.begin()->size();
  for (const auto& r : rows) {
    require(r.size() == cols, "Matrix: ragged literal");
    values.insert(values.end(), r.begin(), r.end());
  }
  return Matrix(rows.size(), cols, std::move(values));
}

bool Matrix::all_finite() const noexcept {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_nonempty(a, "matmul");
  require_nonempty(b, "matmul");
  require(a.cols() == b.rows(), "matmul: inner dimensions disagree (" +
                                    std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.rows()) + ")");
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols(), k_dim = a.cols();
  parallel_for(a.rows(), 8, [&](std::size_t r0, std::size_t r1) {
    std::vector<double> acc(n);
    for (std::size_t i = r0; i < r1; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t k = 0; k < k_dim; ++k) {
        const double aik = a(i, k);
        const float* brow = b.row(k).data();
        for (std::size_t j = 0; j < n; ++j) acc[j] += aik * brow[j];
      }
      float* orow = out.row(i).data();
      for (std::size_t j = 0; j < n; ++j) orow[j] = static_cast<float>(acc[j]);
    }
  });
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require_nonempty(a, "matmul_nt");
  require_nonempty(b, "matmul_nt");
  require(a.cols() == b.cols(), "matmul_nt: inner dimensions disagree (" +
                                    std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.cols()) + ")");
  Matrix out(a.rows(), b.rows());
  const std::size_t k_dim = a.cols();
  parallel_for(a.rows(), 8, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      const float* arow = a.row(i).data();
      for (std::size_t j = 0; j < b.rows(); ++j) {
        const float* brow = b.row(j).data();
        double acc = 0.0;
        for (std::size_t k = 0; k < k_dim; ++k)
          acc += static_cast<double>(arow[k]) * static_cast<double>(brow[k]);
        out(i, j) = static_cast<float>(acc);
      }
    }
  });
  return out;
}

double col_dot(const Matrix& a, const Matrix& b, std::size_t j) {
  require_same_shape(a, b, "col_dot");
  require(j < a.cols(), "col_dot: column index out of range");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    acc += static_cast<double>(a(i, j)) * static_cast<double>(b(i, j));
  return acc;
}

Matrix rmsnorm(const Matrix& x, std::span<const float> gamma,
               std::span<const float> bias, float eps) {
  require_nonempty(x, "rmsnorm");
  require(gamma.size() == x.cols() && bias.size() == x.cols(),
          "rmsnorm: gamma/bias length mismatch");
  require(eps > 0.0f, "rmsnorm: eps must be positive");
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double ms = 0.0;
    const float* xi = x.row(i).data();
    for (std::size_t j = 0; j < x.cols(); ++j)
      ms += static_cast<double>(xi[j]) * static_cast<double>(xi[j]);
    const double inv = 1.0 / std::sqrt(ms / static_cast<double>(x.cols()) +
                                       static_cast<double>(eps));
    float* oi = out.row(i).data();
    for (std::size_t j = 0; j < x.cols(); ++j)
      oi[j] = static_cast<float>(static_cast<double>(xi[j]) * inv *
                                 static_cast<double>(gamma[j])) +
              bias[j];
  }
  return out;
}

Matrix softmax_rows(const Matrix& x) {
  require_nonempty(x, "softmax_rows");
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const float* xi = x.row(i).data();
    float mx = xi[0];
    for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, xi[j]);
    double denom = 0.0;
    float* oi = out.row(i).data();
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double e = std::exp(static_cast<double>(xi[j]) - static_cast<double>(mx));
      oi[j] = static_cast<float>(e);
      denom += e;
    }
    const double inv = 1.0 / denom;
    for (std::size_t j = 0; j < x.cols(); ++j)
      oi[j] = static_cast<float>(static_cast<double>(oi[j]) * inv);
  }
  return out;
}

Matrix silu(const Matrix& x) {
  require_nonempty(x, "silu");
  Matrix out(x.rows(), x.cols());
  for (std::size_t idx = 0; idx < x.size(); ++idx) {
    const double v = x.data()[idx];
    out.data()[idx] = static_cast<float>(v / (1.0 + std::exp(-v)));
  }
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_nonempty(a, "add");
  require_same_shape(a, b, "add");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_nonempty(a, "hadamard");
  require_same_shape(a, b, "hadamard");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i)
    out.data()[i] = a.data()[i] * b.data()[i];
  return out;
}

Matrix transpose(const Matrix& x) {
  require_nonempty(x, "transpose");
  Matrix out(x.cols(), x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(j, i) = x(i, j);
  return out;
}

std::vector<double> row_mean(const Matrix& x) {
  require_nonempty(x, "row_mean");
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (float v : x.row(i)) s += v;
    out[i] = s / static_cast<double>(x.cols());
  }
  return out;
}

std::vector<double> row_var(const Matrix& x) {
  require_nonempty(x, "row_var");
  const std::vector<double> means = row_mean(x);
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (float v : x.row(i)) {
      const double d = static_cast<double>(v) - means[i];
      s += d * d;
    }
    out[i] = s / static_cast<double>(x.cols());
  }
  return out;
}

double frob_sq_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "frob_sq_diff");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
    s += d * d;
  }
  return s;
}

double frob_norm(const Matrix& a) {
  double s = 0.0;
  for (float v : a.data()) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

Matrix scale_cols(const Matrix& m, std::span<const float> v) {
  require(v.size() == m.cols(), "scale_cols: length mismatch");
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(i, j) * v[j];
  return out;
}

Matrix divide_cols(const Matrix& m, std::span<const float> v) {
  require(v.size() == m.cols(), "divide_cols: length mismatch");
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      out(i, j) = static_cast<float>(static_cast<double>(m(i, j)) /
                                     static_cast<double>(v[j]));
  return out;
}

Matrix scale_rows(const Matrix& m, std::span<const float> v) {
  require(v.size() == m.rows(), "scale_rows: length mismatch");
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(i, j) * v[i];
  return out;
}

std::vector<float> col_abs_max(const Matrix& m) {
  require_nonempty(m, "col_abs_max");
  std::vector<float> out(m.cols(), 0.0f);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j)
      out[j] = std::max(out[j], std::abs(m(i, j)));
  return out;
}

}  // namespace d2quant

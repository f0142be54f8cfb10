// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "d2quant/matrix.hpp"
#include "test_support.hpp"

using namespace d2quant;
using d2q_test::random_matrix;

TEST_CASE("matmul identity cases") {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  const Matrix eye = Matrix::from_rows({{1, 0}, {0, 1}});
  CHECK(matmul(eye, a) == a);
  CHECK(matmul(a, eye) == a);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(11);
  const Matrix a = random_matrix(rng, 3, 4);
  const Matrix b = random_matrix(rng, 4, 2);
  const Matrix c = matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k)
        acc += static_cast<double>(a(i, k)) * static_cast<double>(b(k, j));
      CHECK(c(i, j) == doctest::Approx(acc).epsilon(1e-6));
    }
}

TEST_CASE("matmul rejects dimension mismatch and empty input") {
  const Matrix a(2, 3);
  const Matrix b(2, 3);
  CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(matmul(Matrix{}, a), std::invalid_argument);
}

TEST_CASE("matmul associativity on random matrices") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(rng, 4, 5);
    const Matrix b = random_matrix(rng, 5, 3);
    const Matrix c = random_matrix(rng, 3, 6);
    const Matrix left = matmul(matmul(a, b), c);
    const Matrix right = matmul(a, matmul(b, c));
    CHECK(d2q_test::max_rel_diff(left, right) < 1e-4);
  }
}

TEST_CASE("matmul_nt equals matmul with explicit transpose") {
  Rng rng(13);
  const Matrix a = random_matrix(rng, 5, 7);
  const Matrix b = random_matrix(rng, 4, 7);
  CHECK(matmul_nt(a, b) == matmul(a, transpose(b)));
}

TEST_CASE("col_dot basics and oracle") {
  const Matrix v = Matrix::from_rows({{1}, {2}});
  CHECK(col_dot(v, v, 0) == doctest::Approx(5.0));

  const Matrix z(2, 1);
  CHECK(col_dot(z, v, 0) == 0.0);

  Rng rng(14);
  const Matrix a = random_matrix(rng, 16, 4);
  const Matrix b = random_matrix(rng, 16, 4);
  double acc = 0.0;
  for (std::size_t i = 0; i < 16; ++i)
    acc += static_cast<double>(a(i, 2)) * static_cast<double>(b(i, 2));
  CHECK(col_dot(a, b, 2) == doctest::Approx(acc).epsilon(1e-12));

  CHECK_THROWS_AS(col_dot(a, b, 4), std::invalid_argument);
  CHECK_THROWS_AS(col_dot(a, random_matrix(rng, 4, 4), 0), std::invalid_argument);
}

TEST_CASE("rmsnorm unit and bias pass-through cases") {
  const std::vector<float> ones(4, 1.0f);
  const std::vector<float> zeros(4, 0.0f);

  const Matrix x(1, 4, {1, 1, 1, 1});
  const Matrix y = rmsnorm(x, ones, zeros, 1e-12f);
  for (float v : y.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));

  const Matrix x0(3, 4);
  const std::vector<float> bias = {0.5f, -1.0f, 2.0f, 0.0f};
  const Matrix yb = rmsnorm(x0, ones, bias, 1e-6f);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t j = 0; j < 4; ++j) CHECK(yb(t, j) == bias[j]);
}

TEST_CASE("rmsnorm matches definitional oracle") {
  Rng rng(15);
  const Matrix x = random_matrix(rng, 6, 8, -2.0f, 2.0f);
  const auto gamma = d2q_test::random_vector(rng, 8, 0.5f, 1.5f);
  const auto bias = d2q_test::random_vector(rng, 8, -0.5f, 0.5f);
  const float eps = 1e-6f;
  const Matrix y = rmsnorm(x, gamma, bias, eps);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    double ms = 0.0;
    for (std::size_t j = 0; j < 8; ++j)
      ms += static_cast<double>(x(t, j)) * static_cast<double>(x(t, j));
    ms = ms / 8.0 + eps;
    for (std::size_t j = 0; j < 8; ++j) {
      const double want = static_cast<double>(x(t, j)) / std::sqrt(ms) * gamma[j] + bias[j];
      CHECK(y(t, j) == doctest::Approx(want).epsilon(1e-6));
    }
  }
  CHECK_THROWS_AS(rmsnorm(x, gamma, std::vector<float>(7, 0.0f), eps),
                  std::invalid_argument);
}

TEST_CASE("softmax constant row is uniform, silu fixed point, row stats") {
  const Matrix c(1, 4, {3.25f, 3.25f, 3.25f, 3.25f});
  const Matrix sm = softmax_rows(c);
  for (float v : sm.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-6));

  const Matrix z(1, 1);
  CHECK(silu(z)(0, 0) == 0.0f);

  const Matrix two(1, 2, {1.0f, -1.0f});
  CHECK(row_mean(two)[0] == doctest::Approx(0.0));
  CHECK(row_var(two)[0] == doctest::Approx(1.0));

  CHECK_THROWS_AS(softmax_rows(Matrix{}), std::invalid_argument);
}

TEST_CASE("softmax rows sum to one and shift invariance") {
  Rng rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix x = random_matrix(rng, 3, 9, -4.0f, 4.0f);
    const Matrix p = softmax_rows(x);
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double sum = 0.0;
      for (float v : p.row(i)) sum += v;
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    Matrix shifted = x;
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) shifted(i, j) += 2.5f;
    const Matrix q = softmax_rows(shifted);
    for (std::size_t i = 0; i < p.size(); ++i)
      CHECK(std::abs(p.data()[i] - q.data()[i]) < 1e-6);
  }
}

TEST_CASE("row moments satisfy E[x^2] = var + mean^2") {
  Rng rng(17);
  const Matrix x = random_matrix(rng, 5, 32, -3.0f, 3.0f);
  const auto mean = row_mean(x);
  const auto var = row_var(x);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double sq = 0.0;
    for (float v : x.row(i)) sq += static_cast<double>(v) * static_cast<double>(v);
    sq /= static_cast<double>(x.cols());
    CHECK(sq == doctest::Approx(var[i] + mean[i] * mean[i]).epsilon(1e-6));
  }
}

TEST_CASE("constructors reject non-finite entries and bad shapes") {
  CHECK_THROWS_AS(Matrix(1, 2, {1.0f, NAN}), std::invalid_argument);
  CHECK_THROWS_AS(Matrix(1, 2, {1.0f, INFINITY}), std::invalid_argument);
  CHECK_THROWS_AS(Matrix(2, 2, {1.0f, 2.0f}), std::invalid_argument);
  CHECK_THROWS_AS(Matrix(0, 2), std::invalid_argument);
}

TEST_CASE("transpose, add, hadamard shapes and values") {
  const Matrix a = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  const Matrix t = transpose(a);
  CHECK(t.rows() == 3);
  CHECK(t(0, 1) == 4.0f);
  CHECK(add(a, a)(1, 2) == 12.0f);
  CHECK(hadamard(a, a)(0, 2) == 9.0f);
  CHECK_THROWS_AS(add(a, t), std::invalid_argument);
}

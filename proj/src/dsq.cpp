// SPDX-License-Identifier: Apache-2.0
#include "d2quant/dsq.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace d2quant {

namespace {

constexpr double kDenomGuard = 1e-12;
constexpr double kRelStopTol = 1e-6;

// ||w - q_hat * diag(s)||_F^2
double dual_scale_objective(const Matrix& w, const Matrix& q_hat,
                            std::span<const float> s) {
  double acc = 0.0;
  for (std::size_t i = 0; i < w.rows(); ++i) {
    for (std::size_t j = 0; j < w.cols(); ++j) {
      const double d = static_cast<double>(w(i, j)) -
                       static_cast<double>(q_hat(i, j)) * static_cast<double>(s[j]);
      acc += d * d;
    }
  }
  return acc;
}

}  // namespace

std::pair<Matrix, Matrix> apply_updown_scaling(const Matrix& w_up,
                                               const Matrix& w_gate,
                                               const Matrix& w_down,
                                               const UpDownScaling& eta) {
  const std::size_t h = w_up.rows();
  if (w_gate.rows() != h || w_gate.cols() != w_up.cols())
    throw std::invalid_argument("apply_updown_scaling: gate/up shape mismatch");
  if (w_down.cols() != h)
    throw std::invalid_argument("apply_updown_scaling: down has " +
                                std::to_string(w_down.cols()) +
                                " columns, expected " + std::to_string(h));
  if (eta.eta.size() != h)
    throw std::invalid_argument("apply_updown_scaling: eta length mismatch");
  for (float e : eta.eta)
    if (!(e > 0.0f) || !std::isfinite(e))
      throw std::invalid_argument("apply_updown_scaling: eta entries must be positive");

  Matrix up = scale_rows(w_up, eta.eta);
  Matrix down = divide_cols(w_down, eta.eta);
  return {std::move(up), std::move(down)};
}

UpDownScaling static_smooth_eta(const Matrix& w_down) {
  const std::vector<float> maxes = col_abs_max(w_down);
  double sum = 0.0;
  std::size_t nonzero = 0;
  for (float m : maxes) {
    if (m > 0.0f) {
      sum += m;
      ++nonzero;
    }
  }
  UpDownScaling out;
  out.eta.assign(maxes.size(), 1.0f);
  if (nonzero == 0) return out;  // all-zero matrix: identity scaling
  const double mean = sum / static_cast<double>(nonzero);
  for (std::size_t j = 0; j < maxes.size(); ++j)
    if (maxes[j] > 0.0f)
      out.eta[j] = static_cast<float>(static_cast<double>(maxes[j]) / mean);
  return out;
}

std::vector<float> optimal_col_scale(const Matrix& w, const Matrix& q_hat) {
  if (!w.same_shape(q_hat))
    throw std::invalid_argument("optimal_col_scale: shape mismatch");
  std::vector<float> s(w.cols(), 1.0f);
  for (std::size_t j = 0; j < w.cols(); ++j) {
    const double denom = col_dot(q_hat, q_hat, j);
    if (std::abs(denom) < kDenomGuard) continue;
    const double num = col_dot(w, q_hat, j);
    const float sj = static_cast<float>(num / denom);
    // an exactly-zero fit cannot be folded; keep the identity instead
    s[j] = (sj == 0.0f) ? 1.0f : sj;
  }
  return s;
}

DualScaleResult dsq_quantize(const Matrix& w_down, const QuantConfig& cfg, int iters) {
  if (iters < 0) throw std::invalid_argument("dsq_quantize: negative iteration count");
  cfg.validate_for(w_down.cols());

  DualScaleResult result;
  std::vector<float> s(w_down.cols(), 1.0f);

  // iteration 0: the plain quantizer at s^c = 1
  QuantizedTensor q = quantize(w_down, cfg);
  Matrix q_hat = dequantize(q);
  double best_obj = frob_sq_diff(w_down, q_hat);
  result.objective_trace.push_back(best_obj);
  result.q_down = q;
  result.col_scale = s;

  double prev_obj = best_obj;
  for (int it = 1; it <= iters; ++it) {
    if (it > 1) {
      // Q-step on the column-normalized weights
      q = quantize(divide_cols(w_down, s), cfg);
      q_hat = dequantize(q);
    }
    s = optimal_col_scale(w_down, q_hat);
    const double obj = dual_scale_objective(w_down, q_hat, s);
    result.objective_trace.push_back(obj);
    result.iterations_run = it;
    if (obj < best_obj) {
      best_obj = obj;
      result.q_down = q;
      result.col_scale = s;
    }
    if (prev_obj - obj < kRelStopTol * std::max(prev_obj, 1e-30)) break;
    prev_obj = obj;
  }

  // the retained iterate closes the trace
  if (result.objective_trace.back() != best_obj)
    result.objective_trace.push_back(best_obj);
  return result;
}

QuantizedTensor fold_scale(QuantizedTensor q_up, std::span<const float> col_scale) {
  if (col_scale.size() != q_up.rows())
    throw std::invalid_argument("fold_scale: scale length " +
                                std::to_string(col_scale.size()) +
                                " does not match " + std::to_string(q_up.rows()) +
                                " rows");
  for (float c : col_scale)
    if (c == 0.0f || !std::isfinite(c))
      throw std::invalid_argument("fold_scale: scale entries must be finite and nonzero");
  for (std::size_t i = 0; i < q_up.rows(); ++i)
    for (std::size_t g = 0; g < q_up.n_groups(); ++g)
      q_up.scales(i, g) *= col_scale[i];
  return q_up;
}

Matrix mlp_forward(const Matrix& x, const Matrix& w_up, const Matrix& w_gate,
                   const Matrix& w_down) {
  Matrix gated = hadamard(silu(matmul_nt(x, w_gate)), matmul_nt(x, w_up));
  return matmul_nt(gated, w_down);
}

}  // namespace d2quant

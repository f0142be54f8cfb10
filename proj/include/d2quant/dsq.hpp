// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "d2quant/quantizer.hpp"

namespace d2quant {

// Per-channel scaling vector inserted between up- and down-projections.
struct UpDownScaling {
  std::vector<float> eta;  // all entries positive and finite
};

struct DualScaleResult {
  QuantizedTensor q_down;              // codes for W / s^c
  std::vector<float> col_scale;        // s^c, one entry per down-projection column
  std::vector<double> objective_trace; // squared Frobenius error per iteration;
                                       // entry 0 is the plain-quantizer baseline,
                                       // the last entry is the retained minimum
  int iterations_run = 0;
};

// (diag(eta) * w_up, w_down * diag(eta)^-1). w_gate participates only in the
// shape check; its values never change. In full precision the gated-MLP
// output over the transformed pair matches the original.
std::pair<Matrix, Matrix> apply_updown_scaling(const Matrix& w_up,
                                               const Matrix& w_gate,
                                               const Matrix& w_down,
                                               const UpDownScaling& eta);

// Smoothing baseline: eta_j = colmax_j(|w_down|) / mean of the column maxima,
// 1 for all-zero columns. After the transform every nonzero column of w_down
// shares the same max-abs.
UpDownScaling static_smooth_eta(const Matrix& w_down);

// Exact per-column least squares for s given a frozen dequantized
// approximation: s_j = <w_j, q_j> / <q_j, q_j>. Degenerate columns
// (|denominator| < 1e-12, or an exactly-zero solution) map to 1 so the
// result always folds.
std::vector<float> optimal_col_scale(const Matrix& w, const Matrix& q_hat);

// Alternating optimization of down-projection codes and the column scale:
// quantize W / s^c, then refit s^c in closed form, keeping the best iterate
// seen (including the plain-quantizer baseline). Stops early once the
// objective improves by less than 1e-6 relative between iterations.
DualScaleResult dsq_quantize(const Matrix& w_down, const QuantConfig& cfg, int iters);

// Multiplies every group scale of row i by col_scale[i]; codes and zero
// points stay bit-identical. Rejects zero entries.
QuantizedTensor fold_scale(QuantizedTensor q_up, std::span<const float> col_scale);

// Gated-MLP forward: (silu(x w_gate^T) ⊙ (x w_up^T)) w_down^T.
// Shared by the DSQ equivalence checks and the simulator.
Matrix mlp_forward(const Matrix& x, const Matrix& w_up, const Matrix& w_gate,
                   const Matrix& w_down);

}  // namespace d2quant

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "d2quant/matrix.hpp"

namespace d2quant {

// Per-feature statistics of the activation deviation (full precision minus
// quantized) at one normalization site, pooled over tokens.
//
// Two signal-to-noise forms coexist: snr_diag uses |mu| / (sigma2 + 1e-12)
// and is reporting-only; reduction uses the mu^2 / (mu^2 + sigma2) form that
// also predicts the MSE drop from mean alignment. A feature with
// mu^2 + sigma2 below 1e-20 carries no deviation, so its reduction is 0.
struct DeviationStats {
  std::vector<double> mu;
  std::vector<double> sigma2;     // population variance over tokens
  std::vector<double> snr_diag;
  std::vector<double> reduction;
  std::size_t token_count = 0;

  std::size_t features() const { return mu.size(); }
};

DeviationStats deviation_stats(const Matrix& y_fp, const Matrix& y_q);

// The mean deviation, cast to the model's parameter precision. Adding it to
// the quantized output zeroes the mean residual on the measured data.
std::vector<float> calibrate_bias(const Matrix& y_fp, const Matrix& y_q);

// mu^2 / (mu^2 + sigma2) per feature; 0 below the 1e-20 deviation floor.
std::vector<double> predict_reduction(const DeviationStats& stats);

// Empirical counterpart: 1 - MSE(y_fp, y_q + bias) / MSE(y_fp, y_q) per
// feature, 0 where the uncorrected MSE is 0.
std::vector<double> realized_reduction(const Matrix& y_fp, const Matrix& y_q,
                                       std::span<const float> bias);

// Streaming one-pass accumulation of the same statistics (Welford), used by
// the pipeline so calibration activations never have to be held all at once.
class DeviationAccumulator {
 public:
  explicit DeviationAccumulator(std::size_t features);

  void add(const Matrix& y_fp, const Matrix& y_q);
  DeviationStats finalize() const;  // throws if no tokens were added

  std::size_t token_count() const { return count_; }
  // mean over tokens of the squared deviation, mu^2 + sigma2 per feature
  std::vector<double> mean_sq_deviation() const;

 private:
  std::size_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

}  // namespace d2quant

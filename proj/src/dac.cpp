// SPDX-License-Identifier: Apache-2.0
#include "d2quant/dac.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace d2quant {

namespace {

constexpr double kSnrEps = 1e-12;
constexpr double kDeviationFloor = 1e-20;

void require_pair(const Matrix& y_fp, const Matrix& y_q, const char* op) {
  if (y_fp.empty() || y_q.empty())
    throw std::invalid_argument(std::string(op) + ": empty input");
  if (!y_fp.same_shape(y_q))
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

std::vector<double> reduction_from(const std::vector<double>& mu,
                                   const std::vector<double>& sigma2) {
  std::vector<double> out(mu.size());
  for (std::size_t j = 0; j < mu.size(); ++j) {
    const double power = mu[j] * mu[j] + sigma2[j];
    out[j] = power < kDeviationFloor ? 0.0 : (mu[j] * mu[j]) / power;
  }
  return out;
}

std::vector<double> snr_from(const std::vector<double>& mu,
                             const std::vector<double>& sigma2) {
  std::vector<double> out(mu.size());
  for (std::size_t j = 0; j < mu.size(); ++j)
    out[j] = std::abs(mu[j]) / (sigma2[j] + kSnrEps);
  return out;
}

}  // namespace

DeviationStats deviation_stats(const Matrix& y_fp, const Matrix& y_q) {
  require_pair(y_fp, y_q, "deviation_stats");
  DeviationAccumulator acc(y_fp.cols());
  acc.add(y_fp, y_q);
  return acc.finalize();
}

std::vector<float> calibrate_bias(const Matrix& y_fp, const Matrix& y_q) {
  const DeviationStats stats = deviation_stats(y_fp, y_q);
  std::vector<float> bias(stats.features());
  for (std::size_t j = 0; j < bias.size(); ++j)
    bias[j] = static_cast<float>(stats.mu[j]);
  return bias;
}

std::vector<double> predict_reduction(const DeviationStats& stats) {
  return reduction_from(stats.mu, stats.sigma2);
}

std::vector<double> realized_reduction(const Matrix& y_fp, const Matrix& y_q,
                                       std::span<const float> bias) {
  require_pair(y_fp, y_q, "realized_reduction");
  if (bias.size() != y_fp.cols())
    throw std::invalid_argument("realized_reduction: bias length mismatch");
  const std::size_t n = y_fp.rows(), h = y_fp.cols();
  std::vector<double> mse_before(h, 0.0), mse_after(h, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < h; ++j) {
      const double d = static_cast<double>(y_fp(t, j)) - static_cast<double>(y_q(t, j));
      mse_before[j] += d * d;
      const double da = d - static_cast<double>(bias[j]);
      mse_after[j] += da * da;
    }
  }
  std::vector<double> out(h);
  for (std::size_t j = 0; j < h; ++j)
    out[j] = mse_before[j] == 0.0 ? 0.0 : 1.0 - mse_after[j] / mse_before[j];
  return out;
}

DeviationAccumulator::DeviationAccumulator(std::size_t features)
    : mean_(features, 0.0), m2_(features, 0.0) {
  if (features == 0)
    throw std::invalid_argument("DeviationAccumulator: zero features");
}

void DeviationAccumulator::add(const Matrix& y_fp, const Matrix& y_q) {
  require_pair(y_fp, y_q, "DeviationAccumulator::add");
  if (y_fp.cols() != mean_.size())
    throw std::invalid_argument("DeviationAccumulator::add: feature count mismatch");
  for (std::size_t t = 0; t < y_fp.rows(); ++t) {
    ++count_;
    const double n = static_cast<double>(count_);
    for (std::size_t j = 0; j < mean_.size(); ++j) {
      const double d = static_cast<double>(y_fp(t, j)) - static_cast<double>(y_q(t, j));
      const double delta = d - mean_[j];
      mean_[j] += delta / n;
      m2_[j] += delta * (d - mean_[j]);
    }
  }
}

DeviationStats DeviationAccumulator::finalize() const {
  if (count_ == 0)
    throw std::invalid_argument("DeviationAccumulator: no tokens accumulated");
  DeviationStats stats;
  stats.token_count = count_;
  stats.mu = mean_;
  stats.sigma2.resize(m2_.size());
  for (std::size_t j = 0; j < m2_.size(); ++j) {
    const double v = m2_[j] / static_cast<double>(count_);
    stats.sigma2[j] = v < 0.0 ? 0.0 : v;  // clamp fp negatives near zero
  }
  stats.snr_diag = snr_from(stats.mu, stats.sigma2);
  stats.reduction = reduction_from(stats.mu, stats.sigma2);
  return stats;
}

std::vector<double> DeviationAccumulator::mean_sq_deviation() const {
  if (count_ == 0)
    throw std::invalid_argument("DeviationAccumulator: no tokens accumulated");
  std::vector<double> out(mean_.size());
  for (std::size_t j = 0; j < mean_.size(); ++j)
    out[j] = m2_[j] / static_cast<double>(count_) + mean_[j] * mean_[j];
  return out;
}

}  // namespace d2quant

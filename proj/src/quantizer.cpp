// SPDX-License-Identifier: Apache-2.0
#include "d2quant/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "d2quant/threading.hpp"

namespace d2quant {

void QuantConfig::validate_for(std::size_t cols) const {
  if (!bits_supported())
    throw std::invalid_argument("QuantConfig: unsupported bit-width " +
                                std::to_string(bits) + " (expected 2, 3, 4 or 8)");
  const std::uint32_t g = effective_group(cols);
  if (g == 0 || cols % g != 0)
    throw std::invalid_argument("QuantConfig: group size " + std::to_string(g) +
                                " does not divide " + std::to_string(cols) +
                                " input channels");
}

void QuantizedTensor::validate() const {
  if (codes.rows == 0 || codes.cols == 0)
    throw std::invalid_argument("QuantizedTensor: empty codes");
  if (bits != 2 && bits != 3 && bits != 4 && bits != 8)
    throw std::invalid_argument("QuantizedTensor: unsupported bit-width");
  if (group_size == 0 || codes.cols % group_size != 0)
    throw std::invalid_argument("QuantizedTensor: group size does not divide cols");
  const std::size_t groups = codes.cols / group_size;
  if (scales.rows() != codes.rows || scales.cols() != groups)
    throw std::invalid_argument("QuantizedTensor: scales shape mismatch");
  if (zero_points.rows != codes.rows || zero_points.cols != groups)
    throw std::invalid_argument("QuantizedTensor: zero_points shape mismatch");
  const std::uint8_t max_code = static_cast<std::uint8_t>((1u << bits) - 1u);
  for (std::uint8_t c : codes.data)
    if (c > max_code) throw std::invalid_argument("QuantizedTensor: code out of range");
  for (std::uint8_t z : zero_points.data)
    if (z > max_code)
      throw std::invalid_argument("QuantizedTensor: zero point out of range");
  for (float s : scales.data())
    if (!std::isfinite(s) || s == 0.0f)
      throw std::invalid_argument("QuantizedTensor: scale not finite and nonzero");
}

QuantizedTensor quantize(const Matrix& w, const QuantConfig& cfg) {
  if (w.empty()) throw std::invalid_argument("quantize: empty input");
  if (!w.all_finite()) throw std::invalid_argument("quantize: non-finite input");
  cfg.validate_for(w.cols());

  const std::uint32_t g = cfg.effective_group(w.cols());
  const std::size_t groups = w.cols() / g;
  const double levels = static_cast<double>((1u << cfg.bits) - 1u);
  const int max_code = static_cast<int>((1u << cfg.bits) - 1u);

  QuantizedTensor q;
  q.codes = U8Matrix(w.rows(), w.cols());
  q.scales = Matrix(w.rows(), groups);
  q.zero_points = U8Matrix(w.rows(), groups);
  q.bits = cfg.bits;
  q.group_size = g;

  parallel_for(w.rows(), 16, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      for (std::size_t grp = 0; grp < groups; ++grp) {
        const std::size_t j0 = grp * g;
        float gmin = w(i, j0), gmax = w(i, j0);
        for (std::size_t j = j0 + 1; j < j0 + g; ++j) {
          gmin = std::min(gmin, w(i, j));
          gmax = std::max(gmax, w(i, j));
        }
        // extend the range to include zero
        gmin = std::min(gmin, 0.0f);
        gmax = std::max(gmax, 0.0f);

        float s;
        if (gmax == gmin) {
          s = 1.0f;  // only reachable for an all-zero group
        } else {
          s = static_cast<float>(
              (static_cast<double>(gmax) - static_cast<double>(gmin)) / levels);
        }
        const double sd = static_cast<double>(s);
        int z = static_cast<int>(std::round(-static_cast<double>(gmin) / sd));
        z = std::clamp(z, 0, max_code);

        q.scales(i, grp) = s;
        q.zero_points.at(i, grp) = static_cast<std::uint8_t>(z);
        for (std::size_t j = j0; j < j0 + g; ++j) {
          int c = static_cast<int>(std::round(static_cast<double>(w(i, j)) / sd)) + z;
          c = std::clamp(c, 0, max_code);
          q.codes.at(i, j) = static_cast<std::uint8_t>(c);
        }
      }
    }
  });
  return q;
}

Matrix dequantize(const QuantizedTensor& q) {
  q.validate();
  Matrix out(q.rows(), q.cols());
  const std::uint32_t g = q.group_size;
  for (std::size_t i = 0; i < q.rows(); ++i) {
    for (std::size_t j = 0; j < q.cols(); ++j) {
      const std::size_t grp = j / g;
      const double s = q.scales(i, grp);
      const int delta = static_cast<int>(q.codes.at(i, j)) -
                        static_cast<int>(q.zero_points.at(i, grp));
      out(i, j) = static_cast<float>(s * static_cast<double>(delta));
    }
  }
  return out;
}

WeightSlot identity_quantize(const Matrix& w) {
  if (w.empty()) throw std::invalid_argument("identity_quantize: empty input");
  return WeightSlot{w};
}

Matrix dequantize(const WeightSlot& slot) {
  if (const auto* m = std::get_if<Matrix>(&slot)) return *m;
  return dequantize(std::get<QuantizedTensor>(slot));
}

bool is_quantized(const WeightSlot& slot) {
  return std::holds_alternative<QuantizedTensor>(slot);
}

}  // namespace d2quant

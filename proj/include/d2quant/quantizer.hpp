// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "d2quant/matrix.hpp"

namespace d2quant {

// group_size sentinel: one group spanning the whole row
inline constexpr std::uint32_t kPerChannel = 0;

struct QuantConfig {
  int bits = 4;                         // one of {2, 3, 4, 8}
  std::uint32_t group_size = 128;       // or kPerChannel

  bool bits_supported() const {
    return bits == 2 || bits == 3 || bits == 4 || bits == 8;
  }
  std::uint32_t effective_group(std::size_t cols) const {
    return group_size == kPerChannel ? static_cast<std::uint32_t>(cols) : group_size;
  }
  // throws std::invalid_argument on unsupported bits or non-dividing group
  void validate_for(std::size_t cols) const;
};

struct U8Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> data;

  U8Matrix() = default;
  U8Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}
  std::uint8_t& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  std::uint8_t at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  friend bool operator==(const U8Matrix& a, const U8Matrix& b) = default;
};

// Group-wise affine quantization state. Scales are stored as 32-bit reals;
// every arithmetic step that consumes them runs in double through the stored
// value, which is what the scalar reference in the tests pins down.
//
// Scales coming out of quantize() are strictly positive; after column-scale
// folding they are only guaranteed finite and nonzero.
struct QuantizedTensor {
  U8Matrix codes;        // rows x cols, one byte per code
  Matrix scales;         // rows x n_groups
  U8Matrix zero_points;  // rows x n_groups
  int bits = 0;
  std::uint32_t group_size = 0;  // effective width (cols for per-channel)

  std::size_t rows() const { return codes.rows; }
  std::size_t cols() const { return codes.cols; }
  std::size_t n_groups() const { return group_size == 0 ? 0 : codes.cols / group_size; }

  // throws std::invalid_argument when internal invariants are broken
  void validate() const;

  friend bool operator==(const QuantizedTensor& a, const QuantizedTensor& b) = default;
};

// Row-group min/max affine quantization. The dynamic range of each group is
// extended to include zero before deriving scale and zero-point, so zero is
// always exactly representable and all-constant groups round-trip exactly.
// Rounding is half-away-from-zero throughout.
QuantizedTensor quantize(const Matrix& w, const QuantConfig& cfg);

Matrix dequantize(const QuantizedTensor& q);

// A weight slot in the simulator: full precision or quantized.
using WeightSlot = std::variant<Matrix, QuantizedTensor>;

// No-op quantizer for pipeline regression runs; the round trip through
// dequantize() is bit-exact.
WeightSlot identity_quantize(const Matrix& w);

Matrix dequantize(const WeightSlot& slot);
bool is_quantized(const WeightSlot& slot);

}  // namespace d2quant

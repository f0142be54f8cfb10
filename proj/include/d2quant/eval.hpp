// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "d2quant/model.hpp"
#include "d2quant/pipeline.hpp"

namespace d2quant {

// Next-byte language-modeling metrics. Perplexity is exp of the mean
// negative log-likelihood in nats per predicted token.
struct EvalResult {
  double perplexity = 0.0;
  double mean_nll = 0.0;
  std::size_t token_count = 0;
  std::map<std::string, ReconstructionError> reconstruction;  // optional extra
};

// Cross-entropy over non-overlapping windows of seq_len bytes; the trailing
// partial window is dropped. Throws if the text is shorter than one window.
EvalResult evaluate_text(const ModelBundle& m, std::span<const std::uint8_t> text,
                         std::size_t seq_len);

// Same metric with each sequence treated as one window.
EvalResult evaluate_sequences(const ModelBundle& m,
                              std::span<const std::vector<std::uint8_t>> sequences);

// Per-tensor reconstruction of a quantized bundle against its full-precision
// source. Tensor names follow the artifact naming scheme.
std::map<std::string, ReconstructionError> reconstruction_table(
    const ModelBundle& reference, const ModelBundle& quantized);

}  // namespace d2quant

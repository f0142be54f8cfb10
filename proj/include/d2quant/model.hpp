// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "d2quant/matrix.hpp"
#include "d2quant/quantizer.hpp"

namespace d2quant {

// Decoder-only toy transformer over a byte-level vocabulary: pre-norm blocks
// with causal multi-head attention and a gated MLP, RMSNorm at both
// normalization sites. The post-attention norm carries an additive bias slot
// (stock RMSNorm has none); mean-shift correction writes into it.
struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 128;
  std::size_t vocab = 256;  // fixed: token ids are bytes
  std::size_t max_seq = 256;
  bool rope_enabled = true;
  float norm_eps = 1e-6f;

  std::size_t d_head() const { return d_model / n_heads; }
  void validate() const;  // throws std::invalid_argument
};

struct BlockWeights {
  WeightSlot w_q, w_k, w_v, w_o;      // d_model x d_model
  WeightSlot w_up, w_gate;            // d_ffn x d_model
  WeightSlot w_down;                  // d_model x d_ffn
  std::vector<float> pre_ln_gamma;        // d_model
  std::vector<float> post_attn_ln_gamma;  // d_model
  std::vector<float> post_attn_ln_bias;   // d_model, starts at zero
};

struct ModelBundle {
  ModelConfig config;
  Matrix embedding;                 // vocab x d_model
  std::vector<BlockWeights> blocks; // n_layers entries
  std::vector<float> final_norm_gamma;
  Matrix head;                      // vocab x d_model

  void validate() const;
};

enum class CaptureSite { none, post_attn_norm };

struct BlockOutput {
  Matrix y;
  std::optional<Matrix> captured;
};

// h = x + Attn(PreLN(x)); y = h + MLP(PostAttnLN(h)). Quantized slots are
// dequantized on the fly. capture = post_attn_norm also returns PostAttnLN(h).
BlockOutput block_forward(const BlockWeights& block, const ModelConfig& cfg,
                          const Matrix& x, CaptureSite capture = CaptureSite::none);

// PostAttnLN(x + Attn(PreLN(x))) without running the MLP; the calibration
// capture used by the pipeline and the diagnose pass.
Matrix post_attn_norm_site(const BlockWeights& block, const ModelConfig& cfg,
                           const Matrix& x);

Matrix embed_tokens(const ModelBundle& m, std::span<const std::uint8_t> tokens);

// embed -> blocks -> final norm -> head; logits are len(tokens) x vocab
Matrix model_forward(const ModelBundle& m, std::span<const std::uint8_t> tokens);

// Reproducible uniform init with per-tensor scale 1/sqrt(fan_in); the seed
// fully determines the bundle.
ModelBundle init_random(const ModelConfig& cfg, std::uint64_t seed);

}  // namespace d2quant

// SPDX-License-Identifier: Apache-2.0
#include "d2quant/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "d2quant/dsq.hpp"
#include "d2quant/rng.hpp"

namespace d2quant {

namespace {

constexpr double kRopeBase = 10000.0;

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void check_slot(const WeightSlot& slot, std::size_t rows, std::size_t cols,
                const std::string& name) {
  if (const auto* m = std::get_if<Matrix>(&slot)) {
    check(m->rows() == rows && m->cols() == cols, name + ": shape mismatch");
  } else {
    const auto& q = std::get<QuantizedTensor>(slot);
    check(q.rows() == rows && q.cols() == cols, name + ": shape mismatch");
  }
}

// Rotary position encoding applied in place to one head slice of q or k.
void apply_rope(Matrix& x, std::size_t col0, std::size_t d_head) {
  for (std::size_t t = 0; t < x.rows(); ++t) {
    for (std::size_t i = 0; i + 1 < d_head; i += 2) {
      const double theta =
          static_cast<double>(t) *
          std::pow(kRopeBase, -static_cast<double>(i) / static_cast<double>(d_head));
      const double c = std::cos(theta), s = std::sin(theta);
      const double x0 = x(t, col0 + i), x1 = x(t, col0 + i + 1);
      x(t, col0 + i) = static_cast<float>(x0 * c - x1 * s);
      x(t, col0 + i + 1) = static_cast<float>(x0 * s + x1 * c);
    }
  }
}

Matrix causal_attention(const Matrix& x, const BlockWeights& block,
                        const ModelConfig& cfg) {
  const std::size_t len = x.rows();
  const std::size_t dh = cfg.d_head();

  Matrix q = matmul_nt(x, dequantize(block.w_q));
  Matrix k = matmul_nt(x, dequantize(block.w_k));
  Matrix v = matmul_nt(x, dequantize(block.w_v));

  Matrix mixed(len, cfg.d_model);
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const std::size_t c0 = h * dh;
    if (cfg.rope_enabled) {
      apply_rope(q, c0, dh);
      apply_rope(k, c0, dh);
    }
    for (std::size_t t = 0; t < len; ++t) {
      // causal: position t sees keys 0..t
      Matrix scores(1, t + 1);
      for (std::size_t u = 0; u <= t; ++u) {
        double dot = 0.0;
        for (std::size_t d = 0; d < dh; ++d)
          dot += static_cast<double>(q(t, c0 + d)) * static_cast<double>(k(u, c0 + d));
        scores(0, u) = static_cast<float>(dot * inv_sqrt_dh);
      }
      const Matrix probs = softmax_rows(scores);
      for (std::size_t d = 0; d < dh; ++d) {
        double acc = 0.0;
        for (std::size_t u = 0; u <= t; ++u)
          acc += static_cast<double>(probs(0, u)) * static_cast<double>(v(u, c0 + d));
        mixed(t, c0 + d) = static_cast<float>(acc);
      }
    }
  }
  return matmul_nt(mixed, dequantize(block.w_o));
}

}  // namespace

void ModelConfig::validate() const {
  check(n_layers > 0 && d_model > 0 && n_heads > 0 && d_ffn > 0 && max_seq > 0,
        "ModelConfig: dimensions must be positive");
  check(vocab == 256, "ModelConfig: vocabulary is fixed to 256 byte tokens");
  check(d_model % n_heads == 0, "ModelConfig: n_heads must divide d_model");
  check(!rope_enabled || d_head() % 2 == 0,
        "ModelConfig: rotary encoding needs an even head dimension");
  check(norm_eps > 0.0f, "ModelConfig: norm_eps must be positive");
}

void ModelBundle::validate() const {
  config.validate();
  check(blocks.size() == config.n_layers, "ModelBundle: block count mismatch");
  check(embedding.rows() == config.vocab && embedding.cols() == config.d_model,
        "ModelBundle: embedding shape mismatch");
  check(head.rows() == config.vocab && head.cols() == config.d_model,
        "ModelBundle: head shape mismatch");
  check(final_norm_gamma.size() == config.d_model,
        "ModelBundle: final norm gamma length mismatch");
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& b = blocks[l];
    const std::string tag = "block " + std::to_string(l);
    check_slot(b.w_q, config.d_model, config.d_model, tag + " w_q");
    check_slot(b.w_k, config.d_model, config.d_model, tag + " w_k");
    check_slot(b.w_v, config.d_model, config.d_model, tag + " w_v");
    check_slot(b.w_o, config.d_model, config.d_model, tag + " w_o");
    check_slot(b.w_up, config.d_ffn, config.d_model, tag + " w_up");
    check_slot(b.w_gate, config.d_ffn, config.d_model, tag + " w_gate");
    check_slot(b.w_down, config.d_model, config.d_ffn, tag + " w_down");
    check(b.pre_ln_gamma.size() == config.d_model, tag + ": pre_ln_gamma length");
    check(b.post_attn_ln_gamma.size() == config.d_model,
          tag + ": post_attn_ln_gamma length");
    check(b.post_attn_ln_bias.size() == config.d_model,
          tag + ": post_attn_ln_bias length");
  }
}

namespace {

// x + Attn(PreLN(x))
Matrix attn_residual(const BlockWeights& block, const ModelConfig& cfg,
                     const Matrix& x) {
  check(x.cols() == cfg.d_model, "block_forward: input width mismatch");
  check(x.rows() <= cfg.max_seq, "block_forward: sequence longer than max_seq");
  const std::vector<float> zero_bias(cfg.d_model, 0.0f);
  const Matrix normed = rmsnorm(x, block.pre_ln_gamma, zero_bias, cfg.norm_eps);
  return add(x, causal_attention(normed, block, cfg));
}

}  // namespace

BlockOutput block_forward(const BlockWeights& block, const ModelConfig& cfg,
                          const Matrix& x, CaptureSite capture) {
  const Matrix h = attn_residual(block, cfg, x);
  Matrix post = rmsnorm(h, block.post_attn_ln_gamma, block.post_attn_ln_bias,
                        cfg.norm_eps);
  Matrix mlp_out = mlp_forward(post, dequantize(block.w_up),
                               dequantize(block.w_gate), dequantize(block.w_down));

  BlockOutput out;
  out.y = add(h, mlp_out);
  if (capture == CaptureSite::post_attn_norm) out.captured = std::move(post);
  return out;
}

Matrix post_attn_norm_site(const BlockWeights& block, const ModelConfig& cfg,
                           const Matrix& x) {
  const Matrix h = attn_residual(block, cfg, x);
  return rmsnorm(h, block.post_attn_ln_gamma, block.post_attn_ln_bias, cfg.norm_eps);
}

Matrix embed_tokens(const ModelBundle& m, std::span<const std::uint8_t> tokens) {
  check(!tokens.empty(), "embed_tokens: empty token sequence");
  check(tokens.size() <= m.config.max_seq, "embed_tokens: sequence longer than max_seq");
  Matrix x(tokens.size(), m.config.d_model);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto row = m.embedding.row(tokens[t]);
    std::copy(row.begin(), row.end(), x.row(t).begin());
  }
  return x;
}

Matrix model_forward(const ModelBundle& m, std::span<const std::uint8_t> tokens) {
  Matrix x = embed_tokens(m, tokens);
  for (const auto& block : m.blocks) x = block_forward(block, m.config, x).y;
  const std::vector<float> zero_bias(m.config.d_model, 0.0f);
  x = rmsnorm(x, m.final_norm_gamma, zero_bias, m.config.norm_eps);
  return matmul_nt(x, m.head);
}

namespace {

// uniform in +-sqrt(3/fan_in): variance 1/fan_in
Matrix random_weight(Rng& rng, std::size_t rows, std::size_t cols, std::size_t fan_in) {
  const float bound = std::sqrt(3.0f / static_cast<float>(fan_in));
  Matrix w(rows, cols);
  for (auto& v : w.data()) v = rng.uniform(-bound, bound);
  return w;
}

}  // namespace

ModelBundle init_random(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelBundle m;
  m.config = cfg;
  m.embedding = random_weight(rng, cfg.vocab, cfg.d_model, cfg.d_model);
  m.blocks.resize(cfg.n_layers);
  for (auto& b : m.blocks) {
    b.w_q = random_weight(rng, cfg.d_model, cfg.d_model, cfg.d_model);
    b.w_k = random_weight(rng, cfg.d_model, cfg.d_model, cfg.d_model);
    b.w_v = random_weight(rng, cfg.d_model, cfg.d_model, cfg.d_model);
    b.w_o = random_weight(rng, cfg.d_model, cfg.d_model, cfg.d_model);
    b.w_up = random_weight(rng, cfg.d_ffn, cfg.d_model, cfg.d_model);
    b.w_gate = random_weight(rng, cfg.d_ffn, cfg.d_model, cfg.d_model);
    b.w_down = random_weight(rng, cfg.d_model, cfg.d_ffn, cfg.d_ffn);
    b.pre_ln_gamma.assign(cfg.d_model, 1.0f);
    b.post_attn_ln_gamma.assign(cfg.d_model, 1.0f);
    b.post_attn_ln_bias.assign(cfg.d_model, 0.0f);
  }
  m.final_norm_gamma.assign(cfg.d_model, 1.0f);
  m.head = random_weight(rng, cfg.vocab, cfg.d_model, cfg.d_model);
  return m;
}

}  // namespace d2quant

// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "d2quant/model.hpp"
#include "test_support.hpp"

using namespace d2quant;
using d2q_test::random_matrix;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 2;
  cfg.n_heads = 1;
  cfg.d_ffn = 2;
  cfg.max_seq = 8;
  cfg.rope_enabled = true;  // position 0 rotation is the identity
  cfg.norm_eps = 1e-6f;
  return cfg;
}

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.n_layers = 4;
  cfg.d_model = 64;
  cfg.n_heads = 4;
  cfg.d_ffn = 128;
  cfg.max_seq = 256;
  return cfg;
}

BlockWeights zero_block(const ModelConfig& cfg) {
  BlockWeights b;
  b.w_q = Matrix(cfg.d_model, cfg.d_model);
  b.w_k = Matrix(cfg.d_model, cfg.d_model);
  b.w_v = Matrix(cfg.d_model, cfg.d_model);
  b.w_o = Matrix(cfg.d_model, cfg.d_model);
  b.w_up = Matrix(cfg.d_ffn, cfg.d_model);
  b.w_gate = Matrix(cfg.d_ffn, cfg.d_model);
  b.w_down = Matrix(cfg.d_model, cfg.d_ffn);
  b.pre_ln_gamma.assign(cfg.d_model, 0.0f);
  b.post_attn_ln_gamma.assign(cfg.d_model, 0.0f);
  b.post_attn_ln_bias.assign(cfg.d_model, 0.0f);
  return b;
}

}  // namespace

TEST_CASE("all-zero block is a residual passthrough") {
  const ModelConfig cfg = tiny_config();
  const BlockWeights block = zero_block(cfg);
  const Matrix x = Matrix::from_rows({{0.3f, -1.2f}, {0.9f, 0.4f}});
  const BlockOutput out = block_forward(block, cfg, x);
  CHECK(out.y == x);
}

TEST_CASE("single-token block matches a straight-line scalar oracle") {
  ModelConfig cfg = tiny_config();
  BlockWeights b;
  b.w_q = Matrix::from_rows({{0.5f, -0.2f}, {0.1f, 0.3f}});
  b.w_k = Matrix::from_rows({{-0.4f, 0.2f}, {0.7f, -0.1f}});
  b.w_v = Matrix::from_rows({{0.6f, 0.3f}, {-0.5f, 0.8f}});
  b.w_o = Matrix::from_rows({{0.2f, -0.7f}, {0.4f, 0.1f}});
  b.w_up = Matrix::from_rows({{0.9f, -0.3f}, {0.2f, 0.5f}});
  b.w_gate = Matrix::from_rows({{-0.6f, 0.4f}, {0.3f, 0.7f}});
  b.w_down = Matrix::from_rows({{0.8f, -0.2f}, {-0.1f, 0.6f}});
  b.pre_ln_gamma = {1.1f, 0.9f};
  b.post_attn_ln_gamma = {0.8f, 1.2f};
  b.post_attn_ln_bias = {0.05f, -0.1f};

  const double x0 = 0.7, x1 = -0.4;
  const Matrix x(1, 2, {static_cast<float>(x0), static_cast<float>(x1)});
  const BlockOutput got = block_forward(b, cfg, x, CaptureSite::post_attn_norm);

  // pre-norm
  const double ms = (x0 * x0 + x1 * x1) / 2.0 + 1e-6;
  const double a0 = x0 / std::sqrt(ms) * 1.1, a1 = x1 / std::sqrt(ms) * 0.9;
  // one token: the causal softmax weight is exactly 1, attention mixes only v
  const double v0 = a0 * 0.6 + a1 * 0.3, v1 = a0 * -0.5 + a1 * 0.8;
  const double attn0 = v0 * 0.2 + v1 * -0.7, attn1 = v0 * 0.4 + v1 * 0.1;
  const double h0 = x0 + attn0, h1 = x1 + attn1;
  // post-attention norm with bias
  const double ms2 = (h0 * h0 + h1 * h1) / 2.0 + 1e-6;
  const double u0 = h0 / std::sqrt(ms2) * 0.8 + 0.05;
  const double u1 = h1 / std::sqrt(ms2) * 1.2 - 0.1;
  // gated MLP
  const double up0 = u0 * 0.9 + u1 * -0.3, up1 = u0 * 0.2 + u1 * 0.5;
  const double g0 = u0 * -0.6 + u1 * 0.4, g1 = u0 * 0.3 + u1 * 0.7;
  const double hid0 = g0 / (1.0 + std::exp(-g0)) * up0;
  const double hid1 = g1 / (1.0 + std::exp(-g1)) * up1;
  const double y0 = h0 + hid0 * 0.8 + hid1 * -0.2;
  const double y1 = h1 + hid0 * -0.1 + hid1 * 0.6;

  CHECK(got.y(0, 0) == doctest::Approx(y0).epsilon(1e-5));
  CHECK(got.y(0, 1) == doctest::Approx(y1).epsilon(1e-5));
  REQUIRE(got.captured.has_value());
  CHECK((*got.captured)(0, 0) == doctest::Approx(u0).epsilon(1e-5));
  CHECK((*got.captured)(0, 1) == doctest::Approx(u1).epsilon(1e-5));
}

TEST_CASE("identity-quantized slots reproduce the full-precision output") {
  const ModelConfig cfg = toy_config();
  ModelBundle m = init_random(cfg, 7);
  const std::vector<std::uint8_t> tokens = {10, 200, 37, 37, 91, 0, 255, 14};
  const Matrix fp_logits = model_forward(m, tokens);

  for (auto& b : m.blocks) {
    b.w_q = identity_quantize(dequantize(b.w_q));
    b.w_k = identity_quantize(dequantize(b.w_k));
    b.w_v = identity_quantize(dequantize(b.w_v));
    b.w_o = identity_quantize(dequantize(b.w_o));
    b.w_up = identity_quantize(dequantize(b.w_up));
    b.w_gate = identity_quantize(dequantize(b.w_gate));
    b.w_down = identity_quantize(dequantize(b.w_down));
  }
  CHECK(model_forward(m, tokens) == fp_logits);
}

TEST_CASE("zero-weight model yields zero logits") {
  ModelConfig cfg = tiny_config();
  ModelBundle m;
  m.config = cfg;
  m.embedding = Matrix(cfg.vocab, cfg.d_model);
  m.blocks.push_back(zero_block(cfg));
  m.final_norm_gamma.assign(cfg.d_model, 0.0f);
  m.head = Matrix(cfg.vocab, cfg.d_model);
  const std::vector<std::uint8_t> tokens = {42};
  const Matrix logits = model_forward(m, tokens);
  for (float v : logits.data()) CHECK(v == 0.0f);
}

TEST_CASE("model forward is deterministic") {
  const ModelBundle m = init_random(toy_config(), 3);
  const std::vector<std::uint8_t> tokens = {1, 2, 3, 4, 5, 6};
  CHECK(model_forward(m, tokens) == model_forward(m, tokens));
}

TEST_CASE("causality: suffix edits leave earlier logits untouched") {
  const ModelBundle m = init_random(toy_config(), 11);
  std::vector<std::uint8_t> a = {5, 9, 13, 17, 21, 25, 29, 33};
  std::vector<std::uint8_t> b = a;
  b[5] = 200;
  b[6] = 201;
  b[7] = 202;
  const Matrix la = model_forward(m, a);
  const Matrix lb = model_forward(m, b);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t j = 0; j < la.cols(); ++j) CHECK(la(t, j) == lb(t, j));
}

TEST_CASE("post-attention bias shifts the capture exactly") {
  const ModelConfig cfg = toy_config();
  ModelBundle m = init_random(cfg, 19);
  const std::vector<std::uint8_t> tokens = {7, 77, 177, 27};
  const Matrix x = embed_tokens(m, tokens);

  const Matrix base = post_attn_norm_site(m.blocks[0], cfg, x);
  Rng rng(20);
  std::vector<float> bias = d2q_test::random_vector(rng, cfg.d_model, -0.5f, 0.5f);
  BlockWeights shifted = m.blocks[0];
  shifted.post_attn_ln_bias = bias;
  const Matrix moved = post_attn_norm_site(shifted, cfg, x);
  for (std::size_t t = 0; t < moved.rows(); ++t)
    for (std::size_t j = 0; j < moved.cols(); ++j)
      CHECK(moved(t, j) == base(t, j) + bias[j]);
}

TEST_CASE("init_random reproducibility and spread") {
  const ModelConfig cfg = toy_config();
  const ModelBundle a = init_random(cfg, 123);
  const ModelBundle b = init_random(cfg, 123);
  const ModelBundle c = init_random(cfg, 124);
  CHECK(dequantize(a.blocks[0].w_q) == dequantize(b.blocks[0].w_q));
  CHECK(a.embedding == b.embedding);
  CHECK(dequantize(a.blocks[0].w_q) != dequantize(c.blocks[0].w_q));

  // sample variance of a 64x64 tensor should sit near 1/fan_in
  const Matrix w = dequantize(a.blocks[0].w_k);
  double mean = 0.0;
  for (float v : w.data()) mean += v;
  mean /= static_cast<double>(w.size());
  double var = 0.0;
  for (float v : w.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size());
  const double target = 1.0 / 64.0;
  CHECK(var > 0.8 * target);
  CHECK(var < 1.2 * target);
}

TEST_CASE("config validation") {
  ModelConfig cfg = toy_config();
  cfg.n_heads = 3;  // does not divide 64
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = toy_config();
  cfg.vocab = 1000;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = toy_config();
  CHECK_THROWS_AS(
      model_forward(init_random(cfg, 0), std::vector<std::uint8_t>(300, 1)),
      std::invalid_argument);
}

TEST_CASE("seeded model matches the recorded golden logits") {
  const std::string path = std::string(D2Q_FIXTURE_DIR) + "/golden_logits.json";
  std::ifstream in(path);
  REQUIRE_MESSAGE(in.good(), "missing fixture ", path);
  nlohmann::json doc = nlohmann::json::parse(in);

  ModelConfig cfg;
  cfg.n_layers = doc["config"]["n_layers"];
  cfg.d_model = doc["config"]["d_model"];
  cfg.n_heads = doc["config"]["n_heads"];
  cfg.d_ffn = doc["config"]["d_ffn"];
  cfg.max_seq = doc["config"]["max_seq"];
  const ModelBundle m = init_random(cfg, doc["seed"].get<std::uint64_t>());
  const std::vector<std::uint8_t> tokens = doc["tokens"].get<std::vector<std::uint8_t>>();
  const Matrix logits = model_forward(m, tokens);

  const auto& rows = doc["logits"];
  REQUIRE(rows.size() == logits.rows());
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    const auto row = rows[t].get<std::vector<double>>();
    REQUIRE(row.size() == logits.cols());
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      const double tol = 1e-5 * std::max(1.0, std::abs(row[j]));
      CHECK(std::abs(logits(t, j) - row[j]) <= tol);
    }
  }
}

// SPDX-License-Identifier: Apache-2.0
#include "d2quant/eval.hpp"

#include <cmath>
#include <stdexcept>

namespace d2quant {

namespace {

// accumulates -log p(target) over the predicted positions of one window
void window_nll(const ModelBundle& m, std::span<const std::uint8_t> window,
                double& nll_sum, std::size_t& count) {
  const Matrix logits = model_forward(m, window);
  for (std::size_t t = 0; t + 1 < window.size(); ++t) {
    const auto row = logits.row(t);
    double mx = row[0];
    for (float v : row) mx = std::max(mx, static_cast<double>(v));
    double denom = 0.0;
    for (float v : row) denom += std::exp(static_cast<double>(v) - mx);
    const double target = row[window[t + 1]];
    nll_sum += std::log(denom) - (target - mx);
    ++count;
  }
}

EvalResult finish(double nll_sum, std::size_t count) {
  if (count == 0)
    throw std::invalid_argument("evaluate: no predicted tokens (windows too short)");
  EvalResult r;
  r.token_count = count;
  r.mean_nll = nll_sum / static_cast<double>(count);
  r.perplexity = std::exp(r.mean_nll);
  return r;
}

}  // namespace

EvalResult evaluate_text(const ModelBundle& m, std::span<const std::uint8_t> text,
                         std::size_t seq_len) {
  if (seq_len < 2) throw std::invalid_argument("evaluate_text: window too short");
  if (seq_len > m.config.max_seq)
    throw std::invalid_argument("evaluate_text: window exceeds model max_seq");
  if (text.size() < seq_len)
    throw std::invalid_argument("evaluate_text: text shorter than one window");
  double nll = 0.0;
  std::size_t count = 0;
  for (std::size_t off = 0; off + seq_len <= text.size(); off += seq_len)
    window_nll(m, text.subspan(off, seq_len), nll, count);
  return finish(nll, count);
}

EvalResult evaluate_sequences(const ModelBundle& m,
                              std::span<const std::vector<std::uint8_t>> sequences) {
  if (sequences.empty())
    throw std::invalid_argument("evaluate_sequences: empty sequence list");
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& seq : sequences) window_nll(m, seq, nll, count);
  return finish(nll, count);
}

std::map<std::string, ReconstructionError> reconstruction_table(
    const ModelBundle& reference, const ModelBundle& quantized) {
  if (reference.blocks.size() != quantized.blocks.size())
    throw std::invalid_argument("reconstruction_table: block count mismatch");
  std::map<std::string, ReconstructionError> table;
  const char* names[] = {"w_q", "w_k", "w_v", "w_o", "w_up", "w_gate", "w_down"};
  for (std::size_t l = 0; l < reference.blocks.size(); ++l) {
    const auto& rb = reference.blocks[l];
    const auto& qb = quantized.blocks[l];
    const WeightSlot* ref_slots[] = {&rb.w_q, &rb.w_k, &rb.w_v, &rb.w_o,
                                     &rb.w_up, &rb.w_gate, &rb.w_down};
    const WeightSlot* q_slots[] = {&qb.w_q, &qb.w_k, &qb.w_v, &qb.w_o,
                                   &qb.w_up, &qb.w_gate, &qb.w_down};
    for (std::size_t k = 0; k < 7; ++k) {
      const std::string key = "blocks." + std::to_string(l) + "." + names[k];
      table[key] = reconstruction_error(dequantize(*ref_slots[k]),
                                        dequantize(*q_slots[k]));
    }
  }
  return table;
}

}  // namespace d2quant

// SPDX-License-Identifier: Apache-2.0
#include "d2quant/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "d2quant/dsq.hpp"
#include "d2quant/eval.hpp"

namespace d2quant {

std::size_t CalibrationSet::total_tokens() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.size();
  return n;
}

void CalibrationSet::validate(const ModelConfig& cfg) const {
  if (sequences.empty())
    throw std::invalid_argument("CalibrationSet: no sequences");
  for (const auto& s : sequences) {
    if (s.empty()) throw std::invalid_argument("CalibrationSet: empty sequence");
    if (s.size() > cfg.max_seq)
      throw std::invalid_argument("CalibrationSet: sequence longer than max_seq");
  }
}

void PipelineConfig::validate() const {
  if (dsq_enabled && static_smooth_enabled)
    throw std::invalid_argument(
        "PipelineConfig: dsq and static smoothing are mutually exclusive");
  if (calib_samples < 1)
    throw std::invalid_argument("PipelineConfig: calib_samples must be >= 1");
  if (dsq_iters < 0)
    throw std::invalid_argument("PipelineConfig: negative dsq_iters");
  if (!identity_mode && !quant.bits_supported())
    throw std::invalid_argument("PipelineConfig: unsupported bit-width");
}

ReconstructionError reconstruction_error(const Matrix& reference, const Matrix& approx) {
  if (!reference.same_shape(approx))
    throw std::invalid_argument("reconstruction_error: shape mismatch");
  ReconstructionError e;
  const double ref_norm = frob_norm(reference);
  const double diff = std::sqrt(frob_sq_diff(reference, approx));
  e.frobenius_rel_err = ref_norm == 0.0 ? diff : diff / ref_norm;
  for (std::size_t i = 0; i < reference.size(); ++i)
    e.max_abs_err = std::max(
        e.max_abs_err, std::abs(static_cast<double>(reference.data()[i]) -
                                static_cast<double>(approx.data()[i])));
  return e;
}

double PipelineReport::mean_down_rel_err() const {
  if (blocks.empty()) return 0.0;
  double s = 0.0;
  for (const auto& b : blocks) s += b.down_frob_rel_err;
  return s / static_cast<double>(blocks.size());
}

double PipelineReport::mean_holdout_realized() const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& b : blocks)
    for (double v : b.holdout_realized) {
      s += v;
      ++n;
    }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

namespace {

// quantize or pass through, recording the reconstruction against the input
WeightSlot quantize_slot(const Matrix& w, const PipelineConfig& cfg,
                         const std::string& name, BlockReport& rep) {
  if (cfg.identity_mode) {
    rep.tensors[name] = ReconstructionError{};
    return identity_quantize(w);
  }
  QuantizedTensor q = quantize(w, cfg.quant);
  rep.tensors[name] = reconstruction_error(w, dequantize(q));
  return WeightSlot{std::move(q)};
}

std::vector<double> realized_from_moments(const std::vector<double>& mean_sq,
                                          const std::vector<double>& mu,
                                          const std::vector<float>& bias) {
  std::vector<double> out(mu.size(), 0.0);
  for (std::size_t j = 0; j < mu.size(); ++j) {
    if (mean_sq[j] == 0.0) continue;
    const double b = bias.empty() ? 0.0 : static_cast<double>(bias[j]);
    const double after = mean_sq[j] - 2.0 * b * mu[j] + b * b;
    out[j] = 1.0 - after / mean_sq[j];
  }
  return out;
}

}  // namespace

PipelineResult run_d2quant(ModelBundle model, const CalibrationSet& calib,
                           const PipelineConfig& cfg, const CalibrationSet* holdout) {
  cfg.validate();
  model.validate();
  calib.validate(model.config);
  if (holdout) holdout->validate(model.config);
  // fail fast before touching any weight
  if (!cfg.identity_mode) {
    cfg.quant.validate_for(model.config.d_model);
    cfg.quant.validate_for(model.config.d_ffn);
  }

  const ModelConfig& mc = model.config;
  const std::size_t n_seq = std::min(calib.sequences.size(), cfg.calib_samples);
  if (n_seq == 0) throw std::invalid_argument("run_d2quant: empty calibration");

  std::vector<Matrix> acts(n_seq);
  for (std::size_t s = 0; s < n_seq; ++s)
    acts[s] = embed_tokens(model, calib.sequences[s]);
  std::vector<Matrix> h_acts;
  if (holdout) {
    h_acts.resize(holdout->sequences.size());
    for (std::size_t s = 0; s < h_acts.size(); ++s)
      h_acts[s] = embed_tokens(model, holdout->sequences[s]);
  }

  PipelineResult result;
  result.report.config = cfg;
  std::vector<BlockWeights> explicit_blocks;

  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    BlockWeights& block = model.blocks[l];
    BlockReport rep;
    rep.block_index = l;

    // (1) full-precision capture at the post-attention norm
    std::vector<Matrix> captures_fp(n_seq);
    for (std::size_t s = 0; s < n_seq; ++s)
      captures_fp[s] = post_attn_norm_site(block, mc, acts[s]);
    std::vector<Matrix> h_captures_fp(h_acts.size());
    for (std::size_t s = 0; s < h_acts.size(); ++s)
      h_captures_fp[s] = post_attn_norm_site(block, mc, h_acts[s]);

    // (2) quantize the attention projections
    block.w_q = quantize_slot(dequantize(block.w_q), cfg, "w_q", rep);
    block.w_k = quantize_slot(dequantize(block.w_k), cfg, "w_k", rep);
    block.w_v = quantize_slot(dequantize(block.w_v), cfg, "w_v", rep);
    block.w_o = quantize_slot(dequantize(block.w_o), cfg, "w_o", rep);

    // (3) recapture with quantized attention, (4) align the norm bias
    DeviationAccumulator acc(mc.d_model);
    for (std::size_t s = 0; s < n_seq; ++s)
      acc.add(captures_fp[s], post_attn_norm_site(block, mc, acts[s]));
    rep.deviation = acc.finalize();

    std::vector<float> bias_delta(mc.d_model, 0.0f);
    if (cfg.dac_enabled) {
      for (std::size_t j = 0; j < mc.d_model; ++j) {
        bias_delta[j] = static_cast<float>(rep.deviation.mu[j]);
        block.post_attn_ln_bias[j] += bias_delta[j];
      }
    }
    rep.realized_reduction = realized_from_moments(acc.mean_sq_deviation(),
                                                   rep.deviation.mu, bias_delta);

    if (holdout && !h_acts.empty()) {
      // deviation on held-out data, corrected by the bias fitted above; the
      // recapture runs with the updated bias, so its difference against the
      // pre-quantization capture is already the corrected deviation
      std::vector<double> before(mc.d_model, 0.0), after(mc.d_model, 0.0);
      for (std::size_t s = 0; s < h_acts.size(); ++s) {
        const Matrix cap_q = post_attn_norm_site(block, mc, h_acts[s]);
        const Matrix& cap_fp = h_captures_fp[s];
        for (std::size_t t = 0; t < cap_fp.rows(); ++t)
          for (std::size_t j = 0; j < mc.d_model; ++j) {
            const double d_corr = static_cast<double>(cap_fp(t, j)) -
                                  static_cast<double>(cap_q(t, j));
            const double d_raw = d_corr + static_cast<double>(bias_delta[j]);
            before[j] += d_raw * d_raw;
            after[j] += d_corr * d_corr;
          }
      }
      rep.holdout_realized.assign(mc.d_model, 0.0);
      for (std::size_t j = 0; j < mc.d_model; ++j)
        if (before[j] != 0.0) rep.holdout_realized[j] = 1.0 - after[j] / before[j];
    }

    // (5) MLP projections; smoothing, when on, transforms the pair first
    Matrix w_up_fp = dequantize(block.w_up);
    Matrix w_down_fp = dequantize(block.w_down);
    const Matrix w_gate_fp = dequantize(block.w_gate);
    if (cfg.static_smooth_enabled && !cfg.identity_mode) {
      const UpDownScaling eta = static_smooth_eta(w_down_fp);
      auto [up_t, down_t] = apply_updown_scaling(w_up_fp, w_gate_fp, w_down_fp, eta);
      w_up_fp = std::move(up_t);
      w_down_fp = std::move(down_t);
    }
    block.w_up = quantize_slot(w_up_fp, cfg, "w_up", rep);
    block.w_gate = quantize_slot(w_gate_fp, cfg, "w_gate", rep);

    // (6) down-projection: dual-scale with folding, or plain
    BlockWeights explicit_block = block;  // snapshot before folding
    if (cfg.dsq_enabled && !cfg.identity_mode) {
      DualScaleResult dsr = dsq_quantize(w_down_fp, cfg.quant, cfg.dsq_iters);
      rep.dsq_objective_trace = dsr.objective_trace;
      rep.dsq_col_scale = dsr.col_scale;
      const Matrix down_hat = scale_cols(dequantize(dsr.q_down), dsr.col_scale);
      rep.tensors["w_down"] = reconstruction_error(w_down_fp, down_hat);
      block.w_up = fold_scale(std::get<QuantizedTensor>(block.w_up), dsr.col_scale);
      block.w_down = WeightSlot{std::move(dsr.q_down)};
      if (cfg.debug_explicit_scale)
        explicit_block.w_down = WeightSlot{down_hat};  // keeps s^c explicit
    } else {
      block.w_down = quantize_slot(w_down_fp, cfg, "w_down", rep);
      explicit_block = block;
    }
    rep.down_frob_rel_err = rep.tensors.at("w_down").frobenius_rel_err;
    if (cfg.debug_explicit_scale) explicit_blocks.push_back(std::move(explicit_block));

    // (8) push the calibration activations through the finished block
    for (std::size_t s = 0; s < n_seq; ++s)
      acts[s] = block_forward(block, mc, acts[s]).y;
    for (std::size_t s = 0; s < h_acts.size(); ++s)
      h_acts[s] = block_forward(block, mc, h_acts[s]).y;

    result.report.blocks.push_back(std::move(rep));
  }

  if (cfg.debug_explicit_scale) {
    ModelBundle explicit_model = model;
    explicit_model.blocks = std::move(explicit_blocks);
    result.explicit_model = std::move(explicit_model);
  }
  result.model = std::move(model);
  return result;
}

DiagnoseReport diagnose(const ModelBundle& model, const CalibrationSet& calib,
                        const PipelineConfig& cfg) {
  cfg.validate();
  model.validate();
  calib.validate(model.config);
  if (!cfg.identity_mode) {
    cfg.quant.validate_for(model.config.d_model);
    cfg.quant.validate_for(model.config.d_ffn);
  }
  const ModelConfig& mc = model.config;
  const std::size_t n_seq = std::min(calib.sequences.size(), cfg.calib_samples);

  std::vector<Matrix> acts(n_seq);
  for (std::size_t s = 0; s < n_seq; ++s)
    acts[s] = embed_tokens(model, calib.sequences[s]);

  DiagnoseReport rep;
  const std::vector<float> zero_bias(mc.d_model, 0.0f);

  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const BlockWeights& block = model.blocks[l];

    // attention-only shadow, measured at this block's post-attention norm
    BlockWeights attn_shadow = block;
    BlockReport scratch;
    attn_shadow.w_q = quantize_slot(dequantize(block.w_q), cfg, "w_q", scratch);
    attn_shadow.w_k = quantize_slot(dequantize(block.w_k), cfg, "w_k", scratch);
    attn_shadow.w_v = quantize_slot(dequantize(block.w_v), cfg, "w_v", scratch);
    attn_shadow.w_o = quantize_slot(dequantize(block.w_o), cfg, "w_o", scratch);

    DeviationAccumulator attn_acc(mc.d_model);
    for (std::size_t s = 0; s < n_seq; ++s)
      attn_acc.add(post_attn_norm_site(block, mc, acts[s]),
                   post_attn_norm_site(attn_shadow, mc, acts[s]));
    rep.post_attn.push_back(attn_acc.finalize());

    // MLP-only shadow, measured at the next block's pre-norm
    if (l + 1 < model.blocks.size()) {
      BlockWeights mlp_shadow = block;
      mlp_shadow.w_up = quantize_slot(dequantize(block.w_up), cfg, "w_up", scratch);
      mlp_shadow.w_gate = quantize_slot(dequantize(block.w_gate), cfg, "w_gate", scratch);
      mlp_shadow.w_down = quantize_slot(dequantize(block.w_down), cfg, "w_down", scratch);

      const auto& next_gamma = model.blocks[l + 1].pre_ln_gamma;
      DeviationAccumulator mlp_acc(mc.d_model);
      for (std::size_t s = 0; s < n_seq; ++s) {
        const Matrix y_fp = block_forward(block, mc, acts[s]).y;
        const Matrix y_q = block_forward(mlp_shadow, mc, acts[s]).y;
        mlp_acc.add(rmsnorm(y_fp, next_gamma, zero_bias, mc.norm_eps),
                    rmsnorm(y_q, next_gamma, zero_bias, mc.norm_eps));
      }
      rep.next_pre_norm.push_back(mlp_acc.finalize());
    }

    // propagation stays full precision; shadows never leak forward
    for (std::size_t s = 0; s < n_seq; ++s)
      acts[s] = block_forward(block, mc, acts[s]).y;
  }

  auto mean_snr = [](const std::vector<DeviationStats>& all) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& stats : all)
      for (double v : stats.snr_diag) {
        s += v;
        ++n;
      }
    return n == 0 ? 0.0 : s / static_cast<double>(n);
  };
  rep.mean_post_attn_snr = mean_snr(rep.post_attn);
  rep.mean_pre_norm_snr = mean_snr(rep.next_pre_norm);
  return rep;
}

namespace {

AblationRow run_cell(std::string name, const ModelBundle& model,
                     const CalibrationSet& calib, const CalibrationSet& holdout,
                     PipelineConfig cfg) {
  PipelineResult res = run_d2quant(model, calib, cfg, &holdout);
  AblationRow row;
  row.cell = std::move(name);
  row.dsq = cfg.dsq_enabled;
  row.dac = cfg.dac_enabled;
  row.dsq_iters = cfg.dsq_enabled ? cfg.dsq_iters : 0;
  row.calib_size = std::min(calib.sequences.size(), cfg.calib_samples);
  row.perplexity = evaluate_sequences(res.model, holdout.sequences).perplexity;
  row.mean_down_rel_err = res.report.mean_down_rel_err();
  row.mean_realized_reduction = res.report.mean_holdout_realized();
  return row;
}

}  // namespace

AblationReport ablation_matrix(const ModelBundle& model, const CalibrationSet& calib,
                               const CalibrationSet& holdout,
                               const PipelineConfig& base_cfg,
                               const AblationGrid& grid) {
  base_cfg.validate();
  holdout.validate(model.config);

  AblationReport report;
  report.base = base_cfg;

  auto with = [&](bool dsq, bool dac) {
    PipelineConfig c = base_cfg;
    c.dsq_enabled = dsq;
    c.dac_enabled = dac;
    c.static_smooth_enabled = false;
    return c;
  };

  report.rows.push_back(run_cell("baseline", model, calib, holdout, with(false, false)));
  report.rows.push_back(run_cell("dsq", model, calib, holdout, with(true, false)));
  report.rows.push_back(run_cell("dac", model, calib, holdout, with(false, true)));
  report.rows.push_back(run_cell("dsq_dac", model, calib, holdout, with(true, true)));

  for (int iters : grid.dsq_iter_sweep) {
    PipelineConfig c = with(true, false);
    c.dsq_iters = iters;
    report.rows.push_back(
        run_cell("dsq_iters_" + std::to_string(iters), model, calib, holdout, c));
  }

  for (std::size_t n : grid.calib_size_sweep) {
    PipelineConfig c = with(false, true);
    CalibrationSet subset;
    const std::size_t take = std::min(n, calib.sequences.size());
    subset.sequences.assign(calib.sequences.begin(),
                            calib.sequences.begin() + static_cast<std::ptrdiff_t>(take));
    c.calib_samples = take;
    report.rows.push_back(
        run_cell("dac_calib_" + std::to_string(n), model, subset, holdout, c));
  }
  return report;
}

}  // namespace d2quant

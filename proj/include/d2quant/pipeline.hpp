// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "d2quant/dac.hpp"
#include "d2quant/model.hpp"
#include "d2quant/quantizer.hpp"

namespace d2quant {

struct CalibrationSet {
  std::vector<std::vector<std::uint8_t>> sequences;

  std::size_t total_tokens() const;
  // throws on empty set or a sequence longer than max_seq
  void validate(const ModelConfig& cfg) const;
};

struct PipelineConfig {
  QuantConfig quant;
  int dsq_iters = 15;
  bool dac_enabled = true;
  bool dsq_enabled = true;
  bool static_smooth_enabled = false;  // exclusive with dsq_enabled
  bool identity_mode = false;          // no-op quantizer for regression runs
  bool debug_explicit_scale = false;   // also emit the unfolded dual-scale model
  std::size_t calib_samples = 128;
  std::size_t calib_seq_len = 128;     // 2048 for the full-scale protocol
  std::uint64_t seed = 0;              // echoed into reports

  void validate() const;
};

struct ReconstructionError {
  double frobenius_rel_err = 0.0;
  double max_abs_err = 0.0;
};

ReconstructionError reconstruction_error(const Matrix& reference, const Matrix& approx);

struct BlockReport {
  std::size_t block_index = 0;
  DeviationStats deviation;                    // post-attn site, attention quantization
  std::vector<double> realized_reduction;      // on calibration data, applied bias
  std::vector<double> holdout_realized;        // empty unless a holdout set was given
  std::vector<double> dsq_objective_trace;     // empty when DSQ is off
  std::vector<float> dsq_col_scale;            // empty when DSQ is off
  double down_frob_rel_err = 0.0;
  std::map<std::string, ReconstructionError> tensors;
};

struct PipelineReport {
  PipelineConfig config;
  std::vector<BlockReport> blocks;

  double mean_down_rel_err() const;
  double mean_holdout_realized() const;
};

struct PipelineResult {
  ModelBundle model;
  PipelineReport report;
  // populated when debug_explicit_scale is set: up-projection scales left
  // unfolded, down slot holding the explicitly column-scaled dequantization
  std::optional<ModelBundle> explicit_model;
};

// Block-wise quantization with calibration propagation: per block, capture
// post-attention-norm activations, quantize attention, recapture, align the
// norm bias to the mean deviation, quantize the MLP (dual-scale on the
// down-projection with the column scale folded into the up-projection), then
// push the calibration activations through the finished block.
PipelineResult run_d2quant(ModelBundle model, const CalibrationSet& calib,
                           const PipelineConfig& cfg,
                           const CalibrationSet* holdout = nullptr);

// Per-block site comparison used by the diagnose command: quantizing only a
// block's attention, how does the deviation at its post-attention norm
// compare against the next block's pre-norm deviation after quantizing only
// the MLP. Never mutates the input model.
struct DiagnoseReport {
  std::vector<DeviationStats> post_attn;      // one per block
  std::vector<DeviationStats> next_pre_norm;  // one per block except the last
  double mean_post_attn_snr = 0.0;
  double mean_pre_norm_snr = 0.0;
};

DiagnoseReport diagnose(const ModelBundle& model, const CalibrationSet& calib,
                        const PipelineConfig& cfg);

struct AblationGrid {
  std::vector<int> dsq_iter_sweep = {0, 1, 3, 15};
  std::vector<std::size_t> calib_size_sweep = {16, 32, 64, 128};
};

struct AblationRow {
  std::string cell;
  bool dsq = false;
  bool dac = false;
  int dsq_iters = 0;
  std::size_t calib_size = 0;
  double perplexity = 0.0;
  double mean_down_rel_err = 0.0;
  double mean_realized_reduction = 0.0;  // holdout
};

struct AblationReport {
  PipelineConfig base;
  std::vector<AblationRow> rows;
};

// Component cells {baseline, +DSQ, +DAC, +DSQ+DAC}, the DSQ iteration sweep
// and the DAC calibration-size sweep, all from the same model and seed.
// Held-out sequences provide the perplexity and realized-reduction columns.
AblationReport ablation_matrix(const ModelBundle& model, const CalibrationSet& calib,
                               const CalibrationSet& holdout,
                               const PipelineConfig& base_cfg,
                               const AblationGrid& grid = {});

}  // namespace d2quant

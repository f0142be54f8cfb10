// SPDX-License-Identifier: Apache-2.0
#include "d2quant/report.hpp"

#include <cmath>
#include <fstream>

namespace d2quant {

using nlohmann::json;

namespace {

json config_echo(const PipelineConfig& cfg) {
  json c;
  c["bits"] = cfg.quant.bits;
  c["group_size"] = cfg.quant.group_size;
  c["dsq_iters"] = cfg.dsq_iters;
  c["dac_enabled"] = cfg.dac_enabled;
  c["dsq_enabled"] = cfg.dsq_enabled;
  c["static_smooth_enabled"] = cfg.static_smooth_enabled;
  c["identity_mode"] = cfg.identity_mode;
  c["calib_samples"] = cfg.calib_samples;
  c["calib_seq_len"] = cfg.calib_seq_len;
  return c;
}

json stats_json(const DeviationStats& s) {
  json j;
  j["mu"] = s.mu;
  j["sigma2"] = s.sigma2;
  j["snr_diag"] = s.snr_diag;
  j["predicted_reduction"] = s.reduction;
  j["token_count"] = s.token_count;
  return j;
}

void check_finite(const json& node, const std::string& where) {
  if (node.is_number_float()) {
    if (!std::isfinite(node.get<double>()))
      throw ReportError("non-finite value at " + where);
  } else if (node.is_array()) {
    for (std::size_t i = 0; i < node.size(); ++i)
      check_finite(node[i], where + "[" + std::to_string(i) + "]");
  } else if (node.is_object()) {
    for (const auto& [key, value] : node.items()) check_finite(value, where + "." + key);
  }
}

}  // namespace

json report_to_json(const PipelineReport& report) {
  json doc;
  doc["schema"] = kReportSchema;
  doc["kind"] = "quantize";
  doc["seed"] = report.config.seed;
  doc["config"] = config_echo(report.config);
  json blocks = json::array();
  for (const auto& b : report.blocks) {
    json jb = stats_json(b.deviation);
    jb["index"] = b.block_index;
    jb["realized_reduction"] = b.realized_reduction;
    if (!b.holdout_realized.empty()) jb["holdout_realized"] = b.holdout_realized;
    if (!b.dsq_objective_trace.empty()) {
      jb["dsq_objective_trace"] = b.dsq_objective_trace;
      jb["dsq_col_scale"] = b.dsq_col_scale;
    }
    jb["down_frob_rel_err"] = b.down_frob_rel_err;
    json tensors;
    for (const auto& [name, err] : b.tensors) {
      tensors[name] = {{"frobenius_rel_err", err.frobenius_rel_err},
                       {"max_abs_err", err.max_abs_err}};
    }
    jb["tensors"] = std::move(tensors);
    blocks.push_back(std::move(jb));
  }
  doc["blocks"] = std::move(blocks);
  return doc;
}

json report_to_json(const DiagnoseReport& report, const PipelineConfig& cfg) {
  json doc;
  doc["schema"] = kReportSchema;
  doc["kind"] = "diagnose";
  doc["seed"] = cfg.seed;
  doc["config"] = config_echo(cfg);
  json blocks = json::array();
  for (std::size_t l = 0; l < report.post_attn.size(); ++l) {
    json jb;
    jb["index"] = l;
    jb["post_attn"] = stats_json(report.post_attn[l]);
    if (l < report.next_pre_norm.size())
      jb["next_pre_norm"] = stats_json(report.next_pre_norm[l]);
    blocks.push_back(std::move(jb));
  }
  doc["blocks"] = std::move(blocks);
  doc["mean_post_attn_snr"] = report.mean_post_attn_snr;
  doc["mean_pre_norm_snr"] = report.mean_pre_norm_snr;
  return doc;
}

json report_to_json(const AblationReport& report) {
  json doc;
  doc["schema"] = kReportSchema;
  doc["kind"] = "ablation";
  doc["seed"] = report.base.seed;
  doc["config"] = config_echo(report.base);
  json rows = json::array();
  for (const auto& r : report.rows) {
    json jr;
    jr["cell"] = r.cell;
    jr["dsq"] = r.dsq;
    jr["dac"] = r.dac;
    jr["dsq_iters"] = r.dsq_iters;
    jr["calib_size"] = r.calib_size;
    jr["perplexity"] = r.perplexity;
    jr["mean_down_rel_err"] = r.mean_down_rel_err;
    jr["mean_realized_reduction"] = r.mean_realized_reduction;
    rows.push_back(std::move(jr));
  }
  doc["rows"] = std::move(rows);
  return doc;
}

void write_report(const json& doc, const std::filesystem::path& path) {
  check_finite(doc, "$");
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw ReportError("cannot open '" + tmp.string() + "' for writing");
    out << doc.dump(2) << "\n";
    if (!out) throw ReportError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

json read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ReportError("cannot open '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& ex) {
    throw ReportError(std::string("report is not valid JSON: ") + ex.what());
  }
  if (!doc.contains("schema") || doc["schema"] != kReportSchema)
    throw ReportError("unknown report schema");
  return doc;
}

}  // namespace d2quant

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "d2quant/pipeline.hpp"

namespace d2quant {

inline constexpr const char* kReportSchema = "d2quant-report-v1";

struct ReportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// JSON documents for the three report kinds. Every numeric array is checked
// for finiteness before a document is accepted for writing.
nlohmann::json report_to_json(const PipelineReport& report);
nlohmann::json report_to_json(const DiagnoseReport& report, const PipelineConfig& cfg);
nlohmann::json report_to_json(const AblationReport& report);

// Rejects non-finite values (ReportError), writes atomically.
void write_report(const nlohmann::json& doc, const std::filesystem::path& path);

// Reads a report back, gating on the schema string.
nlohmann::json read_report(const std::filesystem::path& path);

}  // namespace d2quant

// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lorasp/costmodel.hpp"
#include "lorasp/experiment.hpp"

namespace lorasp {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr int kReportSchema = 1;

enum class ReportFormat { Json, Csv, Table };

ReportFormat report_format_from_string(std::string_view s);

/// Deterministic report body: manifest, resolved config, per-method results,
/// metrics block and checks. Wall times are deliberately absent.
nlohmann::ordered_json to_json(const CompareReport& report);

/// The metrics block: one {method, epoch, loss} row per recorded loss;
/// epoch 0 is the loss before training.
nlohmann::ordered_json metrics_block(const CompareReport& report);

/// CSV with header "method,epoch,loss"; losses printed with 17 significant digits.
std::string metrics_to_csv(const nlohmann::ordered_json& metrics);
nlohmann::ordered_json metrics_from_csv(std::string_view csv);

std::string render_table(const CompareReport& report);

/// Writes resolved_config.json plus report.json / metrics.csv + summary.csv /
/// report.txt depending on `format`. Returns the files written.
std::vector<std::filesystem::path> emit_report(const CompareReport& report, ReportFormat format,
                                               const std::filesystem::path& out_dir);

/// Wall times go to their own file so reports stay byte-reproducible.
std::filesystem::path emit_timing(const CompareReport& report, const std::filesystem::path& out_dir);

nlohmann::ordered_json to_json(const GradCheckSuite& suite);
nlohmann::ordered_json to_json(const QuantCheck& check);
nlohmann::ordered_json to_json(const CostReport& cost);
nlohmann::ordered_json to_json(const TableCheck& check);

std::string render_table(const std::vector<TableCheck>& checks);

/// Writes `text` to out_dir/name, creating out_dir. Throws IoError.
std::filesystem::path write_text(const std::filesystem::path& out_dir, const std::string& name,
                                 const std::string& text);

}  // namespace lorasp

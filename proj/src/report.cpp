// SPDX-License-Identifier: Apache-2.0

#include "lorasp/report.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "lorasp/error.hpp"
#include "lorasp/rng.hpp"

namespace lorasp {

namespace {

nlohmann::ordered_json ledger_json(const ActivationLedger& ledger) {
    return {{"per_layer_bytes", ledger.per_layer_bytes}, {"total_bytes", ledger.total()}};
}

nlohmann::ordered_json checks_json(const std::vector<CheckResult>& checks) {
    auto out = nlohmann::ordered_json::array();
    for (const auto& c : checks) {
        out.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    }
    return out;
}

std::string fixed_width_row(const std::vector<std::string>& cells, const std::vector<std::size_t>& widths) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        line += i == 0 ? fmt::format("{:<{}}", cells[i], widths[i]) : fmt::format("  {:>{}}", cells[i], widths[i]);
    }
    return line + "\n";
}

std::string aligned(const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> widths(rows.front().size(), 0);
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            widths[i] = std::max(widths[i], row[i].size());
        }
    }
    std::string out;
    for (const auto& row : rows) {
        out += fixed_width_row(row, widths);
    }
    return out;
}

}  // namespace

ReportFormat report_format_from_string(std::string_view s) {
    if (s == "json") return ReportFormat::Json;
    if (s == "csv") return ReportFormat::Csv;
    if (s == "table") return ReportFormat::Table;
    throw ConfigError(fmt::format("unknown format '{}'", s));
}

nlohmann::ordered_json metrics_block(const CompareReport& report) {
    auto rows = nlohmann::ordered_json::array();
    for (const auto& r : report.results) {
        rows.push_back({{"method", to_string(r.method)}, {"epoch", 0}, {"loss", r.run.initial_loss}});
        for (std::size_t e = 0; e < r.run.epoch_losses.size(); ++e) {
            rows.push_back({{"method", to_string(r.method)}, {"epoch", e + 1}, {"loss", r.run.epoch_losses[e]}});
        }
    }
    return rows;
}

nlohmann::ordered_json to_json(const CompareReport& report) {
    nlohmann::ordered_json j;
    j["manifest"] = {
        {"tool", "lorasp"},
        {"tool_version", kToolVersion},
        {"report_schema", kReportSchema},
        {"rng_algorithm", Rng::kAlgorithm},
        {"codebook", "nf4"},
        {"config_hash", config_hash(report.config)},
        {"seeds",
         {{"data", report.config.seed_data}, {"init", report.config.seed_init}, {"mask", report.config.seed_mask}}},
    };
    j["config"] = to_json(report.config);
    j["config"].erase("out_dir");  // location, not content: reports compare equal across directories
    auto results = nlohmann::ordered_json::array();
    for (const auto& r : report.results) {
        nlohmann::ordered_json m;
        m["method"] = to_string(r.method);
        m["trainable_params"] = r.run.trainable_params;
        m["costmodel_trainable"] = r.costmodel_trainable;
        m["costmodel_mask_selected"] = r.costmodel_mask_selected;
        m["steps"] = r.run.steps;
        m["initial_loss"] = r.run.initial_loss;
        m["final_loss"] = r.run.final_loss();
        m["val_loss"] = r.val_loss;
        m["epoch_losses"] = r.run.epoch_losses;
        m["activation_ledger"] = {
            {"recompute_on", ledger_json(r.run.ledger_recompute_on)},
            {"recompute_off", ledger_json(r.run.ledger_recompute_off)},
            {"peak_recorded_bytes", r.run.peak_tape_bytes},
        };
        m["checks"] = checks_json(r.checks);
        results.push_back(std::move(m));
    }
    j["results"] = std::move(results);
    j["metrics"] = metrics_block(report);
    j["checks"] = checks_json(report.checks);
    j["all_checks_passed"] = report.all_checks_passed();
    return j;
}

std::string metrics_to_csv(const nlohmann::ordered_json& metrics) {
    std::string out = "method,epoch,loss\n";
    for (const auto& row : metrics) {
        out += fmt::format("{},{},{:.17g}\n", row.at("method").get<std::string>(),
                           row.at("epoch").get<std::size_t>(), row.at("loss").get<double>());
    }
    return out;
}

nlohmann::ordered_json metrics_from_csv(std::string_view csv) {
    std::istringstream in{std::string(csv)};
    std::string line;
    if (!std::getline(in, line) || line != "method,epoch,loss") {
        throw IoError("metrics csv: missing header");
    }
    auto rows = nlohmann::ordered_json::array();
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) {
            throw IoError(fmt::format("metrics csv: bad row '{}'", line));
        }
        try {
            rows.push_back({{"method", line.substr(0, c1)},
                            {"epoch", std::stoull(line.substr(c1 + 1, c2 - c1 - 1))},
                            {"loss", std::stod(line.substr(c2 + 1))}});
        } catch (const std::logic_error&) {
            throw IoError(fmt::format("metrics csv: bad row '{}'", line));
        }
    }
    return rows;
}

std::string render_table(const CompareReport& report) {
    std::vector<std::vector<std::string>> rows = {
        {"method", "trainable", "initial_loss", "final_loss", "val_loss", "act_on_B", "act_off_B", "checks"}};
    for (const auto& r : report.results) {
        rows.push_back({std::string(to_string(r.method)), std::to_string(r.run.trainable_params),
                        fmt::format("{:.6e}", r.run.initial_loss), fmt::format("{:.6e}", r.run.final_loss()),
                        fmt::format("{:.6e}", r.val_loss), std::to_string(r.run.ledger_recompute_on.total()),
                        std::to_string(r.run.ledger_recompute_off.total()), r.checks_passed() ? "ok" : "FAIL"});
    }
    std::string out = aligned(rows);
    for (const auto& c : report.checks) {
        out += fmt::format("check {}: {} ({})\n", c.name, c.passed ? "ok" : "FAIL", c.detail);
    }
    return out;
}

std::filesystem::path write_text(const std::filesystem::path& out_dir, const std::string& name,
                                 const std::string& text) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) {
        throw IoError(fmt::format("cannot create output directory {}: {}", out_dir.string(), ec.message()));
    }
    const auto path = out_dir / name;
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text) || !out.flush()) {
        throw IoError(fmt::format("cannot write {}", path.string()));
    }
    return path;
}

std::vector<std::filesystem::path> emit_report(const CompareReport& report, ReportFormat format,
                                               const std::filesystem::path& out_dir) {
    std::vector<std::filesystem::path> files;
    files.push_back(write_text(out_dir, "resolved_config.json", to_json(report.config).dump(2) + "\n"));
    switch (format) {
        case ReportFormat::Json:
            files.push_back(write_text(out_dir, "report.json", to_json(report).dump(2) + "\n"));
            break;
        case ReportFormat::Csv: {
            files.push_back(write_text(out_dir, "metrics.csv", metrics_to_csv(metrics_block(report))));
            std::string summary = "method,trainable_params,initial_loss,final_loss,val_loss,act_on_bytes,act_off_bytes,checks_passed\n";
            for (const auto& r : report.results) {
                summary += fmt::format("{},{},{:.17g},{:.17g},{:.17g},{},{},{}\n", to_string(r.method),
                                       r.run.trainable_params, r.run.initial_loss, r.run.final_loss(),
                                       r.val_loss, r.run.ledger_recompute_on.total(),
                                       r.run.ledger_recompute_off.total(), r.checks_passed() ? 1 : 0);
            }
            files.push_back(write_text(out_dir, "summary.csv", summary));
            break;
        }
        case ReportFormat::Table:
            files.push_back(write_text(out_dir, "report.txt", render_table(report)));
            break;
    }
    return files;
}

std::filesystem::path emit_timing(const CompareReport& report, const std::filesystem::path& out_dir) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& r : report.results) {
        j[std::string(to_string(r.method))] = r.wall_seconds;
    }
    return write_text(out_dir, "timing.json", j.dump(2) + "\n");
}

nlohmann::ordered_json to_json(const GradCheckSuite& suite) {
    auto models = nlohmann::ordered_json::array();
    for (const auto& m : suite.models) {
        models.push_back({{"checked", m.checked}, {"failures", m.failures},
                          {"frozen_nonzero", m.frozen_nonzero}, {"max_rel_err", m.max_rel_err},
                          {"max_abs_err", m.max_abs_err}});
    }
    return {{"models", suite.models.size()}, {"checked", suite.checked}, {"failures", suite.failures},
            {"frozen_nonzero", suite.frozen_nonzero}, {"max_rel_err", suite.max_rel_err},
            {"max_abs_err", suite.max_abs_err},
            {"passed", suite.passed()}, {"per_model", models}};
}

nlohmann::ordered_json to_json(const QuantCheck& c) {
    return {{"block_size", c.block_size},
            {"normal_64x64", {{"rmse", c.normal_64x64.rmse}, {"max_abs", c.normal_64x64.max_abs}}},
            {"rmse_threshold", kNf4RmseThreshold},
            {"rmse_reference", kNf4ReferenceRmse},
            {"rmse_below_threshold", c.rmse_below_threshold},
            {"blocks_checked", c.blocks_checked},
            {"bound_violations", c.bound_violations},
            {"idempotent", c.idempotent},
            {"serialized_bytes_per_entry", c.serialized_bytes_per_entry},
            {"passed", c.passed()}};
}

nlohmann::ordered_json to_json(const CostReport& c) {
    return {{"trainable_params", c.trainable_params},
            {"total_params", c.total_params},
            {"weight_bytes", c.weight_bytes},
            {"adapter_bytes", c.adapter_bytes},
            {"gradient_bytes", c.gradient_bytes},
            {"optimizer_state_bytes", c.optimizer_state_bytes},
            {"activation_bytes_per_token", c.activation_bytes_per_token},
            {"activation_bytes_per_token_recompute", c.activation_bytes_per_token_recompute}};
}

nlohmann::ordered_json to_json(const TableCheck& check) {
    const auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    };
    auto rows = nlohmann::ordered_json::array();
    for (const auto& r : check.rows) {
        rows.push_back({{"method", to_string(r.method)},
                        {"computed_trainable", r.computed_trainable},
                        {"reported_trainable", opt(r.reported_trainable)},
                        {"trainable_gap", opt(r.trainable_gap)},
                        {"computed_total", r.computed_total},
                        {"reported_total", opt(r.reported_total)},
                        {"total_gap", opt(r.total_gap)}});
    }
    return {{"preset", check.preset}, {"rows", rows}, {"computed_ratio", check.computed_ratio},
            {"reported_ratio", opt(check.reported_ratio)}};
}

std::string render_table(const std::vector<TableCheck>& checks) {
    std::vector<std::vector<std::string>> rows = {
        {"preset", "method", "trainable", "display", "reported", "gap", "total", "reported_total"}};
    const auto pct = [](const std::optional<double>& g) {
        return g ? fmt::format("{:+.1f}%", *g * 100.0) : std::string("-");
    };
    for (const auto& c : checks) {
        for (const auto& r : c.rows) {
            rows.push_back({c.preset, std::string(to_string(r.method)), std::to_string(r.computed_trainable),
                            format_millions(static_cast<double>(r.computed_trainable)),
                            r.reported_trainable ? format_millions(*r.reported_trainable) : "-",
                            pct(r.trainable_gap), format_millions(static_cast<double>(r.computed_total)),
                            r.reported_total ? format_millions(*r.reported_total) : "-"});
        }
    }
    std::string out = aligned(rows);
    for (const auto& c : checks) {
        out += fmt::format("{}: lorasp/lora = {:.4f}", c.preset, c.computed_ratio);
        if (c.reported_ratio) {
            out += fmt::format(" (reported {:.4f})", *c.reported_ratio);
        }
        out += "\n";
    }
    return out;
}

}  // namespace lorasp

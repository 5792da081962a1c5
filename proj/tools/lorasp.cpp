// SPDX-License-Identifier: Apache-2.0
//
// lorasp: command-line front end.
//   run         train one method, write report + checkpoint
//   compare     train ft, lora and lorasp on the same task
//   cost        parameter/memory accounting for the bundled presets
//   gradcheck   finite-difference check on random small models
//   quantcheck  nf4 round-trip, block bound and idempotence checks
//
// Exit codes: 0 ok, 2 config/io error, 3 numeric failure, 4 cross-check failure.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "lorasp/config.hpp"
#include "lorasp/costmodel.hpp"
#include "lorasp/error.hpp"
#include "lorasp/experiment.hpp"
#include "lorasp/report.hpp"

namespace {

using namespace lorasp;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitCrossCheck = 4;

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed_data;
    std::optional<std::uint64_t> seed_init;
    std::optional<std::uint64_t> seed_mask;
    std::optional<std::string> method;
    std::optional<std::string> recompute;
    std::optional<std::string> out;
    std::string format = "json";
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_method) {
    cmd->add_option("--config", o.config_path, "JSON run config");
    cmd->add_option("--seed-data", o.seed_data, "data seed");
    cmd->add_option("--seed-init", o.seed_init, "adapter init seed");
    cmd->add_option("--seed-mask", o.seed_mask, "selection mask seed");
    if (with_method) {
        cmd->add_option("--method", o.method, "ft | lora | lorasp")->check(CLI::IsMember({"ft", "lora", "lorasp"}));
    }
    cmd->add_option("--recompute", o.recompute, "on | off")->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--format", o.format, "json | csv | table")->check(CLI::IsMember({"json", "csv", "table"}));
}

RunConfig resolve_config(const CommonOptions& o) {
    RunConfig cfg = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
    if (o.seed_data) cfg.seed_data = *o.seed_data;
    if (o.seed_init) cfg.seed_init = *o.seed_init;
    if (o.seed_mask) cfg.seed_mask = *o.seed_mask;
    if (o.method) cfg.method = adapt_mode_from_string(*o.method);
    if (o.recompute) cfg.recompute = *o.recompute == "on";
    if (o.out) cfg.out_dir = *o.out;
    cfg.resolve();
    cfg.validate();
    return cfg;
}

void print_written(const std::vector<std::filesystem::path>& files) {
    for (const auto& f : files) {
        fmt::print("wrote {}\n", f.string());
    }
}

int finish(const CompareReport& report, ReportFormat format) {
    print_written(emit_report(report, format, report.config.out_dir));
    emit_timing(report, report.config.out_dir);
    fmt::print("{}", render_table(report));
    return report.all_checks_passed() ? kExitOk : kExitCrossCheck;
}

int cmd_run(const CommonOptions& o) {
    const RunConfig cfg = resolve_config(o);
    std::vector<AdaptedLayer> layers;
    CompareReport report{cfg, {run_method(cfg, &layers)}, {}};
    const auto ckpt = std::filesystem::path(cfg.out_dir) / "checkpoint";
    save_checkpoint(ckpt, layers);
    fmt::print("wrote {}\n", ckpt.string());
    return finish(report, report_format_from_string(o.format));
}

int cmd_compare(const CommonOptions& o) {
    const RunConfig cfg = resolve_config(o);
    const CompareReport report =
        run_compare(cfg, {AdaptMode::Full, AdaptMode::LoRA, AdaptMode::LoRA_SP}, thread_cap_from_env());
    return finish(report, report_format_from_string(o.format));
}

int cmd_cost(const std::string& presets_path, const std::vector<std::string>& names, const std::string& format,
             const std::optional<std::string>& out) {
    const auto presets = load_presets(presets_path.empty() ? default_presets_path() : std::filesystem::path(presets_path));
    std::vector<std::string> selected = names;
    if (selected.empty()) {
        for (const auto& [name, _] : presets) {
            selected.push_back(name);
        }
    }
    std::vector<TableCheck> checks;
    auto j = nlohmann::ordered_json::array();
    for (const auto& name : selected) {
        checks.push_back(table_check(presets, name));
        nlohmann::ordered_json entry = to_json(checks.back());
        for (const AdaptMode m : {AdaptMode::Full, AdaptMode::LoRA, AdaptMode::LoRA_SP}) {
            ArchSpec arch = presets.at(name).arch;
            arch.method = m;
            entry["memory"][std::string(to_string(m))] = to_json(memory_breakdown(arch, OptimizerAccounting::AdamW));
        }
        j.push_back(std::move(entry));
    }
    const std::string text = format == "json" ? j.dump(2) + "\n" : render_table(checks);
    if (out) {
        print_written({write_text(*out, format == "json" ? "cost.json" : "cost.txt", text)});
    }
    fmt::print("{}", text);
    return kExitOk;
}

int cmd_gradcheck(const std::string& method, std::size_t count, std::uint64_t seed, bool dense_base,
                  const std::optional<std::string>& out) {
    const GradCheckSuite suite = run_gradcheck(adapt_mode_from_string(method), count, seed, !dense_base);
    const auto j = to_json(suite);
    if (out) {
        print_written({write_text(*out, "gradcheck.json", j.dump(2) + "\n")});
    }
    fmt::print("gradcheck {}: {} models, {} entries, {} failures, {} nonzero frozen, max abs err {:.3e}, max rel err above floor {:.3e}\n",
               method, suite.models.size(), suite.checked, suite.failures, suite.frozen_nonzero, suite.max_abs_err,
               suite.max_rel_err);
    return suite.passed() ? kExitOk : kExitCrossCheck;
}

int cmd_quantcheck(std::size_t block_size, std::uint64_t seed, std::size_t blocks,
                   const std::optional<std::string>& out) {
    const QuantCheck c = run_quantcheck(block_size, seed, blocks);
    const auto j = to_json(c);
    if (out) {
        print_written({write_text(*out, "quantcheck.json", j.dump(2) + "\n")});
    }
    fmt::print("{}\n", j.dump(2));
    return c.passed() ? kExitOk : kExitCrossCheck;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse-selection low-rank adaptation toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    CommonOptions run_opts;
    auto* run = app.add_subcommand("run", "train one method");
    add_common(run, run_opts, true);

    CommonOptions cmp_opts;
    auto* compare = app.add_subcommand("compare", "train ft, lora and lorasp on one task");
    add_common(compare, cmp_opts, false);

    std::string presets_path;
    std::vector<std::string> preset_names;
    std::string cost_format = "table";
    std::optional<std::string> cost_out;
    auto* cost = app.add_subcommand("cost", "parameter and memory accounting");
    cost->add_option("--presets", presets_path, "presets JSON (default: bundled)");
    cost->add_option("--preset", preset_names, "preset name; repeatable");
    cost->add_option("--format", cost_format, "json | table")->check(CLI::IsMember({"json", "table"}));
    cost->add_option("--out", cost_out, "output directory");

    std::string gc_method = "lorasp";
    std::size_t gc_count = 20;
    std::uint64_t gc_seed = 7;
    bool gc_dense = false;
    std::optional<std::string> gc_out;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    gradcheck->add_option("--method", gc_method, "ft | lora | lorasp")->check(CLI::IsMember({"ft", "lora", "lorasp"}));
    gradcheck->add_option("--count", gc_count, "number of random models");
    gradcheck->add_option("--seed", gc_seed, "model seed");
    gradcheck->add_flag("--dense-base", gc_dense, "keep the base weights unquantized");
    gradcheck->add_option("--out", gc_out, "output directory");

    std::size_t qc_block = kDefaultBlockSize;
    std::uint64_t qc_seed = 11;
    std::size_t qc_blocks = 1000;
    std::optional<std::string> qc_out;
    auto* quantcheck = app.add_subcommand("quantcheck", "nf4 quantization checks");
    quantcheck->add_option("--block-size", qc_block, "entries per absmax block");
    quantcheck->add_option("--seed", qc_seed, "sample seed");
    quantcheck->add_option("--blocks", qc_blocks, "random blocks for the bound check");
    quantcheck->add_option("--out", qc_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*run) return cmd_run(run_opts);
        if (*compare) return cmd_compare(cmp_opts);
        if (*cost) return cmd_cost(presets_path, preset_names, cost_format, cost_out);
        if (*gradcheck) return cmd_gradcheck(gc_method, gc_count, gc_seed, gc_dense, gc_out);
        if (*quantcheck) return cmd_quantcheck(qc_block, qc_seed, qc_blocks, qc_out);
    } catch (const NumericError& e) {
        fmt::print(stderr, "numeric failure: {}\n", e.what());
        return kExitNumeric;
    } catch (const CrossCheckError& e) {
        fmt::print(stderr, "cross-check failure: {}\n", e.what());
        return kExitCrossCheck;
    } catch (const ParameterError& e) {
        fmt::print(stderr, "config error: {}\n", e.what());
        return kExitConfig;
    } catch (const IoError& e) {
        fmt::print(stderr, "i/o error: {}\n", e.what());
        return kExitConfig;
    } catch (const nlohmann::json::exception& e) {
        fmt::print(stderr, "config error: {}\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
    return kExitOk;
}

// SPDX-License-Identifier: Apache-2.0

#include "lorasp/costmodel.hpp"

#include <algorithm>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "lorasp/error.hpp"

#ifndef LORASP_DATA_DIR
#define LORASP_DATA_DIR "data"
#endif

namespace lorasp {

std::string_view to_string(MatrixRole r) {
    switch (r) {
        case MatrixRole::Q: return "Q";
        case MatrixRole::K: return "K";
        case MatrixRole::V: return "V";
        case MatrixRole::O: return "O";
        case MatrixRole::FFN_in: return "FFN_in";
        case MatrixRole::FFN_out: return "FFN_out";
    }
    return "?";
}

MatrixRole matrix_role_from_string(std::string_view s) {
    for (auto r : {MatrixRole::Q, MatrixRole::K, MatrixRole::V, MatrixRole::O, MatrixRole::FFN_in,
                   MatrixRole::FFN_out}) {
        if (to_string(r) == s) {
            return r;
        }
    }
    throw ParameterError(fmt::format("unknown matrix role '{}'", s));
}

std::string_view to_string(Precision p) {
    switch (p) {
        case Precision::F64: return "f64";
        case Precision::F32: return "f32";
        case Precision::NF4: return "nf4";
    }
    return "?";
}

Precision precision_from_string(std::string_view s) {
    for (auto p : {Precision::F64, Precision::F32, Precision::NF4}) {
        if (to_string(p) == s) {
            return p;
        }
    }
    throw ParameterError(fmt::format("unknown precision '{}'", s));
}

void ArchSpec::validate() const {
    if (layers == 0 || hidden_dim == 0 || matrices.empty() || block_size == 0) {
        throw ParameterError(fmt::format("ArchSpec '{}': layers, hidden_dim, block_size and the "
                                         "matrix list must be nonzero", name));
    }
    for (const auto& m : matrices) {
        if (m.in_dim == 0 || m.out_dim == 0) {
            throw ParameterError(fmt::format("ArchSpec '{}': matrix {} has a zero dimension", name, m.name));
        }
        if (m.adapted && method != AdaptMode::Full &&
            (rank == 0 || rank > std::min(m.in_dim, m.out_dim))) {
            throw ParameterError(fmt::format("ArchSpec '{}': rank {} invalid for {} ({}x{})", name,
                                             rank, m.name, m.in_dim, m.out_dim));
        }
    }
}

std::uint64_t count_base_params(const ArchSpec& spec) {
    std::uint64_t per_layer = 0;
    for (const auto& m : spec.matrices) {
        per_layer += std::uint64_t{m.in_dim} * m.out_dim;
    }
    return spec.layers * per_layer + spec.extra_params;
}

namespace {

std::uint64_t lora_params(const ArchSpec& spec) {
    std::uint64_t per_layer = 0;
    for (const auto& m : spec.matrices) {
        if (m.adapted) {
            per_layer += std::uint64_t{spec.rank} * (m.in_dim + m.out_dim);
        }
    }
    return spec.layers * per_layer;
}

std::uint64_t bytes_per_entry(Precision p) {
    return p == Precision::F32 ? 4 : 8;
}

}  // namespace

std::uint64_t count_trainable(const ArchSpec& spec) {
    spec.validate();
    switch (spec.method) {
        case AdaptMode::Full: return count_base_params(spec);
        case AdaptMode::LoRA: return lora_params(spec);
        case AdaptMode::LoRA_SP: return lora_params(spec) / 2;
        case AdaptMode::Frozen: return 0;
    }
    return 0;
}

std::uint64_t count_total(const ArchSpec& spec) {
    if (spec.method == AdaptMode::Full) {
        return count_base_params(spec);
    }
    return count_base_params(spec) + count_trainable(spec);
}

std::uint64_t count_mask_selected(const ArchSpec& spec) {
    spec.validate();
    if (spec.method != AdaptMode::LoRA_SP) {
        return count_trainable(spec);
    }
    std::uint64_t per_layer = 0;
    for (const auto& m : spec.matrices) {
        if (m.adapted) {
            per_layer += (std::uint64_t{m.in_dim} * spec.rank) / 2 + (std::uint64_t{m.out_dim} * spec.rank) / 2;
        }
    }
    return spec.layers * per_layer;
}

std::uint64_t nf4_matrix_bytes(std::uint64_t entries, std::size_t block_size) {
    return (entries + 1) / 2 + 8 * ((entries + block_size - 1) / block_size);
}

CostReport memory_breakdown(const ArchSpec& spec, OptimizerAccounting optimizer) {
    spec.validate();
    CostReport report;
    report.trainable_params = count_trainable(spec);
    report.total_params = count_total(spec);

    // Non-matrix parameters are never quantized; under nf4 they stay at f32.
    const Precision extra_precision = spec.precision == Precision::NF4 ? Precision::F32 : spec.precision;
    std::uint64_t per_layer_weights = 0;
    for (const auto& m : spec.matrices) {
        const std::uint64_t entries = std::uint64_t{m.in_dim} * m.out_dim;
        per_layer_weights += spec.precision == Precision::NF4 ? nf4_matrix_bytes(entries, spec.block_size)
                                                               : entries * bytes_per_entry(spec.precision);
    }
    report.weight_bytes = spec.layers * per_layer_weights + spec.extra_params * bytes_per_entry(extra_precision);

    const bool adapters = spec.method != AdaptMode::Full;
    if (adapters) {
        const std::uint64_t entries = lora_params(spec);
        report.adapter_bytes = entries * sizeof(double) + entries;  // factors + byte masks
    }
    report.gradient_bytes = report.trainable_params * sizeof(double);
    report.optimizer_state_bytes =
        optimizer == OptimizerAccounting::AdamW ? 2 * report.trainable_params * sizeof(double) : 0;

    std::uint64_t off = 0;
    std::uint64_t on = 0;
    for (const auto& m : spec.matrices) {
        const bool has_adapter = adapters && m.adapted;
        on += m.in_dim;
        off += m.in_dim + m.out_dim + (has_adapter ? spec.rank : 0);
    }
    report.activation_bytes_per_token = spec.layers * off * sizeof(double);
    report.activation_bytes_per_token_recompute = spec.layers * on * sizeof(double);
    return report;
}

ArchSpec arch_from_model(const ToyModel& model) {
    ArchSpec spec;
    spec.name = "toy";
    spec.layers = 1;
    spec.hidden_dim = model.in_dim();
    const auto& first = model.layers().front();
    spec.method = first.mode();
    spec.precision = first.base_quantized() ? Precision::NF4 : Precision::F64;
    if (const auto* q = std::get_if<QuantizedTensor>(&first.base())) {
        spec.block_size = q->block_size();
    }
    spec.rank = first.has_adapter() ? first.adapter().rank() : 1;
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
        const auto& layer = model.layers()[i];
        if (layer.mode() != spec.method ||
            (layer.has_adapter() && layer.adapter().rank() != spec.rank)) {
            throw ParameterError("arch_from_model: layers must share mode and rank");
        }
        spec.matrices.push_back({fmt::format("layer{}", i), MatrixRole::FFN_in, layer.in_dim(),
                                 layer.out_dim(), layer.has_adapter()});
    }
    return spec;
}

std::filesystem::path default_presets_path() {
    return std::filesystem::path(LORASP_DATA_DIR) / "presets.json";
}

std::map<std::string, Preset> load_presets(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError(fmt::format("cannot open presets file {}", path.string()));
    }
    std::map<std::string, Preset> presets;
    try {
        const nlohmann::json doc = nlohmann::json::parse(in);
        if (doc.at("format") != "lorasp-presets" || doc.at("version") != 1) {
            throw IoError(fmt::format("{}: unsupported presets format/version", path.string()));
        }
        for (const auto& [name, p] : doc.at("presets").items()) {
            Preset preset;
            preset.arch.name = name;
            preset.arch.layers = p.at("layers").get<std::size_t>();
            preset.arch.hidden_dim = p.at("hidden_dim").get<std::size_t>();
            preset.arch.extra_params = p.at("extra_params").get<std::size_t>();
            preset.arch.rank = p.at("rank").get<std::size_t>();
            for (const auto& m : p.at("matrices")) {
                preset.arch.matrices.push_back({m.at("name").get<std::string>(),
                                                matrix_role_from_string(m.at("role").get<std::string>()),
                                                m.at("in_dim").get<std::size_t>(),
                                                m.at("out_dim").get<std::size_t>(),
                                                m.at("adapted").get<bool>()});
            }
            preset.note = p.value("extra_note", "");
            if (p.contains("published")) {
                const auto& pub = p.at("published");
                preset.published.benchmark = pub.value("benchmark", "");
                if (pub.contains("trainable")) {
                    preset.published.trainable = pub.at("trainable").get<std::map<std::string, double>>();
                }
                if (pub.contains("total")) {
                    preset.published.total = pub.at("total").get<std::map<std::string, double>>();
                }
            }
            preset.arch.validate();
            presets.emplace(name, std::move(preset));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(fmt::format("{}: malformed presets: {}", path.string(), e.what()));
    }
    return presets;
}

TableCheck table_check(const std::map<std::string, Preset>& presets, const std::string& name) {
    const auto it = presets.find(name);
    if (it == presets.end()) {
        throw ParameterError(fmt::format("unknown preset '{}'", name));
    }
    const Preset& preset = it->second;
    TableCheck check;
    check.preset = name;
    const auto lookup = [](const std::map<std::string, double>& m, AdaptMode mode) -> std::optional<double> {
        const auto found = m.find(std::string(to_string(mode)));
        return found == m.end() ? std::nullopt : std::optional<double>(found->second);
    };
    const auto gap = [](std::uint64_t computed, std::optional<double> reported) -> std::optional<double> {
        if (!reported || *reported == 0.0) {
            return std::nullopt;
        }
        return (static_cast<double>(computed) - *reported) / *reported;
    };
    for (auto mode : {AdaptMode::Full, AdaptMode::LoRA, AdaptMode::LoRA_SP}) {
        ArchSpec arch = preset.arch;
        arch.method = mode;
        TableRow row;
        row.method = mode;
        row.computed_trainable = count_trainable(arch);
        row.reported_trainable = lookup(preset.published.trainable, mode);
        row.trainable_gap = gap(row.computed_trainable, row.reported_trainable);
        row.computed_total = count_total(arch);
        row.reported_total = lookup(preset.published.total, mode);
        row.total_gap = gap(row.computed_total, row.reported_total);
        check.rows.push_back(row);
    }
    check.computed_ratio = static_cast<double>(check.rows[2].computed_trainable) /
                           static_cast<double>(check.rows[1].computed_trainable);
    if (check.rows[1].reported_trainable && check.rows[2].reported_trainable) {
        check.reported_ratio = *check.rows[2].reported_trainable / *check.rows[1].reported_trainable;
    }
    return check;
}

std::string format_millions(double count) { return fmt::format("{:.1f}M", count / 1e6); }

}  // namespace lorasp

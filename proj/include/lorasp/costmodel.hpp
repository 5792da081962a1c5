// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lorasp/adapter.hpp"
#include "lorasp/train.hpp"

namespace lorasp {

enum class MatrixRole { Q, K, V, O, FFN_in, FFN_out };
enum class Precision { F64, F32, NF4 };

std::string_view to_string(MatrixRole r);
MatrixRole matrix_role_from_string(std::string_view s);
std::string_view to_string(Precision p);
Precision precision_from_string(std::string_view s);

struct WeightMatrix {
    std::string name;
    MatrixRole role = MatrixRole::Q;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    bool adapted = false;
};

/// `layers` identical blocks, each holding `matrices`, plus `extra_params`
/// for everything outside them (embeddings, norms, biases, heads).
struct ArchSpec {
    std::string name;
    std::size_t layers = 1;
    std::size_t hidden_dim = 1;
    std::vector<WeightMatrix> matrices;
    std::size_t extra_params = 0;
    std::size_t rank = 16;
    AdaptMode method = AdaptMode::LoRA_SP;
    Precision precision = Precision::F64;
    std::size_t block_size = kDefaultBlockSize;

    /// Throws ParameterError on zero dims or a rank above an adapted matrix's min dim.
    void validate() const;
};

/// Parameters of the frozen/pretrained model (all matrices plus extras).
std::uint64_t count_base_params(const ArchSpec& spec);

/// FT: every base parameter. LoRA: sum of r * (in + out) over adapted
/// matrices. LoRA_SP: floor(LoRA / 2). Frozen: 0.
std::uint64_t count_trainable(const ArchSpec& spec);

/// Base parameters plus trainable adapter entries (FT: base only).
std::uint64_t count_total(const ArchSpec& spec);

/// Exact mask-one count when each factor carries its own half mask:
/// sum of floor(in*r/2) + floor(out*r/2). Equals count_trainable whenever
/// every factor has an even entry count.
std::uint64_t count_mask_selected(const ArchSpec& spec);

enum class OptimizerAccounting { AdamW, SGD };

struct CostReport {
    std::uint64_t trainable_params = 0;
    std::uint64_t total_params = 0;
    std::uint64_t weight_bytes = 0;        // base weights at arch precision + extras
    std::uint64_t adapter_bytes = 0;       // f64 factors (both halves) + 1 byte per mask entry
    std::uint64_t gradient_bytes = 0;      // f64 per trainable parameter
    std::uint64_t optimizer_state_bytes = 0;
    std::uint64_t activation_bytes_per_token = 0;            // recomputation off
    std::uint64_t activation_bytes_per_token_recompute = 0;  // recomputation on
};

CostReport memory_breakdown(const ArchSpec& spec, OptimizerAccounting optimizer);

/// Bytes of one nf4-quantized matrix: packed codes plus one f64 scale per block.
std::uint64_t nf4_matrix_bytes(std::uint64_t entries, std::size_t block_size);

/// ArchSpec mirroring a ToyModel layer-for-layer (one block, one matrix per
/// layer), for cross-checking counts and activation ledgers.
ArchSpec arch_from_model(const ToyModel& model);

struct PublishedCounts {
    std::string benchmark;
    std::map<std::string, double> trainable;  // keyed by method name
    std::map<std::string, double> total;
};

struct Preset {
    ArchSpec arch;  // method and precision left at defaults
    std::string note;
    PublishedCounts published;
};

std::map<std::string, Preset> load_presets(const std::filesystem::path& path);
std::filesystem::path default_presets_path();

struct TableRow {
    AdaptMode method = AdaptMode::LoRA;
    std::uint64_t computed_trainable = 0;
    std::optional<double> reported_trainable;
    std::optional<double> trainable_gap;  // (computed - reported) / reported
    std::uint64_t computed_total = 0;
    std::optional<double> reported_total;
    std::optional<double> total_gap;
};

struct TableCheck {
    std::string preset;
    std::vector<TableRow> rows;       // FT, LoRA, LoRA_SP
    double computed_ratio = 0.0;      // LoRA_SP / LoRA
    std::optional<double> reported_ratio;
};

/// Throws ParameterError for an unknown preset name.
TableCheck table_check(const std::map<std::string, Preset>& presets, const std::string& name);

/// "0.9M"-style display with one decimal; counts stay exact elsewhere.
std::string format_millions(double count);

}  // namespace lorasp

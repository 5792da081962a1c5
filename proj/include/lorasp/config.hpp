// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "lorasp/adapter.hpp"
#include "lorasp/selection.hpp"
#include "lorasp/train.hpp"

namespace lorasp {

enum class TaskKind { LowRankRecovery, ToyClassify };

std::string_view to_string(TaskKind t);
TaskKind task_kind_from_string(std::string_view s);

/// Everything a run depends on. Defaults follow the reference fine-tuning
/// setup (AdamW at lr 2e-5, 3 epochs, r = 16, random half selection).
struct RunConfig {
    TaskKind task = TaskKind::LowRankRecovery;
    AdaptMode method = AdaptMode::LoRA_SP;

    std::size_t in_dim = 32;   // m
    std::size_t out_dim = 32;  // n; also the width of every later layer
    std::size_t depth = 2;
    std::size_t hidden_rank = 2;  // rank k of the planted perturbation
    double perturbation_scale = 0.5;

    std::size_t rank = 16;
    double alpha = 0.0;  // 0 resolves to alpha = rank
    MaskScheme scheme = MaskScheme::GlobalRandom;
    bool freeze_only_gradients = false;

    std::uint64_t seed_data = 1;
    std::uint64_t seed_init = 2;
    std::uint64_t seed_mask = 3;

    OptimizerConfig optimizer;
    std::size_t epochs = 3;
    std::size_t batch_size = 0;  // 0 = full batch

    bool recompute = true;
    bool quantize_base = true;
    std::size_t block_size = kDefaultBlockSize;

    std::size_t train_samples = 256;
    std::size_t val_samples = 64;
    double noise_std = 0.0;
    double cluster_std = 0.5;  // ToyClassify only

    std::string out_dir = "lorasp_out";

    /// Fills defaulted fields (alpha) in place.
    void resolve();
    /// Throws ConfigError.
    void validate() const;
};

nlohmann::ordered_json to_json(const RunConfig& cfg);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

/// FNV-1a 64 of the compact resolved-config JSON (out_dir excluded), as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

}  // namespace lorasp

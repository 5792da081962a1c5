// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lorasp/config.hpp"
#include "lorasp/costmodel.hpp"
#include "lorasp/quant.hpp"
#include "lorasp/task.hpp"
#include "lorasp/train.hpp"

namespace lorasp {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct MethodResult {
    AdaptMode method = AdaptMode::LoRA_SP;
    RunReport run;
    double val_loss = 0.0;
    std::uint64_t costmodel_trainable = 0;
    std::uint64_t costmodel_mask_selected = 0;
    std::vector<CheckResult> checks;
    double wall_seconds = 0.0;  // not part of the deterministic report
    bool checks_passed() const;
};

/// Trains cfg.method on cfg's task and runs the invariant cross-checks:
/// trainable count vs cost model, frozen entries and moments untouched,
/// quantized base untouched, tape ledger vs cost model activation bytes.
/// Numeric failures propagate as NumericError prefixed with the method.
/// When `trained` is given it receives the final layers.
MethodResult run_method(const RunConfig& cfg, std::vector<AdaptedLayer>* trained = nullptr);

struct CompareReport {
    RunConfig config;
    std::vector<MethodResult> results;
    std::vector<CheckResult> checks;  // cross-method checks
    bool all_checks_passed() const;
};

/// Runs each method with otherwise identical configs, at most `max_threads`
/// at a time. Results keep the order of `methods`.
CompareReport run_compare(const RunConfig& base, const std::vector<AdaptMode>& methods,
                          std::size_t max_threads = 1);

/// LORASP_THREADS if set to a positive integer, else hardware concurrency.
std::size_t thread_cap_from_env();

struct GradCheckSuite {
    std::vector<GradCheckSummary> models;
    std::size_t checked = 0;
    std::size_t failures = 0;
    std::size_t frozen_nonzero = 0;
    double max_rel_err = 0.0;  // over entries whose absolute error exceeds the floor
    double max_abs_err = 0.0;
    bool passed() const { return !models.empty() && failures == 0 && frozen_nonzero == 0; }
};

/// Finite-difference check over `count` random 2-layer models (dims <= 16,
/// r <= 4, b drawn nonzero so both factors carry signal).
GradCheckSuite run_gradcheck(AdaptMode method, std::size_t count, std::uint64_t seed,
                             bool quantize_base = true, const GradCheckOptions& opts = {});

/// Round-trip RMSE of a 64x64 standard-normal matrix at block size 64.
/// A numpy reference over 2000 draws gives mean 0.0919 (sd 0.0015, max 0.0974).
inline constexpr double kNf4ReferenceRmse = 0.0919;
inline constexpr double kNf4RmseThreshold = 0.1;

struct QuantCheck {
    std::size_t block_size = kDefaultBlockSize;
    ErrorStats normal_64x64;
    bool rmse_below_threshold = false;
    std::size_t blocks_checked = 0;
    std::size_t bound_violations = 0;  // blocks whose max error exceeds scale * half max gap
    bool idempotent = false;
    double serialized_bytes_per_entry = 0.0;
    bool passed() const {
        return rmse_below_threshold && bound_violations == 0 && idempotent;
    }
};

QuantCheck run_quantcheck(std::size_t block_size, std::uint64_t seed, std::size_t blocks = 1000);

/// Train/validation loss gap on an overfit-prone task (16 training points),
/// averaged over `seeds` runs, for LoRA and LoRA_SP.
struct GapStudy {
    double lora_gap = 0.0;
    double lorasp_gap = 0.0;
    bool lorasp_not_worse() const { return lorasp_gap <= lora_gap; }
};

GapStudy generalization_gap_study(std::size_t seeds);

}  // namespace lorasp

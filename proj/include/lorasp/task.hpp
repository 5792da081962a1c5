// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "lorasp/config.hpp"
#include "lorasp/matrix.hpp"
#include "lorasp/train.hpp"

namespace lorasp {

/// A synthetic fine-tuning problem.
///
/// LowRankRecovery: a teacher chain with weights W0_i + P_i (P_i of rank
/// hidden_rank) labels Gaussian inputs; the student starts from W0_i and must
/// recover the P_i. When the base is quantized, W0_i is drawn on the
/// quantization lattice so the frozen weight is exactly the teacher's base.
///
/// ToyClassify: Gaussian clusters, one per output class, one-hot targets.
struct Task {
    Dataset train;
    Dataset val;
    std::vector<Matrix> base_weights;   // W0_i, in x out
    std::vector<Matrix> perturbations;  // P_i (LowRankRecovery only)
    std::vector<Activation> activations;
    LossKind loss = LossKind::MeanSquaredError;
};

/// Deterministic in cfg.seed_data. Throws ConfigError for invalid dims.
Task gen_task(const RunConfig& cfg);

/// Student model for cfg.method on top of the task's base weights. Factor
/// values come from seed_init, masks from seed_mask (child stream per layer).
ToyModel build_model(const RunConfig& cfg, const Task& task);

}  // namespace lorasp

// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "lorasp/adapter.hpp"
#include "lorasp/matrix.hpp"

namespace lorasp {

enum class Activation { Identity, Tanh };
enum class LossKind { MeanSquaredError, SoftmaxCrossEntropy };

std::string_view to_string(Activation a);
std::string_view to_string(LossKind l);

/// Chain of adapted layers; activation i is applied to layer i's output.
class ToyModel {
public:
    ToyModel(std::vector<AdaptedLayer> layers, std::vector<Activation> activations, LossKind loss);

    const std::vector<AdaptedLayer>& layers() const { return layers_; }
    const std::vector<Activation>& activations() const { return activations_; }
    LossKind loss() const { return loss_; }
    std::size_t in_dim() const { return layers_.front().in_dim(); }
    std::size_t out_dim() const { return layers_.back().out_dim(); }

    /// Parameter mutation goes through here; any outstanding tape becomes stale.
    AdaptedLayer& mutable_layer(std::size_t i);
    std::uint64_t generation() const { return generation_; }

    /// Number of scalar parameters an optimizer may modify.
    std::size_t trainable_count() const;

private:
    std::vector<AdaptedLayer> layers_;
    std::vector<Activation> activations_;
    LossKind loss_;
    std::uint64_t generation_ = 0;
};

struct TapeConfig {
    /// Keep only layer inputs and rebuild the rest during backward.
    bool recompute = false;
};

/// Bytes of activations a tape holds between forward and backward, per layer.
struct ActivationLedger {
    std::vector<std::size_t> per_layer_bytes;
    std::size_t total() const;
};

/// Ledger a tape would record for `batch` rows. Without recomputation each
/// layer keeps its input, the masked-factor product x(a ⊙ mask_a) and its
/// pre-activation output; with it, only the input.
ActivationLedger activation_ledger(const ToyModel& model, std::size_t batch, bool recompute);

class Tape {
public:
    const ActivationLedger& ledger() const { return ledger_; }
    bool consumed() const { return consumed_; }

private:
    friend struct TapeAccess;

    const ToyModel* model_ = nullptr;
    std::uint64_t generation_ = 0;
    TapeConfig cfg_;
    Matrix target_;
    std::vector<Matrix> inputs_;
    std::vector<Matrix> xa_;  // empty under recomputation
    std::vector<Matrix> z_;   // empty under recomputation
    ActivationLedger ledger_;
    bool consumed_ = false;
};

struct ForwardResult {
    double loss = 0.0;
    Tape tape;
};

ForwardResult forward_loss(const ToyModel& model, const Matrix& x, const Matrix& target,
                           const TapeConfig& cfg = {});

/// Loss only; no tape.
double evaluate_loss(const ToyModel& model, const Matrix& x, const Matrix& target);
Matrix predict(const ToyModel& model, const Matrix& x);

/// Per-layer gradients. Adapted layers fill a and b (entries at mask-zero
/// positions are exactly 0.0); Full layers fill w.
struct LayerGrads {
    Matrix a;
    Matrix b;
    Matrix w;
};

struct Gradients {
    std::vector<LayerGrads> layers;
};

/// Consumes the tape. Throws StateError if it was already consumed or the
/// model changed since the forward pass.
Gradients backward(Tape& tape);

enum class OptimizerKind { AdamW, SGD };

std::string_view to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(std::string_view s);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::AdamW;
    double lr = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct Moments {
    Matrix m;
    Matrix v;
};

struct LayerOptState {
    Moments a;
    Moments b;
    Moments w;
};

struct OptState {
    OptimizerConfig cfg;
    std::uint64_t step = 0;
    std::vector<LayerOptState> layers;

    static OptState init(const ToyModel& model, const OptimizerConfig& cfg);
};

/// One AdamW (or SGD) update of `param` at step t >= 1, restricted to entries
/// selected by `mask` (all entries when mask is null). Unselected entries of
/// param, m and v are left untouched. Weight decay is decoupled.
void masked_update(Matrix& param, const Matrix& grad, Moments& moments, const SelectionMask* mask,
                   const OptimizerConfig& cfg, std::uint64_t t);

/// Increments opt.step, then updates every trainable matrix of the model.
/// Throws NumericError (leaving model and state unchanged) on non-finite grads.
void adamw_step(ToyModel& model, const Gradients& grads, OptState& opt);

struct Dataset {
    Matrix inputs;
    Matrix targets;
};

struct RunReport {
    double initial_loss = 0.0;
    std::vector<double> epoch_losses;  // full-dataset loss after each epoch
    std::size_t steps = 0;
    std::size_t trainable_params = 0;
    ActivationLedger ledger_recompute_on;
    ActivationLedger ledger_recompute_off;
    std::size_t peak_tape_bytes = 0;  // largest ledger actually recorded during the run
    OptState optimizer;               // state after the last step
    double final_loss() const { return epoch_losses.empty() ? initial_loss : epoch_losses.back(); }
};

/// batch_size 0 means full batch. Mini-batches are taken in dataset order.
RunReport train_run(ToyModel& model, const Dataset& data, const OptimizerConfig& opt_cfg,
                    std::size_t epochs, const TapeConfig& cfg, std::size_t batch_size = 0);

/// Central-difference check of every trainable gradient entry against
/// forward-only loss evaluations.
struct GradCheckSummary {
    std::size_t checked = 0;
    std::size_t failures = 0;
    std::size_t frozen_nonzero = 0;  // analytic grads that should be 0.0 but are not
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    bool passed() const { return checked > 0 && failures == 0 && frozen_nonzero == 0; }
};

struct GradCheckOptions {
    double step = 1e-6;
    double rel_tol = 1e-5;
    double abs_floor = 1e-8;
};

GradCheckSummary gradient_check(const ToyModel& model, const Matrix& x, const Matrix& target,
                                const GradCheckOptions& opts = {});

}  // namespace lorasp

// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "lorasp/matrix.hpp"
#include "lorasp/quant.hpp"
#include "lorasp/rng.hpp"
#include "lorasp/selection.hpp"

namespace lorasp {

/// Low-rank factors with their selection masks.
///
/// a is m x r, b is n x r, and the weight update is
///     delta_w = scale * (a ⊙ mask_a) (b ⊙ mask_b)^T        (m x n)
/// with scale = alpha / r. When `freeze_only_gradients` is set the forward
/// uses the raw factors and the masks only gate optimizer updates.
class AdapterPair {
public:
    AdapterPair(Matrix a, Matrix b, SelectionMask mask_a, SelectionMask mask_b, double alpha,
                bool freeze_only_gradients = false);

    const Matrix& a() const { return a_; }
    const Matrix& b() const { return b_; }
    Matrix& mutable_a() { return a_; }
    Matrix& mutable_b() { return b_; }
    const SelectionMask& mask_a() const { return mask_a_; }
    const SelectionMask& mask_b() const { return mask_b_; }

    std::size_t in_dim() const { return a_.rows(); }
    std::size_t out_dim() const { return b_.rows(); }
    std::size_t rank() const { return a_.cols(); }
    double alpha() const { return alpha_; }
    double scale() const { return scale_; }
    bool freeze_only_gradients() const { return freeze_only_gradients_; }

    /// Factors as they enter the forward product.
    Matrix effective_a() const;
    Matrix effective_b() const;

    std::size_t trainable_count() const { return mask_a_.ones_count() + mask_b_.ones_count(); }

private:
    Matrix a_;
    Matrix b_;
    SelectionMask mask_a_;
    SelectionMask mask_b_;
    double alpha_;
    double scale_;
    bool freeze_only_gradients_;
};

/// a ~ N(0, 1/r) (variance 1/r), b = 0, masks drawn per `scheme`. Factor
/// values come from `init_rng`; mask_a and mask_b come from child streams 1
/// and 2 of `mask_rng`.
AdapterPair init_adapter(std::size_t m, std::size_t n, std::size_t r, double alpha,
                         MaskScheme scheme, Rng& init_rng, const Rng& mask_rng,
                         bool freeze_only_gradients = false);

/// Single-stream convenience: masks use a child stream of `rng`.
AdapterPair init_adapter(std::size_t m, std::size_t n, std::size_t r, double alpha,
                         MaskScheme scheme, Rng& rng);

Matrix delta_w(const AdapterPair& p);

enum class AdaptMode {
    LoRA_SP,  // half-selected masks
    LoRA,     // all-ones masks
    Frozen,   // all-zeros masks, nothing trains
    Full,     // no adapter; the dense base weight itself trains
};

std::string_view to_string(AdaptMode m);
AdaptMode adapt_mode_from_string(std::string_view s);

/// A frozen base weight W (m x n, maps m-dim rows to n-dim rows) plus an
/// adapter. Full mode holds a dense trainable base and no adapter.
class AdaptedLayer {
public:
    using Base = std::variant<Matrix, QuantizedTensor>;

    AdaptedLayer(Base base, std::optional<AdapterPair> adapter, AdaptMode mode);

    std::size_t in_dim() const { return in_; }
    std::size_t out_dim() const { return out_; }
    AdaptMode mode() const { return mode_; }

    const Base& base() const { return base_; }
    bool base_quantized() const { return std::holds_alternative<QuantizedTensor>(base_); }
    /// Dequantized (or copied) base weight, m x n.
    Matrix base_weight() const;
    /// Full mode only.
    Matrix& mutable_base();

    bool has_adapter() const { return adapter_.has_value(); }
    const AdapterPair& adapter() const;
    AdapterPair& mutable_adapter();

    std::size_t trainable_count() const;

private:
    Base base_;
    std::optional<AdapterPair> adapter_;
    AdaptMode mode_;
    std::size_t in_;
    std::size_t out_;
};

/// Builds a layer for `mode` on top of base weight `w`. LoRA forces all-ones
/// masks and Frozen all-zeros; LoRA_SP uses `scheme`. With `quantize_base` the
/// weight is quantized once here and never touched again. Full ignores r,
/// alpha and the quantize flag.
struct LayerInit {
    std::size_t rank = 16;
    double alpha = 16.0;
    MaskScheme scheme = MaskScheme::GlobalRandom;
    bool quantize_base = true;
    std::size_t block_size = kDefaultBlockSize;
    bool freeze_only_gradients = false;
};

AdaptedLayer make_layer(const Matrix& w, AdaptMode mode, const LayerInit& init, Rng& init_rng,
                        const Rng& mask_rng);

/// Intermediates of one layer's forward map for input x (batch x m):
///   base_out = x W,  xa = x (a ⊙ mask_a),  z = base_out + scale * xa (b ⊙ mask_b)^T.
/// xa has zero columns in Full mode.
struct LayerForward {
    Matrix base_out;
    Matrix xa;
    Matrix z;
};

LayerForward forward_parts(const AdaptedLayer& layer, const Matrix& x);
Matrix forward(const AdaptedLayer& layer, const Matrix& x);

/// dequantize(base) + delta_w as one dense matrix.
Matrix merge(const AdaptedLayer& layer);

/// Directory checkpoint: manifest.json plus one blob per tensor
/// (LSPM factors, LSPS masks, LSPQ or LSPM base weights).
void save_checkpoint(const std::filesystem::path& dir, const std::vector<AdaptedLayer>& layers);
std::vector<AdaptedLayer> load_checkpoint(const std::filesystem::path& dir);

}  // namespace lorasp

// SPDX-License-Identifier: Apache-2.0

#include "lorasp/adapter.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <json.hpp>

#include "lorasp/error.hpp"

namespace lorasp {

AdapterPair::AdapterPair(Matrix a, Matrix b, SelectionMask mask_a, SelectionMask mask_b,
                         double alpha, bool freeze_only_gradients)
    : a_(std::move(a)), b_(std::move(b)), mask_a_(std::move(mask_a)), mask_b_(std::move(mask_b)),
      alpha_(alpha), scale_(0.0), freeze_only_gradients_(freeze_only_gradients) {
    const std::size_t r = a_.cols();
    if (b_.cols() != r) {
        throw ShapeError(fmt::format("AdapterPair: rank mismatch a {} vs b {}", a_.shape_str(),
                                     b_.shape_str()));
    }
    if (r == 0 || r > std::min(a_.rows(), b_.rows())) {
        throw ParameterError(fmt::format("AdapterPair: rank {} outside [1, min({}, {})]", r,
                                         a_.rows(), b_.rows()));
    }
    if (mask_a_.rows() != a_.rows() || mask_a_.cols() != r || mask_b_.rows() != b_.rows() ||
        mask_b_.cols() != r) {
        throw ShapeError("AdapterPair: mask shapes must match factor shapes");
    }
    if (!std::isfinite(alpha_)) {
        throw ParameterError("AdapterPair: alpha must be finite");
    }
    scale_ = alpha_ / static_cast<double>(r);
}

Matrix AdapterPair::effective_a() const {
    return freeze_only_gradients_ ? a_ : apply(mask_a_, a_);
}

Matrix AdapterPair::effective_b() const {
    return freeze_only_gradients_ ? b_ : apply(mask_b_, b_);
}

AdapterPair init_adapter(std::size_t m, std::size_t n, std::size_t r, double alpha,
                         MaskScheme scheme, Rng& init_rng, const Rng& mask_rng,
                         bool freeze_only_gradients) {
    if (r == 0 || r > std::min(m, n)) {
        throw ParameterError(fmt::format("init_adapter: rank {} outside [1, min({}, {})]", r, m, n));
    }
    Matrix a = gauss(init_rng, m, r, 0.0, 1.0 / std::sqrt(static_cast<double>(r)));
    Matrix b(n, r);
    Rng rng_a = mask_rng.split(1);
    Rng rng_b = mask_rng.split(2);
    SelectionMask mask_a = make_mask(m, r, scheme, rng_a);
    SelectionMask mask_b = make_mask(n, r, scheme, rng_b);
    return AdapterPair(std::move(a), std::move(b), std::move(mask_a), std::move(mask_b), alpha,
                       freeze_only_gradients);
}

AdapterPair init_adapter(std::size_t m, std::size_t n, std::size_t r, double alpha,
                         MaskScheme scheme, Rng& rng) {
    const Rng mask_rng = rng.split(0x6d61736bULL);
    return init_adapter(m, n, r, alpha, scheme, rng, mask_rng);
}

Matrix delta_w(const AdapterPair& p) {
    return scaled(matmul(p.effective_a(), transpose(p.effective_b())), p.scale());
}

std::string_view to_string(AdaptMode m) {
    switch (m) {
        case AdaptMode::LoRA_SP: return "lorasp";
        case AdaptMode::LoRA: return "lora";
        case AdaptMode::Frozen: return "frozen";
        case AdaptMode::Full: return "ft";
    }
    return "unknown";
}

AdaptMode adapt_mode_from_string(std::string_view s) {
    for (auto m : {AdaptMode::LoRA_SP, AdaptMode::LoRA, AdaptMode::Frozen, AdaptMode::Full}) {
        if (to_string(m) == s) {
            return m;
        }
    }
    throw ParameterError(fmt::format("unknown method '{}'", s));
}

AdaptedLayer::AdaptedLayer(Base base, std::optional<AdapterPair> adapter, AdaptMode mode)
    : base_(std::move(base)), adapter_(std::move(adapter)), mode_(mode) {
    std::visit(
        [this](const auto& w) {
            in_ = w.rows();
            out_ = w.cols();
        },
        base_);
    if (mode_ == AdaptMode::Full) {
        if (adapter_) {
            throw ParameterError("AdaptedLayer: full fine-tuning layers carry no adapter");
        }
        if (base_quantized()) {
            throw ParameterError("AdaptedLayer: full fine-tuning needs a dense base weight");
        }
        return;
    }
    if (!adapter_) {
        throw ParameterError(fmt::format("AdaptedLayer: mode {} needs an adapter", to_string(mode_)));
    }
    if (adapter_->in_dim() != in_ || adapter_->out_dim() != out_) {
        throw ShapeError(fmt::format("AdaptedLayer: base ({}x{}) vs adapter a {} / b {}", in_, out_,
                                     adapter_->a().shape_str(), adapter_->b().shape_str()));
    }
    const auto expect_scheme = [&](MaskScheme s) {
        if (adapter_->mask_a().scheme() != s || adapter_->mask_b().scheme() != s) {
            throw ParameterError(fmt::format("AdaptedLayer: mode {} requires {} masks",
                                             to_string(mode_), to_string(s)));
        }
    };
    if (mode_ == AdaptMode::LoRA) {
        expect_scheme(MaskScheme::AllOnes);
    } else if (mode_ == AdaptMode::Frozen) {
        expect_scheme(MaskScheme::AllZeros);
    }
}

Matrix AdaptedLayer::base_weight() const {
    if (const auto* q = std::get_if<QuantizedTensor>(&base_)) {
        return dequantize(*q);
    }
    return std::get<Matrix>(base_);
}

Matrix& AdaptedLayer::mutable_base() {
    if (mode_ != AdaptMode::Full) {
        throw StateError("AdaptedLayer: base weight is frozen outside full fine-tuning");
    }
    return std::get<Matrix>(base_);
}

const AdapterPair& AdaptedLayer::adapter() const {
    if (!adapter_) {
        throw StateError("AdaptedLayer: no adapter in full fine-tuning mode");
    }
    return *adapter_;
}

AdapterPair& AdaptedLayer::mutable_adapter() {
    if (!adapter_) {
        throw StateError("AdaptedLayer: no adapter in full fine-tuning mode");
    }
    return *adapter_;
}

std::size_t AdaptedLayer::trainable_count() const {
    return mode_ == AdaptMode::Full ? in_ * out_ : adapter_->trainable_count();
}

AdaptedLayer make_layer(const Matrix& w, AdaptMode mode, const LayerInit& init, Rng& init_rng,
                        const Rng& mask_rng) {
    if (mode == AdaptMode::Full) {
        return AdaptedLayer(w, std::nullopt, mode);
    }
    MaskScheme scheme = init.scheme;
    if (mode == AdaptMode::LoRA) {
        scheme = MaskScheme::AllOnes;
    } else if (mode == AdaptMode::Frozen) {
        scheme = MaskScheme::AllZeros;
    }
    AdapterPair adapter = init_adapter(w.rows(), w.cols(), init.rank, init.alpha, scheme, init_rng,
                                       mask_rng, init.freeze_only_gradients);
    AdaptedLayer::Base base = w;
    if (init.quantize_base) {
        base = quantize(w, init.block_size);
    }
    return AdaptedLayer(std::move(base), std::move(adapter), mode);
}

LayerForward forward_parts(const AdaptedLayer& layer, const Matrix& x) {
    if (x.cols() != layer.in_dim()) {
        throw ShapeError(fmt::format("forward: input {} does not feed a {}x{} layer", x.shape_str(),
                                     layer.in_dim(), layer.out_dim()));
    }
    LayerForward parts;
    parts.base_out = matmul(x, layer.base_weight());
    if (!layer.has_adapter()) {
        parts.xa = Matrix(x.rows(), 0);
        parts.z = parts.base_out;
        return parts;
    }
    const AdapterPair& p = layer.adapter();
    parts.xa = matmul(x, p.effective_a());
    const Matrix low_rank = matmul(parts.xa, transpose(p.effective_b()));
    parts.z = parts.base_out;
    auto z = parts.z.mutable_values();
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] += p.scale() * low_rank.values()[i];
    }
    return parts;
}

Matrix forward(const AdaptedLayer& layer, const Matrix& x) { return forward_parts(layer, x).z; }

Matrix merge(const AdaptedLayer& layer) {
    if (!layer.has_adapter()) {
        return layer.base_weight();
    }
    return add(layer.base_weight(), delta_w(layer.adapter()));
}

namespace {

template <typename Writer>
void write_blob(const std::filesystem::path& path, Writer&& writer) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError(fmt::format("cannot open {} for writing", path.string()));
    }
    writer(out);
}

template <typename Reader>
auto read_blob(const std::filesystem::path& path, Reader&& reader) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(fmt::format("cannot open {}", path.string()));
    }
    return reader(in);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const std::vector<AdaptedLayer>& layers) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
    }
    nlohmann::ordered_json manifest;
    manifest["format"] = "lorasp-checkpoint";
    manifest["version"] = 1;
    manifest["layers"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const AdaptedLayer& layer = layers[i];
        nlohmann::ordered_json entry;
        entry["in_dim"] = layer.in_dim();
        entry["out_dim"] = layer.out_dim();
        entry["mode"] = to_string(layer.mode());
        const std::string stem = fmt::format("layer{}", i);
        if (const auto* q = std::get_if<QuantizedTensor>(&layer.base())) {
            entry["base"] = stem + "_base.lspq";
            write_blob(dir / (stem + "_base.lspq"), [&](std::ostream& o) { write_quantized(o, *q); });
        } else {
            entry["base"] = stem + "_base.lspm";
            write_blob(dir / (stem + "_base.lspm"),
                       [&](std::ostream& o) { write_matrix(o, std::get<Matrix>(layer.base())); });
        }
        if (layer.has_adapter()) {
            const AdapterPair& p = layer.adapter();
            entry["rank"] = p.rank();
            entry["alpha"] = p.alpha();
            entry["scheme"] = to_string(p.mask_a().scheme());
            entry["mask_seed_a"] = p.mask_a().seed();
            entry["mask_seed_b"] = p.mask_b().seed();
            entry["freeze_only_gradients"] = p.freeze_only_gradients();
            entry["a"] = stem + "_a.lspm";
            entry["b"] = stem + "_b.lspm";
            entry["mask_a"] = stem + "_mask_a.lsps";
            entry["mask_b"] = stem + "_mask_b.lsps";
            write_blob(dir / (stem + "_a.lspm"), [&](std::ostream& o) { write_matrix(o, p.a()); });
            write_blob(dir / (stem + "_b.lspm"), [&](std::ostream& o) { write_matrix(o, p.b()); });
            write_blob(dir / (stem + "_mask_a.lsps"), [&](std::ostream& o) { write_mask(o, p.mask_a()); });
            write_blob(dir / (stem + "_mask_b.lsps"), [&](std::ostream& o) { write_mask(o, p.mask_b()); });
        }
        manifest["layers"].push_back(std::move(entry));
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) {
        throw IoError(fmt::format("cannot write manifest in {}", dir.string()));
    }
    out << manifest.dump(2) << '\n';
}

std::vector<AdaptedLayer> load_checkpoint(const std::filesystem::path& dir) {
    nlohmann::json manifest;
    {
        std::ifstream in(dir / "manifest.json");
        if (!in) {
            throw IoError(fmt::format("no manifest.json in {}", dir.string()));
        }
        try {
            in >> manifest;
        } catch (const nlohmann::json::exception& e) {
            throw IoError(fmt::format("malformed manifest: {}", e.what()));
        }
    }
    std::vector<AdaptedLayer> layers;
    try {
        for (const auto& entry : manifest.at("layers")) {
            const auto base_file = entry.at("base").get<std::string>();
            AdaptedLayer::Base base = base_file.ends_with(".lspq")
                ? AdaptedLayer::Base(read_blob(dir / base_file, read_quantized))
                : AdaptedLayer::Base(read_blob(dir / base_file, read_matrix));
            const AdaptMode mode = adapt_mode_from_string(entry.at("mode").get<std::string>());
            std::optional<AdapterPair> adapter;
            if (entry.contains("a")) {
                adapter.emplace(read_blob(dir / entry.at("a").get<std::string>(), read_matrix),
                                read_blob(dir / entry.at("b").get<std::string>(), read_matrix),
                                read_blob(dir / entry.at("mask_a").get<std::string>(), read_mask),
                                read_blob(dir / entry.at("mask_b").get<std::string>(), read_mask),
                                entry.at("alpha").get<double>(),
                                entry.at("freeze_only_gradients").get<bool>());
            }
            layers.emplace_back(std::move(base), std::move(adapter), mode);
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(fmt::format("malformed manifest: {}", e.what()));
    }
    return layers;
}

}  // namespace lorasp

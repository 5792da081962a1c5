// SPDX-License-Identifier: Apache-2.0

#include "lorasp/train.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include <fmt/format.h>

#include "lorasp/error.hpp"

namespace lorasp {

std::string_view to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "identity"; }

std::string_view to_string(LossKind l) {
    return l == LossKind::MeanSquaredError ? "mse" : "softmax_cross_entropy";
}

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::AdamW ? "adamw" : "sgd"; }

OptimizerKind optimizer_kind_from_string(std::string_view s) {
    if (s == "adamw") {
        return OptimizerKind::AdamW;
    }
    if (s == "sgd") {
        return OptimizerKind::SGD;
    }
    throw ParameterError(fmt::format("unknown optimizer '{}'", s));
}

ToyModel::ToyModel(std::vector<AdaptedLayer> layers, std::vector<Activation> activations,
                   LossKind loss)
    : layers_(std::move(layers)), activations_(std::move(activations)), loss_(loss) {
    if (layers_.empty()) {
        throw ParameterError("ToyModel: at least one layer required");
    }
    if (activations_.size() != layers_.size()) {
        throw ParameterError("ToyModel: one activation per layer required");
    }
    for (std::size_t i = 1; i < layers_.size(); ++i) {
        if (layers_[i - 1].out_dim() != layers_[i].in_dim()) {
            throw ShapeError(fmt::format("ToyModel: layer {} outputs {} but layer {} takes {}", i - 1,
                                         layers_[i - 1].out_dim(), i, layers_[i].in_dim()));
        }
    }
}

AdaptedLayer& ToyModel::mutable_layer(std::size_t i) {
    ++generation_;
    return layers_.at(i);
}

std::size_t ToyModel::trainable_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers_) {
        n += layer.trainable_count();
    }
    return n;
}

std::size_t ActivationLedger::total() const {
    std::size_t t = 0;
    for (auto b : per_layer_bytes) {
        t += b;
    }
    return t;
}

ActivationLedger activation_ledger(const ToyModel& model, std::size_t batch, bool recompute) {
    ActivationLedger ledger;
    for (const auto& layer : model.layers()) {
        std::size_t entries = layer.in_dim();
        if (!recompute) {
            entries += (layer.has_adapter() ? layer.adapter().rank() : 0) + layer.out_dim();
        }
        ledger.per_layer_bytes.push_back(batch * entries * sizeof(double));
    }
    return ledger;
}

struct TapeAccess {
    static Tape& init(Tape& t, const ToyModel& model, const TapeConfig& cfg, const Matrix& target) {
        t.model_ = &model;
        t.generation_ = model.generation();
        t.cfg_ = cfg;
        t.target_ = target;
        return t;
    }
    static auto& inputs(Tape& t) { return t.inputs_; }
    static auto& xa(Tape& t) { return t.xa_; }
    static auto& z(Tape& t) { return t.z_; }
    static auto& ledger(Tape& t) { return t.ledger_; }
    static Gradients backward(Tape& t);
};

namespace {

Matrix activate(Activation act, const Matrix& z) {
    if (act == Activation::Identity) {
        return z;
    }
    Matrix h = z;
    for (double& v : h.mutable_values()) {
        v = std::tanh(v);
    }
    return h;
}

// dL/dz from dL/dh, given z and h = act(z).
Matrix activation_backward(Activation act, const Matrix& h, const Matrix& dh) {
    if (act == Activation::Identity) {
        return dh;
    }
    Matrix dz = dh;
    auto d = dz.mutable_values();
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double y = h.values()[i];
        d[i] *= 1.0 - y * y;
    }
    return dz;
}

void check_target(const ToyModel& model, const Matrix& x, const Matrix& target) {
    if (x.cols() != model.in_dim()) {
        throw ShapeError(fmt::format("forward_loss: input {} but model takes {} features",
                                     x.shape_str(), model.in_dim()));
    }
    if (target.rows() != x.rows() || target.cols() != model.out_dim()) {
        throw ShapeError(fmt::format("forward_loss: target {} for input {} and {} outputs",
                                     target.shape_str(), x.shape_str(), model.out_dim()));
    }
}

double loss_value(LossKind kind, const Matrix& y, const Matrix& target) {
    double total = 0.0;
    if (kind == LossKind::MeanSquaredError) {
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double d = y.values()[i] - target.values()[i];
            total += d * d;
        }
        return y.size() == 0 ? 0.0 : total / static_cast<double>(y.size());
    }
    for (std::size_t r = 0; r < y.rows(); ++r) {
        double mx = y(r, 0);
        for (std::size_t c = 1; c < y.cols(); ++c) {
            mx = std::max(mx, y(r, c));
        }
        double denom = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) {
            denom += std::exp(y(r, c) - mx);
        }
        const double log_denom = std::log(denom) + mx;
        for (std::size_t c = 0; c < y.cols(); ++c) {
            total -= target(r, c) * (y(r, c) - log_denom);
        }
    }
    return y.rows() == 0 ? 0.0 : total / static_cast<double>(y.rows());
}

Matrix loss_grad(LossKind kind, const Matrix& y, const Matrix& target) {
    Matrix g(y.rows(), y.cols());
    if (kind == LossKind::MeanSquaredError) {
        const double n = static_cast<double>(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) {
            g.mutable_values()[i] = 2.0 * (y.values()[i] - target.values()[i]) / n;
        }
        return g;
    }
    const double batch = static_cast<double>(y.rows());
    for (std::size_t r = 0; r < y.rows(); ++r) {
        double mx = y(r, 0);
        for (std::size_t c = 1; c < y.cols(); ++c) {
            mx = std::max(mx, y(r, c));
        }
        double denom = 0.0;
        double mass = 0.0;
        for (std::size_t c = 0; c < y.cols(); ++c) {
            denom += std::exp(y(r, c) - mx);
            mass += target(r, c);
        }
        for (std::size_t c = 0; c < y.cols(); ++c) {
            const double p = std::exp(y(r, c) - mx) / denom;
            g(r, c) = (p * mass - target(r, c)) / batch;
        }
    }
    return g;
}

// Runs the chain; `on_layer(i, input, parts)` sees each layer before activation.
Matrix run_layers(const ToyModel& model, const Matrix& x,
                  const std::function<void(std::size_t, const Matrix&, LayerForward&)>& on_layer) {
    Matrix h = x;
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
        LayerForward parts = forward_parts(model.layers()[i], h);
        if (!all_finite(parts.z)) {
            throw NumericError(fmt::format("non-finite activation in layer {}", i));
        }
        Matrix next = activate(model.activations()[i], parts.z);
        if (on_layer) {
            on_layer(i, h, parts);
        }
        h = std::move(next);
    }
    return h;
}

double finite_loss(const ToyModel& model, const Matrix& y, const Matrix& target) {
    const double loss = loss_value(model.loss(), y, target);
    if (!std::isfinite(loss)) {
        throw NumericError(fmt::format("non-finite loss after layer {}", model.layers().size() - 1));
    }
    return loss;
}

}  // namespace

ForwardResult forward_loss(const ToyModel& model, const Matrix& x, const Matrix& target,
                           const TapeConfig& cfg) {
    check_target(model, x, target);
    ForwardResult result;
    Tape& tape = TapeAccess::init(result.tape, model, cfg, target);
    auto& ledger = TapeAccess::ledger(tape).per_layer_bytes;
    const Matrix y = run_layers(model, x, [&](std::size_t, const Matrix& input, LayerForward& parts) {
        std::size_t entries = input.size();
        TapeAccess::inputs(tape).push_back(input);
        if (!cfg.recompute) {
            entries += parts.xa.size() + parts.z.size();
            TapeAccess::xa(tape).push_back(std::move(parts.xa));
            TapeAccess::z(tape).push_back(std::move(parts.z));
        }
        ledger.push_back(entries * sizeof(double));
    });
    result.loss = finite_loss(model, y, target);
    return result;
}

double evaluate_loss(const ToyModel& model, const Matrix& x, const Matrix& target) {
    check_target(model, x, target);
    return finite_loss(model, run_layers(model, x, nullptr), target);
}

Matrix predict(const ToyModel& model, const Matrix& x) {
    if (x.cols() != model.in_dim()) {
        throw ShapeError(fmt::format("predict: input {} but model takes {} features", x.shape_str(),
                                     model.in_dim()));
    }
    return run_layers(model, x, nullptr);
}

Gradients TapeAccess::backward(Tape& t) {
    if (t.model_ == nullptr) {
        throw StateError("backward: tape was not produced by forward_loss");
    }
    if (t.consumed_) {
        throw StateError("backward: tape already consumed");
    }
    if (t.model_->generation() != t.generation_) {
        throw StateError("backward: model parameters changed since the forward pass");
    }
    t.consumed_ = true;
    const ToyModel& model = *t.model_;
    const std::size_t n_layers = model.layers().size();

    Gradients grads;
    grads.layers.resize(n_layers);
    Matrix dh;
    for (std::size_t idx = n_layers; idx-- > 0;) {
        const AdaptedLayer& layer = model.layers()[idx];
        const Matrix& x = t.inputs_[idx];
        Matrix xa;
        Matrix z;
        if (t.cfg_.recompute) {
            LayerForward parts = forward_parts(layer, x);
            xa = std::move(parts.xa);
            z = std::move(parts.z);
        } else {
            xa = t.xa_[idx];
            z = t.z_[idx];
        }
        const Matrix h = activate(model.activations()[idx], z);
        if (idx == n_layers - 1) {
            dh = loss_grad(model.loss(), h, t.target_);
        }
        const Matrix dz = activation_backward(model.activations()[idx], h, dh);
        const Matrix w = layer.base_weight();
        LayerGrads& g = grads.layers[idx];

        if (!layer.has_adapter()) {
            g.w = matmul(transpose(x), dz);
            dh = matmul(dz, transpose(w));
            continue;
        }
        const AdapterPair& p = layer.adapter();
        const Matrix a_eff = p.effective_a();
        const Matrix b_eff = p.effective_b();
        const Matrix dxa = scaled(matmul(dz, b_eff), p.scale());
        const Matrix db_eff = scaled(matmul(transpose(dz), xa), p.scale());
        const Matrix da_eff = matmul(transpose(x), dxa);
        g.a = apply(p.mask_a(), da_eff);
        g.b = apply(p.mask_b(), db_eff);
        if (idx > 0) {
            dh = add(matmul(dz, transpose(w)), matmul(dxa, transpose(a_eff)));
        }
    }
    return grads;
}

Gradients backward(Tape& tape) { return TapeAccess::backward(tape); }

OptState OptState::init(const ToyModel& model, const OptimizerConfig& cfg) {
    OptState s;
    s.cfg = cfg;
    for (const auto& layer : model.layers()) {
        LayerOptState ls;
        if (layer.has_adapter()) {
            const auto& p = layer.adapter();
            ls.a = {Matrix(p.a().rows(), p.a().cols()), Matrix(p.a().rows(), p.a().cols())};
            ls.b = {Matrix(p.b().rows(), p.b().cols()), Matrix(p.b().rows(), p.b().cols())};
        } else {
            ls.w = {Matrix(layer.in_dim(), layer.out_dim()), Matrix(layer.in_dim(), layer.out_dim())};
        }
        s.layers.push_back(std::move(ls));
    }
    return s;
}

void masked_update(Matrix& param, const Matrix& grad, Moments& moments, const SelectionMask* mask,
                   const OptimizerConfig& cfg, std::uint64_t t) {
    if (!param.same_shape(grad) || !param.same_shape(moments.m) || !param.same_shape(moments.v)) {
        throw ShapeError(fmt::format("masked_update: param {} grad {} moments {}/{}",
                                     param.shape_str(), grad.shape_str(), moments.m.shape_str(),
                                     moments.v.shape_str()));
    }
    if (mask != nullptr && (mask->rows() != param.rows() || mask->cols() != param.cols())) {
        throw ShapeError("masked_update: mask shape does not match parameter");
    }
    if (t == 0) {
        throw StateError("masked_update: step counter must be incremented before the update");
    }
    auto p = param.mutable_values();
    auto m = moments.m.mutable_values();
    auto v = moments.v.mutable_values();
    const auto g = grad.values();
    const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (mask != nullptr && mask->bits()[i] == 0) {
            continue;
        }
        if (cfg.kind == OptimizerKind::SGD) {
            p[i] -= cfg.lr * g[i];
            continue;
        }
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double m_hat = m[i] / bias1;
        const double v_hat = v[i] / bias2;
        p[i] -= cfg.lr * cfg.weight_decay * p[i];
        p[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

void adamw_step(ToyModel& model, const Gradients& grads, OptState& opt) {
    if (grads.layers.size() != model.layers().size() || opt.layers.size() != model.layers().size()) {
        throw ShapeError("adamw_step: gradients/optimizer state do not match the model");
    }
    for (std::size_t i = 0; i < grads.layers.size(); ++i) {
        const LayerGrads& g = grads.layers[i];
        if (!all_finite(g.a) || !all_finite(g.b) || !all_finite(g.w)) {
            throw NumericError(fmt::format("non-finite gradient in layer {}", i));
        }
    }
    const std::uint64_t t = opt.step + 1;
    for (std::size_t i = 0; i < grads.layers.size(); ++i) {
        AdaptedLayer& layer = model.mutable_layer(i);
        const LayerGrads& g = grads.layers[i];
        LayerOptState& s = opt.layers[i];
        if (!layer.has_adapter()) {
            masked_update(layer.mutable_base(), g.w, s.w, nullptr, opt.cfg, t);
            continue;
        }
        AdapterPair& p = layer.mutable_adapter();
        masked_update(p.mutable_a(), g.a, s.a, &p.mask_a(), opt.cfg, t);
        masked_update(p.mutable_b(), g.b, s.b, &p.mask_b(), opt.cfg, t);
    }
    opt.step = t;
}

RunReport train_run(ToyModel& model, const Dataset& data, const OptimizerConfig& opt_cfg,
                    std::size_t epochs, const TapeConfig& cfg, std::size_t batch_size) {
    const std::size_t n = data.inputs.rows();
    if (n == 0) {
        throw ParameterError("train_run: empty dataset");
    }
    if (batch_size == 0 || batch_size > n) {
        batch_size = n;
    }
    RunReport report;
    report.trainable_params = model.trainable_count();
    report.ledger_recompute_on = activation_ledger(model, batch_size, true);
    report.ledger_recompute_off = activation_ledger(model, batch_size, false);
    report.initial_loss = evaluate_loss(model, data.inputs, data.targets);

    const auto slice = [](const Matrix& m, std::size_t begin, std::size_t end) {
        std::vector<double> rows(m.values().begin() + begin * m.cols(),
                                 m.values().begin() + end * m.cols());
        return Matrix(end - begin, m.cols(), std::move(rows));
    };

    OptState opt = OptState::init(model, opt_cfg);
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        for (std::size_t begin = 0; begin < n; begin += batch_size) {
            const std::size_t end = std::min(n, begin + batch_size);
            try {
                const bool whole = begin == 0 && end == n;
                ForwardResult fr = forward_loss(model, whole ? data.inputs : slice(data.inputs, begin, end),
                                                whole ? data.targets : slice(data.targets, begin, end), cfg);
                report.peak_tape_bytes = std::max(report.peak_tape_bytes, fr.tape.ledger().total());
                const Gradients grads = backward(fr.tape);
                adamw_step(model, grads, opt);
            } catch (const NumericError& e) {
                throw NumericError(fmt::format("step {}: {}", report.steps, e.what()));
            }
            ++report.steps;
        }
        try {
            report.epoch_losses.push_back(evaluate_loss(model, data.inputs, data.targets));
        } catch (const NumericError& e) {
            throw NumericError(fmt::format("step {}: {}", report.steps, e.what()));
        }
    }
    report.optimizer = std::move(opt);
    return report;
}

GradCheckSummary gradient_check(const ToyModel& model, const Matrix& x, const Matrix& target,
                                const GradCheckOptions& opts) {
    ForwardResult fr = forward_loss(model, x, target);
    const Gradients grads = backward(fr.tape);

    GradCheckSummary summary;
    ToyModel probe = model;
    const auto check_entry = [&](double analytic, const std::function<double&()>& slot) {
        double& value = slot();
        const double saved = value;
        value = saved + opts.step;
        const double plus = evaluate_loss(probe, x, target);
        slot() = saved - opts.step;
        const double minus = evaluate_loss(probe, x, target);
        slot() = saved;
        const double numeric = (plus - minus) / (2.0 * opts.step);
        const double abs_err = std::abs(analytic - numeric);
        const double denom = std::max(std::abs(analytic), std::abs(numeric));
        const double rel_err = denom > 0.0 ? abs_err / denom : 0.0;
        ++summary.checked;
        summary.max_abs_err = std::max(summary.max_abs_err, abs_err);
        if (abs_err > opts.abs_floor) {
            summary.max_rel_err = std::max(summary.max_rel_err, rel_err);
            if (rel_err > opts.rel_tol) {
                ++summary.failures;
            }
        }
    };

    for (std::size_t li = 0; li < model.layers().size(); ++li) {
        const AdaptedLayer& layer = model.layers()[li];
        const LayerGrads& g = grads.layers[li];
        if (!layer.has_adapter()) {
            for (std::size_t r = 0; r < g.w.rows(); ++r) {
                for (std::size_t c = 0; c < g.w.cols(); ++c) {
                    check_entry(g.w(r, c), [&]() -> double& { return probe.mutable_layer(li).mutable_base()(r, c); });
                }
            }
            continue;
        }
        const AdapterPair& p = layer.adapter();
        for (std::size_t r = 0; r < p.a().rows(); ++r) {
            for (std::size_t c = 0; c < p.a().cols(); ++c) {
                if (!p.mask_a().selected(r, c)) {
                    summary.frozen_nonzero += g.a(r, c) != 0.0 ? 1 : 0;
                    continue;
                }
                check_entry(g.a(r, c), [&]() -> double& { return probe.mutable_layer(li).mutable_adapter().mutable_a()(r, c); });
            }
        }
        for (std::size_t r = 0; r < p.b().rows(); ++r) {
            for (std::size_t c = 0; c < p.b().cols(); ++c) {
                if (!p.mask_b().selected(r, c)) {
                    summary.frozen_nonzero += g.b(r, c) != 0.0 ? 1 : 0;
                    continue;
                }
                check_entry(g.b(r, c), [&]() -> double& { return probe.mutable_layer(li).mutable_adapter().mutable_b()(r, c); });
            }
        }
    }
    return summary;
}

}  // namespace lorasp

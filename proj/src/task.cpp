// SPDX-License-Identifier: Apache-2.0

#include "lorasp/task.hpp"

#include <cmath>

#include "lorasp/quant.hpp"

namespace lorasp {

namespace {

Matrix teacher_forward(const std::vector<Matrix>& weights, const std::vector<Activation>& acts,
                       const Matrix& x) {
    Matrix h = x;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        h = matmul(h, weights[i]);
        if (acts[i] == Activation::Tanh) {
            for (double& v : h.mutable_values()) {
                v = std::tanh(v);
            }
        }
    }
    return h;
}

Matrix add_noise(Matrix m, double std, Rng& rng) {
    if (std > 0.0) {
        m = add(m, gauss(rng, m.rows(), m.cols(), 0.0, std));
    }
    return m;
}

}  // namespace

Task gen_task(const RunConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed_data);
    Task task;
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        const std::size_t in = i == 0 ? cfg.in_dim : cfg.out_dim;
        Matrix w = gauss(rng, in, cfg.out_dim, 0.0, 1.0 / std::sqrt(static_cast<double>(in)));
        if (cfg.quantize_base) {
            w = dequantize(quantize(w, cfg.block_size));
        }
        task.base_weights.push_back(std::move(w));
        task.activations.push_back(i + 1 < cfg.depth ? Activation::Tanh : Activation::Identity);
    }

    if (cfg.task == TaskKind::LowRankRecovery) {
        task.loss = LossKind::MeanSquaredError;
        std::vector<Matrix> teacher;
        for (std::size_t i = 0; i < cfg.depth; ++i) {
            const Matrix& w = task.base_weights[i];
            Matrix p(w.rows(), w.cols());
            if (cfg.hidden_rank > 0) {
                const Matrix u = gauss(rng, w.rows(), cfg.hidden_rank, 0.0, 1.0);
                const Matrix v = gauss(rng, w.cols(), cfg.hidden_rank, 0.0, 1.0);
                const double s = cfg.perturbation_scale /
                                 std::sqrt(static_cast<double>(w.rows() * cfg.hidden_rank));
                p = scaled(matmul(u, transpose(v)), s);
            }
            teacher.push_back(add(w, p));
            task.perturbations.push_back(std::move(p));
        }
        const auto make = [&](std::size_t samples) {
            Dataset d;
            d.inputs = gauss(rng, samples, cfg.in_dim, 0.0, 1.0);
            d.targets = add_noise(teacher_forward(teacher, task.activations, d.inputs), cfg.noise_std, rng);
            return d;
        };
        task.train = make(cfg.train_samples);
        task.val = make(cfg.val_samples);
        return task;
    }

    task.loss = LossKind::SoftmaxCrossEntropy;
    const std::size_t classes = cfg.out_dim;
    const Matrix centers = gauss(rng, classes, cfg.in_dim, 0.0, 1.0);
    const auto make = [&](std::size_t samples) {
        Dataset d;
        d.inputs = Matrix(samples, cfg.in_dim);
        d.targets = Matrix(samples, classes);
        for (std::size_t s = 0; s < samples; ++s) {
            const std::size_t label = static_cast<std::size_t>(rng.below(classes));
            for (std::size_t j = 0; j < cfg.in_dim; ++j) {
                d.inputs(s, j) = centers(label, j) + cfg.cluster_std * rng.normal();
            }
            d.targets(s, label) = 1.0;
        }
        return d;
    };
    task.train = make(cfg.train_samples);
    task.val = make(cfg.val_samples);
    return task;
}

ToyModel build_model(const RunConfig& cfg, const Task& task) {
    RunConfig resolved = cfg;
    resolved.resolve();
    LayerInit init;
    init.rank = resolved.rank;
    init.alpha = resolved.alpha;
    init.scheme = resolved.scheme;
    init.quantize_base = resolved.quantize_base;
    init.block_size = resolved.block_size;
    init.freeze_only_gradients = resolved.freeze_only_gradients;

    const Rng init_root(resolved.seed_init);
    const Rng mask_root(resolved.seed_mask);
    std::vector<AdaptedLayer> layers;
    for (std::size_t i = 0; i < task.base_weights.size(); ++i) {
        Rng init_rng = init_root.split(i);
        layers.push_back(make_layer(task.base_weights[i], resolved.method, init, init_rng, mask_root.split(i)));
    }
    return ToyModel(std::move(layers), task.activations, task.loss);
}

}  // namespace lorasp

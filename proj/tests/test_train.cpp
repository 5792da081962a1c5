// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cmath>
#include <string>

#include <doctest.h>

#include "lorasp/config.hpp"
#include "lorasp/error.hpp"
#include "lorasp/task.hpp"
#include "lorasp/train.hpp"
#include "plain_lora.hpp"

using namespace lorasp;

namespace {

struct SmallSetup {
    ToyModel model;
    Matrix x;
    Matrix target;
};

// Two layers m -> h -> n, tanh then identity, b drawn nonzero.
SmallSetup small(AdaptMode mode, std::uint64_t seed, std::size_t m = 8, std::size_t h = 8, std::size_t n = 8,
                 std::size_t r = 2, bool quantize = true, MaskScheme scheme = MaskScheme::GlobalRandom,
                 bool fog = false, LossKind loss = LossKind::MeanSquaredError) {
    Rng rng(seed);
    LayerInit init{.rank = r, .alpha = 1.5 * static_cast<double>(r), .scheme = scheme,
                   .quantize_base = quantize, .freeze_only_gradients = fog};
    std::vector<AdaptedLayer> layers;
    const std::size_t dims[3] = {m, h, n};
    for (std::size_t l = 0; l < 2; ++l) {
        Rng ir = rng.split(10 + l);
        AdaptedLayer layer = make_layer(gauss(rng, dims[l], dims[l + 1], 0.0, 0.5), mode, init, ir, rng.split(20 + l));
        if (layer.has_adapter()) {
            layer.mutable_adapter().mutable_b() = gauss(rng, dims[l + 1], r, 0.0, 0.5);
        }
        layers.push_back(std::move(layer));
    }
    ToyModel model(std::move(layers), {Activation::Tanh, Activation::Identity}, loss);
    Matrix x = gauss(rng, 6, m, 0.0, 1.0);
    Matrix t = gauss(rng, 6, n, 0.0, 1.0);
    return {std::move(model), std::move(x), std::move(t)};
}

std::uint64_t bits(double v) { return std::bit_cast<std::uint64_t>(v); }

plain::Dense dense(const Matrix& m) {
    plain::Dense d(m.rows(), m.cols());
    d.v.assign(m.values().begin(), m.values().end());
    return d;
}

}  // namespace

TEST_CASE("loss closed forms") {
    LayerInit init{.rank = 1, .alpha = 1.0, .quantize_base = false};
    Rng ir(1);
    ToyModel zero({make_layer(Matrix(3, 2), AdaptMode::LoRA_SP, init, ir, Rng(2))}, {Activation::Identity},
                  LossKind::MeanSquaredError);
    CHECK(evaluate_loss(zero, Matrix(4, 3, 1.5), Matrix(4, 2)) == 0.0);

    Rng ir2(1);
    ToyModel ident({make_layer(Matrix::identity(3), AdaptMode::LoRA_SP, init, ir2, Rng(2))}, {Activation::Identity},
                   LossKind::MeanSquaredError);
    Rng rng(3);
    const Matrix x = gauss(rng, 5, 3, 0.0, 1.0);
    const Matrix t = gauss(rng, 5, 3, 0.0, 1.0);
    double sum = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x.values()[i] - t.values()[i];
        sum += d * d;
    }
    CHECK(evaluate_loss(ident, x, t) == sum / 15.0);
    CHECK_THROWS_AS(evaluate_loss(ident, x, Matrix(5, 2)), ShapeError);
}

TEST_CASE("recompute on/off: bit-identical loss and gradients, smaller ledger") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto s = small(seed % 3 == 0 ? AdaptMode::Full : AdaptMode::LoRA_SP, seed);
        ForwardResult on = forward_loss(s.model, s.x, s.target, {.recompute = true});
        ForwardResult off = forward_loss(s.model, s.x, s.target, {.recompute = false});
        CHECK(bits(on.loss) == bits(off.loss));
        CHECK(on.tape.ledger().total() < off.tape.ledger().total());
        CHECK(on.tape.ledger().per_layer_bytes == activation_ledger(s.model, 6, true).per_layer_bytes);
        CHECK(off.tape.ledger().per_layer_bytes == activation_ledger(s.model, 6, false).per_layer_bytes);
        const Gradients g1 = backward(on.tape);
        const Gradients g2 = backward(off.tape);
        for (std::size_t l = 0; l < g1.layers.size(); ++l) {
            CHECK(bit_equal(g1.layers[l].a, g2.layers[l].a));
            CHECK(bit_equal(g1.layers[l].b, g2.layers[l].b));
            CHECK(bit_equal(g1.layers[l].w, g2.layers[l].w));
        }
    }
}

TEST_CASE("activation ledger byte formula") {
    auto s = small(AdaptMode::LoRA_SP, 4, 8, 5, 3, 2);
    const ActivationLedger off = activation_ledger(s.model, 10, false);
    const ActivationLedger on = activation_ledger(s.model, 10, true);
    CHECK(off.per_layer_bytes == std::vector<std::size_t>{8 * 10 * (8 + 2 + 5), 8 * 10 * (5 + 2 + 3)});
    CHECK(on.per_layer_bytes == std::vector<std::size_t>{8 * 10 * 8, 8 * 10 * 5});
}

TEST_CASE("tape lifecycle: consumed and stale tapes are rejected") {
    auto s = small(AdaptMode::LoRA_SP, 5);
    ForwardResult fr = forward_loss(s.model, s.x, s.target);
    backward(fr.tape);
    CHECK(fr.tape.consumed());
    CHECK_THROWS_AS(backward(fr.tape), StateError);

    ForwardResult stale = forward_loss(s.model, s.x, s.target);
    s.model.mutable_layer(0);
    CHECK_THROWS_AS(backward(stale.tape), StateError);
}

TEST_CASE("finite differences: 2-layer m=n=8, r=2, every mode and loss") {
    for (auto mode : {AdaptMode::LoRA_SP, AdaptMode::LoRA, AdaptMode::Full}) {
        for (auto loss : {LossKind::MeanSquaredError, LossKind::SoftmaxCrossEntropy}) {
            auto s = small(mode, 6, 8, 8, 8, 2, true, MaskScheme::GlobalRandom, false, loss);
            if (loss == LossKind::SoftmaxCrossEntropy) {
                s.target = Matrix(6, 8);
                for (std::size_t r = 0; r < 6; ++r) s.target(r, (3 * r) % 8) = 1.0;
            }
            const GradCheckSummary g = gradient_check(s.model, s.x, s.target);
            CHECK(g.checked > 0);
            CHECK(g.failures == 0);
            CHECK(g.frozen_nonzero == 0);
        }
    }
}

TEST_CASE("finite-difference harness detects error when the probe step is too coarse") {
    auto s = small(AdaptMode::LoRA, 7);
    const GradCheckSummary g = gradient_check(s.model, s.x, s.target, {.step = 0.5, .rel_tol = 1e-5, .abs_floor = 1e-8});
    CHECK(g.failures > 0);
}

TEST_CASE("frozen positions get exactly zero gradient under both masking styles") {
    for (bool fog : {false, true}) {
        auto s = small(AdaptMode::LoRA_SP, 8, 8, 8, 8, 2, true, MaskScheme::GlobalRandom, fog);
        ForwardResult fr = forward_loss(s.model, s.x, s.target);
        const Gradients g = backward(fr.tape);
        for (std::size_t l = 0; l < 2; ++l) {
            const AdapterPair& p = s.model.layers()[l].adapter();
            for (std::size_t i = 0; i < p.mask_a().size(); ++i) {
                if (!p.mask_a().bits()[i]) CHECK(bits(g.layers[l].a.values()[i]) == 0);
            }
            for (std::size_t i = 0; i < p.mask_b().size(); ++i) {
                if (!p.mask_b().bits()[i]) CHECK(bits(g.layers[l].b.values()[i]) == 0);
            }
        }
        if (fog) {
            CHECK(gradient_check(s.model, s.x, s.target).failures == 0);
        }
    }
}

TEST_CASE("all-ones masks: forward, backward and AdamW steps bit-match plain LoRA") {
    auto s = small(AdaptMode::LoRA_SP, 9, 6, 5, 4, 2, true, MaskScheme::AllOnes);
    plain::Model ref;
    for (const auto& l : s.model.layers()) {
        ref.layers.push_back({dense(l.base_weight()), dense(l.adapter().a()), dense(l.adapter().b()),
                              l.adapter().scale(), {}, {}, {}, {}});
    }
    const OptimizerConfig cfg{.lr = 1e-2};
    OptState opt = OptState::init(s.model, cfg);
    const plain::Adam pa{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay};
    for (unsigned t = 1; t <= 10; ++t) {
        ForwardResult fr = forward_loss(s.model, s.x, s.target);
        const plain::Pass pp = plain::forward(ref, dense(s.x), dense(s.target));
        CHECK(bits(fr.loss) == bits(pp.loss));
        const Gradients g = backward(fr.tape);
        const plain::Grads pg = plain::backward(ref, pp, dense(s.target));
        for (std::size_t l = 0; l < 2; ++l) {
            CHECK(bit_equal(g.layers[l].a, Matrix(pg.da[l].rows, pg.da[l].cols, pg.da[l].v)));
            CHECK(bit_equal(g.layers[l].b, Matrix(pg.db[l].rows, pg.db[l].cols, pg.db[l].v)));
        }
        adamw_step(s.model, g, opt);
        plain::step(ref, pg, pa, t);
    }
    for (std::size_t l = 0; l < 2; ++l) {
        const auto& p = s.model.layers()[l].adapter();
        CHECK(bit_equal(p.a(), Matrix(p.a().rows(), p.a().cols(), ref.layers[l].a.v)));
        CHECK(bit_equal(p.b(), Matrix(p.b().rows(), p.b().cols(), ref.layers[l].b.v)));
    }
}

TEST_CASE("AdamW: scalar hand example, zero gradient, masked entries") {
    Matrix p(1, 1, 1.0);
    Moments mo{Matrix(1, 1), Matrix(1, 1)};
    const OptimizerConfig cfg{.weight_decay = 0.0};
    masked_update(p, Matrix(1, 1, 0.5), mo, nullptr, cfg, 1);
    CHECK(p(0, 0) == 1.0 - 2e-5 * 0.5 / (0.5 + 1e-8));
    CHECK(p(0, 0) == doctest::Approx(1.0 - 1.99999996e-5).epsilon(1e-15));
    CHECK(mo.m(0, 0) == doctest::Approx(0.05));
    CHECK(mo.v(0, 0) == doctest::Approx(0.00025));

    Rng rng(10);
    const Matrix start = gauss(rng, 3, 4, 0.0, 1.0);
    Matrix q = start;
    Moments m0{Matrix(3, 4), Matrix(3, 4)};
    masked_update(q, Matrix(3, 4), m0, nullptr, cfg, 1);
    CHECK(bit_equal(q, start));

    const SelectionMask mask = make_mask(3, 4, MaskScheme::GlobalRandom, rng);
    Matrix r = start;
    Moments m1{Matrix(3, 4), Matrix(3, 4)};
    masked_update(r, Matrix(3, 4, 0.7), m1, &mask, OptimizerConfig{}, 1);
    for (std::size_t i = 0; i < 12; ++i) {
        const bool on = mask.bits()[i] != 0;
        CHECK((bits(r.values()[i]) == bits(start.values()[i])) != on);
        if (!on) {
            CHECK(bits(m1.m.values()[i]) == 0);
            CHECK(bits(m1.v.values()[i]) == 0);
        }
    }
    CHECK_THROWS_AS(masked_update(r, Matrix(3, 4), m1, &mask, OptimizerConfig{}, 0), StateError);
}

TEST_CASE("SGD is p -= lr * g") {
    Matrix p(1, 2, 1.0);
    Moments mo{Matrix(1, 2), Matrix(1, 2)};
    masked_update(p, Matrix::from_rows({{0.5, -2.0}}), mo, nullptr, {.kind = OptimizerKind::SGD, .lr = 0.1}, 1);
    CHECK(p(0, 0) == 1.0 - 0.1 * 0.5);
    CHECK(p(0, 1) == 1.0 - 0.1 * -2.0);
}

TEST_CASE("train_run: lr 0 keeps the curve flat; mini-batches count steps") {
    RunConfig cfg;
    cfg.resolve();
    const Task task = gen_task(cfg);
    ToyModel model = build_model(cfg, task);
    const RunReport r = train_run(model, task.train, {.lr = 0.0, .weight_decay = 0.0}, 4, {}, 100);
    CHECK(r.steps == 12);
    for (double l : r.epoch_losses) CHECK(bits(l) == bits(r.initial_loss));
}

TEST_CASE("train_run: default task converges below 10% of the initial loss") {
    RunConfig cfg;
    cfg.optimizer.lr = 1e-2;
    cfg.epochs = 300;
    cfg.resolve();
    const Task task = gen_task(cfg);
    ToyModel model = build_model(cfg, task);
    const RunReport r = train_run(model, task.train, cfg.optimizer, cfg.epochs, {.recompute = true});
    CHECK(r.final_loss() < 0.1 * r.initial_loss);
}

TEST_CASE("divergence surfaces as a numeric error naming the step") {
    RunConfig cfg;
    cfg.method = AdaptMode::Full;
    cfg.resolve();
    const Task task = gen_task(cfg);
    ToyModel model = build_model(cfg, task);
    try {
        train_run(model, task.train, {.kind = OptimizerKind::SGD, .lr = 1e300}, 5, {});
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).rfind("step ", 0) == 0);
    }
}

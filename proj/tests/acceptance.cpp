// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance                 run all eight
//   acceptance --criterion N   run only N
// Exit status is nonzero when any selected criterion fails.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "lorasp/config.hpp"
#include "lorasp/costmodel.hpp"
#include "lorasp/experiment.hpp"
#include "lorasp/report.hpp"
#include "lorasp/task.hpp"
#include "plain_lora.hpp"

using namespace lorasp;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::uint64_t bits(double v) { return std::bit_cast<std::uint64_t>(v); }

plain::Dense dense(const Matrix& m) {
    plain::Dense d(m.rows(), m.cols());
    d.v.assign(m.values().begin(), m.values().end());
    return d;
}

double median(std::vector<double> v) {
    std::ranges::sort(v);
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// 1: halving rule over random specs, RoBERTa-base pair within 3%, other presets reported.
Outcome parameter_halving() {
    Rng rng(20240101);
    std::size_t mismatches = 0;
    for (int t = 0; t < 50; ++t) {
        ArchSpec a;
        a.name = fmt::format("random{}", t);
        a.layers = 1 + rng.below(48);
        a.hidden_dim = 1 + rng.below(8192);
        a.extra_params = rng.below(1u << 24);
        std::size_t min_dim = SIZE_MAX;
        const std::size_t count = 1 + rng.below(7);
        for (std::size_t i = 0; i < count; ++i) {
            WeightMatrix m{fmt::format("w{}", i), static_cast<MatrixRole>(rng.below(6)), 1 + rng.below(8192),
                           1 + rng.below(8192), i == 0 || rng.below(2) == 1};
            if (m.adapted) min_dim = std::min({min_dim, m.in_dim, m.out_dim});
            a.matrices.push_back(m);
        }
        a.rank = 1 + rng.below(std::min<std::size_t>(min_dim, 128));
        a.method = AdaptMode::LoRA;
        const std::uint64_t lora = count_trainable(a);
        a.method = AdaptMode::LoRA_SP;
        mismatches += count_trainable(a) == lora / 2 ? 0 : 1;
    }

    const auto presets = load_presets(default_presets_path());
    const TableCheck rb = table_check(presets, "RoBERTa_base");
    bool rb_ok = true;
    std::string rb_detail;
    for (const auto& row : rb.rows) {
        if (row.method == AdaptMode::Full) continue;
        const bool ok = row.reported_trainable && row.trainable_gap && std::abs(*row.trainable_gap) < 0.03;
        rb_ok = rb_ok && ok;
        rb_detail += fmt::format(" {} {} vs {:.2f}M ({:+.1f}%)", to_string(row.method), row.computed_trainable,
                                 row.reported_trainable.value_or(0.0) / 1e6,
                                 row.trainable_gap.value_or(0.0) * 100);
    }
    std::string others;
    for (const char* name : {"RoBERTa_large", "T5_base", "T5_large", "LLaMA_7B", "LLaMA_13B"}) {
        const TableCheck c = table_check(presets, name);
        for (const auto& row : c.rows) {
            if (row.method == AdaptMode::LoRA && row.trainable_gap) {
                others += fmt::format(" {} {:+.1f}%", name, *row.trainable_gap * 100);
            }
        }
    }
    return {mismatches == 0 && rb_ok,
            fmt::format("50 specs, {} halving mismatches; RoBERTa_base:{}; lora gaps:{}", mismatches, rb_detail, others)};
}

// 2: finite differences on 20 random 2-layer models.
Outcome gradient_correctness() {
    const GradCheckSuite s = run_gradcheck(AdaptMode::LoRA_SP, 20, 2, true, {.step = 1e-6, .rel_tol = 1e-5, .abs_floor = 1e-8});
    return {s.passed() && s.models.size() == 20,
            fmt::format("{} models, {} entries, {} failures, {} nonzero frozen grads, max abs err {:.2e}",
                        s.models.size(), s.checked, s.failures, s.frozen_nonzero, s.max_abs_err)};
}

// Frozen state after 100 steps, checked from scratch against a copy of the initial model.
Outcome freezing_run(RunConfig cfg) {
    cfg.epochs = 100;
    cfg.resolve();
    const Task task = gen_task(cfg);
    ToyModel model = build_model(cfg, task);
    const ToyModel initial = model;
    const RunReport r = train_run(model, task.train, cfg.optimizer, cfg.epochs, {.recompute = cfg.recompute});

    std::size_t frozen_changed = 0, frozen_moments = 0, trained_changed = 0, base_changed = 0;
    for (std::size_t l = 0; l < model.layers().size(); ++l) {
        const AdaptedLayer& now = model.layers()[l];
        const AdaptedLayer& was = initial.layers()[l];
        const auto& qn = std::get<QuantizedTensor>(now.base());
        const auto& qw = std::get<QuantizedTensor>(was.base());
        base_changed += std::ranges::equal(qn.codes(), qw.codes()) ? 0 : 1;
        for (std::size_t i = 0; i < qn.scales().size(); ++i) {
            base_changed += bits(qn.scales()[i]) == bits(qw.scales()[i]) ? 0 : 1;
        }
        const AdapterPair& p = now.adapter();
        const LayerOptState& s = r.optimizer.layers[l];
        const auto scan = [&](const Matrix& after, const Matrix& before, const SelectionMask& mask, const Moments& mo) {
            for (std::size_t i = 0; i < mask.size(); ++i) {
                const bool same = bits(after.values()[i]) == bits(before.values()[i]);
                if (mask.bits()[i] == 0) {
                    frozen_changed += same ? 0 : 1;
                    frozen_moments += bits(mo.m.values()[i]) == 0 && bits(mo.v.values()[i]) == 0 ? 0 : 1;
                } else {
                    trained_changed += same ? 0 : 1;
                }
            }
        };
        scan(p.a(), was.adapter().a(), p.mask_a(), s.a);
        scan(p.b(), was.adapter().b(), p.mask_b(), s.b);
    }
    return {r.steps == 100 && frozen_changed == 0 && frozen_moments == 0 && base_changed == 0 && trained_changed > 0,
            fmt::format("{} steps; frozen entries changed {}, frozen moments nonzero {}, base codes/scales changed {}, "
                        "trainable entries moved {}",
                        r.steps, frozen_changed, frozen_moments, base_changed, trained_changed)};
}

// 3: default task under value masking and gradient-only masking.
Outcome freezing() {
    RunConfig value;
    RunConfig grad_only;
    grad_only.freeze_only_gradients = true;
    const Outcome a = freezing_run(value);
    const Outcome b = freezing_run(grad_only);
    return {a.passed && b.passed, fmt::format("value masking: {} | gradient masking: {}", a.detail, b.detail)};
}

// 4: all-ones LoRA_SP against the plain-LoRA reference on forward, backward and 10 AdamW steps.
Outcome lora_reduction() {
    std::size_t loss_diff = 0, grad_diff = 0, param_diff = 0, cases = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        RunConfig cfg;
        cfg.in_dim = 12;
        cfg.out_dim = 10;
        cfg.rank = 4;
        cfg.depth = 2 + seed % 2;
        cfg.train_samples = 16;
        cfg.scheme = MaskScheme::AllOnes;
        cfg.seed_data = seed;
        cfg.resolve();
        const Task task = gen_task(cfg);
        ToyModel model = build_model(cfg, task);
        Rng rng(seed * 977);
        plain::Model ref;
        for (std::size_t l = 0; l < model.layers().size(); ++l) {
            Matrix& b = model.mutable_layer(l).mutable_adapter().mutable_b();
            b = gauss(rng, b.rows(), b.cols(), 0.0, 0.3);
            const AdaptedLayer& layer = model.layers()[l];
            ref.layers.push_back({dense(layer.base_weight()), dense(layer.adapter().a()), dense(layer.adapter().b()),
                                  layer.adapter().scale(), {}, {}, {}, {}});
        }
        const OptimizerConfig oc{.lr = 1e-3};
        OptState opt = OptState::init(model, oc);
        const plain::Adam pa{oc.lr, oc.beta1, oc.beta2, oc.eps, oc.weight_decay};
        const auto& x = task.train.inputs;
        const auto& t = task.train.targets;
        for (unsigned step = 1; step <= 10; ++step) {
            ForwardResult fr = forward_loss(model, x, t);
            const plain::Pass pp = plain::forward(ref, dense(x), dense(t));
            loss_diff += bits(fr.loss) == bits(pp.loss) ? 0 : 1;
            const Gradients g = backward(fr.tape);
            const plain::Grads pg = plain::backward(ref, pp, dense(t));
            for (std::size_t l = 0; l < g.layers.size(); ++l) {
                grad_diff += bit_equal(g.layers[l].a, Matrix(pg.da[l].rows, pg.da[l].cols, pg.da[l].v)) ? 0 : 1;
                grad_diff += bit_equal(g.layers[l].b, Matrix(pg.db[l].rows, pg.db[l].cols, pg.db[l].v)) ? 0 : 1;
            }
            adamw_step(model, g, opt);
            plain::step(ref, pg, pa, step);
            for (std::size_t l = 0; l < g.layers.size(); ++l) {
                const auto& p = model.layers()[l].adapter();
                param_diff += std::ranges::equal(p.a().values(), ref.layers[l].a.v, {}, bits, bits) ? 0 : 1;
                param_diff += std::ranges::equal(p.b().values(), ref.layers[l].b.v, {}, bits, bits) ? 0 : 1;
            }
        }
        ++cases;
    }
    return {loss_diff == 0 && grad_diff == 0 && param_diff == 0,
            fmt::format("{} models x 10 steps; bit mismatches: loss {}, gradients {}, parameters {}", cases, loss_diff,
                        grad_diff, param_diff)};
}

// 5: recompute on/off over models of depth 2..4, every mode.
Outcome recompute_equivalence() {
    double worst = 0.0;
    std::size_t ledger_fail = 0, models = 0;
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        RunConfig cfg;
        cfg.depth = 2 + seed % 3;
        cfg.in_dim = 10 + seed;
        cfg.out_dim = 6 + seed % 5;
        cfg.rank = 2;
        cfg.train_samples = 24;
        cfg.method = std::array{AdaptMode::LoRA_SP, AdaptMode::LoRA, AdaptMode::Full}[seed % 3];
        cfg.task = seed % 2 == 0 ? TaskKind::ToyClassify : TaskKind::LowRankRecovery;
        cfg.seed_data = seed;
        cfg.resolve();
        const Task task = gen_task(cfg);
        ToyModel model = build_model(cfg, task);
        Rng rng(seed);
        for (std::size_t l = 0; l < model.layers().size(); ++l) {
            if (model.layers()[l].has_adapter()) {
                Matrix& b = model.mutable_layer(l).mutable_adapter().mutable_b();
                b = gauss(rng, b.rows(), b.cols(), 0.0, 0.5);
            }
        }
        ForwardResult on = forward_loss(model, task.train.inputs, task.train.targets, {.recompute = true});
        ForwardResult off = forward_loss(model, task.train.inputs, task.train.targets, {.recompute = false});
        worst = std::max(worst, std::abs(on.loss - off.loss));
        ledger_fail += on.tape.ledger().total() < off.tape.ledger().total() ? 0 : 1;
        const Gradients g1 = backward(on.tape);
        const Gradients g2 = backward(off.tape);
        for (std::size_t l = 0; l < g1.layers.size(); ++l) {
            worst = std::max({worst, max_abs_diff(g1.layers[l].a, g2.layers[l].a),
                              max_abs_diff(g1.layers[l].b, g2.layers[l].b), max_abs_diff(g1.layers[l].w, g2.layers[l].w)});
        }
        ++models;
    }
    return {worst <= 1e-12 && ledger_fail == 0,
            fmt::format("{} models (depth 2-4); max |on - off| {:.1e}; ledger not smaller in {}", models, worst, ledger_fail)};
}

// 6: nf4 round trip, per-block bound, idempotence.
Outcome quantization() {
    const QuantCheck c = run_quantcheck(64, 64, 1000);
    return {c.passed() && c.blocks_checked == 1000,
            fmt::format("rmse {:.4f} (threshold {}), {} blocks, {} bound violations, idempotent {}",
                        c.normal_64x64.rmse, kNf4RmseThreshold, c.blocks_checked, c.bound_violations, c.idempotent)};
}

RunConfig parity_config(std::uint64_t seed) {
    RunConfig cfg;
    cfg.task = TaskKind::LowRankRecovery;
    cfg.in_dim = 32;
    cfg.out_dim = 32;
    cfg.depth = 2;
    cfg.hidden_rank = 2;
    cfg.rank = 4;
    cfg.noise_std = 0.0;
    cfg.optimizer.lr = 1e-2;
    cfg.epochs = 1000;
    cfg.seed_data = 100 + seed;
    cfg.seed_init = 200 + seed;
    cfg.seed_mask = 300 + seed;
    return cfg;
}

// 7: median-over-5-seeds final loss, LoRA_SP vs LoRA.
Outcome convergence_parity() {
    std::vector<double> lora, sp;
    double worst_reduction = 1.0;
    const std::size_t threads = thread_cap_from_env();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const CompareReport r = run_compare(parity_config(seed), {AdaptMode::LoRA, AdaptMode::LoRA_SP}, threads);
        for (const auto& m : r.results) {
            const double reduction = 1.0 - m.run.final_loss() / m.run.initial_loss;
            worst_reduction = std::min(worst_reduction, reduction);
            (m.method == AdaptMode::LoRA ? lora : sp).push_back(m.run.final_loss());
        }
    }
    const double ml = median(lora), ms = median(sp);
    const double ratio = ms / ml;
    return {ratio <= 1.10 && worst_reduction >= 0.99,
            fmt::format("median final loss lora {:.3e}, lorasp {:.3e}, ratio {:.3g} (need <= 1.10); "
                        "smallest loss reduction {:.2f}% (need >= 99%)",
                        ml, ms, ratio, worst_reduction * 100)};
}

// 8: every acceptance-style config, executed twice, yields byte-identical artifacts.
Outcome determinism() {
    const auto root = std::filesystem::temp_directory_path() / "lorasp_acceptance_determinism";
    std::filesystem::remove_all(root);
    std::vector<std::string> differing;
    std::size_t files = 0;
    for (int run = 0; run < 2; ++run) {
        const auto dir = root / fmt::format("run{}", run);
        RunConfig freeze;
        freeze.epochs = 100;
        const CompareReport rep =
            run_compare(freeze, {AdaptMode::Full, AdaptMode::LoRA, AdaptMode::LoRA_SP}, run == 0 ? 1 : 3);
        for (auto f : {ReportFormat::Json, ReportFormat::Csv, ReportFormat::Table}) emit_report(rep, f, dir / "freeze");
        RunConfig parity = parity_config(0);
        parity.epochs = 200;
        emit_report(run_compare(parity, {AdaptMode::LoRA, AdaptMode::LoRA_SP}, run == 0 ? 2 : 1), ReportFormat::Json,
                    dir / "parity");
        write_text(dir, "gradcheck.json", to_json(run_gradcheck(AdaptMode::LoRA_SP, 20, 2)).dump(2));
        write_text(dir, "quantcheck.json", to_json(run_quantcheck(64, 64, 1000)).dump(2));
        const auto presets = load_presets(default_presets_path());
        std::vector<TableCheck> tables;
        for (const auto& [name, _] : presets) tables.push_back(table_check(presets, name));
        write_text(dir, "cost.txt", render_table(tables));
    }
    for (const auto& entry : std::filesystem::recursive_directory_iterator(root / "run0")) {
        if (!entry.is_regular_file()) continue;
        const auto rel = std::filesystem::relative(entry.path(), root / "run0");
        ++files;
        if (slurp(entry.path()) != slurp(root / "run1" / rel)) differing.push_back(rel.string());
    }
    std::filesystem::remove_all(root);
    return {files > 0 && differing.empty(),
            fmt::format("{} artifacts compared, {} differ{}", files, differing.size(),
                        differing.empty() ? "" : ": " + differing.front())};
}

struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance suite"};
    int only = 0;
    app.add_option("--criterion", only, "run a single criterion (1-8)")->check(CLI::Range(1, 8));
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> criteria = {
        {1, "parameter halving", 1.0, parameter_halving},
        {2, "gradient correctness", 30.0, gradient_correctness},
        {3, "freezing", 0.0, freezing},
        {4, "lora reduction", 0.0, lora_reduction},
        {5, "recomputation equivalence", 0.0, recompute_equivalence},
        {6, "quantization", 0.0, quantization},
        {7, "convergence parity", 120.0, convergence_parity},
        {8, "determinism", 0.0, determinism},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        if (only != 0 && c.id != only) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, fmt::format("threw: {}", e.what())};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.budget_seconds > 0.0 && secs >= c.budget_seconds) {
            o.passed = false;
            o.detail += fmt::format("; over the {:.0f} s budget", c.budget_seconds);
        }
        fmt::print("{} criterion {} ({}): {} [{:.2f} s]\n", o.passed ? "PASS" : "FAIL", c.id, c.name, o.detail, secs);
        std::fflush(stdout);
        failures += o.passed ? 0 : 1;
    }
    return failures == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}

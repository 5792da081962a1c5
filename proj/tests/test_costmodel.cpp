// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <doctest.h>

#include "lorasp/costmodel.hpp"
#include "lorasp/error.hpp"
#include "lorasp/rng.hpp"

using namespace lorasp;

namespace {

ArchSpec random_arch(Rng& rng) {
    ArchSpec a;
    a.name = "random";
    a.layers = 1 + rng.below(48);
    a.hidden_dim = 1 + rng.below(4096);
    a.extra_params = rng.below(1u << 20);
    std::size_t min_dim = SIZE_MAX;
    const std::size_t count = 1 + rng.below(7);
    for (std::size_t i = 0; i < count; ++i) {
        WeightMatrix m{"m" + std::to_string(i), static_cast<MatrixRole>(rng.below(6)), 1 + rng.below(4096),
                       1 + rng.below(4096), i == 0 || rng.below(2) == 1};
        if (m.adapted) min_dim = std::min({min_dim, m.in_dim, m.out_dim});
        a.matrices.push_back(m);
    }
    a.rank = 1 + rng.below(std::min<std::size_t>(min_dim, 64));
    return a;
}

ArchSpec roberta_base() { return load_presets(default_presets_path()).at("RoBERTa_base").arch; }

}  // namespace

TEST_CASE("halving, ordering and FT identities over random specs") {
    Rng rng(2718);
    for (int t = 0; t < 200; ++t) {
        ArchSpec a = random_arch(rng);
        a.method = AdaptMode::LoRA;
        const std::uint64_t lora = count_trainable(a);
        a.method = AdaptMode::LoRA_SP;
        CHECK(count_trainable(a) == lora / 2);
        CHECK(count_trainable(a) <= count_total(a));
        const std::uint64_t sp_r = count_trainable(a);
        if (a.rank > 1) {
            ArchSpec smaller = a;
            smaller.rank = a.rank - 1;
            CHECK(count_trainable(smaller) <= sp_r);
        }
        a.method = AdaptMode::Full;
        CHECK(count_trainable(a) == count_total(a));
        CHECK(count_trainable(a) == count_base_params(a));
        a.method = AdaptMode::Frozen;
        CHECK(count_trainable(a) == 0);
    }
}

TEST_CASE("invalid specs are parameter errors") {
    ArchSpec a = roberta_base();
    a.rank = 769;
    CHECK_THROWS_AS(count_trainable(a), ParameterError);
    a.rank = 16;
    a.matrices[0].in_dim = 0;
    CHECK_THROWS_AS(memory_breakdown(a, OptimizerAccounting::AdamW), ParameterError);
}

TEST_CASE("RoBERTa-base-like arch: 884,736 and 442,368 trainable") {
    ArchSpec a = roberta_base();
    CHECK(a.layers == 12);
    CHECK(a.rank == 16);
    a.method = AdaptMode::LoRA;
    CHECK(count_trainable(a) == 12u * 3 * 16 * (768 + 768));
    CHECK(count_trainable(a) == 884736);
    a.method = AdaptMode::LoRA_SP;
    CHECK(count_trainable(a) == 442368);
    CHECK(count_mask_selected(a) == 442368);
}

TEST_CASE("memory breakdown: optimizer state, nf4 weights, activations") {
    ArchSpec a = roberta_base();
    a.method = AdaptMode::LoRA_SP;
    const CostReport sp = memory_breakdown(a, OptimizerAccounting::AdamW);
    CHECK(sp.optimizer_state_bytes == 442368u * 16);
    CHECK(memory_breakdown(a, OptimizerAccounting::SGD).optimizer_state_bytes == 0);
    a.method = AdaptMode::Full;
    const CostReport ft = memory_breakdown(a, OptimizerAccounting::AdamW);
    CHECK(ft.optimizer_state_bytes == ft.trainable_params * 16);
    CHECK(std::abs(static_cast<double>(ft.optimizer_state_bytes) / 1.94e9 - 1.0) < 0.03);

    ArchSpec bare = roberta_base();
    bare.extra_params = 0;
    const CostReport f64 = memory_breakdown(bare, OptimizerAccounting::AdamW);
    bare.precision = Precision::NF4;
    const CostReport nf4 = memory_breakdown(bare, OptimizerAccounting::AdamW);
    const std::uint64_t entries = 768u * 768;
    CHECK(nf4_matrix_bytes(entries, 64) == entries / 2 + 8 * (entries / 64));
    std::uint64_t per_layer = 0;
    for (const auto& m : bare.matrices) per_layer += nf4_matrix_bytes(std::uint64_t{m.in_dim} * m.out_dim, 64);
    CHECK(nf4.weight_bytes == bare.layers * per_layer);
    CHECK(static_cast<double>(nf4.weight_bytes) / static_cast<double>(f64.weight_bytes) ==
          doctest::Approx(1.0 / 16 + 1.0 / 64));

    CHECK(sp.activation_bytes_per_token_recompute < sp.activation_bytes_per_token);
    ArchSpec one = roberta_base();
    one.layers = 2;
    const CostReport two = memory_breakdown(one, OptimizerAccounting::AdamW);
    CHECK(two.activation_bytes_per_token_recompute < two.activation_bytes_per_token);
}

TEST_CASE("preset table check") {
    const auto presets = load_presets(default_presets_path());
    CHECK(presets.size() == 6);
    const TableCheck rb = table_check(presets, "RoBERTa_base");
    REQUIRE(rb.rows.size() == 3);
    for (const auto& row : rb.rows) {
        if (row.method == AdaptMode::LoRA || row.method == AdaptMode::LoRA_SP) {
            REQUIRE(row.trainable_gap.has_value());
            CHECK(std::abs(*row.trainable_gap) < 0.03);
        }
    }
    CHECK(format_millions(884736) == "0.9M");
    for (const auto& [name, _] : presets) {
        const TableCheck c = table_check(presets, name);
        CHECK(c.computed_ratio == 0.5);
        REQUIRE(c.reported_ratio.has_value());
        CHECK(std::abs(*c.reported_ratio - 0.5) < 0.005);
    }
    CHECK(*table_check(presets, "LLaMA_7B").reported_ratio == doctest::Approx(78.7 / 157.3));
    CHECK_THROWS_AS(table_check(presets, "GPT_9000"), ParameterError);
    CHECK_THROWS_AS(load_presets("/nonexistent/presets.json"), IoError);
}

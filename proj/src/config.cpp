// SPDX-License-Identifier: Apache-2.0

#include "lorasp/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "lorasp/error.hpp"

namespace lorasp {

std::string_view to_string(TaskKind t) {
    return t == TaskKind::LowRankRecovery ? "low_rank_recovery" : "toy_classify";
}

TaskKind task_kind_from_string(std::string_view s) {
    if (s == "low_rank_recovery") {
        return TaskKind::LowRankRecovery;
    }
    if (s == "toy_classify") {
        return TaskKind::ToyClassify;
    }
    throw ConfigError(fmt::format("unknown task '{}'", s));
}

void RunConfig::resolve() {
    if (alpha == 0.0) {
        alpha = static_cast<double>(rank);
    }
}

void RunConfig::validate() const {
    const auto fail = [](std::string msg) { throw ConfigError(std::move(msg)); };
    if (in_dim == 0 || out_dim == 0 || depth == 0) {
        fail("in_dim, out_dim and depth must be >= 1");
    }
    if (method != AdaptMode::Full && (rank == 0 || rank > std::min(in_dim, out_dim))) {
        fail(fmt::format("rank {} must lie in [1, min(in_dim, out_dim) = {}]", rank,
                         std::min(in_dim, out_dim)));
    }
    if (task == TaskKind::LowRankRecovery && hidden_rank > std::min(in_dim, out_dim)) {
        fail(fmt::format("hidden_rank {} exceeds min(in_dim, out_dim)", hidden_rank));
    }
    if (task == TaskKind::ToyClassify && out_dim < 2) {
        fail("toy_classify needs out_dim >= 2 classes");
    }
    if (epochs == 0) {
        fail("epochs must be >= 1");
    }
    if (train_samples == 0) {
        fail("train_samples must be >= 1");
    }
    if (block_size == 0) {
        fail("block_size must be >= 1");
    }
    if (scheme == MaskScheme::RowBalanced && rank % 2 != 0) {
        fail("row_balanced masks need an even rank (mask columns)");
    }
    if (!(noise_std >= 0.0) || !(cluster_std >= 0.0) || !(optimizer.lr >= 0.0)) {
        fail("noise_std, cluster_std and lr must be >= 0");
    }
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 &&
          optimizer.beta2 < 1.0 && optimizer.eps > 0.0 && optimizer.weight_decay >= 0.0)) {
        fail("optimizer betas must lie in [0, 1), eps > 0, weight_decay >= 0");
    }
}

nlohmann::ordered_json to_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["task"] = to_string(cfg.task);
    j["method"] = to_string(cfg.method);
    j["in_dim"] = cfg.in_dim;
    j["out_dim"] = cfg.out_dim;
    j["depth"] = cfg.depth;
    j["hidden_rank"] = cfg.hidden_rank;
    j["perturbation_scale"] = cfg.perturbation_scale;
    j["rank"] = cfg.rank;
    j["alpha"] = cfg.alpha;
    j["scheme"] = to_string(cfg.scheme);
    j["freeze_only_gradients"] = cfg.freeze_only_gradients;
    j["seed_data"] = cfg.seed_data;
    j["seed_init"] = cfg.seed_init;
    j["seed_mask"] = cfg.seed_mask;
    j["optimizer"] = {
        {"kind", to_string(cfg.optimizer.kind)},
        {"lr", cfg.optimizer.lr},
        {"beta1", cfg.optimizer.beta1},
        {"beta2", cfg.optimizer.beta2},
        {"eps", cfg.optimizer.eps},
        {"weight_decay", cfg.optimizer.weight_decay},
    };
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["recompute"] = cfg.recompute;
    j["quantize_base"] = cfg.quantize_base;
    j["block_size"] = cfg.block_size;
    j["train_samples"] = cfg.train_samples;
    j["val_samples"] = cfg.val_samples;
    j["noise_std"] = cfg.noise_std;
    j["cluster_std"] = cfg.cluster_std;
    j["out_dir"] = cfg.out_dir;
    return j;
}

RunConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    RunConfig cfg;
    const nlohmann::ordered_json known = to_json(cfg);
    for (const auto& [key, _] : j.items()) {
        if (!known.contains(key)) {
            throw ConfigError(fmt::format("unknown config key '{}'", key));
        }
    }
    try {
        const auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) {
                field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
            }
        };
        if (j.contains("task")) cfg.task = task_kind_from_string(j.at("task").get<std::string>());
        if (j.contains("method")) cfg.method = adapt_mode_from_string(j.at("method").get<std::string>());
        if (j.contains("scheme")) cfg.scheme = mask_scheme_from_string(j.at("scheme").get<std::string>());
        get("in_dim", cfg.in_dim);
        get("out_dim", cfg.out_dim);
        get("depth", cfg.depth);
        get("hidden_rank", cfg.hidden_rank);
        get("perturbation_scale", cfg.perturbation_scale);
        get("rank", cfg.rank);
        get("alpha", cfg.alpha);
        get("freeze_only_gradients", cfg.freeze_only_gradients);
        get("seed_data", cfg.seed_data);
        get("seed_init", cfg.seed_init);
        get("seed_mask", cfg.seed_mask);
        get("epochs", cfg.epochs);
        get("batch_size", cfg.batch_size);
        get("recompute", cfg.recompute);
        get("quantize_base", cfg.quantize_base);
        get("block_size", cfg.block_size);
        get("train_samples", cfg.train_samples);
        get("val_samples", cfg.val_samples);
        get("noise_std", cfg.noise_std);
        get("cluster_std", cfg.cluster_std);
        get("out_dir", cfg.out_dir);
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            const std::set<std::string> keys = {"kind", "lr", "beta1", "beta2", "eps", "weight_decay"};
            for (const auto& [key, _] : o.items()) {
                if (!keys.contains(key)) {
                    throw ConfigError(fmt::format("unknown optimizer key '{}'", key));
                }
            }
            if (o.contains("kind")) {
                cfg.optimizer.kind = optimizer_kind_from_string(o.at("kind").get<std::string>());
            }
            cfg.optimizer.lr = o.value("lr", cfg.optimizer.lr);
            cfg.optimizer.beta1 = o.value("beta1", cfg.optimizer.beta1);
            cfg.optimizer.beta2 = o.value("beta2", cfg.optimizer.beta2);
            cfg.optimizer.eps = o.value("eps", cfg.optimizer.eps);
            cfg.optimizer.weight_decay = o.value("weight_decay", cfg.optimizer.weight_decay);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(fmt::format("bad config value: {}", e.what()));
    } catch (const ConfigError&) {
        throw;
    } catch (const ParameterError& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError(fmt::format("cannot open config {}", path.string()));
    }
    try {
        return config_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

std::string config_hash(const RunConfig& cfg) {
    auto j = to_json(cfg);
    j.erase("out_dir");
    const std::string text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

}  // namespace lorasp

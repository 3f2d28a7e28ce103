// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only transformer: pre-norm blocks with RMSNorm, bias-free
// projections, learned positional embeddings, optionally tied output head.
// The same structure serves as teacher (wider/deeper config) and student.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "neo/data.hpp"
#include "neo/errors.hpp"
#include "neo/hash.hpp"
#include "neo/rng.hpp"
#include "neo/tensor.hpp"

namespace neo {

struct ModelConfig {
    int64_t vocab_size = kVocabSize;
    int64_t d_model = 64;
    int64_t n_layers = 2;
    int64_t n_heads = 2;
    int64_t d_ff = 256;
    int64_t max_seq_len = 128;
    bool tie_embeddings = true;

    void validate() const {
        if (vocab_size < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1) {
            throw ConfigError("model config: all sizes must be >= 1");
        }
        if (max_seq_len < 2) throw ConfigError("model config: max_seq_len must be >= 2");
        if (d_model % n_heads != 0) {
            throw ConfigError("model config: d_model " + std::to_string(d_model) +
                              " not divisible by n_heads " + std::to_string(n_heads));
        }
    }
};

// Short names for the adaptable projection matrices within one block.
inline const std::vector<std::string>& all_site_kinds() {
    static const std::vector<std::string> kinds = {"attn.q", "attn.k", "attn.v",
                                                   "attn.o", "mlp.in", "mlp.out"};
    return kinds;
}

// Expands site kinds (e.g. {"attn.q", "mlp.in"}) to full parameter paths
// across all layers.
inline std::vector<std::string> expand_sites(const ModelConfig& cfg,
                                             const std::vector<std::string>& kinds) {
    std::vector<std::string> out;
    for (int64_t i = 0; i < cfg.n_layers; ++i) {
        for (const auto& k : kinds) out.push_back("layer." + std::to_string(i) + "." + k);
    }
    return out;
}

template <class S>
struct ModelWeights {
    ModelConfig config;
    std::map<std::string, Tensor<S>> params; // canonical name order

    Tensor<S>& at(const std::string& name) {
        auto it = params.find(name);
        if (it == params.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }
    const Tensor<S>& at(const std::string& name) const {
        auto it = params.find(name);
        if (it == params.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return params.count(name) != 0; }

    ModelWeights clone() const {
        ModelWeights out;
        out.config = config;
        for (const auto& [name, t] : params) {
            out.params.emplace(name, Tensor<S>::from(t.shape(), t.values(), t.requires_grad()));
        }
        return out;
    }

    void set_requires_grad(bool v) {
        for (auto& [name, t] : params) {
            t = Tensor<S>::from(t.shape(), t.values(), v);
        }
    }
};

template <class S>
ModelWeights<S> init_model(const ModelConfig& cfg, uint64_t seed, S init_std = S(0.02)) {
    cfg.validate();
    ModelWeights<S> w;
    w.config = cfg;
    auto add_param = [&](const std::string& name, Shape shape) {
        w.params.emplace(name, Tensor<S>::leaf(std::move(shape), true));
    };
    add_param("tok_emb", {cfg.vocab_size, cfg.d_model});
    add_param("pos_emb", {cfg.max_seq_len, cfg.d_model});
    for (int64_t i = 0; i < cfg.n_layers; ++i) {
        const std::string p = "layer." + std::to_string(i) + ".";
        add_param(p + "norm1.g", {cfg.d_model});
        add_param(p + "attn.q", {cfg.d_model, cfg.d_model});
        add_param(p + "attn.k", {cfg.d_model, cfg.d_model});
        add_param(p + "attn.v", {cfg.d_model, cfg.d_model});
        add_param(p + "attn.o", {cfg.d_model, cfg.d_model});
        add_param(p + "norm2.g", {cfg.d_model});
        add_param(p + "mlp.in", {cfg.d_ff, cfg.d_model});
        add_param(p + "mlp.out", {cfg.d_model, cfg.d_ff});
    }
    add_param("final_norm.g", {cfg.d_model});
    if (!cfg.tie_embeddings) add_param("lm_head", {cfg.vocab_size, cfg.d_model});

    Rng rng(derive_seed(seed, fnv1a64("model-init")));
    for (auto& [name, t] : w.params) {
        if (name.find("norm") != std::string::npos) {
            for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = S(1);
        } else {
            for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(rng.normal()) * init_std;
        }
    }
    return w;
}

} // namespace neo

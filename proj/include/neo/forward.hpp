// SPDX-License-Identifier: Apache-2.0
//
// Model forward pass and parameter accounting.

#pragma once

#include <cmath>
#include <span>

#include "neo/adapters.hpp"
#include "neo/model.hpp"

namespace neo {

namespace detail {

template <class S>
const AdapterBranch<S>* branch_for(const AdapterSet<S>* adapters, const std::string& site) {
    return adapters ? adapters->find(site) : nullptr;
}

} // namespace detail

// Causal language-model forward: ids is a [rows, cols] grid of token ids,
// result is [rows, cols, vocab] logits. Logits at position t depend only on
// tokens at positions <= t.
template <class S>
Tensor<S> forward(const ModelWeights<S>& w, std::span<const int32_t> ids, int64_t rows,
                  int64_t cols, const AdapterSet<S>* adapters = nullptr) {
    const ModelConfig& cfg = w.config;
    if (static_cast<int64_t>(ids.size()) != rows * cols) {
        throw DimensionError("forward: id count " + std::to_string(ids.size()) +
                             " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    if (cols > cfg.max_seq_len) {
        throw DimensionError("forward: sequence length " + std::to_string(cols) +
                             " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }

    Tensor<S> x = embedding(w.at("tok_emb"), ids, {rows, cols});
    std::vector<int32_t> pos(static_cast<size_t>(rows * cols));
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) pos[static_cast<size_t>(r * cols + c)] = static_cast<int32_t>(c);
    }
    x = add(x, embedding(w.at("pos_emb"), std::span<const int32_t>(pos), {rows, cols}));

    const int64_t dh = cfg.d_model / cfg.n_heads;
    const S att_scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

    for (int64_t layer = 0; layer < cfg.n_layers; ++layer) {
        const std::string p = "layer." + std::to_string(layer) + ".";
        Tensor<S> h = rmsnorm(x, w.at(p + "norm1.g"));
        Tensor<S> q = adapted_linear(h, w.at(p + "attn.q"), detail::branch_for(adapters, p + "attn.q"));
        Tensor<S> k = adapted_linear(h, w.at(p + "attn.k"), detail::branch_for(adapters, p + "attn.k"));
        Tensor<S> v = adapted_linear(h, w.at(p + "attn.v"), detail::branch_for(adapters, p + "attn.v"));

        std::vector<Tensor<S>> heads;
        heads.reserve(static_cast<size_t>(cfg.n_heads));
        for (int64_t hh = 0; hh < cfg.n_heads; ++hh) {
            Tensor<S> qh = slice_last(q, hh * dh, dh);
            Tensor<S> kh = slice_last(k, hh * dh, dh);
            Tensor<S> vh = slice_last(v, hh * dh, dh);
            Tensor<S> scores = scale(matmul_nt(qh, kh), att_scale);
            Tensor<S> probs = softmax(causal_mask(scores));
            heads.push_back(matmul(probs, vh));
        }
        Tensor<S> ctx = concat_last(heads);
        Tensor<S> o = adapted_linear(ctx, w.at(p + "attn.o"), detail::branch_for(adapters, p + "attn.o"));
        x = add(x, o);

        Tensor<S> h2 = rmsnorm(x, w.at(p + "norm2.g"));
        Tensor<S> m = gelu(adapted_linear(h2, w.at(p + "mlp.in"), detail::branch_for(adapters, p + "mlp.in")));
        Tensor<S> m2 = adapted_linear(m, w.at(p + "mlp.out"), detail::branch_for(adapters, p + "mlp.out"));
        x = add(x, m2);
    }

    Tensor<S> hf = rmsnorm(x, w.at("final_norm.g"));
    const Tensor<S>& head_w = cfg.tie_embeddings ? w.at("tok_emb") : w.at("lm_head");
    return matmul_nt(hf, head_w);
}

template <class S>
Tensor<S> forward(const ModelWeights<S>& w, const TokenBatch& batch,
                  const AdapterSet<S>* adapters = nullptr) {
    return forward(w, std::span<const int32_t>(batch.ids), batch.rows, batch.cols, adapters);
}

// ---------------------------------------------------------------------------
// parameter accounting

struct SiteParams {
    std::string site;
    int64_t base = 0;
    int64_t adapter = 0;
};

struct ParamReport {
    int64_t total = 0;     // base + adapter scalars
    int64_t trainable = 0; // scalars with requires_grad
    int64_t frozen = 0;
    std::vector<SiteParams> per_site;
};

template <class S>
ParamReport count_params(const ModelWeights<S>& w, const AdapterSet<S>* adapters = nullptr) {
    ParamReport rep;
    for (const auto& [name, t] : w.params) {
        SiteParams sp;
        sp.site = name;
        sp.base = t.size();
        if (adapters) {
            if (const AdapterBranch<S>* br = adapters->find(name)) {
                sp.adapter = br->a.size() + br->b.size() + (br->has_mixer() ? br->mixer.size() : 0);
            }
        }
        rep.total += sp.base + sp.adapter;
        if (t.requires_grad()) rep.trainable += sp.base;
        rep.trainable += sp.adapter; // branch tensors always train
        rep.per_site.push_back(std::move(sp));
    }
    rep.frozen = rep.total - rep.trainable;
    return rep;
}

} // namespace neo

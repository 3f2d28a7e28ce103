// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapter branches. A branch at a frozen base matrix W0 [d_out,
// d_in] holds A [d_in, r] and B [d_out, r] (plus an optional r x r mixer)
// and contributes s * B * mixer^T * A^T with s = lora_alpha / r. Training
// never materializes the delta; the forward path stays factored as
// x W0^T + s * ((x A) mixer) B^T. Dense materialization is reserved for
// merging and tests.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "neo/model.hpp"

namespace neo {

enum class AdapterVariant { lora, moslora };

inline const char* to_string(AdapterVariant v) {
    return v == AdapterVariant::lora ? "lora" : "moslora";
}

inline AdapterVariant adapter_variant_from(const std::string& s) {
    if (s == "lora") return AdapterVariant::lora;
    if (s == "moslora") return AdapterVariant::moslora;
    throw ConfigError("unknown adapter variant: " + s);
}

template <class S>
struct AdapterBranch {
    std::string site;
    Tensor<S> a;     // [d_in, r]
    Tensor<S> b;     // [d_out, r]
    Tensor<S> mixer; // [r, r]; undefined for plain low-rank branches
    int64_t rank = 0;
    double lora_alpha = 16.0;

    bool has_mixer() const { return mixer.defined(); }
    S scaling() const { return static_cast<S>(lora_alpha / static_cast<double>(rank)); }
};

template <class S>
struct AdapterSet {
    AdapterVariant variant = AdapterVariant::lora;
    std::map<std::string, AdapterBranch<S>> branches;
    bool consumed = false; // true once merged into a base model

    const AdapterBranch<S>* find(const std::string& site) const {
        auto it = branches.find(site);
        return it == branches.end() ? nullptr : &it->second;
    }
};

// Initializes branches at the given sites: A ~ N(0, 0.02), B = 0 and, for
// the mixing variant, a random mixer with unit-norm rows. B = 0 makes the
// initial delta exactly zero, so the adapted model starts identical to the
// base model. All base weights are frozen; only branch tensors train.
template <class S>
AdapterSet<S> init_adapters(ModelWeights<S>& weights, const std::vector<std::string>& sites,
                            int64_t rank, double lora_alpha, AdapterVariant variant,
                            uint64_t seed) {
    if (rank < 1) throw ConfigError("adapter rank must be >= 1, got " + std::to_string(rank));
    AdapterSet<S> set;
    set.variant = variant;
    for (const auto& site : sites) {
        const Tensor<S>& w = weights.at(site);
        if (w.ndim() != 2) {
            throw ConfigError("adapter site " + site + " is not a 2-D matrix: " + shape_str(w.shape()));
        }
        const int64_t d_out = w.dim(0);
        const int64_t d_in = w.dim(1);
        if (rank > std::min(d_in, d_out)) {
            throw ConfigError("adapter rank " + std::to_string(rank) + " exceeds min dimension of " +
                              site + " " + shape_str(w.shape()));
        }
        AdapterBranch<S> br;
        br.site = site;
        br.rank = rank;
        br.lora_alpha = lora_alpha;
        Rng rng(derive_seed(seed, fnv1a64(site)));
        br.a = Tensor<S>::leaf({d_in, rank}, true);
        for (int64_t i = 0; i < br.a.size(); ++i) {
            br.a.data()[i] = static_cast<S>(rng.normal()) * S(0.02);
        }
        br.b = Tensor<S>::leaf({d_out, rank}, true);
        if (variant == AdapterVariant::moslora) {
            br.mixer = Tensor<S>::leaf({rank, rank}, true);
            for (int64_t r = 0; r < rank; ++r) {
                double norm_sq = 0.0;
                std::vector<double> row(static_cast<size_t>(rank));
                for (auto& x : row) {
                    x = rng.normal();
                    norm_sq += x * x;
                }
                const double inv = 1.0 / std::sqrt(norm_sq);
                for (int64_t c = 0; c < rank; ++c) {
                    br.mixer.data()[r * rank + c] = static_cast<S>(row[static_cast<size_t>(c)] * inv);
                }
            }
        }
        set.branches.emplace(site, std::move(br));
    }
    weights.set_requires_grad(false);
    return set;
}

// Identity mixer for reducing the mixing variant to plain low-rank behavior.
template <class S>
void set_identity_mixer(AdapterBranch<S>& br) {
    if (!br.has_mixer()) br.mixer = Tensor<S>::leaf({br.rank, br.rank}, true);
    for (int64_t r = 0; r < br.rank; ++r) {
        for (int64_t c = 0; c < br.rank; ++c) {
            br.mixer.data()[r * br.rank + c] = (r == c) ? S(1) : S(0);
        }
    }
}

// Dense delta s * B * mixer^T * A^T as a [d_out, d_in] constant tensor.
// Used by merge and by equivalence tests, never by the training path.
template <class S>
Tensor<S> effective_delta(const AdapterBranch<S>& br) {
    Tensor<S> b_const = Tensor<S>::from(br.b.shape(), br.b.values());
    Tensor<S> a_const = Tensor<S>::from(br.a.shape(), br.a.values());
    Tensor<S> t = b_const;
    if (br.has_mixer()) {
        Tensor<S> m_const = Tensor<S>::from(br.mixer.shape(), br.mixer.values());
        t = matmul_nt(t, m_const); // B . mixer^T
    }
    return scale(matmul_nt(t, a_const), br.scaling()); // . A^T
}

// Linear layer with an optional low-rank branch; weights are stored
// [d_out, d_in], inputs are [..., d_in].
template <class S>
Tensor<S> adapted_linear(const Tensor<S>& x, const Tensor<S>& w, const AdapterBranch<S>* br) {
    Tensor<S> base = matmul_nt(x, w);
    if (!br) return base;
    Tensor<S> u = matmul(x, br->a);
    if (br->has_mixer()) u = matmul(u, br->mixer);
    return add(base, scale(matmul_nt(u, br->b), br->scaling()));
}

// Folds every branch into a copy of the base weights. The set is consumed:
// a second merge of the same set would double the delta, so it is refused.
template <class S>
ModelWeights<S> merge(const ModelWeights<S>& weights, AdapterSet<S>& adapters) {
    if (adapters.consumed) {
        throw ConfigError("adapter set was already merged; a second merge would double the delta");
    }
    ModelWeights<S> out = weights.clone();
    out.set_requires_grad(true);
    for (const auto& [site, br] : adapters.branches) {
        if (!out.has(site)) throw ConfigError("merge: site " + site + " not present in weights");
        Tensor<S>& w = out.at(site);
        if (w.dim(0) != br.b.dim(0) || w.dim(1) != br.a.dim(0)) {
            throw ConfigError("merge: branch at " + site + " does not match weight " +
                              shape_str(w.shape()));
        }
        Tensor<S> delta = effective_delta(br);
        for (int64_t i = 0; i < w.size(); ++i) w.data()[i] += delta.data()[i];
    }
    adapters.consumed = true;
    return out;
}

} // namespace neo

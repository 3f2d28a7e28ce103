// SPDX-License-Identifier: Apache-2.0
//
// Versioned, checksummed tensor container. Layout (little-endian):
//
//   magic "NEOCKPT1" | u32 version | u64 config_len | config JSON bytes
//   | u64 tensor_count | per tensor: u64 name_len, name, u8 dtype,
//     u32 ndim, i64 dims[], u64 data_len, raw data
//   | u32 crc32 over everything above
//
// Tensors are stored sorted by name, so load followed by save reproduces
// the file byte for byte.

#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "neo/adapters.hpp"
#include "neo/errors.hpp"
#include "neo/model.hpp"

namespace neo {

constexpr uint8_t kDtypeF32 = 0;
constexpr uint8_t kDtypeF64 = 1;

template <class S>
constexpr uint8_t dtype_of() {
    return sizeof(S) == 4 ? kDtypeF32 : kDtypeF64;
}

inline const char* dtype_name(uint8_t d) { return d == kDtypeF32 ? "f32" : "f64"; }

struct NamedTensorData {
    std::string name;
    uint8_t dtype = kDtypeF32;
    Shape shape;
    std::string bytes; // raw little-endian scalar data
};

struct CheckpointFile {
    uint32_t version = 1;
    std::string config_json;
    std::vector<NamedTensorData> tensors;

    const NamedTensorData* find(const std::string& name) const {
        for (const auto& t : tensors) {
            if (t.name == name) return &t;
        }
        return nullptr;
    }
};

void save_checkpoint_file(const std::string& path, const CheckpointFile& ckpt);
CheckpointFile load_checkpoint_file(const std::string& path);

// ---------------------------------------------------------------------------
// conversions

template <class S>
NamedTensorData tensor_to_record(const std::string& name, const Tensor<S>& t) {
    NamedTensorData rec;
    rec.name = name;
    rec.dtype = dtype_of<S>();
    rec.shape = t.shape();
    rec.bytes.assign(reinterpret_cast<const char*>(t.data()), sizeof(S) * static_cast<size_t>(t.size()));
    return rec;
}

template <class S>
Tensor<S> tensor_from_record(const NamedTensorData& rec, bool requires_grad) {
    if (rec.dtype != dtype_of<S>()) {
        throw ConfigError("tensor " + rec.name + " has dtype " + dtype_name(rec.dtype) +
                          " but the run uses " + dtype_name(dtype_of<S>()));
    }
    const int64_t n = numel(rec.shape);
    if (rec.bytes.size() != sizeof(S) * static_cast<size_t>(n)) {
        throw DataError("tensor " + rec.name + " has inconsistent payload size");
    }
    std::vector<S> values(static_cast<size_t>(n));
    std::memcpy(values.data(), rec.bytes.data(), rec.bytes.size());
    return Tensor<S>::from(rec.shape, std::move(values), requires_grad);
}

template <class S>
CheckpointFile weights_to_checkpoint(const ModelWeights<S>& w, const std::string& config_json) {
    CheckpointFile ckpt;
    ckpt.config_json = config_json;
    for (const auto& [name, t] : w.params) ckpt.tensors.push_back(tensor_to_record(name, t));
    return ckpt;
}

// Rebuilds weights for the given config; every expected parameter must be
// present with matching shape.
template <class S>
ModelWeights<S> weights_from_checkpoint(const CheckpointFile& ckpt, const ModelConfig& cfg) {
    ModelWeights<S> expect = init_model<S>(cfg, 0);
    ModelWeights<S> out;
    out.config = cfg;
    for (const auto& [name, t] : expect.params) {
        const NamedTensorData* rec = ckpt.find(name);
        if (rec == nullptr) throw DataError("checkpoint is missing tensor " + name);
        if (rec->shape != t.shape()) {
            throw DataError("checkpoint tensor " + name + " has shape " + shape_str(rec->shape) +
                            ", expected " + shape_str(t.shape()));
        }
        out.params.emplace(name, tensor_from_record<S>(*rec, true));
    }
    return out;
}

template <class S>
CheckpointFile adapters_to_checkpoint(const AdapterSet<S>& set, const std::string& config_json) {
    CheckpointFile ckpt;
    ckpt.config_json = config_json;
    for (const auto& [site, br] : set.branches) {
        ckpt.tensors.push_back(tensor_to_record("adapter." + site + ".A", br.a));
        ckpt.tensors.push_back(tensor_to_record("adapter." + site + ".B", br.b));
        if (br.has_mixer()) {
            ckpt.tensors.push_back(tensor_to_record("adapter." + site + ".M", br.mixer));
        }
    }
    return ckpt;
}

template <class S>
AdapterSet<S> adapters_from_checkpoint(const CheckpointFile& ckpt, AdapterVariant variant,
                                       int64_t rank, double lora_alpha) {
    AdapterSet<S> set;
    set.variant = variant;
    for (const auto& rec : ckpt.tensors) {
        if (rec.name.rfind("adapter.", 0) != 0) continue;
        const size_t last_dot = rec.name.rfind('.');
        const std::string site = rec.name.substr(8, last_dot - 8);
        const std::string role = rec.name.substr(last_dot + 1);
        auto& br = set.branches[site];
        br.site = site;
        br.rank = rank;
        br.lora_alpha = lora_alpha;
        if (role == "A") br.a = tensor_from_record<S>(rec, true);
        else if (role == "B") br.b = tensor_from_record<S>(rec, true);
        else if (role == "M") br.mixer = tensor_from_record<S>(rec, true);
        else throw DataError("unexpected adapter tensor name: " + rec.name);
    }
    for (auto& [site, br] : set.branches) {
        if (!br.a.defined() || !br.b.defined()) {
            throw DataError("adapter checkpoint incomplete at site " + site);
        }
        if (br.a.dim(1) != rank || br.b.dim(1) != rank) {
            throw DataError("adapter checkpoint rank mismatch at site " + site);
        }
    }
    return set;
}

} // namespace neo

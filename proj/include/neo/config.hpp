// SPDX-License-Identifier: Apache-2.0
//
// Declarative run configuration. A single JSON document covers model
// shapes, training, data ranges, evaluation and the study harnesses.
// Unknown keys are rejected, and every command echoes its effective
// (file + flag overrides) config into the run directory.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neo/data.hpp"
#include "neo/model.hpp"
#include "neo/trainer.hpp"

namespace neo {

enum class Precision { f32, f64 };

inline const char* to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

inline Precision precision_from(const std::string& s) {
    if (s == "f32") return Precision::f32;
    if (s == "f64") return Precision::f64;
    throw ConfigError("unknown precision: " + s + " (expected f32|f64)");
}

struct DataConfig {
    std::string corpus;
    int64_t train_start = 0;
    int64_t train_end = -1; // -1: end of file
    int64_t val_start = -1; // -1: no validation slice
    int64_t val_end = -1;
    bool pack = true;
    bool mask_prompt = false;
};

struct EvalConfig {
    std::string probes;      // probe suite path; empty = skip probes
    int64_t batch_size = 16;
    int64_t max_batches = -1; // cap on validation batches, -1 = all
};

struct SweepConfig {
    std::vector<int64_t> ranks = {2, 4, 6, 8, 16, 32, 48, 128, 256};
    std::vector<double> lrs = {1e-4, 2e-4, 5e-4, 1e-3};
    int64_t repeats = 1;
    std::string teacher; // teacher checkpoint for teacher-guided cells
};

struct ScalingConfig {
    std::vector<int64_t> sizes = {250000, 500000, 1000000, 2000000}; // slice sizes in tokens
    std::string teacher;
};

struct CompareConfig {
    int64_t seeds = 3;
    std::string teacher;
};

struct AppConfig {
    Precision precision = Precision::f32;
    std::string out_dir; // empty: derived from command + config fingerprint
    int64_t threads = 1; // recorded for reproducibility; kernels are single-threaded
    ModelConfig model;         // student
    ModelConfig teacher_model; // used by teacher training only
    TrainConfig train;
    DataConfig data;
    EvalConfig eval;
    SweepConfig sweep;
    ScalingConfig scaling;
    CompareConfig compare;
};

// Desk-scale defaults: 4x128 teacher, 2x64 student, byte vocabulary.
AppConfig default_config();

AppConfig parse_config(const std::string& json_text);
AppConfig load_config_file(const std::string& path);
std::string config_to_json(const AppConfig& cfg);

// Stable fingerprint of the serialized config (used for run directories
// and sweep cell identity).
std::string config_fingerprint(const AppConfig& cfg);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json_text);

// Adapter checkpoint metadata.
std::string adapter_meta_to_json(const std::string& variant, int64_t rank, double lora_alpha,
                                 const std::vector<std::string>& sites);
void adapter_meta_from_json(const std::string& json_text, std::string& variant, int64_t& rank,
                            double& lora_alpha, std::vector<std::string>& sites);

std::string run_record_to_json(const RunRecord& rec);

} // namespace neo

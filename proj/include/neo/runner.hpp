// SPDX-License-Identifier: Apache-2.0
//
// Run orchestration shared by the CLI and the study harnesses. Every run
// produces a self-describing directory: effective config echo, JSONL step
// log, checkpoints, and a final report. Reruns from the echoed config are
// bit-identical at fixed precision.

#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "neo/checkpoint.hpp"
#include "neo/config.hpp"
#include "neo/eval.hpp"
#include "neo/trainer.hpp"

namespace neo {

namespace fs = std::filesystem;

struct RunPaths {
    fs::path dir;
    fs::path config_echo;
    fs::path log;
    fs::path report;
    fs::path checkpoint;
    fs::path adapter_checkpoint;
    fs::path merged_checkpoint;
};

struct RunSummary {
    TrainOutcome outcome;
    EvalReport eval;
    bool eval_done = false;
    double wall_seconds = 0;
    int64_t trainable_params = 0;
    int64_t optimizer_state_scalars = 0;
    RunPaths paths;
};

// Run directories default to <run root>/<command>-<config fingerprint>.
// The root comes from the NEO_RUN_ROOT environment variable when set.
inline fs::path resolve_out_dir(const AppConfig& cfg, const std::string& command,
                                const std::string& explicit_dir) {
    if (!explicit_dir.empty()) return explicit_dir;
    if (!cfg.out_dir.empty()) return cfg.out_dir;
    const char* root = std::getenv("NEO_RUN_ROOT");
    fs::path base = root != nullptr ? fs::path(root) : fs::path("runs");
    return base / (command + "-" + config_fingerprint(cfg));
}

inline RunPaths prepare_run_dir(const AppConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    RunPaths paths;
    paths.dir = dir;
    paths.config_echo = dir / "config.json";
    paths.log = dir / "run.log.jsonl";
    paths.report = dir / "report.json";
    paths.checkpoint = dir / "model.ckpt";
    paths.adapter_checkpoint = dir / "adapters.ckpt";
    paths.merged_checkpoint = dir / "merged.ckpt";
    std::ofstream echo(paths.config_echo);
    if (!echo) throw DataError("cannot write " + paths.config_echo.string());
    echo << config_to_json(cfg) << "\n";
    return paths;
}

inline CorpusSlice train_slice_of(const AppConfig& cfg) {
    if (cfg.data.corpus.empty()) throw ConfigError("data.corpus is not set");
    CorpusSlice s;
    s.source = cfg.data.corpus;
    s.byte_start = cfg.data.train_start;
    s.byte_end = cfg.data.train_end;
    s.seed = cfg.train.seed;
    if (s.byte_end < 0) {
        std::error_code ec;
        const auto size = fs::file_size(cfg.data.corpus, ec);
        if (ec) throw DataError("corpus file not found: " + cfg.data.corpus);
        s.byte_end = static_cast<int64_t>(size);
    }
    return s;
}

inline std::optional<CorpusSlice> val_slice_of(const AppConfig& cfg) {
    if (cfg.data.val_start < 0 || cfg.data.val_end < 0) return std::nullopt;
    CorpusSlice s;
    s.source = cfg.data.corpus;
    s.byte_start = cfg.data.val_start;
    s.byte_end = cfg.data.val_end;
    s.seed = 0;
    return s;
}

template <class S>
ModelWeights<S> load_model_checkpoint(const std::string& path) {
    CheckpointFile ckpt = load_checkpoint_file(path);
    const ModelConfig cfg = model_config_from_json(ckpt.config_json);
    return weights_from_checkpoint<S>(ckpt, cfg);
}

template <class S>
AdapterSet<S> load_adapter_checkpoint(const std::string& path) {
    CheckpointFile ckpt = load_checkpoint_file(path);
    std::string variant;
    int64_t rank = 0;
    double lora_alpha = 0;
    std::vector<std::string> sites;
    adapter_meta_from_json(ckpt.config_json, variant, rank, lora_alpha, sites);
    return adapters_from_checkpoint<S>(ckpt, adapter_variant_from(variant), rank, lora_alpha);
}

namespace detail {

template <class S>
EvalReport evaluate_run(const AppConfig& cfg, const ModelWeights<S>& w,
                        const AdapterSet<S>* adapters, const CorpusSlice* train_slice) {
    const auto val = val_slice_of(cfg);
    if (!val) throw ConfigError("evaluation requires data.val_start/val_end");
    EvalReport rep = eval_lm(w, adapters, *val, train_slice, cfg.train.max_seq_len,
                             cfg.eval.batch_size, cfg.eval.max_batches);
    if (!cfg.eval.probes.empty()) {
        rep.task_accuracy = eval_probes(w, adapters, load_probes(cfg.eval.probes));
        rep.probe_avg = probe_average(rep.task_accuracy);
    }
    return rep;
}

inline void write_report(const fs::path& path, const EvalReport& rep) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path.string());
    f << eval_report_to_json(rep) << "\n";
}

} // namespace detail

// Full supervised fine-tuning of the teacher config on the training slice.
template <class S>
RunSummary run_train_teacher(AppConfig cfg, const std::string& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.train.method = TrainMethod::sft;
    RunSummary sum;
    sum.paths = prepare_run_dir(cfg, resolve_out_dir(cfg, "train-teacher", out_dir));

    const CorpusSlice train = train_slice_of(cfg);
    const std::string text = read_slice_bytes(train);
    ModelWeights<S> model = init_model<S>(cfg.teacher_model, cfg.train.seed);

    std::ofstream log(sum.paths.log);
    auto cfg_train = cfg.train;
    cfg_train.pack = cfg.data.pack;
    cfg_train.mask_prompt = cfg.data.mask_prompt;
    sum.outcome = run_training<S>(cfg_train, model, nullptr, nullptr, text,
                                  [&](const RunRecord& rec) { log << run_record_to_json(rec) << std::endl; });
    sum.trainable_params = count_params(model).trainable;
    sum.optimizer_state_scalars = 2 * sum.trainable_params;

    save_checkpoint_file(sum.paths.checkpoint.string(),
                         weights_to_checkpoint(model, model_config_to_json(cfg.teacher_model)));

    if (val_slice_of(cfg)) {
        sum.eval = detail::evaluate_run(cfg, model, static_cast<const AdapterSet<S>*>(nullptr), &train);
        sum.eval_done = true;
        detail::write_report(sum.paths.report, sum.eval);
    }
    sum.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return sum;
}

// Trains the student with the requested method. Low-rank methods write the
// (unchanged) base student checkpoint plus an adapter checkpoint, and
// optionally a merged checkpoint.
template <class S>
RunSummary run_distill(AppConfig cfg, TrainMethod method, const std::string& teacher_ckpt,
                       const std::string& out_dir, bool write_merged = false) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg.train.method = method;
    if (uses_teacher(method) && teacher_ckpt.empty()) {
        throw ConfigError(std::string(to_string(method)) + " requires --teacher <checkpoint>");
    }

    RunSummary sum;
    sum.paths = prepare_run_dir(cfg, resolve_out_dir(cfg, std::string("distill-") + to_string(method), out_dir));

    const CorpusSlice train = train_slice_of(cfg);
    const std::string text = read_slice_bytes(train);

    std::optional<ModelWeights<S>> teacher;
    if (uses_teacher(method)) {
        teacher.emplace(load_model_checkpoint<S>(teacher_ckpt));
        teacher->set_requires_grad(false);
    }

    ModelWeights<S> student = init_model<S>(cfg.model, cfg.train.seed);
    std::optional<AdapterSet<S>> adapters;
    if (uses_low_rank(method)) {
        adapters.emplace(init_adapters(student, expand_sites(cfg.model, cfg.train.sites),
                                       cfg.train.rank, cfg.train.lora_alpha, cfg.train.variant,
                                       derive_seed(cfg.train.seed, fnv1a64("adapters"))));
    }

    std::ofstream log(sum.paths.log);
    auto cfg_train = cfg.train;
    cfg_train.pack = cfg.data.pack;
    cfg_train.mask_prompt = cfg.data.mask_prompt;
    sum.outcome = run_training<S>(cfg_train, student, teacher ? &*teacher : nullptr,
                                  adapters ? &*adapters : nullptr, text,
                                  [&](const RunRecord& rec) { log << run_record_to_json(rec) << std::endl; });

    const ParamReport params = count_params(student, adapters ? &*adapters : nullptr);
    sum.trainable_params = params.trainable;
    sum.optimizer_state_scalars = 2 * params.trainable;

    save_checkpoint_file(sum.paths.checkpoint.string(),
                         weights_to_checkpoint(student, model_config_to_json(cfg.model)));
    if (adapters) {
        save_checkpoint_file(
            sum.paths.adapter_checkpoint.string(),
            adapters_to_checkpoint(*adapters,
                                   adapter_meta_to_json(to_string(cfg.train.variant), cfg.train.rank,
                                                        cfg.train.lora_alpha, cfg.train.sites)));
    }

    if (val_slice_of(cfg)) {
        sum.eval = detail::evaluate_run(cfg, student, adapters ? &*adapters : nullptr, &train);
        sum.eval_done = true;
        detail::write_report(sum.paths.report, sum.eval);
    }

    if (adapters && write_merged) {
        ModelWeights<S> merged = merge(student, *adapters);
        save_checkpoint_file(sum.paths.merged_checkpoint.string(),
                             weights_to_checkpoint(merged, model_config_to_json(cfg.model)));
    }

    sum.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return sum;
}

// Evaluates a checkpoint (optionally with adapters) against the configured
// validation slice and probe suite.
template <class S>
EvalReport run_eval(const AppConfig& cfg, const std::string& ckpt_path,
                    const std::string& adapter_ckpt_path, const std::string& out_dir) {
    AppConfig effective = cfg;
    RunPaths paths = prepare_run_dir(effective, resolve_out_dir(effective, "eval", out_dir));
    ModelWeights<S> model = load_model_checkpoint<S>(ckpt_path);
    std::optional<AdapterSet<S>> adapters;
    if (!adapter_ckpt_path.empty()) adapters.emplace(load_adapter_checkpoint<S>(adapter_ckpt_path));

    CorpusSlice train = train_slice_of(cfg);
    EvalReport rep = detail::evaluate_run(cfg, model, adapters ? &*adapters : nullptr, &train);
    detail::write_report(paths.report, rep);
    return rep;
}

// Folds an adapter checkpoint into a base checkpoint.
template <class S>
void run_merge_checkpoints(const std::string& base_ckpt, const std::string& adapter_ckpt,
                           const std::string& out_path) {
    CheckpointFile base_file = load_checkpoint_file(base_ckpt);
    const ModelConfig mcfg = model_config_from_json(base_file.config_json);
    ModelWeights<S> base = weights_from_checkpoint<S>(base_file, mcfg);
    AdapterSet<S> adapters = load_adapter_checkpoint<S>(adapter_ckpt);
    ModelWeights<S> merged = merge(base, adapters);
    save_checkpoint_file(out_path, weights_to_checkpoint(merged, base_file.config_json));
}

} // namespace neo

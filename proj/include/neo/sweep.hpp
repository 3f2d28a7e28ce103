// SPDX-License-Identifier: Apache-2.0
//
// Study harnesses: the rank x learning-rate grid, the data-scaling ladder,
// and the four-method comparison. Sweeps are resumable: every cell's config
// is serialized before any run starts, each finished cell persists its
// result immediately, and the final matrix is always rebuilt from the
// persisted cell results, so a resumed sweep is bit-identical to an
// uninterrupted one.

#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "neo/runner.hpp"

namespace neo {

struct CellSpec {
    int64_t rank = 0;
    double lr = 0;
    int64_t repeat = 0;
    uint64_t seed = 0;
    std::string fingerprint;
};

struct CellResult {
    std::string status; // "complete" or "failed"
    double score = std::numeric_limits<double>::quiet_NaN();
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    double probe_avg = std::numeric_limits<double>::quiet_NaN();
    std::string error;
};

struct ScoreMatrix {
    std::vector<int64_t> ranks;
    std::vector<double> lrs;
    std::vector<double> values;             // ranks x lrs, mean score over repeats
    std::vector<std::vector<double>> raw;   // per grid cell, score per repeat
    std::vector<uint8_t> incomplete;        // ranks x lrs

    double& at(size_t ri, size_t li) { return values[ri * lrs.size() + li]; }
    double at(size_t ri, size_t li) const { return values[ri * lrs.size() + li]; }
};

struct ScalingRow {
    int64_t target_tokens = 0;
    int64_t slice_bytes = 0;
    int64_t slice_tokens = 0;
    int64_t steps = 0;
    double val_loss = 0;
    double probe_avg = 0;
};

struct CompareRow {
    std::string method;
    double mean_val_loss = 0;
    double mean_probe_avg = 0;
    std::vector<double> val_losses; // per seed
    int64_t trainable_params = 0;
    int64_t optimizer_state_scalars = 0;
    double mean_wall_seconds = 0;
};

struct CompareReport {
    std::vector<CompareRow> rows; // sft, lora, kd, neo
    double epsilon = 0.01;
    bool neo_le_lora = false;
    bool kd_le_sft = false;
    std::vector<std::string> flags; // "desk_scale_divergence:..." entries

    const CompareRow& row(const std::string& method) const {
        for (const auto& r : rows) {
            if (r.method == method) return r;
        }
        throw UsageError("no comparison row for " + method);
    }
};

// --- persistence helpers (sweep.cpp) ---------------------------------------

std::string format_double(double v); // shortest round-trip representation

std::vector<CellSpec> build_cell_specs(const AppConfig& base);
void write_sweep_plan(const std::string& out_dir, const AppConfig& base,
                      const std::vector<CellSpec>& cells);
void write_cell_result(const std::string& cell_dir, const CellSpec& spec, const CellResult& result);
std::optional<CellResult> read_cell_result(const std::string& cell_dir);

// Rebuilds the matrix purely from plan.json and the per-cell result files
// and rewrites matrix.csv / matrix.json.
ScoreMatrix regenerate_matrix(const std::string& out_dir);

void write_scaling_report(const std::string& out_dir, const std::vector<ScalingRow>& rows);
void write_compare_report(const std::string& out_dir, const CompareReport& rep);

// Byte offset ending at a document boundary whose token stream first reaches
// `target_tokens` (bos/eos included); DataError if the corpus is too small.
int64_t bytes_for_token_target(const std::string& corpus_path, int64_t start, int64_t target_tokens);

// --- execution --------------------------------------------------------------

struct SweepOptions {
    int64_t max_cells = -1; // stop after this many executed cells (testing hook
                            // standing in for an interrupt; completed cells persist)
};

// Builds the cell AppConfig for one grid point.
inline AppConfig cell_config(const AppConfig& base, const CellSpec& spec) {
    AppConfig cfg = base;
    cfg.train.rank = spec.rank;
    cfg.train.lr = spec.lr;
    cfg.train.seed = spec.seed;
    cfg.out_dir.clear();
    return cfg;
}

template <class S>
ScoreMatrix run_sweep(const AppConfig& base, const std::string& out_dir,
                      const SweepOptions& opts = {}) {
    if (base.sweep.ranks.empty() || base.sweep.lrs.empty()) {
        throw ConfigError("sweep needs non-empty rank and lr axes");
    }
    if (uses_teacher(base.train.method) && base.sweep.teacher.empty()) {
        throw ConfigError("sweep with a teacher-guided method requires sweep.teacher");
    }
    fs::create_directories(fs::path(out_dir) / "cells");
    const std::vector<CellSpec> cells = build_cell_specs(base);
    write_sweep_plan(out_dir, base, cells); // every cell config is on disk before any run

    int64_t executed = 0;
    bool stopped = false;
    for (const auto& spec : cells) {
        const fs::path cell_dir = fs::path(out_dir) / "cells" / spec.fingerprint;
        if (auto existing = read_cell_result(cell_dir.string()); existing && existing->status == "complete") {
            continue; // resume: finished cells are skipped by fingerprint
        }
        if (opts.max_cells >= 0 && executed >= opts.max_cells) {
            stopped = true;
            break;
        }
        ++executed;
        CellResult result;
        try {
            AppConfig cfg = cell_config(base, spec);
            RunSummary sum = run_distill<S>(cfg, cfg.train.method, base.sweep.teacher,
                                            cell_dir.string(), false);
            if (!sum.eval_done) throw ConfigError("sweep cells need a validation slice");
            result.status = "complete";
            result.val_loss = sum.eval.val_loss;
            result.probe_avg = sum.eval.probe_avg;
            // cell score: probe average when a suite is configured, else
            // negated validation loss so that larger is better either way
            result.score = base.eval.probes.empty() ? -sum.eval.val_loss : sum.eval.probe_avg;
        } catch (const std::exception& e) {
            result.status = "failed";
            result.error = e.what();
        }
        write_cell_result(cell_dir.string(), spec, result);
    }
    if (stopped) {
        // interrupted: leave completed cells behind, no final matrix yet
        return ScoreMatrix{};
    }
    return regenerate_matrix(out_dir);
}

// One run per nested slice size, shared seed, equal epochs; bigger slices
// therefore see more optimizer steps.
template <class S>
std::vector<ScalingRow> run_scaling(const AppConfig& base, const std::string& out_dir) {
    if (base.scaling.sizes.empty()) throw ConfigError("scaling needs at least one size");
    if (base.scaling.teacher.empty()) throw ConfigError("scaling requires scaling.teacher");
    for (int64_t s : base.scaling.sizes) {
        if (s <= 0) throw ConfigError("scaling sizes must be positive token counts");
    }
    fs::create_directories(out_dir);

    std::vector<ScalingRow> rows;
    for (int64_t target : base.scaling.sizes) {
        AppConfig cfg = base;
        cfg.train.method = TrainMethod::neo;
        const int64_t end = bytes_for_token_target(cfg.data.corpus, cfg.data.train_start, target);
        if (cfg.data.val_start >= 0 && end > cfg.data.val_start) {
            throw ConfigError("scaling slice of " + std::to_string(target) +
                              " tokens would overlap the validation slice");
        }
        cfg.data.train_end = end;
        cfg.out_dir.clear();
        const fs::path run_dir = fs::path(out_dir) / ("size-" + std::to_string(target));

        CorpusSlice slice = train_slice_of(cfg);
        slice.token_count = stream_token_count(read_slice_bytes(slice), cfg.data.pack);
        save_manifest(slice, (run_dir.string() + ".manifest.json"));

        RunSummary sum = run_distill<S>(cfg, TrainMethod::neo, base.scaling.teacher,
                                        run_dir.string(), false);
        if (!sum.eval_done) throw ConfigError("scaling runs need a validation slice");
        ScalingRow row;
        row.target_tokens = target;
        row.slice_bytes = end - cfg.data.train_start;
        row.slice_tokens = slice.token_count;
        row.steps = sum.outcome.steps;
        row.val_loss = sum.eval.val_loss;
        row.probe_avg = sum.eval.probe_avg;
        rows.push_back(row);
    }
    write_scaling_report(out_dir, rows);
    return rows;
}

// Four methods from identical seeds and data, equal step budgets.
template <class S>
CompareReport run_comparison(const AppConfig& base, const std::string& out_dir) {
    if (base.compare.teacher.empty()) {
        throw ConfigError("comparison requires compare.teacher for the kd and neo rows");
    }
    if (base.compare.seeds < 1) throw ConfigError("compare.seeds must be >= 1");
    fs::create_directories(out_dir);

    CompareReport rep;
    for (TrainMethod m : {TrainMethod::sft, TrainMethod::lora, TrainMethod::kd, TrainMethod::neo}) {
        CompareRow row;
        row.method = to_string(m);
        double wall = 0, probe = 0;
        for (int64_t si = 0; si < base.compare.seeds; ++si) {
            AppConfig cfg = base;
            cfg.train.seed = base.train.seed + static_cast<uint64_t>(si);
            // schedule floors per family: 1e-5 for low-rank branches, 1e-6 for
            // full updates
            cfg.train.min_lr = uses_low_rank(m) ? 1e-5 : 1e-6;
            cfg.out_dir.clear();
            const fs::path run_dir =
                fs::path(out_dir) / (row.method + "-seed" + std::to_string(cfg.train.seed));
            RunSummary sum =
                run_distill<S>(cfg, m, uses_teacher(m) ? base.compare.teacher : std::string(),
                               run_dir.string(), false);
            if (!sum.eval_done) throw ConfigError("comparison runs need a validation slice");
            row.val_losses.push_back(sum.eval.val_loss);
            probe += sum.eval.probe_avg;
            wall += sum.wall_seconds;
            row.trainable_params = sum.trainable_params;
            row.optimizer_state_scalars = sum.optimizer_state_scalars;
        }
        double total = 0;
        for (double v : row.val_losses) total += v;
        row.mean_val_loss = total / static_cast<double>(row.val_losses.size());
        row.mean_probe_avg = probe / static_cast<double>(base.compare.seeds);
        row.mean_wall_seconds = wall / static_cast<double>(base.compare.seeds);
        rep.rows.push_back(std::move(row));
    }

    rep.neo_le_lora = rep.row("neo").mean_val_loss <= rep.row("lora").mean_val_loss + rep.epsilon;
    rep.kd_le_sft = rep.row("kd").mean_val_loss <= rep.row("sft").mean_val_loss + rep.epsilon;
    if (!rep.neo_le_lora) {
        rep.flags.push_back("desk_scale_divergence: mean val_loss(neo) > mean val_loss(lora) + eps");
    }
    if (!rep.kd_le_sft) {
        rep.flags.push_back("desk_scale_divergence: mean val_loss(kd) > mean val_loss(sft) + eps");
    }
    write_compare_report(out_dir, rep);
    return rep;
}

} // namespace neo

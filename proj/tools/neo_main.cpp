// SPDX-License-Identifier: Apache-2.0
//
// Single-binary CLI. Subcommands: gen-corpus, gen-probes, train-teacher,
// distill, eval, merge, sweep, scaling, compare. All knobs live in the
// config file and in flags that override it; every run echoes its
// effective config. Exit codes: 0 ok, 1 config error, 2 data error,
// 3 runtime/numeric error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "neo/config.hpp"
#include "neo/data.hpp"
#include "neo/eval.hpp"
#include "neo/runner.hpp"
#include "neo/sweep.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<std::string> precision;
    std::optional<uint64_t> seed;
    std::optional<double> lr;
    std::optional<double> min_lr;
    std::optional<int64_t> rank;
    std::optional<double> alpha;
    std::optional<double> temperature;
    std::optional<int64_t> epochs;
    std::optional<int64_t> max_steps;
    std::optional<int64_t> batch_size;
    std::optional<int64_t> grad_accum;
    std::optional<int64_t> seq_len;
    std::optional<std::string> corpus;
    std::optional<std::string> probes;
    std::optional<std::string> variant;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "config file (JSON)");
    cmd->add_option("--out", args.out_dir, "run directory");
    cmd->add_option("--precision", args.precision, "f32 or f64");
    cmd->add_option("--seed", args.seed, "training seed");
    cmd->add_option("--lr", args.lr, "peak learning rate");
    cmd->add_option("--min-lr", args.min_lr, "final learning rate");
    cmd->add_option("--rank", args.rank, "low-rank branch rank");
    cmd->add_option("--alpha", args.alpha, "ground-truth CE weight in [0,1]");
    cmd->add_option("--temperature", args.temperature, "distillation temperature");
    cmd->add_option("--epochs", args.epochs, "training epochs");
    cmd->add_option("--max-steps", args.max_steps, "optimizer step cap");
    cmd->add_option("--batch-size", args.batch_size, "sequences per micro-batch");
    cmd->add_option("--grad-accum", args.grad_accum, "micro-batches per optimizer step");
    cmd->add_option("--seq-len", args.seq_len, "window length in tokens");
    cmd->add_option("--corpus", args.corpus, "corpus file");
    cmd->add_option("--probes", args.probes, "probe suite file");
    cmd->add_option("--variant", args.variant, "adapter variant: lora or moslora");
}

neo::AppConfig make_config(const CommonArgs& args) {
    neo::AppConfig cfg =
        args.config_path.empty() ? neo::default_config() : neo::load_config_file(args.config_path);
    if (args.precision) cfg.precision = neo::precision_from(*args.precision);
    if (args.seed) cfg.train.seed = *args.seed;
    if (args.lr) cfg.train.lr = *args.lr;
    if (args.min_lr) cfg.train.min_lr = *args.min_lr;
    if (args.rank) cfg.train.rank = *args.rank;
    if (args.alpha) cfg.train.alpha = *args.alpha;
    if (args.temperature) cfg.train.temperature = *args.temperature;
    if (args.epochs) cfg.train.epochs = *args.epochs;
    if (args.max_steps) cfg.train.max_steps = *args.max_steps;
    if (args.batch_size) cfg.train.batch_size = *args.batch_size;
    if (args.grad_accum) cfg.train.grad_accum_steps = *args.grad_accum;
    if (args.seq_len) cfg.train.max_seq_len = *args.seq_len;
    if (args.corpus) cfg.data.corpus = *args.corpus;
    if (args.probes) cfg.eval.probes = *args.probes;
    if (args.variant) cfg.train.variant = neo::adapter_variant_from(*args.variant);
    return cfg;
}

void print_summary(const neo::RunSummary& sum) {
    std::printf("run dir: %s\n", sum.paths.dir.string().c_str());
    std::printf("steps: %lld  tokens: %lld  final loss: %.6f\n",
                static_cast<long long>(sum.outcome.steps), static_cast<long long>(sum.outcome.tokens),
                sum.outcome.final_loss);
    std::printf("trainable params: %lld  optimizer state scalars: %lld\n",
                static_cast<long long>(sum.trainable_params),
                static_cast<long long>(sum.optimizer_state_scalars));
    if (sum.eval_done) {
        std::printf("val loss: %.6f  perplexity: %.4f  probe avg: %.4f\n", sum.eval.val_loss,
                    sum.eval.perplexity, sum.eval.probe_avg);
    }
    std::printf("wall: %.1fs\n", sum.wall_seconds);
}

template <class F>
void with_precision(neo::Precision p, F&& fn) {
    if (p == neo::Precision::f32) {
        fn(float{});
    } else {
        fn(double{});
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"parameter-efficient knowledge distillation at desk scale"};
    app.require_subcommand(1);

    // gen-corpus
    auto* gen_corpus = app.add_subcommand("gen-corpus", "write a deterministic synthetic corpus");
    std::string gc_out = "corpus.txt";
    int64_t gc_bytes = 2200000;
    uint64_t gc_seed = 1;
    gen_corpus->add_option("--out", gc_out, "output path");
    gen_corpus->add_option("--bytes", gc_bytes, "corpus size in bytes");
    gen_corpus->add_option("--seed", gc_seed, "generator seed");

    // gen-probes
    auto* gen_probes = app.add_subcommand("gen-probes", "write a deterministic probe suite");
    std::string gp_out = "probes.jsonl";
    int64_t gp_per_task = 50;
    uint64_t gp_seed = 1;
    gen_probes->add_option("--out", gp_out, "output path");
    gen_probes->add_option("--per-task", gp_per_task, "items per task");
    gen_probes->add_option("--seed", gp_seed, "generator seed");

    // train-teacher
    auto* train_teacher = app.add_subcommand("train-teacher", "full SFT of the teacher config");
    CommonArgs tt_args;
    add_common(train_teacher, tt_args);

    // distill
    auto* distill = app.add_subcommand("distill", "train the student with sft|lora|kd|neo");
    CommonArgs di_args;
    add_common(distill, di_args);
    std::string di_method = "neo";
    std::string di_teacher;
    bool di_merge = false;
    distill->add_option("--method", di_method, "sft|lora|kd|neo");
    distill->add_option("--teacher", di_teacher, "teacher checkpoint (kd/neo)");
    distill->add_flag("--merge", di_merge, "also write a merged checkpoint (low-rank methods)");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    CommonArgs ev_args;
    add_common(eval_cmd, ev_args);
    std::string ev_ckpt;
    std::string ev_adapters;
    eval_cmd->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
    eval_cmd->add_option("--adapters", ev_adapters, "adapter checkpoint");

    // merge
    auto* merge_cmd = app.add_subcommand("merge", "fold an adapter checkpoint into a base checkpoint");
    CommonArgs mg_args;
    add_common(merge_cmd, mg_args);
    std::string mg_base, mg_adapters, mg_out = "merged.ckpt";
    merge_cmd->add_option("--base", mg_base, "base model checkpoint")->required();
    merge_cmd->add_option("--adapters", mg_adapters, "adapter checkpoint")->required();
    merge_cmd->add_option("--out-checkpoint", mg_out, "merged checkpoint path");

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "rank x lr grid search");
    CommonArgs sw_args;
    add_common(sweep_cmd, sw_args);
    std::string sw_teacher;
    int64_t sw_max_cells = -1;
    std::string sw_method;
    sweep_cmd->add_option("--teacher", sw_teacher, "teacher checkpoint for kd/neo cells");
    sweep_cmd->add_option("--max-cells", sw_max_cells, "stop after N executed cells (resume later)");
    sweep_cmd->add_option("--method", sw_method, "cell training method (default from config)");

    // scaling
    auto* scaling_cmd = app.add_subcommand("scaling", "data-scaling ladder");
    CommonArgs sc_args;
    add_common(scaling_cmd, sc_args);
    std::string sc_teacher;
    scaling_cmd->add_option("--teacher", sc_teacher, "teacher checkpoint");

    // compare
    auto* compare_cmd = app.add_subcommand("compare", "sft | lora | kd | neo comparison table");
    CommonArgs cp_args;
    add_common(compare_cmd, cp_args);
    std::string cp_teacher;
    std::optional<int64_t> cp_seeds;
    compare_cmd->add_option("--teacher", cp_teacher, "teacher checkpoint");
    compare_cmd->add_option("--seeds", cp_seeds, "repeats per method");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen_corpus) {
            neo::generate_corpus(gc_out, gc_bytes, gc_seed);
            std::printf("wrote %lld bytes to %s\n", static_cast<long long>(gc_bytes), gc_out.c_str());
        } else if (*gen_probes) {
            neo::generate_probes(gp_out, gp_per_task, gp_seed);
            std::printf("wrote probe suite to %s\n", gp_out.c_str());
        } else if (*train_teacher) {
            auto cfg = make_config(tt_args);
            with_precision(cfg.precision, [&](auto tag) {
                using S = decltype(tag);
                print_summary(neo::run_train_teacher<S>(cfg, tt_args.out_dir));
            });
        } else if (*distill) {
            auto cfg = make_config(di_args);
            const neo::TrainMethod method = neo::method_from_string(di_method);
            with_precision(cfg.precision, [&](auto tag) {
                using S = decltype(tag);
                print_summary(neo::run_distill<S>(cfg, method, di_teacher, di_args.out_dir, di_merge));
            });
        } else if (*eval_cmd) {
            auto cfg = make_config(ev_args);
            with_precision(cfg.precision, [&](auto tag) {
                using S = decltype(tag);
                neo::EvalReport rep = neo::run_eval<S>(cfg, ev_ckpt, ev_adapters, ev_args.out_dir);
                std::printf("val loss: %.6f  perplexity: %.4f  probe avg: %.4f\n", rep.val_loss,
                            rep.perplexity, rep.probe_avg);
            });
        } else if (*merge_cmd) {
            auto cfg = make_config(mg_args);
            with_precision(cfg.precision, [&](auto tag) {
                using S = decltype(tag);
                neo::run_merge_checkpoints<S>(mg_base, mg_adapters, mg_out);
            });
            std::printf("merged checkpoint written to %s\n", mg_out.c_str());
        } else if (*sweep_cmd) {
            auto cfg = make_config(sw_args);
            if (!sw_teacher.empty()) cfg.sweep.teacher = sw_teacher;
            if (!sw_method.empty()) cfg.train.method = neo::method_from_string(sw_method);
            const auto dir = neo::resolve_out_dir(cfg, "sweep", sw_args.out_dir);
            neo::SweepOptions opts;
            opts.max_cells = sw_max_cells;
            with_precision(cfg.precision, [&](auto tag) {
                using S = decltype(tag);
                auto matrix = neo::run_sweep<S>(cfg, dir.string(), opts);
                if (matrix.values.empty()) {
                    std::printf("sweep interrupted after --max-cells; rerun to resume\n");
                } else {
                    std::printf("matrix written to %s (%zu x %zu)\n", dir.string().c_str(),
                                matrix.ranks.size(), matrix.lrs.size());
                }
            });
        } else if (*scaling_cmd) {
            auto cfg = make_config(sc_args);
            if (!sc_teacher.empty()) cfg.scaling.teacher = sc_teacher;
            const auto dir = neo::resolve_out_dir(cfg, "scaling", sc_args.out_dir);
            with_precision(cfg.precision, [&](auto tag) {
                using S = decltype(tag);
                auto rows = neo::run_scaling<S>(cfg, dir.string());
                for (const auto& r : rows) {
                    std::printf("tokens=%lld  steps=%lld  val_loss=%.6f  probe_avg=%.4f\n",
                                static_cast<long long>(r.slice_tokens),
                                static_cast<long long>(r.steps), r.val_loss, r.probe_avg);
                }
            });
        } else if (*compare_cmd) {
            auto cfg = make_config(cp_args);
            if (!cp_teacher.empty()) cfg.compare.teacher = cp_teacher;
            if (cp_seeds) cfg.compare.seeds = *cp_seeds;
            const auto dir = neo::resolve_out_dir(cfg, "compare", cp_args.out_dir);
            with_precision(cfg.precision, [&](auto tag) {
                using S = decltype(tag);
                auto rep = neo::run_comparison<S>(cfg, dir.string());
                std::printf("%-6s %12s %10s %12s %14s\n", "method", "val_loss", "probe", "trainable",
                            "state_scalars");
                for (const auto& r : rep.rows) {
                    std::printf("%-6s %12.6f %10.4f %12lld %14lld\n", r.method.c_str(),
                                r.mean_val_loss, r.mean_probe_avg,
                                static_cast<long long>(r.trainable_params),
                                static_cast<long long>(r.optimizer_state_scalars));
                }
                for (const auto& f : rep.flags) std::printf("flag: %s\n", f.c_str());
            });
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return neo::exit_code_for(e);
    }
    return 0;
}

// SPDX-License-Identifier: Apache-2.0
#include "neo/config.hpp"

#include <fstream>
#include <set>

#include "json.hpp"

#include "neo/hash.hpp"

namespace neo {

using nlohmann::json;

namespace {

// Rejects keys outside the known set, naming the offending path.
void check_keys(const json& j, const std::string& path, const std::set<std::string>& known) {
    if (!j.is_object()) throw ConfigError("config section " + path + " must be an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key)) {
            throw ConfigError("unknown config key: " + (path.empty() ? key : path + "." + key));
        }
    }
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void read_method(const json& j, const char* key, TrainMethod& out) {
    if (j.contains(key)) out = method_from_string(j.at(key).get<std::string>());
}

void read_variant(const json& j, const char* key, AdapterVariant& out) {
    if (j.contains(key)) out = adapter_variant_from(j.at(key).get<std::string>());
}

json model_to_json(const ModelConfig& m) {
    return json{{"vocab_size", m.vocab_size}, {"d_model", m.d_model},
                {"n_layers", m.n_layers},     {"n_heads", m.n_heads},
                {"d_ff", m.d_ff},             {"max_seq_len", m.max_seq_len},
                {"tie_embeddings", m.tie_embeddings}};
}

void model_from_json(const json& j, const std::string& path, ModelConfig& m) {
    check_keys(j, path, {"vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_seq_len",
                         "tie_embeddings"});
    read(j, "vocab_size", m.vocab_size);
    read(j, "d_model", m.d_model);
    read(j, "n_layers", m.n_layers);
    read(j, "n_heads", m.n_heads);
    read(j, "d_ff", m.d_ff);
    read(j, "max_seq_len", m.max_seq_len);
    read(j, "tie_embeddings", m.tie_embeddings);
}

json train_to_json(const TrainConfig& t) {
    return json{{"method", to_string(t.method)},
                {"lr", t.lr},
                {"min_lr", t.min_lr},
                {"warmup_steps", t.warmup_steps},
                {"warmup_frac", t.warmup_frac},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"grad_accum_steps", t.grad_accum_steps},
                {"max_seq_len", t.max_seq_len},
                {"seed", t.seed},
                {"alpha", t.alpha},
                {"temperature", t.temperature},
                {"reverse_kl", t.reverse_kl},
                {"rank", t.rank},
                {"lora_alpha", t.lora_alpha},
                {"sites", t.sites},
                {"variant", to_string(t.variant)},
                {"weight_decay", t.weight_decay},
                {"grad_clip_norm", t.grad_clip_norm},
                {"max_steps", t.max_steps},
                {"log_every", t.log_every}};
}

void train_from_json(const json& j, TrainConfig& t) {
    check_keys(j, "train",
               {"method", "lr", "min_lr", "warmup_steps", "warmup_frac", "epochs", "batch_size",
                "grad_accum_steps", "max_seq_len", "seed", "alpha", "temperature", "reverse_kl",
                "rank", "lora_alpha", "sites", "variant", "weight_decay", "grad_clip_norm",
                "max_steps", "log_every"});
    read_method(j, "method", t.method);
    read(j, "lr", t.lr);
    read(j, "min_lr", t.min_lr);
    read(j, "warmup_steps", t.warmup_steps);
    read(j, "warmup_frac", t.warmup_frac);
    read(j, "epochs", t.epochs);
    read(j, "batch_size", t.batch_size);
    read(j, "grad_accum_steps", t.grad_accum_steps);
    read(j, "max_seq_len", t.max_seq_len);
    read(j, "seed", t.seed);
    read(j, "alpha", t.alpha);
    read(j, "temperature", t.temperature);
    read(j, "reverse_kl", t.reverse_kl);
    read(j, "rank", t.rank);
    read(j, "lora_alpha", t.lora_alpha);
    read(j, "sites", t.sites);
    read_variant(j, "variant", t.variant);
    read(j, "weight_decay", t.weight_decay);
    read(j, "grad_clip_norm", t.grad_clip_norm);
    read(j, "max_steps", t.max_steps);
    read(j, "log_every", t.log_every);
    for (const auto& s : t.sites) {
        const auto& kinds = all_site_kinds();
        if (std::find(kinds.begin(), kinds.end(), s) == kinds.end()) {
            throw ConfigError("unknown adapter site kind: " + s);
        }
    }
}

} // namespace

AppConfig default_config() {
    AppConfig cfg;
    cfg.model.vocab_size = kVocabSize;
    cfg.model.d_model = 64;
    cfg.model.n_layers = 2;
    cfg.model.n_heads = 2;
    cfg.model.d_ff = 256;
    cfg.model.max_seq_len = 128;

    cfg.teacher_model.vocab_size = kVocabSize;
    cfg.teacher_model.d_model = 128;
    cfg.teacher_model.n_layers = 4;
    cfg.teacher_model.n_heads = 4;
    cfg.teacher_model.d_ff = 512;
    cfg.teacher_model.max_seq_len = 128;
    return cfg;
}

AppConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(j, "",
               {"precision", "out_dir", "threads", "model", "teacher_model", "train", "data",
                "eval", "sweep", "scaling", "compare"});
    AppConfig cfg = default_config();
    if (j.contains("precision")) cfg.precision = precision_from(j.at("precision").get<std::string>());
    read(j, "out_dir", cfg.out_dir);
    read(j, "threads", cfg.threads);
    if (cfg.threads != 1) throw ConfigError("threads: only single-threaded execution is supported");
    if (j.contains("model")) model_from_json(j.at("model"), "model", cfg.model);
    if (j.contains("teacher_model")) {
        model_from_json(j.at("teacher_model"), "teacher_model", cfg.teacher_model);
    }
    if (j.contains("train")) train_from_json(j.at("train"), cfg.train);
    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d, "data",
                   {"corpus", "train_start", "train_end", "val_start", "val_end", "pack",
                    "mask_prompt"});
        read(d, "corpus", cfg.data.corpus);
        read(d, "train_start", cfg.data.train_start);
        read(d, "train_end", cfg.data.train_end);
        read(d, "val_start", cfg.data.val_start);
        read(d, "val_end", cfg.data.val_end);
        read(d, "pack", cfg.data.pack);
        read(d, "mask_prompt", cfg.data.mask_prompt);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        check_keys(e, "eval", {"probes", "batch_size", "max_batches"});
        read(e, "probes", cfg.eval.probes);
        read(e, "batch_size", cfg.eval.batch_size);
        read(e, "max_batches", cfg.eval.max_batches);
    }
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        check_keys(s, "sweep", {"ranks", "lrs", "repeats", "teacher"});
        read(s, "ranks", cfg.sweep.ranks);
        read(s, "lrs", cfg.sweep.lrs);
        read(s, "repeats", cfg.sweep.repeats);
        read(s, "teacher", cfg.sweep.teacher);
    }
    if (j.contains("scaling")) {
        const auto& s = j.at("scaling");
        check_keys(s, "scaling", {"sizes", "teacher"});
        read(s, "sizes", cfg.scaling.sizes);
        read(s, "teacher", cfg.scaling.teacher);
    }
    if (j.contains("compare")) {
        const auto& c = j.at("compare");
        check_keys(c, "compare", {"seeds", "teacher"});
        read(c, "seeds", cfg.compare.seeds);
        read(c, "teacher", cfg.compare.teacher);
    }
    return cfg;
}

AppConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config file not found: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_config(text);
}

std::string config_to_json(const AppConfig& cfg) {
    json j{{"precision", to_string(cfg.precision)},
           {"out_dir", cfg.out_dir},
           {"threads", cfg.threads},
           {"model", model_to_json(cfg.model)},
           {"teacher_model", model_to_json(cfg.teacher_model)},
           {"train", train_to_json(cfg.train)},
           {"data",
            {{"corpus", cfg.data.corpus},
             {"train_start", cfg.data.train_start},
             {"train_end", cfg.data.train_end},
             {"val_start", cfg.data.val_start},
             {"val_end", cfg.data.val_end},
             {"pack", cfg.data.pack},
             {"mask_prompt", cfg.data.mask_prompt}}},
           {"eval",
            {{"probes", cfg.eval.probes},
             {"batch_size", cfg.eval.batch_size},
             {"max_batches", cfg.eval.max_batches}}},
           {"sweep",
            {{"ranks", cfg.sweep.ranks},
             {"lrs", cfg.sweep.lrs},
             {"repeats", cfg.sweep.repeats},
             {"teacher", cfg.sweep.teacher}}},
           {"scaling", {{"sizes", cfg.scaling.sizes}, {"teacher", cfg.scaling.teacher}}},
           {"compare", {{"seeds", cfg.compare.seeds}, {"teacher", cfg.compare.teacher}}}};
    return j.dump(2);
}

std::string config_fingerprint(const AppConfig& cfg) {
    return hex64(fnv1a64(config_to_json(cfg)));
}

std::string model_config_to_json(const ModelConfig& cfg) { return model_to_json(cfg).dump(2); }

ModelConfig model_config_from_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw DataError(std::string("model config is not valid JSON: ") + e.what());
    }
    ModelConfig cfg;
    model_from_json(j, "model", cfg);
    cfg.validate();
    return cfg;
}

std::string adapter_meta_to_json(const std::string& variant, int64_t rank, double lora_alpha,
                                 const std::vector<std::string>& sites) {
    return json{{"variant", variant}, {"rank", rank}, {"lora_alpha", lora_alpha}, {"sites", sites}}
        .dump(2);
}

void adapter_meta_from_json(const std::string& json_text, std::string& variant, int64_t& rank,
                            double& lora_alpha, std::vector<std::string>& sites) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw DataError(std::string("adapter metadata is not valid JSON: ") + e.what());
    }
    variant = j.at("variant").get<std::string>();
    rank = j.at("rank").get<int64_t>();
    lora_alpha = j.at("lora_alpha").get<double>();
    sites = j.at("sites").get<std::vector<std::string>>();
}

std::string run_record_to_json(const RunRecord& rec) {
    return json{{"step", rec.step},
                {"tokens_seen", rec.tokens_seen},
                {"lr", rec.lr},
                {"loss_total", rec.loss_total},
                {"loss_ce", rec.loss_ce},
                {"loss_kl", rec.loss_kl},
                {"grad_norm", rec.grad_norm},
                {"trainable_params", rec.trainable_params},
                {"optimizer_state_scalars", rec.optimizer_state_scalars},
                {"step_wall_ms", rec.step_wall_ms},
                {"seed", rec.seed}}
        .dump();
}

} // namespace neo

// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "neo/checkpoint.hpp"
#include "neo/config.hpp"
#include "neo/runner.hpp"

namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    auto p = fs::temp_directory_path() / "neo_ckpt_test";
    fs::create_directories(p);
    return p;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

neo::ModelConfig small_config() {
    neo::ModelConfig cfg;
    cfg.vocab_size = 19;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.max_seq_len = 8;
    return cfg;
}

} // namespace

TEST_CASE("save/load/save reproduces identical bytes and identical weights") {
    auto dir = temp_dir();
    auto cfg = small_config();
    auto w = neo::init_model<float>(cfg, 77);

    const auto p1 = dir / "a.ckpt";
    const auto p2 = dir / "b.ckpt";
    neo::save_checkpoint_file(p1.string(), neo::weights_to_checkpoint(w, neo::model_config_to_json(cfg)));
    auto loaded_file = neo::load_checkpoint_file(p1.string());
    neo::save_checkpoint_file(p2.string(), loaded_file);
    CHECK(file_bytes(p1) == file_bytes(p2));

    auto loaded = neo::weights_from_checkpoint<float>(loaded_file,
                                                      neo::model_config_from_json(loaded_file.config_json));
    for (const auto& [name, t] : w.params) CHECK(loaded.at(name).values() == t.values());
}

TEST_CASE("corrupted checkpoints fail the checksum") {
    auto dir = temp_dir();
    auto cfg = small_config();
    auto w = neo::init_model<float>(cfg, 3);
    const auto p = dir / "c.ckpt";
    neo::save_checkpoint_file(p.string(), neo::weights_to_checkpoint(w, neo::model_config_to_json(cfg)));

    auto bytes = file_bytes(p);
    bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x40);
    std::ofstream f(p, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.close();
    CHECK_THROWS_WITH_AS(neo::load_checkpoint_file(p.string()),
                         ("checkpoint checksum mismatch: " + p.string()).c_str(), neo::DataError);
}

TEST_CASE("loading at the wrong precision is a config error") {
    auto dir = temp_dir();
    auto cfg = small_config();
    auto w = neo::init_model<float>(cfg, 3);
    const auto p = dir / "d.ckpt";
    neo::save_checkpoint_file(p.string(), neo::weights_to_checkpoint(w, neo::model_config_to_json(cfg)));
    auto file = neo::load_checkpoint_file(p.string());
    CHECK_THROWS_AS(neo::weights_from_checkpoint<double>(file, neo::model_config_from_json(file.config_json)),
                    neo::ConfigError);
}

TEST_CASE("adapter checkpoints round-trip branches and metadata") {
    auto dir = temp_dir();
    auto cfg = small_config();
    auto w = neo::init_model<float>(cfg, 5);
    auto sites = neo::expand_sites(cfg, {"attn.q", "mlp.in"});
    auto set = neo::init_adapters(w, sites, 2, 16.0, neo::AdapterVariant::moslora, 9);
    neo::Rng rng(10);
    for (auto& [site, br] : set.branches) {
        for (int64_t i = 0; i < br.b.size(); ++i) br.b.data()[i] = static_cast<float>(rng.normal());
    }

    const auto p = dir / "adapters.ckpt";
    neo::save_checkpoint_file(
        p.string(),
        neo::adapters_to_checkpoint(set, neo::adapter_meta_to_json("moslora", 2, 16.0,
                                                                   {"attn.q", "mlp.in"})));
    auto loaded = neo::load_adapter_checkpoint<float>(p.string());
    CHECK(loaded.variant == neo::AdapterVariant::moslora);
    REQUIRE(loaded.branches.size() == set.branches.size());
    for (const auto& [site, br] : set.branches) {
        const auto& other = loaded.branches.at(site);
        CHECK(other.rank == 2);
        CHECK(other.a.values() == br.a.values());
        CHECK(other.b.values() == br.b.values());
        CHECK(other.mixer.values() == br.mixer.values());
    }
}

TEST_CASE("missing or mismatched tensors are data errors") {
    auto dir = temp_dir();
    auto cfg = small_config();
    auto w = neo::init_model<float>(cfg, 6);
    auto file = neo::weights_to_checkpoint(w, neo::model_config_to_json(cfg));
    file.tensors.pop_back();
    const auto p = dir / "missing.ckpt";
    neo::save_checkpoint_file(p.string(), file);
    auto loaded = neo::load_checkpoint_file(p.string());
    CHECK_THROWS_AS(neo::weights_from_checkpoint<float>(loaded, cfg), neo::DataError);
}

TEST_CASE("config files reject unknown keys with the offending path") {
    CHECK_THROWS_WITH_AS(neo::parse_config(R"({"trian": {}})"), "unknown config key: trian",
                         neo::ConfigError);
    CHECK_THROWS_WITH_AS(neo::parse_config(R"({"train": {"leraning_rate": 1}})"),
                         "unknown config key: train.leraning_rate", neo::ConfigError);
    CHECK_THROWS_WITH_AS(neo::parse_config(R"({"model": {"d_modle": 4}})"),
                         "unknown config key: model.d_modle", neo::ConfigError);
}

TEST_CASE("config serialization round-trips and fingerprints are stable") {
    auto cfg = neo::default_config();
    cfg.train.lr = 2e-4;
    cfg.train.rank = 16;
    cfg.train.method = neo::TrainMethod::neo;
    cfg.data.corpus = "corpus.txt";
    auto text = neo::config_to_json(cfg);
    auto parsed = neo::parse_config(text);
    CHECK(neo::config_to_json(parsed) == text);
    CHECK(neo::config_fingerprint(parsed) == neo::config_fingerprint(cfg));

    parsed.train.lr = 3e-4;
    CHECK(neo::config_fingerprint(parsed) != neo::config_fingerprint(cfg));
}

TEST_CASE("malformed config json is a config error") {
    CHECK_THROWS_AS(neo::parse_config("{not json"), neo::ConfigError);
    CHECK_THROWS_AS(neo::parse_config(R"({"precision": "f16"})"), neo::ConfigError);
    CHECK_THROWS_AS(neo::parse_config(R"({"threads": 4})"), neo::ConfigError);
}

TEST_CASE("run records serialize every accounting field") {
    neo::RunRecord rec;
    rec.step = 3;
    rec.tokens_seen = 1024;
    rec.lr = 1e-3;
    rec.loss_total = 2.5;
    rec.loss_ce = 2.0;
    rec.loss_kl = 3.0;
    rec.grad_norm = 0.7;
    rec.trainable_params = 100;
    rec.optimizer_state_scalars = 200;
    rec.step_wall_ms = 12.5;
    rec.seed = 9;
    const std::string line = neo::run_record_to_json(rec);
    for (const char* key : {"step", "tokens_seen", "lr", "loss_total", "loss_ce", "loss_kl",
                            "grad_norm", "trainable_params", "optimizer_state_scalars",
                            "step_wall_ms", "seed"}) {
        CHECK(line.find(key) != std::string::npos);
    }
}

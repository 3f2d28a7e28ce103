// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "neo/eval.hpp"
#include "neo/runner.hpp"

namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    auto p = fs::temp_directory_path() / "neo_eval_test";
    fs::create_directories(p);
    return p;
}

neo::ModelConfig byte_model_config() {
    neo::ModelConfig cfg;
    cfg.vocab_size = neo::kVocabSize;
    cfg.d_model = 32;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_ff = 64;
    cfg.max_seq_len = 48;
    return cfg;
}

// All-zero weights give exactly uniform logits.
template <class S>
neo::ModelWeights<S> zero_model(const neo::ModelConfig& cfg) {
    auto w = neo::init_model<S>(cfg, 0);
    for (auto& [name, t] : w.params) {
        for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = S(0);
    }
    return w;
}

} // namespace

TEST_CASE("uniform-logit model scores ln(vocab) validation loss") {
    auto dir = temp_dir();
    const auto corpus = (dir / "val.txt").string();
    neo::generate_corpus(corpus, 6000, 3);

    auto w = zero_model<double>(byte_model_config());
    neo::CorpusSlice val{corpus, 0, 6000, 0, -1};
    auto rep = neo::eval_lm<double>(w, nullptr, val, nullptr, 48, 8);
    CHECK(std::fabs(rep.val_loss - std::log(259.0)) < 1e-9);
    CHECK(rep.perplexity == doctest::Approx(259.0).epsilon(1e-9));
    CHECK(rep.tokens_evaluated > 5000);
}

TEST_CASE("train/val manifest overlap is a config error") {
    auto dir = temp_dir();
    const auto corpus = (dir / "overlap.txt").string();
    neo::generate_corpus(corpus, 4000, 4);
    auto w = zero_model<float>(byte_model_config());
    neo::CorpusSlice train{corpus, 0, 3000, 0, -1};
    neo::CorpusSlice val{corpus, 2500, 4000, 0, -1};
    CHECK_THROWS_AS(neo::eval_lm<float>(w, nullptr, val, &train, 48, 8), neo::ConfigError);
}

TEST_CASE("evaluation is a pure function of weights and slice") {
    auto dir = temp_dir();
    const auto corpus = (dir / "pure.txt").string();
    neo::generate_corpus(corpus, 5000, 5);
    auto w = neo::init_model<float>(byte_model_config(), 17);
    neo::CorpusSlice val{corpus, 0, 5000, 0, -1};
    auto r1 = neo::eval_lm<float>(w, nullptr, val, nullptr, 48, 8);
    auto r2 = neo::eval_lm<float>(w, nullptr, val, nullptr, 48, 8);
    CHECK(r1.val_loss == r2.val_loss);
    CHECK(r1.fingerprint == r2.fingerprint);

    auto w2 = neo::init_model<float>(byte_model_config(), 18);
    auto r3 = neo::eval_lm<float>(w2, nullptr, val, nullptr, 48, 8);
    CHECK(r3.fingerprint != r1.fingerprint);
}

TEST_CASE("uniform model with a symmetric two-choice suite scores exactly one half") {
    // tie-break goes to the first choice; a suite where the answer sits at
    // index 0 exactly half the time therefore scores 0.5
    std::vector<neo::ProbeItem> items;
    for (int i = 0; i < 10; ++i) {
        neo::ProbeItem item;
        item.task = "tie";
        item.prompt = "q: ";
        item.choices = {"aa", "bb"};
        item.answer_index = i % 2;
        items.push_back(item);
    }
    auto w = zero_model<double>(byte_model_config());
    auto acc = neo::eval_probes<double>(w, nullptr, items);
    CHECK(acc.at("tie") == 0.5);
}

TEST_CASE("probe scoring matches a hand-computed ranking on a crafted model") {
    // Crafted weights: attention and mlp are zero, so the residual stream
    // is tok_emb + pos_emb and the tied head sees h with h[0] > 0 at every
    // position. Only tok_emb['a'] has a nonzero first coordinate, so the
    // logit of 'a' dominates everywhere and per-token-normalized scores
    // order choices by their count of 'a' bytes.
    auto cfg = byte_model_config();
    auto w = zero_model<double>(cfg);
    auto& tok = w.at("tok_emb");
    tok.data()[('a' * cfg.d_model) + 0] = 1.0;
    auto& pos = w.at("pos_emb");
    for (int64_t p = 0; p < cfg.max_seq_len; ++p) pos.data()[p * cfg.d_model + 0] = 1.0;
    auto& gain = w.at("final_norm.g");
    for (int64_t i = 0; i < gain.size(); ++i) gain.data()[i] = 1.0;

    neo::ProbeItem item;
    item.task = "crafted";
    item.prompt = "x";
    item.choices = {"ab", "aa", "bb"};
    item.answer_index = 1;
    auto scores = neo::score_choices<double>(w, nullptr, item);
    CHECK(scores[1] > scores[0]);
    CHECK(scores[0] > scores[2]);

    auto acc = neo::eval_probes<double>(w, nullptr, {item});
    CHECK(acc.at("crafted") == 1.0);
}

TEST_CASE("trained model beats the untrained student on the copy task") {
    auto dir = temp_dir();
    const auto mixed = (dir / "mixed.txt").string();
    const auto corpus = (dir / "train.txt").string();
    const auto probes = (dir / "probes.jsonl").string();
    neo::generate_probes(probes, 30, 7);

    // copy-heavy corpus: keep only the copy lines of a generated mix
    neo::generate_corpus(mixed, 500000, 6);
    {
        std::ifstream in(mixed);
        std::ofstream out(corpus);
        std::string line;
        int64_t written = 0;
        while (written < 108000 && std::getline(in, line)) {
            if (line.rfind("copy: ", 0) == 0) {
                out << line << "\n";
                written += static_cast<int64_t>(line.size()) + 1;
            }
        }
    }

    auto cfg = byte_model_config();
    cfg.d_model = 64;
    cfg.d_ff = 256;
    cfg.n_layers = 2;
    cfg.max_seq_len = 32;
    auto teacher = neo::init_model<float>(cfg, 20);
    neo::TrainConfig tc;
    tc.method = neo::TrainMethod::sft;
    tc.seed = 20;
    tc.lr = 3e-3;
    tc.min_lr = 1e-5;
    tc.epochs = 6;
    tc.batch_size = 16;
    tc.max_seq_len = 32;
    tc.log_every = 1000;
    const std::string text = neo::read_slice_bytes({corpus, 0, 100000, 0, -1});
    neo::run_training<float>(tc, teacher, nullptr, nullptr, text);

    auto untrained = neo::init_model<float>(cfg, 21);
    neo::CorpusSlice val{corpus, 100000, 108000, 0, -1};
    auto rep_teacher = neo::eval_lm<float>(teacher, nullptr, val, nullptr, 32, 16);
    auto rep_student = neo::eval_lm<float>(untrained, nullptr, val, nullptr, 32, 16);
    CHECK(rep_teacher.val_loss < rep_student.val_loss);

    auto items = neo::load_probes(probes);
    auto acc_teacher = neo::eval_probes<float>(teacher, nullptr, items);
    auto acc_student = neo::eval_probes<float>(untrained, nullptr, items);
    CHECK(acc_teacher.at("copy") >= acc_student.at("copy"));
    CHECK(acc_teacher.at("copy") > 0.5); // the task is genuinely learned
    CHECK(neo::probe_average(acc_teacher) >= neo::probe_average(acc_student));
}

TEST_CASE("malformed probe lines are data errors carrying the line number") {
    auto dir = temp_dir();
    const auto path = (dir / "bad.jsonl").string();
    {
        std::ofstream f(path);
        f << R"({"task":"t","prompt":"p","choices":["a","b"],"answer_index":0})" << "\n";
        f << "{broken\n";
    }
    try {
        neo::load_probes(path);
        FAIL("expected DataError");
    } catch (const neo::DataError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }

    const auto path2 = (dir / "bad2.jsonl").string();
    {
        std::ofstream f(path2);
        f << R"({"task":"t","prompt":"p","choices":["a","b"],"answer_index":5})" << "\n";
    }
    CHECK_THROWS_AS(neo::load_probes(path2), neo::DataError);
}

TEST_CASE("probe generation is deterministic and balanced across tasks") {
    auto dir = temp_dir();
    const auto p1 = (dir / "p1.jsonl").string();
    const auto p2 = (dir / "p2.jsonl").string();
    neo::generate_probes(p1, 25, 99);
    neo::generate_probes(p2, 25, 99);
    std::ifstream f1(p1), f2(p2);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(s1 == s2);

    auto items = neo::load_probes(p1);
    std::map<std::string, int> counts;
    for (const auto& item : items) {
        counts[item.task]++;
        CHECK(item.choices.size() == 4);
        // the listed answer really is among the choices and unique
        int dupes = 0;
        for (const auto& c : item.choices) {
            if (c == item.choices[static_cast<size_t>(item.answer_index)]) ++dupes;
        }
        CHECK(dupes == 1);
    }
    CHECK(counts.at("copy") == 25);
    CHECK(counts.at("reverse") == 25);
    CHECK(counts.at("modadd") == 25);
}

TEST_CASE("eval reports serialize and parse") {
    neo::EvalReport rep;
    rep.val_loss = 1.25;
    rep.perplexity = std::exp(1.25);
    rep.task_accuracy = {{"copy", 0.75}, {"modadd", 0.5}};
    rep.probe_avg = 0.625;
    rep.tokens_evaluated = 4096;
    rep.fingerprint = "deadbeefdeadbeef";
    auto text = neo::eval_report_to_json(rep);
    auto back = neo::eval_report_from_json(text);
    CHECK(back.val_loss == rep.val_loss);
    CHECK(back.task_accuracy == rep.task_accuracy);
    CHECK(back.fingerprint == rep.fingerprint);
}

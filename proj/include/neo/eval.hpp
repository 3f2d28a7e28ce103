// SPDX-License-Identifier: Apache-2.0
//
// Evaluation: teacher-forced validation loss/perplexity plus small
// deterministic multiple-choice probes. Probe scoring ranks choices by
// total continuation log-likelihood divided by the continuation's token
// count; ties resolve to the first choice.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "neo/config.hpp"
#include "neo/data.hpp"
#include "neo/distill.hpp"
#include "neo/forward.hpp"
#include "neo/trainer.hpp"

namespace neo {

struct EvalReport {
    double val_loss = 0.0;
    double perplexity = 1.0;
    std::map<std::string, double> task_accuracy;
    double probe_avg = 0.0; // mean of per-task accuracies
    int64_t tokens_evaluated = 0;
    std::string fingerprint; // model(+adapters) content hash
};

struct ProbeItem {
    std::string task;
    std::string prompt;
    std::vector<std::string> choices;
    int64_t answer_index = 0;
};

// Line-delimited JSON records; malformed lines raise a data error carrying
// the line number.
std::vector<ProbeItem> load_probes(const std::string& path);
void generate_probes(const std::string& path, int64_t per_task, uint64_t seed);

std::string eval_report_to_json(const EvalReport& rep);
EvalReport eval_report_from_json(const std::string& text);

namespace detail {

template <class S>
uint64_t adapters_fingerprint(const AdapterSet<S>* adapters) {
    if (adapters == nullptr) return 0;
    uint64_t h = fnv1a64(nullptr, 0);
    for (const auto& [site, br] : adapters->branches) {
        h = fnv1a64(site.data(), site.size(), h);
        h = fnv1a64(br.a.data(), sizeof(S) * static_cast<size_t>(br.a.size()), h);
        h = fnv1a64(br.b.data(), sizeof(S) * static_cast<size_t>(br.b.size()), h);
        if (br.has_mixer()) {
            h = fnv1a64(br.mixer.data(), sizeof(S) * static_cast<size_t>(br.mixer.size()), h);
        }
    }
    return h;
}

} // namespace detail

// Teacher-forced mean cross-entropy over a token-batch stream.
template <class S>
std::pair<double, int64_t> lm_loss_over(const ModelWeights<S>& w, const AdapterSet<S>* adapters,
                                        const std::vector<TokenBatch>& batches,
                                        int64_t max_batches = -1) {
    double total = 0.0;
    int64_t tokens = 0;
    int64_t used = 0;
    for (const auto& batch : batches) {
        if (max_batches >= 0 && used >= max_batches) break;
        ++used;
        const int64_t counted = Trainer<S>::counted_targets(batch);
        if (counted == 0) continue;
        // shift: predict column c+1 from prefix <= c
        std::vector<int32_t> inputs, targets;
        std::vector<uint8_t> tmask;
        const int64_t cols = batch.cols - 1;
        for (int64_t r = 0; r < batch.rows; ++r) {
            for (int64_t c = 0; c < cols; ++c) {
                inputs.push_back(batch.id(r, c));
                targets.push_back(batch.id(r, c + 1));
                tmask.push_back(batch.mask[static_cast<size_t>(r * batch.cols + c + 1)]);
            }
        }
        Tensor<S> logits = forward(w, std::span<const int32_t>(inputs), batch.rows, cols, adapters);
        Tensor<S> loss = ce_loss(logits, std::span<const int32_t>(targets),
                                 std::span<const uint8_t>(tmask), batch.pad_id);
        total += static_cast<double>(loss.item()) * static_cast<double>(counted);
        tokens += counted;
    }
    if (tokens == 0) throw DataError("evaluation saw no unmasked target tokens");
    return {total / static_cast<double>(tokens), tokens};
}

// Validation loss over a corpus slice. When a training slice is given, the
// two manifests must not overlap.
template <class S>
EvalReport eval_lm(const ModelWeights<S>& w, const AdapterSet<S>* adapters,
                   const CorpusSlice& val_slice, const CorpusSlice* train_slice,
                   int64_t window, int64_t batch_size, int64_t max_batches = -1) {
    if (train_slice != nullptr && slices_overlap(*train_slice, val_slice)) {
        throw ConfigError("validation slice overlaps the training slice");
    }
    BatchOptions bo;
    bo.window = window;
    bo.batch_size = batch_size;
    bo.seed = 0; // fixed order; the mean is order-independent anyway
    const std::string text = read_slice_bytes(val_slice);
    const auto batches = make_batches(text, bo);
    auto [loss, tokens] = lm_loss_over(w, adapters, batches, max_batches);

    EvalReport rep;
    rep.val_loss = loss;
    rep.perplexity = std::exp(loss);
    rep.tokens_evaluated = tokens;
    rep.fingerprint = hex64(weights_fingerprint(w) ^ detail::adapters_fingerprint(adapters));
    return rep;
}

// Length-normalized log-likelihood of each choice as a continuation of the
// prompt; all of an item's choices run as one padded batch.
template <class S>
std::vector<double> score_choices(const ModelWeights<S>& w, const AdapterSet<S>* adapters,
                                  const ProbeItem& item) {
    const int64_t n = static_cast<int64_t>(item.choices.size());
    std::vector<std::vector<int32_t>> seqs;
    int64_t max_len = 0;
    for (const auto& choice : item.choices) {
        std::vector<int32_t> seq;
        seq.push_back(kBosId);
        for (unsigned char c : item.prompt) seq.push_back(static_cast<int32_t>(c));
        for (unsigned char c : choice) seq.push_back(static_cast<int32_t>(c));
        max_len = std::max(max_len, static_cast<int64_t>(seq.size()));
        seqs.push_back(std::move(seq));
    }
    std::vector<int32_t> grid(static_cast<size_t>(n * max_len), kPadId);
    for (int64_t i = 0; i < n; ++i) {
        std::copy(seqs[static_cast<size_t>(i)].begin(), seqs[static_cast<size_t>(i)].end(),
                  grid.begin() + i * max_len);
    }
    Tensor<S> logits = forward(w, std::span<const int32_t>(grid), n, max_len, adapters);
    Tensor<S> lp = log_softmax(logits); // [n, max_len, V]

    const int64_t v = w.config.vocab_size;
    const int64_t prompt_len = 1 + static_cast<int64_t>(item.prompt.size()); // bos + prompt bytes
    std::vector<double> scores(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const int64_t choice_len = static_cast<int64_t>(item.choices[static_cast<size_t>(i)].size());
        double total = 0.0;
        for (int64_t t = 0; t < choice_len; ++t) {
            const int64_t pos = prompt_len + t;          // position of the choice token
            const int32_t tok = seqs[static_cast<size_t>(i)][static_cast<size_t>(pos)];
            // logits at pos-1 predict the token at pos
            total += static_cast<double>(
                lp.data()[(i * max_len + pos - 1) * v + tok]);
        }
        scores[static_cast<size_t>(i)] =
            choice_len > 0 ? total / static_cast<double>(choice_len) : 0.0;
    }
    return scores;
}

template <class S>
std::map<std::string, double> eval_probes(const ModelWeights<S>& w, const AdapterSet<S>* adapters,
                                          const std::vector<ProbeItem>& items) {
    std::map<std::string, std::pair<int64_t, int64_t>> hits; // task -> (correct, total)
    for (const auto& item : items) {
        const auto scores = score_choices(w, adapters, item);
        int64_t best = 0;
        for (int64_t i = 1; i < static_cast<int64_t>(scores.size()); ++i) {
            if (scores[static_cast<size_t>(i)] > scores[static_cast<size_t>(best)]) best = i;
        }
        auto& [correct, total] = hits[item.task];
        correct += (best == item.answer_index) ? 1 : 0;
        total += 1;
    }
    std::map<std::string, double> acc;
    for (const auto& [task, ct] : hits) {
        acc[task] = static_cast<double>(ct.first) / static_cast<double>(ct.second);
    }
    return acc;
}

inline double probe_average(const std::map<std::string, double>& acc) {
    if (acc.empty()) return 0.0;
    double total = 0;
    for (const auto& [task, a] : acc) total += a;
    return total / static_cast<double>(acc.size());
}

} // namespace neo

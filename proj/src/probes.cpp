// SPDX-License-Identifier: Apache-2.0
#include "neo/eval.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "json.hpp"

#include "neo/rng.hpp"

namespace neo {

using nlohmann::json;

std::vector<ProbeItem> load_probes(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("probe suite not found: " + path);
    std::vector<ProbeItem> items;
    std::string line;
    int64_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
            ProbeItem item;
            item.task = j.at("task").get<std::string>();
            item.prompt = j.at("prompt").get<std::string>();
            item.choices = j.at("choices").get<std::vector<std::string>>();
            item.answer_index = j.at("answer_index").get<int64_t>();
            if (item.choices.empty() || item.answer_index < 0 ||
                item.answer_index >= static_cast<int64_t>(item.choices.size())) {
                throw DataError("answer_index out of range");
            }
            items.push_back(std::move(item));
        } catch (const std::exception& e) {
            throw DataError("malformed probe record at line " + std::to_string(line_no) + ": " +
                            e.what());
        }
    }
    if (items.empty()) throw DataError("probe suite is empty: " + path);
    return items;
}

namespace {

std::string random_word(Rng& rng, int64_t len) {
    std::string w(static_cast<size_t>(len), 'a');
    for (auto& c : w) c = static_cast<char>('a' + rng.below(26));
    return w;
}

// A corrupted copy of `w` that is guaranteed to differ.
std::string corrupt(Rng& rng, const std::string& w) {
    std::string out = w;
    const size_t i = static_cast<size_t>(rng.below(out.size()));
    const char orig = out[i];
    do {
        out[i] = static_cast<char>('a' + rng.below(26));
    } while (out[i] == orig);
    return out;
}

ProbeItem finish_item(Rng& rng, std::string task, std::string prompt, std::string answer,
                      std::set<std::string> distractors) {
    distractors.erase(answer);
    while (distractors.size() < 3) distractors.insert(corrupt(rng, answer)); // dedup top-up
    std::vector<std::string> choices(distractors.begin(), distractors.end());
    while (choices.size() > 3) choices.pop_back();
    choices.push_back(answer);
    rng.shuffle(choices);
    ProbeItem item;
    item.task = std::move(task);
    item.prompt = std::move(prompt);
    item.answer_index = static_cast<int64_t>(
        std::find(choices.begin(), choices.end(), answer) - choices.begin());
    item.choices = std::move(choices);
    return item;
}

} // namespace

void generate_probes(const std::string& path, int64_t per_task, uint64_t seed) {
    if (per_task < 1) throw ConfigError("probe count per task must be >= 1");
    Rng rng(seed);
    std::vector<ProbeItem> items;
    for (int64_t i = 0; i < per_task; ++i) {
        const std::string w = random_word(rng, 4 + static_cast<int64_t>(rng.below(3)));
        items.push_back(finish_item(
            rng, "copy", "copy: " + w + " -> ", w,
            {corrupt(rng, w), std::string(w.rbegin(), w.rend()), corrupt(rng, corrupt(rng, w))}));
    }
    for (int64_t i = 0; i < per_task; ++i) {
        const std::string w = random_word(rng, 4 + static_cast<int64_t>(rng.below(3)));
        const std::string r(w.rbegin(), w.rend());
        items.push_back(finish_item(rng, "reverse", "rev: " + w + " -> ", r,
                                    {w, corrupt(rng, r), corrupt(rng, corrupt(rng, r))}));
    }
    for (int64_t i = 0; i < per_task; ++i) {
        const int a = static_cast<int>(rng.below(10));
        const int b = static_cast<int>(rng.below(10));
        const int c = (a + b) % 10;
        std::set<std::string> wrong;
        while (wrong.size() < 3) {
            const int d = static_cast<int>(rng.below(10));
            if (d != c) wrong.insert(std::to_string(d));
        }
        items.push_back(finish_item(rng, "modadd",
                                    "add: " + std::to_string(a) + "+" + std::to_string(b) + "=",
                                    std::to_string(c), wrong));
    }

    std::ofstream f(path);
    if (!f) throw DataError("cannot write probe suite: " + path);
    for (const auto& item : items) {
        f << json{{"task", item.task},
                  {"prompt", item.prompt},
                  {"choices", item.choices},
                  {"answer_index", item.answer_index}}
                 .dump()
          << "\n";
    }
}

std::string eval_report_to_json(const EvalReport& rep) {
    return json{{"val_loss", rep.val_loss},
                {"perplexity", rep.perplexity},
                {"task_accuracy", rep.task_accuracy},
                {"probe_avg", rep.probe_avg},
                {"tokens_evaluated", rep.tokens_evaluated},
                {"fingerprint", rep.fingerprint}}
        .dump(2);
}

EvalReport eval_report_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed eval report: ") + e.what());
    }
    EvalReport rep;
    rep.val_loss = j.at("val_loss").get<double>();
    rep.perplexity = j.at("perplexity").get<double>();
    rep.task_accuracy = j.at("task_accuracy").get<std::map<std::string, double>>();
    rep.probe_avg = j.at("probe_avg").get<double>();
    rep.tokens_evaluated = j.at("tokens_evaluated").get<int64_t>();
    rep.fingerprint = j.at("fingerprint").get<std::string>();
    return rep;
}

} // namespace neo

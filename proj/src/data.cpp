// SPDX-License-Identifier: Apache-2.0
#include "neo/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "neo/errors.hpp"
#include "neo/rng.hpp"

namespace neo {

std::vector<int32_t> tokenize(std::string_view text) {
    std::vector<int32_t> ids;
    ids.reserve(text.size() + 2);
    ids.push_back(kBosId);
    for (unsigned char c : text) ids.push_back(static_cast<int32_t>(c));
    ids.push_back(kEosId);
    return ids;
}

std::string detokenize(const std::vector<int32_t>& ids) {
    std::string out;
    out.reserve(ids.size());
    for (int32_t id : ids) {
        if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
    }
    return out;
}

CorpusSlice prefix_slice(const std::string& source, int64_t bytes, uint64_t seed) {
    if (bytes <= 0) throw ConfigError("slice size must be positive, got " + std::to_string(bytes));
    CorpusSlice s;
    s.source = source;
    s.byte_start = 0;
    s.byte_end = bytes;
    s.seed = seed;
    return s;
}

void save_manifest(const CorpusSlice& slice, const std::string& path) {
    nlohmann::json j{{"source", slice.source},
                     {"byte_start", slice.byte_start},
                     {"byte_end", slice.byte_end},
                     {"seed", slice.seed},
                     {"token_count", slice.token_count}};
    std::ofstream f(path);
    if (!f) throw DataError("cannot write manifest: " + path);
    f << j.dump(2) << "\n";
}

CorpusSlice load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read manifest: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest " + path + ": " + e.what());
    }
    CorpusSlice s;
    s.source = j.at("source").get<std::string>();
    s.byte_start = j.at("byte_start").get<int64_t>();
    s.byte_end = j.at("byte_end").get<int64_t>();
    s.seed = j.at("seed").get<uint64_t>();
    s.token_count = j.value("token_count", int64_t(-1));
    return s;
}

bool slices_overlap(const CorpusSlice& a, const CorpusSlice& b) {
    if (std::filesystem::weakly_canonical(a.source) != std::filesystem::weakly_canonical(b.source)) {
        return false;
    }
    return a.byte_start < b.byte_end && b.byte_start < a.byte_end;
}

std::string read_slice_bytes(const CorpusSlice& slice) {
    if (slice.byte_start < 0 || slice.byte_end < slice.byte_start) {
        throw DataError("invalid slice range [" + std::to_string(slice.byte_start) + ", " +
                        std::to_string(slice.byte_end) + ") for " + slice.source);
    }
    std::ifstream f(slice.source, std::ios::binary);
    if (!f) throw DataError("corpus file not found: " + slice.source);
    f.seekg(0, std::ios::end);
    const int64_t size = static_cast<int64_t>(f.tellg());
    if (slice.byte_end > size) {
        throw DataError("slice [" + std::to_string(slice.byte_start) + ", " +
                        std::to_string(slice.byte_end) + ") exceeds size of " + slice.source +
                        " (" + std::to_string(size) + " bytes)");
    }
    f.seekg(slice.byte_start);
    std::string out(static_cast<size_t>(slice.byte_end - slice.byte_start), '\0');
    f.read(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("short read from " + slice.source);
    return out;
}

namespace {

std::vector<std::string_view> split_documents(std::string_view text) {
    std::vector<std::string_view> docs;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) {
            docs.push_back(text.substr(pos));
            break;
        }
        docs.push_back(text.substr(pos, nl - pos + 1)); // newline stays with the document
        pos = nl + 1;
    }
    return docs;
}

struct TokenStream {
    std::vector<int32_t> ids;
    std::vector<uint8_t> loss_ok;
};

// Tokenizes one document; with prompt masking, everything up to and
// including a " -> " separator does not count toward the loss.
void append_document(TokenStream& out, std::string_view doc, bool mask_prompt) {
    size_t prompt_end = 0; // byte index one past the separator
    if (mask_prompt) {
        const size_t sep = doc.find(" -> ");
        if (sep != std::string_view::npos) prompt_end = sep + 4;
    }
    out.ids.push_back(kBosId);
    out.loss_ok.push_back(prompt_end == 0 ? 1 : 0);
    for (size_t i = 0; i < doc.size(); ++i) {
        out.ids.push_back(static_cast<int32_t>(static_cast<unsigned char>(doc[i])));
        out.loss_ok.push_back(i < prompt_end ? 0 : 1);
    }
    out.ids.push_back(kEosId);
    out.loss_ok.push_back(1);
}

struct Window {
    std::vector<int32_t> ids;
    std::vector<uint8_t> mask;
};

std::vector<Window> build_windows(std::string_view text, const BatchOptions& opts) {
    const auto docs = split_documents(text);
    std::vector<Window> windows;
    auto flush_stream = [&](const TokenStream& s) {
        for (size_t off = 0; off < s.ids.size(); off += static_cast<size_t>(opts.window)) {
            Window w;
            w.ids.assign(static_cast<size_t>(opts.window), kPadId);
            w.mask.assign(static_cast<size_t>(opts.window), 0);
            const size_t n = std::min(static_cast<size_t>(opts.window), s.ids.size() - off);
            for (size_t i = 0; i < n; ++i) {
                w.ids[i] = s.ids[off + i];
                w.mask[i] = s.loss_ok[off + i];
            }
            windows.push_back(std::move(w));
        }
    };
    if (opts.pack) {
        TokenStream stream;
        for (const auto& d : docs) append_document(stream, d, opts.mask_prompt);
        flush_stream(stream);
    } else {
        for (const auto& d : docs) {
            TokenStream stream;
            append_document(stream, d, opts.mask_prompt);
            flush_stream(stream);
        }
    }
    return windows;
}

} // namespace

std::vector<TokenBatch> make_batches(std::string_view text, const BatchOptions& opts) {
    if (text.empty()) throw DataError("empty corpus slice");
    if (opts.window < 2 || opts.batch_size < 1) {
        throw ConfigError("batch options need window >= 2 and batch_size >= 1");
    }
    std::vector<Window> windows = build_windows(text, opts);

    std::vector<size_t> order(windows.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(opts.seed);
    rng.shuffle(order);

    std::vector<TokenBatch> batches;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(opts.batch_size)) {
        const size_t n = std::min(static_cast<size_t>(opts.batch_size), order.size() - start);
        TokenBatch b;
        b.rows = static_cast<int64_t>(n);
        b.cols = opts.window;
        b.ids.reserve(n * static_cast<size_t>(opts.window));
        b.mask.reserve(n * static_cast<size_t>(opts.window));
        for (size_t r = 0; r < n; ++r) {
            const Window& w = windows[order[start + r]];
            b.ids.insert(b.ids.end(), w.ids.begin(), w.ids.end());
            b.mask.insert(b.mask.end(), w.mask.begin(), w.mask.end());
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

int64_t stream_token_count(std::string_view text, bool pack) {
    const auto docs = split_documents(text);
    int64_t total = 0;
    for (const auto& d : docs) total += static_cast<int64_t>(d.size()) + 2; // bos + bytes + eos
    (void)pack; // packing changes window layout, not the token count
    return total;
}

// ---------------------------------------------------------------------------
// synthetic corpus

namespace {

const char* kSubjects[] = {"the cat", "a dog",   "the bird", "my friend", "the girl",
                           "a boy",   "the fox", "the cook", "her sister", "the old man"};
const char* kVerbs[] = {"sees", "likes", "finds", "takes", "makes", "holds", "wants", "buys"};
const char* kObjects[] = {"the ball", "a book",  "the cup",  "an apple", "the hat",
                          "a stone",  "the key", "the lamp", "a shell",  "the coin"};

std::string random_word(Rng& rng) {
    const int len = 3 + static_cast<int>(rng.below(4)); // 3..6
    std::string w(static_cast<size_t>(len), 'a');
    for (auto& c : w) c = static_cast<char>('a' + rng.below(26));
    return w;
}

std::string make_line(Rng& rng) {
    switch (rng.below(4)) {
        case 0: {
            const std::string w = random_word(rng);
            return "copy: " + w + " -> " + w + "\n";
        }
        case 1: {
            const std::string w = random_word(rng);
            return "rev: " + w + " -> " + std::string(w.rbegin(), w.rend()) + "\n";
        }
        case 2: {
            const int a = static_cast<int>(rng.below(10));
            const int b = static_cast<int>(rng.below(10));
            return "add: " + std::to_string(a) + "+" + std::to_string(b) + "=" +
                   std::to_string((a + b) % 10) + "\n";
        }
        default: {
            std::string s(kSubjects[rng.below(std::size(kSubjects))]);
            s += " ";
            s += kVerbs[rng.below(std::size(kVerbs))];
            s += " ";
            s += kObjects[rng.below(std::size(kObjects))];
            s += ".\n";
            return s;
        }
    }
}

} // namespace

void generate_corpus(const std::string& path, int64_t bytes, uint64_t seed) {
    if (bytes <= 0) throw ConfigError("corpus size must be positive");
    std::string out;
    out.reserve(static_cast<size_t>(bytes) + 64);
    Rng rng(seed);
    while (static_cast<int64_t>(out.size()) < bytes) out += make_line(rng);
    out.resize(static_cast<size_t>(bytes));
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write corpus: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

} // namespace neo

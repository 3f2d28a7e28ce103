// SPDX-License-Identifier: Apache-2.0
//
// Corpus ingestion: byte-level tokenization, slice manifests, window
// packing and batching. Token ids are raw byte values 0..255 plus three
// specials, so any teacher/student pair shares a vocabulary by construction.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace neo {

constexpr int32_t kPadId = 256;
constexpr int32_t kBosId = 257;
constexpr int32_t kEosId = 258;
constexpr int32_t kVocabSize = 259;

// [bos, byte..., eos]; reversible via detokenize.
std::vector<int32_t> tokenize(std::string_view text);
std::string detokenize(const std::vector<int32_t>& ids);

struct TokenBatch {
    int64_t rows = 0; // sequences
    int64_t cols = 0; // tokens per sequence
    std::vector<int32_t> ids;  // rows*cols
    std::vector<uint8_t> mask; // 1 where the token counts toward the loss
    int32_t pad_id = kPadId;

    int32_t id(int64_t r, int64_t c) const { return ids[static_cast<size_t>(r * cols + c)]; }
    bool masked_in(int64_t r, int64_t c) const { return mask[static_cast<size_t>(r * cols + c)] != 0; }
};

// A contiguous byte range of a source file. Slices of increasing size taken
// from the same source share their prefix bytes, which is what the data
// scaling study relies on.
struct CorpusSlice {
    std::string source;
    int64_t byte_start = 0;
    int64_t byte_end = 0; // exclusive
    uint64_t seed = 0;
    int64_t token_count = -1; // filled after tokenization; -1 = unknown
};

CorpusSlice prefix_slice(const std::string& source, int64_t bytes, uint64_t seed);
void save_manifest(const CorpusSlice& slice, const std::string& path);
CorpusSlice load_manifest(const std::string& path);
bool slices_overlap(const CorpusSlice& a, const CorpusSlice& b);

// Reads the slice's byte range; DataError if the file is missing or shorter
// than the requested range.
std::string read_slice_bytes(const CorpusSlice& slice);

struct BatchOptions {
    int64_t window = 128;     // tokens per sequence
    int64_t batch_size = 8;   // sequences per batch
    uint64_t seed = 0;        // window-order shuffle
    bool pack = true;         // pack documents into a single eos-separated stream
    bool mask_prompt = false; // zero the loss mask on "... -> " prompt prefixes
};

// Documents are newline-terminated lines. With pack=true the token streams
// are concatenated and chopped into fixed windows; otherwise each document
// is windowed on its own. The final partial window is padded and the order
// of whole windows is shuffled by seed.
std::vector<TokenBatch> make_batches(std::string_view text, const BatchOptions& opts);

// Total stream tokens for the text under the same document/packing rules
// (equals the number of mask=1 positions across an epoch when prompt
// masking is off).
int64_t stream_token_count(std::string_view text, bool pack);

// Deterministic synthetic corpus: a mix of copy / reverse / modular
// addition lines and filler prose, truncated to exactly `bytes` bytes.
void generate_corpus(const std::string& path, int64_t bytes, uint64_t seed);

} // namespace neo

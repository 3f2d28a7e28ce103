// SPDX-License-Identifier: Apache-2.0
#include "neo/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "neo/hash.hpp"

namespace neo {

namespace {

constexpr char kMagic[8] = {'N', 'E', 'O', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::string& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& b, uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Cursor {
    const std::string& buf;
    size_t pos = 0;
    const std::string& path;

    void need(size_t n) const {
        if (n > buf.size() || pos > buf.size() - n) {
            throw DataError("truncated checkpoint: " + path);
        }
    }
    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(buf[pos++]);
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    std::string bytes(uint64_t n) {
        need(n);
        std::string out = buf.substr(pos, n);
        pos += n;
        return out;
    }
};

} // namespace

void save_checkpoint_file(const std::string& path, const CheckpointFile& ckpt) {
    std::vector<const NamedTensorData*> ordered;
    ordered.reserve(ckpt.tensors.size());
    for (const auto& t : ckpt.tensors) ordered.push_back(&t);
    std::sort(ordered.begin(), ordered.end(),
              [](const NamedTensorData* a, const NamedTensorData* b) { return a->name < b->name; });

    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    put_u32(buf, ckpt.version);
    put_u64(buf, ckpt.config_json.size());
    buf.append(ckpt.config_json);
    put_u64(buf, ordered.size());
    for (const NamedTensorData* t : ordered) {
        put_u64(buf, t->name.size());
        buf.append(t->name);
        buf.push_back(static_cast<char>(t->dtype));
        put_u32(buf, static_cast<uint32_t>(t->shape.size()));
        for (int64_t d : t->shape) put_u64(buf, static_cast<uint64_t>(d));
        put_u64(buf, t->bytes.size());
        buf.append(t->bytes);
    }
    put_u32(buf, crc32(buf.data(), buf.size()));

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write checkpoint: " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw DataError("short write to checkpoint: " + path);
}

CheckpointFile load_checkpoint_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint not found: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof(kMagic) + 8) throw DataError("truncated checkpoint: " + path);
    if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
        throw DataError("not a checkpoint file: " + path);
    }
    uint32_t file_crc = 0;
    for (int i = 0; i < 4; ++i) {
        file_crc |= static_cast<uint32_t>(static_cast<uint8_t>(buf[buf.size() - 4 + static_cast<size_t>(i)]))
                    << (8 * i);
    }
    const uint32_t computed = crc32(buf.data(), buf.size() - 4);
    if (file_crc != computed) {
        throw DataError("checkpoint checksum mismatch: " + path);
    }

    Cursor c{buf, sizeof(kMagic), path};
    CheckpointFile ckpt;
    ckpt.version = c.u32();
    if (ckpt.version != 1) {
        throw DataError("unsupported checkpoint version " + std::to_string(ckpt.version));
    }
    ckpt.config_json = c.bytes(c.u64());
    const uint64_t count = c.u64();
    for (uint64_t i = 0; i < count; ++i) {
        NamedTensorData t;
        t.name = c.bytes(c.u64());
        t.dtype = c.u8();
        const uint32_t ndim = c.u32();
        for (uint32_t d = 0; d < ndim; ++d) t.shape.push_back(static_cast<int64_t>(c.u64()));
        t.bytes = c.bytes(c.u64());
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

} // namespace neo

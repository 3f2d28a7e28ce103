// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstddef>
#include <string>

namespace neo {

// FNV-1a 64-bit, used for config fingerprints and run identifiers.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(uint64_t v);

// CRC-32 (IEEE 802.3 polynomial), used as the checkpoint content checksum.
uint32_t crc32(const void* data, size_t len, uint32_t crc = 0);

} // namespace neo

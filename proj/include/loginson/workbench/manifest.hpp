#pragma once

#include <cstring>

#include <cstdint>
#include <string>
#include <string_view>

namespace loginson::workbench {

/// 64-bit hash that consumes eight bytes per step; stable across runs and
/// platforms of the same endianness.
inline std::uint64_t hash_bytes(std::string_view data, std::uint64_t seed) noexcept {
    constexpr std::uint64_t k1 = 0x9e3779b97f4a7c15ull;
    constexpr std::uint64_t k2 = 0xbf58476d1ce4e5b9ull;
    std::uint64_t h = seed ^ (data.size() * k1);
    const char* p = data.data();
    std::size_t n = data.size();
    for (; n >= 8; p += 8, n -= 8) {
        std::uint64_t w;
        std::memcpy(&w, p, 8);
        w *= k2;
        w ^= w >> 29;
        h = (h ^ w) * k1;
        h ^= h >> 32;
    }
    if (n > 0) {
        std::uint64_t w = 0;
        std::memcpy(&w, p, n);
        w *= k2;
        w ^= w >> 29;
        h = (h ^ w) * k1;
    }
    h ^= h >> 30;
    h *= k2;
    h ^= h >> 27;
    h *= 0x94d049bb133111ebull;
    h ^= h >> 31;
    return h;
}

std::uint64_t line_hash(std::string_view line) noexcept;

/// Order-independent multiset digest of lines: count, wrapping sum and xor
/// of per-line 64-bit hashes. Digests of disjoint shards combine with merge().
struct Manifest {
    std::uint64_t count = 0;
    std::uint64_t sum = 0;
    std::uint64_t xor_ = 0;
    std::uint64_t bytes = 0;

    void add(std::string_view line) noexcept {
        const std::uint64_t h = line_hash(line);
        ++count;
        sum += h;
        xor_ ^= h;
        bytes += line.size();
    }
    void merge(const Manifest& o) noexcept {
        count += o.count;
        sum += o.sum;
        xor_ ^= o.xor_;
        bytes += o.bytes;
    }
    std::string to_string() const;
    friend bool operator==(const Manifest&, const Manifest&) = default;
};

} // namespace loginson::workbench

#pragma once

#include <cstddef>
#include <cstdint>

namespace patchsmooth {

// splitmix64 finalizer; used to derive independent seed streams from a base
// seed plus small indices (cell, example, copy, ...).
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    return mix64(a ^ mix64(b));
}

constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix64(mix64(a, b), c);
}

// FNV-1a over raw bytes.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 14695981039346656037ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

// ceil(fraction * total), with products within 1e-9 of an integer treated as
// that integer so that e.g. fraction=0.1, total=30 yields 3, not 4.
std::int64_t ceil_count(double fraction, std::int64_t total);

}  // namespace patchsmooth

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedshare {

// splitmix64 finalizer; good avalanche, cheap.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive an independent stream seed from a base seed and a path of tags,
// e.g. derive_seed(seed, {round, client}). Same inputs, same output, so every
// consumer of randomness is reproducible and order-independent.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = mix64(base ^ 0x243f6a8885a308d3ULL);
    for (std::uint64_t tag : path) {
        h = mix64(h ^ mix64(tag + 0x452821e638d01377ULL));
    }
    return h;
}

inline std::mt19937_64 make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> path = {}) {
    return std::mt19937_64(derive_seed(base, path));
}

} // namespace fedshare

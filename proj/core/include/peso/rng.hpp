#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace peso {

// Stable 64-bit string hash (FNV-1a). Used for seed derivation and config
// hashes; must not depend on std::hash, which varies across standard
// libraries.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Derives an independent stream seed from (master seed, stage, purpose tag).
// Every source of randomness in a run is a fresh engine seeded this way, so
// resuming from a checkpoint replays the exact same streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stage, std::string_view tag) {
    return splitmix64(master ^ splitmix64(stage * 0x9e3779b97f4a7c15ull) ^ fnv1a64(tag));
}

inline std::mt19937_64 make_engine(std::uint64_t master, std::uint64_t stage, std::string_view tag) {
    return std::mt19937_64(derive_seed(master, stage, tag));
}

}  // namespace peso

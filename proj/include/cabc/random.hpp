#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace cabc {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Order-sensitive hash of a seed with stream identifiers (episode, epoch, ...).
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
    std::uint64_t h = splitmix64(seed);
    for (auto id : ids) h = splitmix64(h ^ (id + 0x632be59bd9b4e019ULL));
    return h;
}

}  // namespace cabc

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace iss {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent stream seeds from a
// master seed and a path of counters.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Seed for the stream addressed by `path` under `master`. Distinct paths
/// give statistically independent streams regardless of evaluation order.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = mix64(master);
    for (std::uint64_t p : path) s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ULL));
    return s;
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

// Strictly inside (0,1); used where log(U) is taken.
inline double uniform_open(Rng& rng) {
    double u;
    do {
        u = uniform01(rng);
    } while (u <= 0.0);
    return u;
}

inline double std_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

}  // namespace iss

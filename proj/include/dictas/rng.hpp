#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dictas {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Counter-based seed derivation: every consumer of randomness gets
/// mix64(mix64(master ^ fnv1a(stream)) + index), so sample i of stream "synthesis"
/// never depends on how many numbers another stream drew.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                                    std::uint64_t index = 0) {
    return mix64(mix64(master ^ fnv1a(stream)) + index);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t master, std::string_view stream, std::uint64_t index = 0) {
    return Rng(derive_seed(master, stream, index));
}

/// Uniform double in [lo, hi) from the top 53 bits; does not depend on the
/// standard library's distribution implementation.
inline double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

/// Uniform integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform(rng) * static_cast<double>(n)) % n;
}

inline bool bernoulli(Rng& rng, double p) { return uniform(rng) < p; }

/// Standard normal via Box-Muller.
double standard_normal(Rng& rng);

} // namespace dictas

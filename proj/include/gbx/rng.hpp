#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace gbx {

// std::mt19937_64's output sequence is pinned by the standard, so raw draws
// are reproducible everywhere. The helpers below replace the std::*
// distributions, whose output is implementation-defined.
using Rng = std::mt19937_64;

/// splitmix64 step; used to derive independent stream seeds from one seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform_unit(Rng& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform_in(Rng& g, double lo, double hi) {
    return lo + (hi - lo) * uniform_unit(g);
}

/// Unbiased uniform integer in [0, bound) via rejection.
inline std::uint64_t uniform_below(Rng& g, std::uint64_t bound) {
    if (bound <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
        x = g();
    } while (x >= limit);
    return x % bound;
}

/// Inclusive integer range.
inline long long uniform_int_in(Rng& g, long long lo, long long hi) {
    return lo + static_cast<long long>(uniform_below(g, static_cast<std::uint64_t>(hi - lo + 1)));
}

/// Fisher-Yates with pinned draw order.
template <typename T>
void shuffle_in_place(std::vector<T>& v, Rng& g) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(uniform_below(g, i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace gbx

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace bft {

// splitmix64 finalizer; also used to derive role-specific sub-seeds.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t sub_seed(uint64_t seed, uint64_t tag) { return mix64(seed ^ mix64(tag + 1)); }

// Deterministic generator with no dependence on library distribution
// internals, so seeded draws are reproducible across toolchains.
struct Rng {
    uint64_t state;
    bool has_spare = false;
    double spare = 0.0;

    explicit Rng(uint64_t seed) : state(seed) {}

    uint64_t next_u64() {
        state += 0x9e3779b97f4a7c15ull;
        uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, n), unbiased via rejection
    uint64_t uniform_below(uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_below: n == 0");
        uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // uniform in [0,1)
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // standard normal, Box-Muller
    double normal() {
        if (has_spare) {
            has_spare = false;
            return spare;
        }
        double u1 = 0.0;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare = r * std::sin(a);
        has_spare = true;
        return r * std::cos(a);
    }
};

// First n positions of a seeded Fisher-Yates shuffle of 0..pool-1.
inline std::vector<int> sample_without_replacement(int pool, int n, Rng& rng) {
    if (n < 0 || n > pool) throw std::invalid_argument("sample: n out of range");
    std::vector<int> idx(static_cast<size_t>(pool));
    for (int i = 0; i < pool; ++i) idx[static_cast<size_t>(i)] = i;
    for (int i = 0; i < n; ++i) {
        int j = i + static_cast<int>(rng.uniform_below(static_cast<uint64_t>(pool - i)));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(n));
    return idx;
}

inline std::vector<int> random_permutation(int n, Rng& rng) {
    return sample_without_replacement(n, n, rng);
}

// Uniform permutation with no fixed point (rejection-sampled). Used where a
// shuffle must move every element; n < 2 has no derangement and returns the
// identity.
inline std::vector<int> random_derangement(int n, Rng& rng) {
    std::vector<int> perm = random_permutation(n, rng);
    if (n < 2) return perm;
    for (;;) {
        bool fixed_point = false;
        for (int i = 0; i < n; ++i)
            if (perm[static_cast<size_t>(i)] == i) {
                fixed_point = true;
                break;
            }
        if (!fixed_point) return perm;
        perm = random_permutation(n, rng);
    }
}

}  // namespace bft

#pragma once

#include <cstdint>
#include <vector>

namespace gssd {

// SplitMix64 (Steele, Lea, Flood 2014). This is the project's only source of
// randomness; the exact recurrence is documented in README.md so that any
// implementation can reproduce shuffles, initializations and synthetic data
// bit for bit.
struct SplitMix64 {
    uint64_t state = 0;

    explicit SplitMix64(uint64_t seed) : state(seed) {}

    uint64_t next() {
        state += 0x9E3779B97F4A7C15ull;
        uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform in [-limit, limit).
    double next_symmetric(double limit) { return (2.0 * next_unit() - 1.0) * limit; }

    // Uniform in [0, bound). Plain modulo reduction: the bias is irrelevant
    // here, reproducibility is not.
    uint64_t next_below(uint64_t bound) { return next() % bound; }
};

// Stream seed for (seed, epoch) pairs; epoch -1 is the initialization stream.
inline uint64_t stream_seed(uint64_t seed, int64_t epoch) {
    return seed + 0x9E3779B97F4A7C15ull * static_cast<uint64_t>(epoch + 1);
}

// Fisher-Yates shuffle of [0, n) driven by SplitMix64(stream_seed(seed, epoch)).
inline std::vector<int64_t> seeded_permutation(int64_t n, uint64_t seed, int64_t epoch) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    SplitMix64 rng(stream_seed(seed, epoch));
    for (int64_t i = n - 1; i >= 1; --i) {
        int64_t j = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(i + 1)));
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    return order;
}

}  // namespace gssd

#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace seapo {

// Deterministic PRNG (xoshiro256** seeded via splitmix64). The generator,
// bounded draws, and shuffle are all implemented here so seeded pipelines
// produce identical streams on every platform and standard-library version.
class Rng {
public:
    explicit Rng(uint64_t seed);

    // Derives an independent stream for a named purpose from the same seed,
    // so e.g. sampling and shuffling cannot collide.
    Rng(uint64_t seed, std::string_view stream);

    uint64_t next_u64();

    // Unbiased draw in [0, n) by rejection. n must be > 0.
    uint64_t bounded(uint64_t n);

    // Uniform double in [lo, hi) with 53-bit resolution.
    double uniform(double lo, double hi);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_[4];
};

// FNV-1a 64-bit over bytes; used for content-addressed record ids and
// stream derivation.
uint64_t fnv1a64(std::string_view bytes);

// Lowercase hex rendering of a 64-bit hash (16 chars).
std::string hex64(uint64_t value);

} // namespace seapo

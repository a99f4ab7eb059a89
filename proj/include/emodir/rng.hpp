#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace emodir {

// splitmix64 finalizer; the workhorse behind every hash and stream here.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
    return mix64(a ^ (mix64(b) + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

// Seeded FNV-1a over raw bytes.
inline uint64_t hash_bytes(const void* data, size_t n, uint64_t seed = 0) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 1469598103934665603ULL ^ mix64(seed);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return mix64(h);
}

inline uint64_t hash_str(std::string_view s, uint64_t seed = 0) {
    return hash_bytes(s.data(), s.size(), seed);
}

// Deterministic splitmix64 stream. All randomness in the project flows
// through this type so results are reproducible across runs and platforms
// (no implementation-defined std:: distributions).
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), state_(mix64(seed ^ 0x2545f4914f6cdd1dULL)) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n) via rejection.
    uint64_t below(uint64_t n) {
        if (n == 0) return 0;
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    // Inclusive range.
    int uniform_int(int lo, int hi) { return lo + int(below(uint64_t(hi - lo + 1))); }

    // Standard normal, Box-Muller (one value per call, no cached state).
    double normal() {
        double u1 = double((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Independent stream derived from the original seed, not the consumed
    // state, so forks are stable no matter how much the parent has drawn.
    Rng fork(uint64_t stream) const { return Rng(hash_combine(seed_, stream)); }

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    uint64_t state_;
};

}  // namespace emodir

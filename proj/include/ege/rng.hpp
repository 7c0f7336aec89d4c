#pragma once

// Seedable, reproducible random number generation. Every stochastic piece of
// the project draws from an explicitly owned generator so that runs are
// bit-reproducible across platforms; nothing uses std:: distributions (their
// output is implementation-defined).

#include <cstdint>
#include <vector>

namespace ege {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256** by Blackman & Vigna, seeded through splitmix64.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) {
        uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64(sm);
    }

    // Independent stream keyed by (seed, a, b), e.g. (run seed, epoch, sample).
    static Rng stream(uint64_t seed, uint64_t a, uint64_t b = 0) {
        uint64_t sm = seed;
        uint64_t h = splitmix64(sm);
        sm ^= a * 0x9e3779b97f4a7c15ULL;
        h ^= splitmix64(sm);
        sm ^= b * 0xd1b54a32d192ed03ULL;
        h ^= splitmix64(sm);
        return Rng(h);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [0, n). Modulo bias is irrelevant at our n (< 2^32).
    uint32_t next_below(uint32_t n) { return static_cast<uint32_t>(next_u64() % n); }

    bool bernoulli(double p) { return next_double() < p; }

    template <typename It>
    void shuffle(It first, It last) {
        auto n = static_cast<uint64_t>(last - first);
        for (uint64_t i = n; i > 1; --i) {
            uint64_t j = next_u64() % i;
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t s_[4];
};

}  // namespace ege

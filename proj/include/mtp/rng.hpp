#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mtp {

// Deterministic RNG used everywhere in the engine. All real-valued draws are
// derived from the raw 64-bit stream by fixed arithmetic, so a given seed
// reproduces the same sequence on any platform.
class Rng {
  public:
    explicit Rng(uint64_t seed) : seed_(seed), engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_index(uint64_t n) {
        // rejection sampling to avoid modulo bias
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // standard normal via Box-Muller (no cached spare, keeps stream position
    // a pure function of the number of calls)
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // independent child stream; pure in the parent's seed, does not advance it
    Rng fork(uint64_t tag) const { return Rng(mix(seed_, tag)); }

    uint64_t seed() const { return seed_; }

    static uint64_t mix(uint64_t a, uint64_t b) {
        // splitmix64 finalizer over the combined words
        uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

  private:
    uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace mtp

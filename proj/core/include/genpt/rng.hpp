#pragma once

#include <cmath>
#include <cstdint>

namespace genpt {

// Splittable counter-free PRNG. Streams are derived by mixing labels into the
// state, so (seed, window, candidate) keys always yield the same draws no
// matter which order streams are consumed in.
struct Rng {
    uint64_t s0 = 0x9e3779b97f4a7c15ull;
    uint64_t s1 = 0xbf58476d1ce4e5b9ull;

    Rng() = default;
    explicit Rng(uint64_t seed) {
        s0 = mix(seed);
        s1 = mix(s0 ^ 0x94d049bb133111ebull);
        next();
        next();
    }

    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t next() {
        // xoroshiro128+
        uint64_t a = s0, b = s1;
        uint64_t r = a + b;
        b ^= a;
        s0 = ((a << 55) | (a >> 9)) ^ b ^ (b << 14);
        s1 = (b << 36) | (b >> 28);
        return r;
    }

    // Child stream labelled by up to three values; independent of parent draws.
    Rng split(uint64_t a, uint64_t b = 0, uint64_t c = 0) const {
        Rng r;
        r.s0 = mix(s0 ^ mix(a) ^ mix(b + 0x1234567ull));
        r.s1 = mix(s1 ^ mix(c + 0xfeddcba98ull) ^ r.s0);
        r.next();
        return r;
    }

    // Uniform in [0, 1).
    double uniform() { return double(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + int64_t(next() % uint64_t(hi - lo + 1));
    }

    // Box-Muller with fixed consumption (two draws per call, twin discarded)
    // so stream positions never depend on rejection luck.
    double gaussian() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }
};

}  // namespace genpt

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "common.hpp"

namespace interpoll {

// All randomness flows through this wrapper. The engine (mt19937_64) has a
// standard-specified output sequence, but the standard library *distributions*
// are implementation-defined, so every transform here is hand-rolled to keep
// byte-identical behavior across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1) with 53 bits of mantissa.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on [a, b); a == b is allowed and returns a (used by degenerate
    // lambda distributions in tests).
    double uniform(double a, double b) {
        if (a > b) fail("uniform: empty interval [", a, ", ", b, ")");
        if (a == b) return a;
        return a + (b - a) * next_unit();
    }

    // Uniform integer in [0, n). Multiply-shift; bias is O(n / 2^64).
    std::size_t below(std::size_t n) {
        if (n == 0) fail("Rng::below: n must be positive");
        using u128 = unsigned __int128;
        return static_cast<std::size_t>((static_cast<u128>(next_u64()) * n) >> 64);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // Box-Muller without caching the second deviate: two engine draws per call,
    // which keeps the stream layout trivial to reason about.
    double normal() {
        double u;
        do {
            u = next_unit();
        } while (u == 0.0);
        double v = next_unit();
        return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * 3.14159265358979323846 * v);
    }

    // Marsaglia-Tsang squeeze for alpha >= 1, boosted for alpha < 1.
    double gamma(double alpha) {
        if (!(alpha > 0.0)) fail("Rng::gamma: alpha must be positive, got ", alpha);
        if (alpha < 1.0) {
            double u;
            do {
                u = next_unit();
            } while (u == 0.0);
            return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
        }
        const double d = alpha - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = next_unit();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    double beta(double a, double b) {
        const double x = gamma(a);
        const double y = gamma(b);
        return x / (x + y);
    }

private:
    std::mt19937_64 engine_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Stable fan-out of a master seed into named independent streams. Adding a new
// label never perturbs the stream any existing label produces.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label) {
    return splitmix64(master ^ fnv1a64(label));
}

}  // namespace interpoll

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

#include "mvcl/errors.hpp"

namespace mvcl {

/// splitmix64 finalizer; used to derive well-separated child seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Combine two words into one seed (order-sensitive).
inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    return mix64(a ^ mix64(b));
}

/// FNV-1a hash of a label, for naming derived streams.
inline std::uint64_t hash64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Deterministic random stream.
///
/// All floating-point draws are derived from the raw mt19937_64 word stream
/// with fixed arithmetic (no std::*_distribution), so sequences are bitwise
/// identical across standard libraries and platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    /// Child stream for a named purpose; depends only on the construction
    /// seed and the label/index, never on how many draws were taken.
    Rng child(std::string_view label, std::uint64_t index = 0) const {
        return Rng(mix64(mix64(seed_, hash64(label)), index));
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) {
        if (!(lo <= hi)) throw ParamError("uniform: lo must be <= hi");
        return lo + (hi - lo) * uniform();
    }

    /// Unbiased integer in [0, n); n must be positive.
    std::uint64_t bounded(std::uint64_t n) {
        if (n == 0) throw ParamError("bounded: n must be positive");
        std::uint64_t x, r;
        do {
            x = engine_();
            r = x % n;
        } while (x - r > std::uint64_t(-1) - (n - 1));
        return r;
    }

    /// Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (lo > hi) throw ParamError("uniform_int: lo must be <= hi");
        return lo + static_cast<std::int64_t>(
                        bounded(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    bool bernoulli(double p) {
        if (p < 0.0 || p > 1.0) throw ParamError("bernoulli: p must be in [0, 1]");
        return uniform() < p;
    }

    /// Standard normal via Box-Muller (two uniform draws per value).
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    /// Fisher-Yates permutation of 0..n-1.
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        for (std::size_t i = n; i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(bounded(i));
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace mvcl

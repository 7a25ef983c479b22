#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace splitfed::rng {

/// 64-bit finalizer from the splitmix64 generator. Used both to step
/// splitmix and to fold arbitrary words into stream seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Derives an independent stream seed from a master seed and a tag path
/// (e.g. {client_id, direction}). The mapping is fixed: reordering or
/// changing any word yields an unrelated seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> words) {
    std::uint64_t s = master;
    (void)splitmix64(s);
    for (std::uint64_t w : words) {
        s ^= w;
        (void)splitmix64(s);
    }
    return splitmix64(s);
}

/// xoshiro256++ (Blackman & Vigna). Fixed algorithm so that identical
/// seeds reproduce identical byte streams on every platform.
class Xoshiro256pp {
public:
    explicit Xoshiro256pp(std::uint64_t seed) {
        for (auto& word : state_) word = splitmix64(seed);
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform double in (0, 1]; never returns 0 (safe under log).
    double uniform01_open_low() { return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform integer in [0, n); n must be positive.
    std::uint64_t below(std::uint64_t n) {
        // Lemire-style rejection-free would bias for huge n; plain modulo of
        // a 64-bit draw is fine for the n << 2^64 used here, but keep it
        // exact with simple rejection.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next();
        while (x >= limit) x = next();
        return x % n;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t state_[4];
};

/// Deterministic N(0,1) source: xoshiro256++ driving the Box-Muller
/// transform. Draws come out in a fixed order; the cached second variate
/// is part of the stream state.
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed) : gen_(seed) {}

    double next() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = gen_.uniform01_open_low();
        const double u2 = gen_.uniform01();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * 3.14159265358979323846 * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

    Xoshiro256pp& raw() { return gen_; }

private:
    Xoshiro256pp gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace splitfed::rng

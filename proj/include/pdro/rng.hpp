#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace pdro {

/// SplitMix64: a 64-bit-state generator whose output sequence is fully specified,
/// so every platform and every worker count reproduces the same draws.
///
/// Independent streams are derived with `Rng::stream(seed, index)`, which hashes the
/// pair into a fresh state. Distribution helpers are implemented here rather than
/// through <random> distributions, whose algorithms are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

    static Rng stream(std::uint64_t seed, std::uint64_t index) noexcept {
        std::uint64_t s = mix(seed ^ 0x6a09e667f3bcc909ULL);
        s = mix(s + 0x9e3779b97f4a7c15ULL * (index + 1));
        return Rng(s);
    }

    std::uint64_t next() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n); n must be positive.
    std::uint64_t below(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    /// Standard normal via Box-Muller (one value per call, the sine branch is discarded).
    double normal() noexcept {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t state() const noexcept { return state_; }

private:
    static std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

} // namespace pdro

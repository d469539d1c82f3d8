#pragma once

#include <cstdint>

#include "wseg/tensor.hpp"

namespace wseg {

/// Counter-based deterministic RNG (splitmix64). Byte-identical streams
/// for equal seeds on every platform; split() derives an independent
/// child stream. Single-owner: concurrent users must each hold a split.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller (single value per call, deterministic).
    double next_gaussian() {
        double u1 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    /// Independent deterministic child stream.
    Rng split() { return Rng(next_u64() ^ 0xA5A5A5A55A5A5A5AULL); }

private:
    std::uint64_t state_;
};

/// i.i.d. Bernoulli(psi) draws in {0,1}, one per tensor entry.
inline Tensor bernoulli_mask(Rng& rng, const std::vector<std::size_t>& shape, double psi) {
    detail::check(psi >= 0.0 && psi < 1.0,
                  "bernoulli_mask: psi must lie in [0,1), got " + std::to_string(psi));
    Tensor out(shape);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = rng.next_double() < psi ? 1.0 : 0.0;
    return out;
}

}  // namespace wseg

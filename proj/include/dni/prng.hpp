#pragma once

#include <cmath>
#include <cstdint>

namespace dni {

/// splitmix64 reference recurrence:
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   return z ^ (z >> 31)
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Derives an independent stream seed from (seed, tag). Recipe:
///   s = seed + 0x9E3779B97F4A7C15 * (tag + 1); return splitmix64_next(s)
inline std::uint64_t seed_combine(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t s = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
    return splitmix64_next(s);
}

/// xoshiro256** seeded from four successive splitmix64 outputs of the seed.
/// Step recurrence:
///   result = rotl(s1 * 5, 7) * 9
///   t = s1 << 17; s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3; s2 ^= t
///   s3 = rotl(s3, 45)
/// The recurrences above, together with u01() and normal() below, are the
/// cross-implementation contract: any port that follows them reproduces the
/// same initializations and noise fields from the same seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& s : s_) s = splitmix64_next(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform double in [0,1): (next_u64() >> 11) * 2^-53.
    double u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller. Consumes exactly two uniforms per call,
    /// no caching: r = sqrt(-2 ln(1 - u1)), return r * cos(2*pi*u2).
    double normal() {
        const double u1 = u01();
        const double u2 = u01();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(6.283185307179586 * u2);
    }

    /// Uniform integer in [0, n): floor(u01() * n).
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(u01() * static_cast<double>(n));
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4];
};

} // namespace dni

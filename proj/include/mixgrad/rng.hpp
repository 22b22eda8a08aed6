#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "mixgrad/errors.hpp"

namespace mixgrad {

// One realized mixing-weight vector: (lambda, 1-lambda) for pairs, a
// Dirichlet draw (u1..uk) for triplets. Weights live on the simplex.
struct MixDraw {
    std::vector<double> weights;

    std::size_t arity() const { return weights.size(); }
};

// xoshiro256++ seeded via splitmix64 expansion of a 64-bit seed. Fully
// specified so golden sequences are portable; identical seeds give identical
// streams.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& si : state_) si = splitmix64(x);
    }

    std::uint64_t next_u64() {
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

    // 53-bit-precision uniform in [0, 1).
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Unbiased integer in [0, bound) by rejection.
    std::uint64_t next_below(std::uint64_t bound) {
        if (bound == 0) throw ValidationError("next_below: bound must be > 0");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % bound;
    }

    // Box-Muller on two uniforms; fixed draw count of 2 per call.
    double normal01() {
        const double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    static std::uint64_t splitmix64(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_[4];
};

// Gamma(alpha, 1) via the Marsaglia-Tsang squeeze for alpha >= 1; for
// alpha < 1, G_alpha = G_{alpha+1} * U^(1/alpha).
double gamma_sample(Rng& rng, double alpha);

// Beta(alpha, alpha) as G1 / (G1 + G2).
double beta_symmetric(Rng& rng, double alpha);

// Dir(alpha, ..., alpha) over k components: normalized Gamma(alpha) draws.
MixDraw dirichlet_symmetric(Rng& rng, double alpha, int k);

}  // namespace mixgrad

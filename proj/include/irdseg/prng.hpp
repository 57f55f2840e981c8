#pragma once

#include <cmath>
#include <cstdint>

namespace irdseg {

// Deterministic 64-bit generator (splitmix64: state += 0x9E3779B97F4A7C15,
// output mixed with the 0xBF58476D1CE4E5B9 / 0x94D049BB133111EB constants).
// Used for every random draw in the project so that datasets, weights and
// training runs are bit-identical across platforms and runs.
class Prng {
public:
    explicit Prng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Inclusive integer range.
    std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
        return lo + next_u64() % (hi - lo + 1);
    }

    // Box-Muller; consumes exactly two draws per call, no cached spare, so
    // the stream position is a pure function of call count.
    double normal(double mean, double stddev) {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 <= 0.0) u1 = 5e-324;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        return mean + stddev * r * std::cos(theta);
    }

    bool coin() { return (next_u64() & 1u) != 0; }

private:
    std::uint64_t state_;
};

// Stable stream derivation: one user-facing seed fans out into independent
// streams (per sample index, per subsystem) without overlap in practice.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    Prng p(seed ^ (0xD1B54A32D192ED03ULL * (stream + 1)));
    return p.next_u64();
}

}  // namespace irdseg

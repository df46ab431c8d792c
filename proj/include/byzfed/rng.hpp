#pragma once

#include <cmath>
#include <cstdint>

namespace byzfed {

// Deterministic counter-derived random streams (splitmix64 core).
//
// Every consumer owns a stream derived from (root seed, purpose, replica,
// client).  Streams never share state, so adding or removing one consumer
// cannot shift the draws seen by another; this is what makes runs with an
// attack disabled bit-identical to runs with no Byzantine clients at all.
class RngStream {
public:
    enum Purpose : std::uint64_t {
        kVariances = 1,  // per-experiment draws of input/noise variances
        kTestSet   = 2,  // per-experiment server test set
        kSelection = 3,  // per-replica client scheduling
        kMasks     = 4,  // per-replica, per-client coordinate masks
        kSamples   = 5,  // per-replica, per-client data stream
        kAttack    = 6,  // per-replica, per-client poisoning draws
    };

    explicit RngStream(std::uint64_t state) : state_(state) {}

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    static RngStream derive(std::uint64_t root, std::uint64_t purpose,
                            std::uint64_t a = 0, std::uint64_t b = 0) {
        std::uint64_t h = mix(root ^ 0x6a09e667f3bcc909ull);
        h = mix(h ^ purpose);
        h = mix(h ^ a);
        h = mix(h ^ b);
        return RngStream(h);
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1) with 53 random mantissa bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
        std::uint64_t r;
        do {
            r = next_u64();
        } while (r >= limit);
        return r % n;
    }

    // Standard normal via the Marsaglia polar method; the second value of
    // each accepted pair is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace byzfed

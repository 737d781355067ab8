#ifndef MPM_RNG_HPP
#define MPM_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>

namespace mpm {

/// Seeded generator used for every synthetic weight, token and image.
///
/// Algorithm "splitmix64-v1": state advances by 0x9E3779B97F4A7C15 and each
/// output is the standard SplitMix64 finalizer of the new state. The derived
/// distributions below are part of the contract and are written out by hand
/// (std::normal_distribution et al. differ between standard libraries):
///
///   uniform01   (next() >> 11) * 2^-53, in [0, 1)
///   normal      Box-Muller on two uniform01 draws, cosine branch only
///   poisson     Knuth multiplication for mean < 30, otherwise
///               max(0, round(mean + sqrt(mean) * normal))
class Rng {
public:
    static constexpr const char* kAlgorithm = "splitmix64-v1";

    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    std::uint64_t below(std::uint64_t bound) { return bound == 0 ? 0 : next() % bound; }

    double normal() {
        // 1 - u keeps the log argument in (0, 1].
        const double u1 = 1.0 - uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::uint64_t poisson(double mean) {
        if (mean <= 0.0) {
            return 0;
        }
        if (mean < 30.0) {
            const double limit = std::exp(-mean);
            std::uint64_t k = 0;
            double p = uniform01();
            while (p > limit) {
                ++k;
                p *= uniform01();
            }
            return k;
        }
        const double v = std::round(mean + std::sqrt(mean) * normal());
        return v < 0.0 ? 0 : static_cast<std::uint64_t>(v);
    }

private:
    std::uint64_t state_;
};

/// Derives an independent stream seed from a base seed and a tag.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    Rng r(seed ^ (tag * 0xD1B54A32D192ED03ULL));
    return r.next();
}

} // namespace mpm

#endif

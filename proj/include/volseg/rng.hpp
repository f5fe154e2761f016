#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace volseg {

/// Seeded generator with hand-rolled distributions. The std:: distribution
/// objects are implementation-defined, so sampling through them would tie
/// reproducibility to a particular standard library; these are portable.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    int64_t uniform_index(int64_t n) {
        // Rejection sampling keeps the draw unbiased for any n.
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return static_cast<int64_t>(v % un);
    }

    /// Standard normal via Box-Muller (one value per call; pairs cached).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Derive an independent stream, e.g. per fold or per worker.
    Rng fork(uint64_t salt) const {
        std::mt19937_64 probe = engine_;
        return Rng(probe() ^ (0x9e3779b97f4a7c15ull * (salt + 1)));
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace volseg

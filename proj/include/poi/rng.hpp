#pragma once

#include <cstdint>
#include <cmath>

namespace poi {

// Deterministic, platform-independent random stream (splitmix64 core).
// std::normal_distribution is avoided on purpose: its output is not pinned
// by the standard and dataset files must be byte-identical across builds.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller, one value per call
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // index in [0, n)
    uint64_t index(uint64_t n) { return next_u64() % n; }

    // Derive an independent stream; used to give each episode/batch member
    // its own seed so generation order never matters.
    static uint64_t derive(uint64_t seed, uint64_t stream) {
        Rng r(seed ^ (0x9e3779b97f4a7c15ull * (stream + 1)));
        return r.next_u64();
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace poi

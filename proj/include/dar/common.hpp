#pragma once

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dar {

inline void check_arg(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline void check_range(bool cond, const std::string& msg) {
    if (!cond) throw std::out_of_range(msg);
}

inline void check_runtime(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Combine a base seed with stream ids (step index, sample index, ...) so that
// every consumer draws from an independent, restart-stable stream.
inline uint64_t seed_stream(uint64_t seed, uint64_t a, uint64_t b = 0) {
    return splitmix64(splitmix64(seed ^ 0x6a09e667f3bcc909ULL) + splitmix64(a) * 0x9e3779b97f4a7c15ULL + b);
}

// Deterministic RNG with explicitly-defined output mapping. The standard
// distributions are implementation-defined, so uniform/normal are derived
// from raw 64-bit draws here.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(splitmix64(seed ^ 0x853c49e6748fea9bULL)) {
        if (state_ == 0) state_ = 0x4d595df4d0f33173ULL;
    }

    uint64_t next_u64() {
        // xorshift64*
        uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dULL;
    }

    // uniform in [0, 1) with 53-bit resolution
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Box-Muller; second value cached
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // avoid log(0)
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // integer in [0, n)
    uint64_t next_below(uint64_t n) {
        return next_u64() % n;
    }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace dar

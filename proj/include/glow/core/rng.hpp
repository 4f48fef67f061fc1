#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace glow {

// splitmix64 step; also used as the integer mixing function for seed derivation.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Derive an independent stream seed from a master seed and a label. Used for
// per-sample dataset seeds and per-iteration training streams so that work can
// be scheduled in any order without changing results.
inline uint64_t derive_seed(uint64_t master, std::string_view label) {
    uint64_t s = master ^ fnv1a64(label);
    return splitmix64(s);
}
inline uint64_t derive_seed(uint64_t master, uint64_t index) {
    uint64_t s = master ^ (0x9E3779B97F4A7C15ULL * (index + 1));
    return splitmix64(s);
}

// Deterministic generator with a fully specified algorithm (splitmix64 core,
// Box-Muller normals). std:: distributions are unspecified across platforms
// and are not used anywhere in the project.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // i in [0, n).
    int64_t uniform_int(int64_t n) {
        return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    uint64_t state() const { return state_; }
    void set_state(uint64_t s) {
        state_ = s;
        has_spare_ = false;
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace glow

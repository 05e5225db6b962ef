// Deterministic random streams. std::uniform_*_distribution is
// implementation-defined, so every draw here is built directly from
// mt19937_64 output and reproduces bit-for-bit on any platform.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace vlgor {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derives a child seed from (seed, path...) so parallel streams
// (per goal, per episode) never overlap.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = seed ^ 0x6a09e667f3bcc908ULL;
    splitmix64(s);
    for (std::uint64_t p : path) {
        s ^= splitmix64(s) + p * 0x9e3779b97f4a7c15ULL;
        splitmix64(s);
    }
    return splitmix64(s);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    static Rng derived(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
        return Rng(derive_seed(seed, path));
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), n >= 1. Rejection keeps it unbiased.
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t limit = ~0ULL - (~0ULL % n);
        std::uint64_t x;
        do {
            x = eng_();
        } while (x >= limit);
        return x % n;
    }

    int index(int n) { return static_cast<int>(uniform_int(static_cast<std::uint64_t>(n))); }

    // Standard normal via Box-Muller on the deterministic uniform.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586476925286766559;
        spare_ = mag * std::sin(two_pi * u2);
        have_spare_ = true;
        return mag * std::cos(two_pi * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_int(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace vlgor

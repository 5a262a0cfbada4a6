#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace bsdn {

// splitmix64 finalizer; used to derive independent stream seeds from
// (seed, tag...) tuples so per-image noise is order-independent.
inline uint64_t hash_mix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t h = hash_mix(seed ^ 0x243f6a8885a308d3ull);
    h = hash_mix(h ^ a);
    h = hash_mix(h ^ b);
    h = hash_mix(h ^ c);
    return h;
}

// FNV-1a; lets per-image streams key on the image name instead of its
// position, so dataset iteration order cannot change the noise.
inline uint64_t hash_string(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Seedable generator with explicit transforms. std::mt19937_64 is bit-exact
// across platforms; the std:: distributions are not, so uniform/normal/poisson
// are implemented here to keep every sampler reproducible from a seed alone.
class Rng {
public:
    explicit Rng(uint64_t seed = 1) : eng_(seed) {}

    uint64_t bits() { return eng_(); }

    // [0,1)
    double uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

    // unbiased up to O(n/2^64)
    int uniform_int(int n) {
        return static_cast<int>((static_cast<unsigned __int128>(bits()) * static_cast<unsigned __int128>(n)) >> 64);
    }

    // Box-Muller, pair cached
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform();  // (0,1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Knuth multiplication method; fine for the mean<=~200 used here.
    int poisson(double mean) {
        if (mean <= 0.0) return 0;
        const double limit = std::exp(-mean);
        int k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= uniform();
        } while (p > limit);
        return k - 1;
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace bsdn

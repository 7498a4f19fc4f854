#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace sfs {

// splitmix64; used to derive independent substream seeds from a master seed.
inline uint64_t mix_seed(uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) { return mix_seed(mix_seed(a) ^ b); }
inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
    return mix_seed(mix_seed(a, b) ^ c);
}
inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c, uint64_t d) {
    return mix_seed(mix_seed(a, b, c) ^ d);
}

// Deterministic RNG with an explicitly specified gaussian (Box-Muller), so
// streams are reproducible byte-for-byte across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // uniform in [a, b)
    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_index(uint64_t n) {
        // modulo bias is negligible for n << 2^64 but avoid it anyway
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do { v = gen_(); } while (v >= limit);
        return v % n;
    }

    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // u1 in (0,1] so log() is finite
        double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
        double u2 = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * 3.14159265358979323846 * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    float gaussian_f() { return static_cast<float>(gaussian()); }

    template <typename It>
    void shuffle(It first, It last) {
        auto n = static_cast<uint64_t>(last - first);
        for (uint64_t i = n; i > 1; --i) {
            uint64_t j = uniform_index(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace sfs

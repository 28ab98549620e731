#pragma once

#include <cstdint>
#include <cmath>

namespace cocktail {

// Deterministic PRNG used everywhere in the project. We avoid <random>
// distributions so that draws are bit-identical across standard library
// implementations; the engine is xoshiro256++ seeded through splitmix64.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Mixes an arbitrary number of keys into one seed. Used to derive
// independent streams, e.g. (global_seed, speaker_id, segment_id).
inline std::uint64_t mix_keys(std::uint64_t seed) { return seed; }

template <typename... Rest>
inline std::uint64_t mix_keys(std::uint64_t seed, std::uint64_t key, Rest... rest) {
    std::uint64_t s = seed ^ (key + 0x9e3779b97f4a7c15ull + (seed << 6) + (seed >> 2));
    std::uint64_t t = s;
    return mix_keys(splitmix64(t), rest...);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    template <typename... Keys>
    Rng(std::uint64_t seed, Keys... keys) : Rng(mix_keys(seed, static_cast<std::uint64_t>(keys)...)) {}

    std::uint64_t u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 bits of precision.
    double unit() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

    // Box-Muller; the spare draw is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = unit(), u2 = unit();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Uniform integer in [0, n).
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(u64() % n); }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t s_[4];
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace cocktail

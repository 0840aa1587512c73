// Deterministic, serializable random generator (xoshiro256** seeded via
// splitmix64). Bit-stable across platforms, so training runs and phantom
// volumes reproduce exactly from a seed.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace oarseg {

class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (auto& s : state_) s = splitmix64(x);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

    // Standard normal via Box-Muller; the paired value is discarded so the
    // draw count per call is fixed.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool coin() { return (next_u64() >> 63) != 0; }

    std::array<uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

    // Independent stream derived from this seed and a stream index.
    static Rng substream(uint64_t seed, uint64_t index) {
        uint64_t x = seed;
        uint64_t a = splitmix64(x);
        x = a ^ (index * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
        return Rng(splitmix64(x));
    }

private:
    std::array<uint64_t, 4> state_{};

    static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    static uint64_t splitmix64(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
};

// Fisher-Yates shuffle driven by Rng.
template <typename Vec>
void shuffle(Vec& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        size_t j = static_cast<size_t>(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace oarseg

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace pdg {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

// Counter-free xoshiro256++ generator. All distributions are implemented
// here so that a fixed seed produces the same stream on every platform;
// std::normal_distribution and friends are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = detail::splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 bits of randomness.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Lemire's multiply-shift reduction.
    int uniform_int(int n) {
        const auto r = static_cast<unsigned __int128>(next_u64());
        return static_cast<int>((r * static_cast<std::uint64_t>(n)) >> 64);
    }

    // Standard normal via Box-Muller. Consumes two uniforms per call and
    // discards the sine branch; stream positions stay easy to reason about.
    double normal() {
        double u1 = uniform();
        const double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Derives a substream seed from a root seed and a path of stream ids,
    // e.g. derive(seed, {iteration, domain, pass}). Used so that parallel
    // or reordered work always sees the same draws.
    static std::uint64_t derive(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
        std::uint64_t s = root;
        (void)detail::splitmix64(s);
        for (std::uint64_t id : path) {
            s ^= id + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
            (void)detail::splitmix64(s);
        }
        return s;
    }

private:
    static constexpr double kPi = 3.14159265358979323846;

    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4];
};

}  // namespace pdg

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace moldxai {

namespace detail {
// SplitMix64 finalizer; full-avalanche 64-bit mixer.
inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
}  // namespace detail

// Counter-based deterministic stream (SplitMix64). Same seed => same sequence
// on the same build. Streams derived from (seed, stream_id) never share state;
// derive one stream per concurrent task instead of sharing an instance.
class RngStream {
  public:
    explicit RngStream(uint64_t seed) : seed_(seed), state_(seed) {}

    uint64_t seed() const { return seed_; }

    RngStream derive(uint64_t stream_id) const {
        return RngStream(detail::mix64(seed_ ^ detail::mix64(stream_id + 0x9e3779b97f4a7c15ULL)));
    }
    RngStream derive(uint64_t a, uint64_t b) const { return derive(a).derive(b); }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return detail::mix64(state_);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller (no rejection, so draw count is fixed).
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Uniform index in [0, n) via 128-bit multiply-shift.
    size_t index(size_t n) {
        if (n == 0) return 0;
        return static_cast<size_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& xs) {
        for (size_t i = xs.size(); i > 1; --i) {
            size_t j = index(i);
            std::swap(xs[i - 1], xs[j]);
        }
    }

  private:
    uint64_t seed_;
    uint64_t state_;
};

}  // namespace moldxai

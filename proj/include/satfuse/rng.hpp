#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace satfuse {

// Counter-based 64-bit generator: a Weyl sequence (state += golden-ratio
// increment) pushed through the SplitMix64 finalizer. Output i depends only
// on (seed, i), so streams reproduce bit-for-bit on any platform. This is
// the project-wide randomness source; nothing else may introduce entropy.
//
//   state_{i+1} = state_i + 0x9E3779B97F4A7C15
//   out_i       = mix64(state_{i+1})
//   mix64(z): z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//             z ^= z >> 27; z *= 0x94D049BB133111EB; z ^= z >> 31;
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    static constexpr std::uint64_t kIncrement = 0x9E3779B97F4A7C15ull;

    static std::uint64_t mix64(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t next_u64() {
        state_ += kIncrement;
        return mix64(state_);
    }

    // Uniform double in [0, 1), 53 mantissa bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform index in [0, n). Modulo method; bias is < n / 2^64.
    std::uint64_t index(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller; the second variate is cached.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        // u1 in (0, 1] so log() is finite.
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * std::numbers::pi * u2;
        cached_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    template <typename S>
    void fill_normal(S* dst, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<S>(normal());
    }

private:
    std::uint64_t state_;
    bool has_cached_ = false;
    double cached_ = 0.0;
};

// Derives independent substream seeds; chained mix64 over the inputs.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    return Rng::mix64(Rng::mix64(a + Rng::kIncrement) ^ (b + Rng::kIncrement));
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

// Stream tags, so different consumers of one user seed never collide.
namespace stream {
inline constexpr std::uint64_t scene = 0x5345454e45ull;      // dataset scene content
inline constexpr std::uint64_t degrade = 0x44454752ull;      // per-LR degradation
inline constexpr std::uint64_t batch_order = 0x4241544348ull; // training batch picks
inline constexpr std::uint64_t train_noise = 0x4e4f495345ull; // training t / epsilon
inline constexpr std::uint64_t init = 0x494e4954ull;          // weight initialization
inline constexpr std::uint64_t trajectory = 0x5452414aull;    // per-trajectory sampling
inline constexpr std::uint64_t fusion_batch = 0x46424154ull;  // fusion subset picks
} // namespace stream

} // namespace satfuse

#pragma once
#include <cstdint>
#include <cmath>

namespace maskrec {

// PCG32 (Melissa O'Neill's pcg32_oneseq variant with selectable stream).
// A given (seed, stream_id) pair yields the same sequence on every platform;
// all randomness in the library flows through this type so runs are
// reproducible bit-for-bit.
class Rng {
public:
    Rng() : Rng(0, 0) {}
    Rng(uint64_t seed, uint64_t stream_id) {
        inc_ = (stream_id << 1u) | 1u;
        state_ = 0u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    uint32_t next_u32() {
        uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
    }

    uint64_t next_u64() {
        uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n), n > 0.
    uint32_t below(uint32_t n) {
        uint32_t threshold = (-n) % n;
        for (;;) {
            uint32_t r = next_u32();
            if (r >= threshold) return r % n;
        }
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller; second value of each pair is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double radius = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = radius * std::sin(theta);
        has_spare_ = true;
        return radius * std::cos(theta);
    }

private:
    uint64_t state_ = 0;
    uint64_t inc_ = 1;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Stream ids for the independent RNG streams a pipeline uses. Keeping them
// in one place avoids accidental stream collisions between components.
namespace streams {
constexpr uint64_t weight_init = 1;
constexpr uint64_t batch_sampling = 2;
constexpr uint64_t train_masks = 3;
constexpr uint64_t dropout = 4;
constexpr uint64_t calibration = 5;
constexpr uint64_t scoring = 6;
constexpr uint64_t remote_scoring = 7;
constexpr uint64_t adversary = 8;
constexpr uint64_t synthetic = 9;
// Per-item scoring streams occupy [dataset_base, dataset_base + n).
constexpr uint64_t dataset_base = 1u << 20;
} // namespace streams

} // namespace maskrec

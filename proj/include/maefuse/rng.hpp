#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace maefuse {

// Counter-based random generator (Philox-4x32 with 10 rounds).
//
// The generator is a pure function of (key, counter), so identical seeds
// reproduce identical draw sequences on every platform. Constants are the
// published Philox constants:
//   multipliers 0xD2511F53, 0xCD9E8D57
//   key schedule increments 0x9E3779B9 (golden ratio), 0xBB67AE85 (sqrt 3)
// The counter is 128 bits (four 32-bit words) and the key is the 64-bit seed.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed) {
        key_ = {static_cast<uint32_t>(seed & 0xFFFFFFFFu),
                static_cast<uint32_t>(seed >> 32)};
    }

    uint64_t seed() const { return seed_; }

    // Derives an independent named stream. The child key mixes the parent
    // seed with an FNV-1a hash of the name through SplitMix64.
    Rng substream(std::string_view name) const {
        return Rng(splitmix64(seed_ ^ fnv1a64(name)));
    }

    // Derives an independent stream for a step/sample index.
    Rng substream(std::string_view name, uint64_t index) const {
        return Rng(splitmix64(splitmix64(seed_ ^ fnv1a64(name)) + index));
    }

    uint32_t next_u32() {
        if (buf_pos_ == 4) {
            block_ = philox(counter_, key_);
            advance_counter();
            buf_pos_ = 0;
        }
        return block_[buf_pos_++];
    }

    uint64_t next_u64() {
        uint64_t lo = next_u32();
        uint64_t hi = next_u32();
        return (hi << 32) | lo;
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), unbiased via rejection.
    uint64_t uniform_int(uint64_t n) {
        if (n == 0) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller (cosine branch only, so each draw
    // consumes exactly two uniforms).
    double normal() {
        double u1 = (static_cast<double>(next_u32()) + 1.0) * 0x1.0p-32; // (0, 1]
        double u2 = static_cast<double>(next_u32()) * 0x1.0p-32;         // [0, 1)
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    // Normal truncated to [-2 sigma, 2 sigma] by rejection.
    double truncated_normal(double sigma) {
        double x;
        do {
            x = normal();
        } while (x < -2.0 || x > 2.0);
        return x * sigma;
    }

    static uint64_t fnv1a64(std::string_view s) {
        uint64_t h = 1469598103934665603ull;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        return h;
    }

    static uint64_t splitmix64(uint64_t x) {
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

private:
    static std::array<uint32_t, 4> philox(std::array<uint32_t, 4> ctr,
                                          std::array<uint32_t, 2> key) {
        for (int round = 0; round < 10; ++round) {
            const uint64_t p0 = 0xD2511F53ull * ctr[0];
            const uint64_t p1 = 0xCD9E8D57ull * ctr[2];
            ctr = {static_cast<uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
                   static_cast<uint32_t>(p1),
                   static_cast<uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
                   static_cast<uint32_t>(p0)};
            key[0] += 0x9E3779B9u;
            key[1] += 0xBB67AE85u;
        }
        return ctr;
    }

    void advance_counter() {
        for (int i = 0; i < 4; ++i) {
            if (++counter_[i] != 0) break;
        }
    }

    uint64_t seed_;
    std::array<uint32_t, 2> key_{};
    std::array<uint32_t, 4> counter_{};
    std::array<uint32_t, 4> block_{};
    int buf_pos_ = 4;
};

} // namespace maefuse

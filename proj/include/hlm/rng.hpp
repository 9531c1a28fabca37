#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace hlm {

// Counter-based deterministic RNG. Every stochastic site draws from a named
// stream keyed by (seed, stream name); individual draws are pure functions of
// (key, counter indices), so there is no mutable generator state to carry
// through checkpoints -- resuming at step t replays exactly.

constexpr std::uint64_t kSplitMixGamma = 0x9e3779b97f4a7c15ull;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += kSplitMixGamma;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_name(std::string_view name) {
    // FNV-1a
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

class RngStream {
public:
    RngStream(std::uint64_t seed, std::string_view name)
        : key_(splitmix64(seed ^ splitmix64(hash_name(name)))) {}

    // Split off an independent substream (e.g. per step).
    RngStream split(std::uint64_t index) const {
        RngStream s = *this;
        s.key_ = splitmix64(key_ ^ splitmix64(index * kSplitMixGamma + 1));
        return s;
    }

    std::uint64_t bits(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) const {
        return splitmix64(splitmix64(splitmix64(key_ + a) ^ (b * kSplitMixGamma)) ^
                          (c * 0xda942042e4dd58b5ull));
    }

    // Uniform in [0, 1).
    double uniform(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) const {
        return static_cast<double>(bits(a, b, c) >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n, std::uint64_t a, std::uint64_t b = 0,
                        std::uint64_t c = 0) const {
        return static_cast<std::uint64_t>(uniform(a, b, c) * static_cast<double>(n));
    }

    // Standard normal via Box-Muller on two independent uniforms.
    double normal(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) const {
        double u1 = uniform(a, b, c);
        double u2 = static_cast<double>(bits(a, b, c + 0x9e37) >> 11) * 0x1.0p-53;
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    std::uint64_t key() const { return key_; }

private:
    std::uint64_t key_;
};

}  // namespace hlm

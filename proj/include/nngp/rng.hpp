#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace nngp {

// Counter-based random streams. Every draw is a pure function of
// (root seed, stream coordinates, index within the stream), so results do
// not depend on evaluation order or thread count.
//
// Stream derivation chains the SplitMix64 finalizer over the coordinate
// tuple; values are the SplitMix64 sequence for the derived key.

inline constexpr std::uint64_t kSplitMixGamma = 0x9E3779B97F4A7C15ull;

inline constexpr std::uint64_t splitmix_finalize(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t mix_in(std::uint64_t key, std::uint64_t word) {
    return splitmix_finalize((key + kSplitMixGamma) ^ word);
}

// Fixed stream tags keep decorrelated draws for the different sampling
// routes even when the remaining coordinates coincide.
enum class StreamTag : std::uint64_t {
    net_conditional = 0x6e65742d636f6e64ull,
    net_explicit    = 0x6e65742d6578706cull,
    gp_draw         = 0x67702d647261770aull,
    bootstrap       = 0x626f6f7473747261ull,
    oracle          = 0x6f7261636c650a0aull,
};

class RandomStream {
public:
    RandomStream(std::uint64_t seed, StreamTag tag,
                 std::uint64_t a = 0, std::uint64_t b = 0, std::uint64_t c = 0) {
        std::uint64_t k = splitmix_finalize(seed + kSplitMixGamma);
        k = mix_in(k, static_cast<std::uint64_t>(tag));
        k = mix_in(k, a);
        k = mix_in(k, b);
        key_ = mix_in(k, c);
    }

    std::uint64_t bits(std::uint64_t i) const {
        return splitmix_finalize(key_ + (i + 1) * kSplitMixGamma);
    }

    // Uniform on (0, 1]; never returns 0 so log() is safe.
    double uniform(std::uint64_t i) const {
        return static_cast<double>((bits(i) >> 11) + 1) * 0x1.0p-53;
    }

    // Standard normal by index. Indices 2p and 2p+1 form a Box-Muller pair.
    double normal(std::uint64_t i) const {
        const std::uint64_t p = i >> 1;
        const double u1 = uniform(2 * p);
        const double u2 = uniform(2 * p + 1);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        return (i & 1) ? r * std::sin(a) : r * std::cos(a);
    }

    // Sequential fill starting at stream index `start`; computes each
    // Box-Muller pair once.
    void fill_normals(std::span<double> out, std::uint64_t start = 0) const {
        std::uint64_t i = start;
        std::size_t n = 0;
        if ((i & 1) && n < out.size()) { out[n++] = normal(i++); }
        while (n + 1 < out.size()) {
            const double u1 = uniform(i);
            const double u2 = uniform(i + 1);
            const double r = std::sqrt(-2.0 * std::log(u1));
            const double a = 2.0 * std::numbers::pi * u2;
            out[n++] = r * std::cos(a);
            out[n++] = r * std::sin(a);
            i += 2;
        }
        if (n < out.size()) out[n] = normal(i);
    }

    std::uint64_t key() const { return key_; }

private:
    std::uint64_t key_;
};

} // namespace nngp

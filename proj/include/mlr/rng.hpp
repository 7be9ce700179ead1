#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace mlr {

// Counter-based splittable randomness: every (master seed, purpose tag, index)
// triple names an independent stream, so parallel generation over disjoint
// index ranges is order-independent and bit-reproducible.

namespace detail {

inline constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ull;

inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char ch : s) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace detail

/// SplitMix64 stream (Steele, Lea, Flood 2014).
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t state) : state_(state) {}

    std::uint64_t next() {
        state_ += detail::kGamma;
        return detail::mix64(state_);
    }

private:
    std::uint64_t state_;
};

/// Stream key for (seed, tag, index); three mixing rounds for avalanche.
inline std::uint64_t stream_key(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
    std::uint64_t h = detail::mix64(seed ^ detail::fnv1a(tag));
    h = detail::mix64(h ^ (index * detail::kGamma));
    return detail::mix64(h + detail::kGamma);
}

/// Deterministic per-stream generator with the draw primitives the sampler needs.
class Rng {
public:
    Rng(std::uint64_t seed, std::string_view tag, std::uint64_t index)
        : sm_(stream_key(seed, tag, index)) {}

    explicit Rng(std::uint64_t key) : sm_(key) {}

    std::uint64_t next_u64() { return sm_.next(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(sm_.next() >> 11) * 0x1.0p-53;
    }

    /// Uniform on (0, 1]; safe as a log() argument.
    double uniform_open() {
        return static_cast<double>((sm_.next() >> 11) + 1) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; the second deviate of each pair is cached.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u = uniform_open();
        double v = uniform();
        double r = std::sqrt(-2.0 * std::log(u));
        double theta = 2.0 * std::numbers::pi * v;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    /// Index i with probability weights[i]/sum; weights need not be normalized.
    int discrete(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        double u = uniform() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
            acc += weights[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(weights.size()) - 1;
    }

    /// Index from a precomputed cumulative distribution (last entry == 1).
    int discrete_cumulative(const std::vector<double>& cumulative) {
        double u = uniform();
        for (std::size_t i = 0; i + 1 < cumulative.size(); ++i) {
            if (u < cumulative[i]) return static_cast<int>(i);
        }
        return static_cast<int>(cumulative.size()) - 1;
    }

    double exponential() { return -std::log(uniform_open()); }

private:
    SplitMix64 sm_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace mlr

#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mlr {

inline double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double x) {
    return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0);
}

/// Survival function 1 - Phi(x), accurate deep in the upper tail.
inline double normal_sf(double x) {
    return 0.5 * std::erfc(x * std::numbers::sqrt2 / 2.0);
}

/// P(lo < Z < hi) for standard normal Z, stable for bands far in either tail.
inline double normal_interval_prob(double lo, double hi) {
    if (hi <= lo) return 0.0;
    if (lo >= 0.0) return normal_sf(lo) - normal_sf(hi);
    if (hi <= 0.0) return normal_cdf(hi) - normal_cdf(lo);
    return normal_cdf(hi) - normal_cdf(lo);
}

/// E|Z|^s for standard normal Z and even s, i.e. (s-1)!!.
inline double gaussian_abs_moment_even(int s) {
    if (s < 0 || s % 2 != 0) throw std::invalid_argument("even moment order required");
    double m = 1.0;
    for (int j = 1; j < s; j += 2) m *= static_cast<double>(j);
    return m;
}

/// Neumaier compensated summation; merge order fixed by the caller keeps
/// results bit-stable regardless of thread count.
class NeumaierSum {
public:
    void add(double x) {
        double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }

    void merge(const NeumaierSum& other) { add(other.sum_); add(other.comp_); }

    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// 17 significant digits: enough for exact double round trips.
inline std::string format_double17(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
    double out = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    if (res.ec != std::errc{}) throw std::invalid_argument("bad float field: " + std::string(s));
    return out;
}

inline std::int64_t parse_int(std::string_view s) {
    std::int64_t out = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    if (res.ec != std::errc{}) throw std::invalid_argument("bad integer field: " + std::string(s));
    return out;
}

} // namespace mlr

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

#include "mlr/parallel.hpp"
#include "mlr/rng.hpp"
#include "mlr/stats.hpp"

using namespace mlr;

TEST_CASE("streams are deterministic and keyed by (seed, tag, index)") {
    Rng a(42, "unit", 7), b(42, "unit", 7);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

    Rng c(42, "unit", 8), d(43, "unit", 7), e(42, "other", 7);
    Rng base(42, "unit", 7);
    REQUIRE(base.next_u64() != c.next_u64());
    Rng base2(42, "unit", 7);
    REQUIRE(base2.next_u64() != d.next_u64());
    Rng base3(42, "unit", 7);
    REQUIRE(base3.next_u64() != e.next_u64());
}

TEST_CASE("uniform moments at Monte Carlo scale") {
    const int n = 1 << 20;
    NeumaierSum sum, sum2;
    Rng rng(1, "uniform-test", 0);
    for (int i = 0; i < n; ++i) {
        double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum.add(u);
        sum2.add(u * u);
    }
    double mean = sum.value() / n;
    double var = sum2.value() / n - mean * mean;
    double se_mean = std::sqrt(1.0 / 12.0 / n);
    REQUIRE(std::abs(mean - 0.5) < 4.0 * se_mean);
    REQUIRE(std::abs(var - 1.0 / 12.0) < 0.001);
}

TEST_CASE("gaussian moments match the standard normal") {
    const int n = 1 << 20;
    NeumaierSum s1, s2, s4;
    Rng rng(2, "gaussian-test", 0);
    for (int i = 0; i < n; ++i) {
        double g = rng.gaussian();
        s1.add(g);
        s2.add(g * g);
        s4.add(g * g * g * g);
    }
    REQUIRE(std::abs(s1.value() / n) < 4.0 / std::sqrt(static_cast<double>(n)));
    REQUIRE(std::abs(s2.value() / n - 1.0) < 0.01);
    REQUIRE(std::abs(s4.value() / n - 3.0) < 0.1);
}

TEST_CASE("discrete_cumulative respects the distribution") {
    std::vector<double> cum{0.2, 0.5, 1.0};
    std::vector<int> counts(3, 0);
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        Rng rng(3, "disc", static_cast<std::uint64_t>(i));
        ++counts[static_cast<std::size_t>(rng.discrete_cumulative(cum))];
    }
    std::vector<double> p{0.2, 0.3, 0.5};
    for (int j = 0; j < 3; ++j) {
        double se = std::sqrt(p[j] * (1 - p[j]) / n);
        REQUIRE(std::abs(static_cast<double>(counts[j]) / n - p[j]) < 4 * se);
    }
}

TEST_CASE("parallel_chunks output does not depend on the worker count") {
    const std::int64_t n = 100000;
    auto fill = [&](int threads) {
        std::vector<double> out(static_cast<std::size_t>(n));
        parallel_chunks(n, 1 << 12, threads, [&](std::int64_t, std::int64_t begin, std::int64_t end) {
            for (std::int64_t i = begin; i < end; ++i) {
                Rng rng(9, "par", static_cast<std::uint64_t>(i));
                out[static_cast<std::size_t>(i)] = rng.gaussian();
            }
        });
        return out;
    };
    auto seq = fill(1);
    auto par = fill(4);
    REQUIRE(seq == par);
}

TEST_CASE("parallel_chunks propagates exceptions") {
    REQUIRE_THROWS_AS(
        parallel_chunks(100, 10, 3, [](std::int64_t c, std::int64_t, std::int64_t) {
            if (c == 5) throw std::runtime_error("boom");
        }),
        std::runtime_error);
}

TEST_CASE("format_double17 round-trips bit-exactly") {
    Rng rng(4, "fmt", 0);
    for (int i = 0; i < 1000; ++i) {
        double x = rng.gaussian() * std::pow(10.0, rng.uniform(-12, 12));
        REQUIRE(parse_double(format_double17(x)) == x);
    }
}

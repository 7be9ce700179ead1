#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

#include "mlr/model.hpp"

using namespace mlr;

namespace {

ModelInstance axis_instance(double w_norm = 1.0, int d = 2, NoiseModel noise = {NoiseFamily::zero, 0.0}) {
    ModelInstance m;
    m.k = 1;
    m.d = d;
    m.weights = Eigen::MatrixXd::Zero(1, d);
    m.weights(0, 0) = w_norm;
    m.mixing = Eigen::VectorXd::Ones(1);
    m.noise = noise;
    m.c = 0.9 * w_norm;
    m.delta = 0.95;
    m.p_min = 1.0;
    return m;
}

} // namespace

TEST_CASE("make_instance with one component forces p = (1)") {
    ModelInstance m = make_instance(1, 2, 0.9, 0.95, 1.0, {NoiseFamily::zero, 0.0}, 7);
    REQUIRE(m.k == 1);
    double n = m.weights.row(0).norm();
    REQUIRE(n >= 0.9);
    REQUIRE(n <= 1.0);
    REQUIRE(m.mixing(0) == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("make_instance enforces the pairwise separation") {
    ModelInstance m = make_instance(2, 2, 0.95, 0.96, 0.3, {NoiseFamily::gaussian, 0.1}, 1);
    REQUIRE((m.weights.row(0) - m.weights.row(1)).norm() >= 0.96);
    REQUIRE(validate_assumptions(m).pass);
}

TEST_CASE("over-constrained packing raises FeasibilityError") {
    // annulus packing oracle: with radii in [0.9, 1], two of N points sit within
    // angle 2*pi/N, so dist^2 <= 0.1^2 + 2(1 - cos(2*pi/N)); separation 0.99
    // therefore caps N well below 50.
    double target = 0.99 * 0.99 - 0.01;
    double theta = std::acos(1.0 - target / 2.0);
    double n_max = 2.0 * std::numbers::pi / theta;
    REQUIRE(n_max < 50.0);

    REQUIRE_THROWS_AS(make_instance(50, 2, 0.9, 0.99, 0.01, {NoiseFamily::zero, 0.0}, 1),
                      FeasibilityError);
}

TEST_CASE("make_instance rejects bad arguments") {
    REQUIRE_THROWS_AS(make_instance(2, 1, 0.9, 0.95, 0.3, {}, 1), ValidationError);
    REQUIRE_THROWS_AS(make_instance(2, 4, 0.95, 0.9, 0.3, {}, 1), ValidationError);  // delta < c
    REQUIRE_THROWS_AS(make_instance(2, 4, 0.5, 0.9, 0.6, {}, 1), ValidationError);   // p_min > 1/k
}

TEST_CASE("validate_assumptions reports margins") {
    ModelInstance m = make_instance(2, 4, 0.5, 0.6, 0.3, {NoiseFamily::zero, 0.0}, 3);
    m.mixing << 0.5, 0.5;
    auto report = validate_assumptions(m);
    REQUIRE(report.find("A1_min_mixing").pass);
    REQUIRE(report.find("A1_min_mixing").margin == Catch::Approx(0.2));

    // separation violation: margin is distance minus delta
    ModelInstance bad = m;
    bad.weights.row(0) << 0.5, 0.0, 0.0, 0.0;
    bad.weights.row(1) << 0.0, 0.0, 0.0, 0.0;  // dist 0.5 < delta 0.9
    bad.delta = 0.9;
    auto rep2 = validate_assumptions(bad);
    REQUIRE_FALSE(rep2.find("A2_separation").pass);
    REQUIRE(rep2.find("A2_separation").margin == Catch::Approx(-0.4));
}

TEST_CASE("make_instance is a pure function of its arguments") {
    ModelInstance a = make_instance(3, 6, 0.7, 0.8, 0.2, {NoiseFamily::gaussian, 0.3}, 99);
    ModelInstance b = make_instance(3, 6, 0.7, 0.8, 0.2, {NoiseFamily::gaussian, 0.3}, 99);
    REQUIRE(a.weights == b.weights);
    REQUIRE(a.mixing == b.mixing);
    REQUIRE(a.fingerprint() == b.fingerprint());

    ModelInstance c = make_instance(3, 6, 0.7, 0.8, 0.2, {NoiseFamily::gaussian, 0.3}, 100);
    REQUIRE(a.fingerprint() != c.fingerprint());
}

TEST_CASE("property: random constructions satisfy the assumptions") {
    Rng rng(0xabc, "prop-make", 0);
    int built = 0;
    for (int trial = 0; trial < 500; ++trial) {
        int k = 1 + static_cast<int>(rng.uniform() * 5);
        int d = std::max(2, k + static_cast<int>(rng.uniform() * 8));
        double c = rng.uniform(0.2, 0.9);
        double delta = rng.uniform(c + 1e-3, 0.999);
        double p_min = rng.uniform(0.01, 1.0 / k);
        try {
            ModelInstance m = make_instance(k, d, c, delta, p_min, {NoiseFamily::zero, 0.0},
                                            static_cast<std::uint64_t>(trial));
            REQUIRE(validate_assumptions(m).pass);
            ++built;
        } catch (const FeasibilityError&) {
            // over-constrained draw; acceptable
        }
    }
    REQUIRE(built > 400);
}

TEST_CASE("noise-free single component gives y == x1 exactly") {
    ModelInstance m = axis_instance();
    Dataset ds = sample_dataset(m, 3, 5);
    for (std::int64_t i = 0; i < 3; ++i) REQUIRE(ds.y(i) == ds.x(i, 0));
}

TEST_CASE("component frequencies match the mixing vector") {
    ModelInstance m = make_instance(3, 4, 0.5, 0.6, 0.15, {NoiseFamily::zero, 0.0}, 11);
    const std::int64_t n = 100000;
    Dataset ds = sample_dataset(m, n, 12);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(3);
    for (int z : ds.z) counts(z) += 1.0;
    for (int i = 0; i < 3; ++i) {
        double p = m.mixing(i);
        double se = std::sqrt(p * (1 - p) / static_cast<double>(n));
        REQUIRE(std::abs(counts(i) / static_cast<double>(n) - p) <= 3 * se);
    }
}

TEST_CASE("covariate mean is near zero per coordinate") {
    ModelInstance m = make_instance(2, 5, 0.5, 0.6, 0.3, {NoiseFamily::zero, 0.0}, 21);
    const std::int64_t n = 100000;
    Dataset ds = sample_dataset(m, n, 22);
    Eigen::VectorXd mean = ds.x.colwise().mean();
    for (int j = 0; j < 5; ++j)
        REQUIRE(std::abs(mean(j)) <= 3.0 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("residual noise is zero-mean and subgaussian via its MGF") {
    const std::int64_t n = 100000;
    const double sigma = 0.4;
    auto families = {NoiseFamily::gaussian, NoiseFamily::uniform_bounded,
                     NoiseFamily::scaled_rademacher};
    for (auto family : families) {
        ModelInstance m = axis_instance(1.0, 3, {family, sigma});
        m.c = 0.9;
        Dataset ds = sample_dataset(m, n, 31);
        Eigen::VectorXd resid(n);
        for (std::int64_t i = 0; i < n; ++i)
            resid(i) = ds.y(i) - m.weights.row(ds.z[static_cast<std::size_t>(i)]).dot(ds.x.row(i));

        REQUIRE(std::abs(resid.mean()) <= 3.0 * sigma / std::sqrt(static_cast<double>(n)));

        for (double t : {-1.0, -0.5, 0.5, 1.0}) {
            Eigen::ArrayXd e = (t * resid.array()).exp();
            double mgf = e.mean();
            double se = std::sqrt((e - mgf).square().mean() / static_cast<double>(n));
            double bound = std::exp(sigma * sigma * t * t / 2.0);
            REQUIRE(mgf <= bound * (1.0 + 5.0 * se / bound + 1e-12));
        }
    }
}

TEST_CASE("dataset generation is independent of thread count") {
    ModelInstance m = make_instance(2, 4, 0.6, 0.7, 0.3, {NoiseFamily::gaussian, 0.2}, 41);
    Dataset a = sample_dataset(m, 70000, 42, 1);
    Dataset b = sample_dataset(m, 70000, 42, 4);
    REQUIRE(a.x == b.x);
    REQUIRE(a.y == b.y);
    REQUIRE(a.z == b.z);
}

TEST_CASE("dataset CSV round-trips bit-identically and carries the seed") {
    ModelInstance m = make_instance(2, 3, 0.6, 0.7, 0.3, {NoiseFamily::gaussian, 0.2}, 51);
    Dataset ds = sample_dataset(m, 500, 52);
    std::stringstream ss;
    write_dataset_csv(ds, ss);
    std::string text = ss.str();
    REQUIRE(text.rfind("# mlr-dataset v1 d=3 k=2 seed=52", 0) == 0);

    std::stringstream in(text);
    Dataset back = read_dataset_csv(in);
    REQUIRE(back.seed == 52);
    REQUIRE(back.d == 3);
    REQUIRE(back.x == ds.x);
    REQUIRE(back.y == ds.y);
    REQUIRE(back.z == ds.z);

    // writing the re-read dataset reproduces the same bytes
    std::stringstream ss2;
    write_dataset_csv(back, ss2);
    REQUIRE(ss2.str() == text);
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "mlr/model.hpp"
#include "mlr/threshold.hpp"

using namespace mlr;

// Oracle values computed independently (scipy/mpmath, 30-digit precision).
namespace oracle {
constexpr double kUpper_c95_e10 = 1.681359700149747;     // sqrt(ln 10)/0.95^2
constexpr double kLower_c95_e10 = 1.586359700149747;
constexpr double kUpper_c70_e10_cp2 = 6.193580119939373;  // 2 sqrt(ln 10)/0.49
constexpr double kTarget_c70 = 8.84797159991339;          // upper * 0.7 / 0.49
constexpr double kBandProb_c95_e10 = 0.009982334216968813;  // Phi(upper)-Phi(lower)
} // namespace oracle

namespace {

ModelInstance unit_axis_instance(int d = 4, double w_norm = 1.0,
                                 NoiseModel noise = {NoiseFamily::zero, 0.0}) {
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

TEST_CASE("compute_band matches the closed form") {
    ThresholdBand b = compute_band({0.95, 0.0, 0.1, 1.0});
    REQUIRE(b.upper == Catch::Approx(oracle::kUpper_c95_e10).epsilon(1e-14));
    REQUIRE(b.lower == Catch::Approx(oracle::kLower_c95_e10).epsilon(1e-14));

    ThresholdBand b2 = compute_band({0.7, 0.0, 0.1, 2.0});
    REQUIRE(b2.upper == Catch::Approx(oracle::kUpper_c70_e10_cp2).epsilon(1e-14));
    REQUIRE(b2.lower == Catch::Approx(oracle::kUpper_c70_e10_cp2 - 0.07).epsilon(1e-14));
}

TEST_CASE("band config validation") {
    REQUIRE_THROWS_AS(compute_band({1.0, 0.0, 0.1, 1.0}), DomainError);   // c must be < 1
    REQUIRE_THROWS_AS(compute_band({0.9, 0.0, 1.0, 1.0}), DomainError);   // eps >= 1
    REQUIRE_THROWS_AS(compute_band({0.9, 0.0, 0.0, 1.0}), DomainError);   // eps <= 0
    REQUIRE_THROWS_AS(compute_band({0.9, -0.1, 0.1, 1.0}), DomainError);  // sigma < 0
    REQUIRE_THROWS_AS(compute_band({0.9, 0.0, 0.1, 0.0}), DomainError);   // c_prime <= 0
}

TEST_CASE("band width is c*eps to a few ulps") {
    Rng rng(7, "band-width", 0);
    for (int i = 0; i < 200; ++i) {
        BandConfig cfg{rng.uniform(0.1, 0.99), rng.uniform(0.0, 2.0), rng.uniform(1e-4, 0.5),
                       rng.uniform(0.1, 3.0)};
        ThresholdBand b = compute_band(cfg);
        REQUIRE(b.width() == Catch::Approx(cfg.c * cfg.eps).epsilon(1e-12));
        REQUIRE(b.lower < b.upper);
    }
}

TEST_CASE("target_vectors matches the scaled-weight formula") {
    ModelInstance m = unit_axis_instance();
    Eigen::MatrixXd v = target_vectors(m, {0.95, 0.0, 0.1, 1.0});
    REQUIRE(v(0, 0) == Catch::Approx(oracle::kUpper_c95_e10).epsilon(1e-14));
    REQUIRE(v(0, 1) == 0.0);

    ModelInstance m2 = unit_axis_instance(4, 0.7);
    m2.c = 0.7;
    Eigen::MatrixXd v2 = target_vectors(m2, {0.7, 0.0, 0.1, 2.0});
    REQUIRE(v2(0, 0) == Catch::Approx(oracle::kTarget_c70).epsilon(1e-12));
}

TEST_CASE("property: |v_i| = upper/|w_i| for every weight") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        ModelInstance m = make_instance(3, 5, 0.5, 0.6, 0.2, {NoiseFamily::gaussian, 0.3}, seed);
        BandConfig cfg{0.5, 0.3, 0.08, 1.0};
        ThresholdBand band = compute_band(cfg);
        Eigen::MatrixXd v = target_vectors(m, cfg);
        for (int i = 0; i < m.k; ++i)
            REQUIRE(v.row(i).norm() ==
                    Catch::Approx(band.upper / m.weights.row(i).norm()).epsilon(1e-12));
    }
}

TEST_CASE("apply_threshold keeps exactly the strict interior") {
    ModelInstance m = unit_axis_instance();
    Dataset ds = sample_dataset(m, 64, 3);
    ThresholdBand band{0.9, 0.2};
    // plant exact boundary responses
    ds.y(0) = band.lower;
    ds.y(1) = band.upper;
    ds.y(2) = 0.5 * (band.lower + band.upper);

    ThresholdedSet ts = apply_threshold(ds, band);
    REQUIRE(ts.raw_count == 64);
    for (std::int64_t i = 0; i < ts.kept_count; ++i) {
        REQUIRE(ts.responses(i) > band.lower);
        REQUIRE(ts.responses(i) < band.upper);
    }
    // exhaustive cross-check of the rejected set
    std::int64_t inside = 0;
    for (std::int64_t i = 0; i < ds.size(); ++i)
        if (ds.y(i) > band.lower && ds.y(i) < band.upper) ++inside;
    REQUIRE(inside == ts.kept_count);
    // order preserved among the retained
    for (std::int64_t i = 0; i + 1 < ts.kept_count; ++i) REQUIRE(ts.responses(i) != 0.0);
}

TEST_CASE("apply_threshold on an empty selection") {
    ModelInstance m = unit_axis_instance();
    Dataset ds = sample_dataset(m, 10, 3);
    ds.y.setZero();
    REQUIRE_THROWS_AS(apply_threshold(ds, ThresholdBand{1.68, 1.58}), EmptySelectionError);
}

TEST_CASE("acceptance fraction matches the normal-band oracle") {
    ModelInstance m = unit_axis_instance(6);
    ThresholdBand band = compute_band({0.95, 0.0, 0.1, 1.0});
    const std::int64_t n = 1'000'000;
    Dataset ds = sample_dataset(m, n, 17);
    ThresholdedSet ts = apply_threshold(ds, band);
    double q = oracle::kBandProb_c95_e10;
    double se = std::sqrt(q * (1 - q) / static_cast<double>(n));
    REQUIRE(std::abs(static_cast<double>(ts.kept_count) / static_cast<double>(n) - q) <= 3 * se);
}

TEST_CASE("closed-form acceptance agrees with the oracle and flags bad noise") {
    ModelInstance m = unit_axis_instance();
    ThresholdBand band = compute_band({0.95, 0.0, 0.1, 1.0});
    AcceptanceRates rates = acceptance_rate(m, band, RateMethod::closed_form);
    REQUIRE(rates.per_component(0) == Catch::Approx(oracle::kBandProb_c95_e10).epsilon(1e-12));
    REQUIRE(rates.mixture == Catch::Approx(oracle::kBandProb_c95_e10).epsilon(1e-12));
    REQUIRE(rates.effective_mixing(0) == Catch::Approx(1.0));

    ModelInstance mu = unit_axis_instance(4, 1.0, {NoiseFamily::uniform_bounded, 0.3});
    REQUIRE_THROWS_AS(acceptance_rate(mu, band, RateMethod::closed_form), UnsupportedNoiseError);
}

TEST_CASE("zero-width band accepts nothing") {
    ModelInstance m = unit_axis_instance();
    ThresholdBand degenerate{1.5, 1.5};
    AcceptanceRates rates = acceptance_rate(m, degenerate, RateMethod::closed_form);
    REQUIRE(rates.per_component(0) == 0.0);
    REQUIRE(rates.mixture == 0.0);
}

TEST_CASE("monte carlo acceptance agrees with closed form within 3 SE") {
    ModelInstance m = make_instance(2, 4, 0.8, 0.85, 0.4, {NoiseFamily::gaussian, 0.2}, 23);
    ThresholdBand band = compute_band({0.8, 0.2, 0.1, 1.0});
    AcceptanceRates cf = acceptance_rate(m, band, RateMethod::closed_form);
    const std::int64_t mc_n = 1'000'000;
    AcceptanceRates mc = acceptance_rate(m, band, RateMethod::monte_carlo, mc_n, 77);
    for (int i = 0; i < 2; ++i) {
        double q = cf.per_component(i);
        double n_i = static_cast<double>(mc_n) * m.mixing(i);
        double se = std::sqrt(q * (1 - q) / n_i);
        REQUIRE(std::abs(mc.per_component(i) - q) <= 3 * se);
    }
}

TEST_CASE("effective mixing equals mixing for equal norms and shared noise") {
    ModelInstance m = make_instance(2, 4, 0.8, 0.85, 0.3, {NoiseFamily::gaussian, 0.2}, 29);
    // force equal norms
    m.weights.row(0) *= 0.9 / m.weights.row(0).norm();
    m.weights.row(1) *= 0.9 / m.weights.row(1).norm();
    ThresholdBand band = compute_band({0.8, 0.2, 0.1, 1.0});
    AcceptanceRates rates = acceptance_rate(m, band, RateMethod::closed_form);
    REQUIRE(rates.effective_mixing(0) == Catch::Approx(m.mixing(0)).epsilon(1e-12));
    REQUIRE(rates.effective_mixing.sum() == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("required_raw_samples arithmetic and caps") {
    REQUIRE(required_raw_from_rate(0.00968, 10000, 1.5) == 1549587);
    REQUIRE(required_raw_from_rate(1.0, 10000, 1.5) == 15000);
    REQUIRE_THROWS_AS(required_raw_from_rate(0.0, 10000, 1.5), InfeasibleBudgetError);

    // c = 0.7, C' = 2: the band sits ~8.7 sd deep, rate ~6e-19
    ModelInstance m = unit_axis_instance(4, 0.7);
    m.c = 0.63;
    ThresholdBand band = compute_band({0.7, 0.0, 0.1, 2.0});
    REQUIRE_THROWS_AS(required_raw_samples(m, band, 10000, 1.5), InfeasibleBudgetError);
}

TEST_CASE("conditional sampler agrees with the generate-then-filter path") {
    ModelInstance m = make_instance(2, 5, 0.7, 0.8, 0.35, {NoiseFamily::gaussian, 0.3}, 31);
    ThresholdBand band = compute_band({0.7, 0.3, 0.2, 1.0});
    const std::int64_t n = 400'000;

    Dataset ds = sample_dataset(m, n, 99);
    ThresholdedSet direct = apply_threshold(ds, band);
    ThresholdedSet fused = sample_thresholded(m, band, n, 99);

    double q = static_cast<double>(direct.kept_count) / static_cast<double>(n);
    double se_q = std::sqrt(q * (1 - q) / static_cast<double>(n));
    double q_fused = static_cast<double>(fused.kept_count) / static_cast<double>(n);
    REQUIRE(std::abs(q_fused - q) <= 4 * se_q);

    // retained covariate means agree within Monte Carlo error
    Eigen::VectorXd mean_direct = direct.points.colwise().mean();
    Eigen::VectorXd mean_fused = fused.points.colwise().mean();
    double se_mean = 2.0 / std::sqrt(static_cast<double>(std::min(direct.kept_count, fused.kept_count)));
    for (int j = 0; j < m.d; ++j)
        REQUIRE(std::abs(mean_direct(j) - mean_fused(j)) <= 4 * se_mean);

    // responses really sit inside the band and labels are plausible
    for (std::int64_t i = 0; i < fused.kept_count; ++i) {
        REQUIRE(band.contains(fused.responses(i)));
        REQUIRE(fused.hidden_labels[static_cast<std::size_t>(i)] >= 0);
        REQUIRE(fused.hidden_labels[static_cast<std::size_t>(i)] < 2);
    }
}

TEST_CASE("conditional sampler is deterministic and thread-invariant") {
    ModelInstance m = make_instance(2, 4, 0.7, 0.8, 0.35, {NoiseFamily::gaussian, 0.2}, 37);
    ThresholdBand band = compute_band({0.7, 0.2, 0.2, 1.0});
    ThresholdedSet a = sample_thresholded(m, band, 200'000, 5, 1);
    ThresholdedSet b = sample_thresholded(m, band, 200'000, 5, 4);
    REQUIRE(a.kept_count == b.kept_count);
    REQUIRE(a.points == b.points);
    REQUIRE(a.responses == b.responses);
    REQUIRE(a.hidden_labels == b.hidden_labels);
}

TEST_CASE("conditional sampler reproduces the signal identity y = <w_z, x> + eta") {
    ModelInstance m = make_instance(2, 4, 0.7, 0.8, 0.35, {NoiseFamily::zero, 0.0}, 41);
    ThresholdBand band = compute_band({0.7, 0.0, 0.2, 1.0});
    ThresholdedSet ts = sample_thresholded(m, band, 100'000, 7);
    for (std::int64_t i = 0; i < ts.kept_count; ++i) {
        int z = ts.hidden_labels[static_cast<std::size_t>(i)];
        REQUIRE(m.weights.row(z).dot(ts.points.row(i)) ==
                Catch::Approx(ts.responses(i)).epsilon(1e-10));
    }
}

TEST_CASE("thresholded CSV round-trips") {
    ModelInstance m = make_instance(2, 3, 0.7, 0.8, 0.35, {NoiseFamily::gaussian, 0.2}, 43);
    ThresholdBand band = compute_band({0.7, 0.2, 0.2, 1.0});
    ThresholdedSet ts = sample_thresholded(m, band, 50'000, 9);

    std::stringstream ss;
    write_thresholded_csv(ts, ss);
    std::string text = ss.str();
    REQUIRE(text.rfind("# mlr-thresholded v1 lower=", 0) == 0);

    std::stringstream in(text);
    ThresholdedSet back = read_thresholded_csv(in);
    REQUIRE(back.band.lower == ts.band.lower);
    REQUIRE(back.band.upper == ts.band.upper);
    REQUIRE(back.points == ts.points);
    REQUIRE(back.responses == ts.responses);
    REQUIRE(back.hidden_labels == ts.hidden_labels);
}

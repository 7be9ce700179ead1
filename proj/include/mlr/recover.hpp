#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "mlr/assignment.hpp"
#include "mlr/cluster.hpp"
#include "mlr/errors.hpp"
#include "mlr/threshold.hpp"

namespace mlr {

struct WeightEstimate {
    Eigen::VectorXd direction;  // unit vector
    double magnitude = 0.0;     // positive
    Eigen::VectorXd w_star;     // magnitude * direction
    int cluster_index = -1;
    std::int64_t kept_count = 0;
};

struct RecoveryOutput {
    std::vector<WeightEstimate> estimates;
    ThresholdBand band;
    std::int64_t raw_count = 0;
    std::int64_t kept_count = 0;
    Eigen::VectorXd effective_mixing;  // realized cluster shares
    std::map<std::string, double> diagnostics;
};

/// Normalized cluster mean; the weight direction coincides with the direction
/// of the band's target vector.
inline Eigen::VectorXd estimate_direction(const Eigen::VectorXd& cluster_mean,
                                          double direction_floor = 1e-6) {
    double n = cluster_mean.norm();
    if (!(n > direction_floor))
        throw NearZeroMeanError("estimate_direction: cluster mean norm " + format_double17(n) +
                                " below floor " + format_double17(direction_floor));
    return cluster_mean / n;
}

/// Ratio estimator for |w|: (mean of responses) / (direction . mean of points).
inline double estimate_magnitude(const Eigen::MatrixXd& cluster_points,
                                 const Eigen::VectorXd& cluster_responses,
                                 const Eigen::VectorXd& direction,
                                 std::int64_t min_count = 100, double denom_floor = 1e-6) {
    const auto n = cluster_points.rows();
    if (n != cluster_responses.size())
        throw DomainError("estimate_magnitude: points/responses size mismatch");
    if (n < min_count)
        throw SmallClusterError("estimate_magnitude: cluster of " + std::to_string(n) +
                                " points, need at least " + std::to_string(min_count));
    double mean_y = cluster_responses.mean();
    double denom = direction.dot(cluster_points.colwise().mean().transpose());
    if (!(std::abs(denom) > denom_floor))
        throw SignError("estimate_magnitude: projected mean " + format_double17(denom) +
                        " below floor");
    double ratio = mean_y / denom;
    if (!(ratio > 0.0))
        throw SignError("estimate_magnitude: nonpositive ratio " + format_double17(ratio) +
                        "; direction points away from the band side");
    return ratio;
}

/// Noise-tilt corrected magnitude for Gaussian noise with known sigma.
///
/// Conditioning on the band tilts the noise: with W = |w| and
/// P = W^2 + sigma^2, the retained cluster satisfies
///   mean(y) approx ybar,   direction . mean(x) approx ybar W / P,
///   var(x . direction)  approx sigma^2 / P + (W/P)^2 var(y).
/// The plain ratio therefore estimates P/W, which is biased by sigma^2/W.
/// Solving the variance relation for P and substituting gives
///   W = (direction . mean(x)) * P / ybar,  P = sigma^2 / (v_x - (A/ybar)^2 v_y)
/// which stays well conditioned even when sigma exceeds W.
inline double estimate_magnitude_noise_corrected(const Eigen::MatrixXd& cluster_points,
                                                 const Eigen::VectorXd& cluster_responses,
                                                 const Eigen::VectorXd& direction, double sigma,
                                                 std::int64_t min_count = 100,
                                                 double denom_floor = 1e-6) {
    const auto n = cluster_points.rows();
    if (n < min_count)
        throw SmallClusterError("corrected magnitude: cluster of " + std::to_string(n) +
                                " points, need at least " + std::to_string(min_count));
    double mean_y = cluster_responses.mean();
    Eigen::VectorXd proj = cluster_points * direction;
    double a = proj.mean();
    if (!(std::abs(a) > denom_floor) || !(std::abs(mean_y) > denom_floor))
        throw SignError("corrected magnitude: vanishing projected mean");
    double var_x = (proj.array() - a).square().sum() / static_cast<double>(n - 1);
    double var_y = (cluster_responses.array() - mean_y).square().sum() / static_cast<double>(n - 1);
    double ratio_sq = (a / mean_y) * (a / mean_y);
    double denom = var_x - ratio_sq * var_y;
    if (!(denom > 0.0)) {
        // sampling noise swallowed the noise variance; plain ratio is safer here
        return estimate_magnitude(cluster_points, cluster_responses, direction, min_count, denom_floor);
    }
    double p_hat = sigma * sigma / denom;
    double w = a * p_hat / mean_y;
    if (!(w > 0.0) || !std::isfinite(w))
        throw SignError("corrected magnitude: nonpositive estimate");
    return w;
}

/// Optional magnitude debias applied by the pipeline. The plain ratio
/// estimator carries an O(sigma^2/c) bias from the band's tilt of the noise;
/// it is negligible for small sigma, so the correction switches on only past
/// sigma_switch_ratio * c (Gaussian noise only; other families fall back to
/// the plain ratio).
struct MagnitudeCorrection {
    bool enabled = false;
    double sigma = 0.0;

    static MagnitudeCorrection none() { return {}; }

    static MagnitudeCorrection auto_rule(const NoiseModel& noise, double c,
                                         double sigma_switch_ratio = 0.15) {
        MagnitudeCorrection corr;
        corr.sigma = noise.sigma;
        corr.enabled = noise.family == NoiseFamily::gaussian && noise.sigma > sigma_switch_ratio * c;
        return corr;
    }
};

/// Cluster the thresholded points and turn each cluster into a weight
/// estimate: direction from the normalized cluster mean, magnitude from the
/// response/projection ratio over the same cluster.
inline RecoveryOutput recover_weights(const ThresholdedSet& ts, int k, const ClusterParams& params,
                                      const ThresholdBand& band,
                                      const MagnitudeCorrection& correction = MagnitudeCorrection::none(),
                                      std::int64_t magnitude_min_count = 100) {
    if (ts.kept_count <= 0) throw EmptySelectionError("recover_weights: empty thresholded set");
    if (k < 1) throw ValidationError("recover_weights: k must be >= 1");

    // every retained response is bounded by the band top in magnitude
    for (std::int64_t i = 0; i < ts.kept_count; ++i) {
        if (!(std::abs(ts.responses(i)) <= band.upper))
            throw DomainError("recover_weights: retained |y| exceeds band.upper; "
                              "band is too shallow for this configuration");
    }

    ClusterParams cp = params;
    cp.k = k;
    ClusterResult clusters = cluster_points(ts.points, cp);

    RecoveryOutput out;
    out.band = band;
    out.raw_count = ts.raw_count;
    out.kept_count = ts.kept_count;
    out.effective_mixing.resize(k);

    const auto d = ts.points.cols();
    for (int i = 0; i < k; ++i) {
        const auto size = clusters.sizes[static_cast<std::size_t>(i)];
        Eigen::MatrixXd member_x(size, d);
        Eigen::VectorXd member_y(size);
        Eigen::Index r = 0;
        for (std::int64_t p = 0; p < ts.kept_count; ++p) {
            if (clusters.assignment[static_cast<std::size_t>(p)] != i) continue;
            member_x.row(r) = ts.points.row(p);
            member_y(r) = ts.responses(p);
            ++r;
        }

        try {
            WeightEstimate est;
            est.cluster_index = i;
            est.kept_count = size;
            est.direction = estimate_direction(clusters.means.row(i).transpose());
            est.magnitude = correction.enabled
                                ? estimate_magnitude_noise_corrected(member_x, member_y, est.direction,
                                                                     correction.sigma, magnitude_min_count)
                                : estimate_magnitude(member_x, member_y, est.direction, magnitude_min_count);
            est.w_star = est.magnitude * est.direction;
            out.estimates.push_back(std::move(est));
        } catch (NumericalError& e) {
            throw NumericalError("cluster " + std::to_string(i) + ": " + e.what());
        }
        out.effective_mixing(i) = static_cast<double>(size) / static_cast<double>(ts.kept_count);
    }

    out.diagnostics["cluster_objective"] = clusters.objective;
    out.diagnostics["acceptance_realized"] =
        static_cast<double>(ts.kept_count) / static_cast<double>(std::max<std::int64_t>(ts.raw_count, 1));
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct MatchResult {
    std::vector<int> permutation;  // estimate i matched to truth permutation[i]
    std::vector<double> errors;    // l2 error of estimate i against its match
    double max_error = 0.0;
    double total_cost = 0.0;
};

/// Minimum-total-cost matching of estimate rows to truth rows under l2
/// distance; brute force over permutations up to k = 8, Hungarian above.
inline MatchResult match_rows(const Eigen::MatrixXd& est, const Eigen::MatrixXd& truth) {
    const int k = static_cast<int>(est.rows());
    if (truth.rows() != k || truth.cols() != est.cols())
        throw DomainError("match_rows: estimate/truth shape mismatch");

    Eigen::MatrixXd cost(k, k);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) cost(i, j) = (est.row(i) - truth.row(j)).norm();

    MatchResult res;
    res.permutation.resize(static_cast<std::size_t>(k));
    if (k <= 8) {
        std::vector<int> perm(static_cast<std::size_t>(k));
        std::iota(perm.begin(), perm.end(), 0);
        double best = std::numeric_limits<double>::infinity();
        std::vector<int> best_perm = perm;
        do {
            double total = 0.0;
            for (int i = 0; i < k; ++i) total += cost(i, perm[static_cast<std::size_t>(i)]);
            if (total < best) {
                best = total;
                best_perm = perm;
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
        res.permutation = best_perm;
        res.total_cost = best;
    } else {
        res.total_cost = hungarian_min_cost(cost, res.permutation);
    }

    res.errors.resize(static_cast<std::size_t>(k));
    res.max_error = 0.0;
    for (int i = 0; i < k; ++i) {
        double e = cost(i, res.permutation[static_cast<std::size_t>(i)]);
        res.errors[static_cast<std::size_t>(i)] = e;
        res.max_error = std::max(res.max_error, e);
    }
    return res;
}

inline MatchResult match_and_score(const std::vector<WeightEstimate>& estimates,
                                   const Eigen::MatrixXd& truth) {
    const int k = static_cast<int>(estimates.size());
    if (k != truth.rows()) throw DomainError("match_and_score: estimate/truth count mismatch");
    Eigen::MatrixXd est(k, truth.cols());
    for (int i = 0; i < k; ++i) est.row(i) = estimates[static_cast<std::size_t>(i)].w_star.transpose();
    return match_rows(est, truth);
}

} // namespace mlr

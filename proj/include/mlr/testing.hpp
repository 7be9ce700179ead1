#pragma once

// Test-only bypass: clusters are taken from the hidden ground-truth labels
// instead of the clustering backend, isolating the estimation steps from
// clustering error. Guarded so it cannot be linked into release tools.
#ifndef MLR_ENABLE_LABEL_BYPASS
#error "mlr/testing.hpp is test-only; build with MLR_ENABLE_LABEL_BYPASS"
#endif

#include <Eigen/Dense>

#include "mlr/recover.hpp"
#include "mlr/threshold.hpp"

namespace mlr::testing {

/// Per-component estimates with the partition fixed to the true labels.
inline RecoveryOutput recover_with_true_labels(const ThresholdedSet& ts, int k,
                                               const ThresholdBand& band,
                                               std::int64_t magnitude_min_count = 100) {
    if (ts.kept_count <= 0) throw EmptySelectionError("label bypass: empty thresholded set");

    RecoveryOutput out;
    out.band = band;
    out.raw_count = ts.raw_count;
    out.kept_count = ts.kept_count;
    out.effective_mixing.resize(k);

    const auto d = ts.points.cols();
    for (int i = 0; i < k; ++i) {
        std::int64_t size = 0;
        for (int z : ts.hidden_labels)
            if (z == i) ++size;
        Eigen::MatrixXd member_x(size, d);
        Eigen::VectorXd member_y(size);
        Eigen::Index r = 0;
        for (std::int64_t p = 0; p < ts.kept_count; ++p) {
            if (ts.hidden_labels[static_cast<std::size_t>(p)] != i) continue;
            member_x.row(r) = ts.points.row(p);
            member_y(r) = ts.responses(p);
            ++r;
        }
        WeightEstimate est;
        est.cluster_index = i;
        est.kept_count = size;
        est.direction = estimate_direction(member_x.colwise().mean().transpose());
        est.magnitude = estimate_magnitude(member_x, member_y, est.direction, magnitude_min_count);
        est.w_star = est.magnitude * est.direction;
        out.estimates.push_back(std::move(est));
        out.effective_mixing(i) = static_cast<double>(size) / static_cast<double>(ts.kept_count);
    }
    return out;
}

} // namespace mlr::testing

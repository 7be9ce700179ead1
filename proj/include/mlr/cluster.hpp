#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mlr/errors.hpp"
#include "mlr/rng.hpp"
#include "mlr/stats.hpp"

namespace mlr {

enum class ClusterBackend { single_linkage_cut, kmeans_pp, trimmed_kmeans };

inline std::string backend_name(ClusterBackend b) {
    switch (b) {
        case ClusterBackend::single_linkage_cut: return "single_linkage_cut";
        case ClusterBackend::kmeans_pp: return "kmeans_pp";
        case ClusterBackend::trimmed_kmeans: return "trimmed_kmeans";
    }
    return "?";
}

inline ClusterBackend parse_backend(const std::string& name) {
    if (name == "single_linkage_cut") return ClusterBackend::single_linkage_cut;
    if (name == "kmeans_pp") return ClusterBackend::kmeans_pp;
    if (name == "trimmed_kmeans") return ClusterBackend::trimmed_kmeans;
    throw ValidationError("unknown cluster backend: " + name);
}

struct ClusterParams {
    int k = 1;
    ClusterBackend backend = ClusterBackend::kmeans_pp;
    int restarts = 20;
    double trim_fraction = 0.05;  // trimmed_kmeans only
    bool pca_preprocess = true;   // applied when d > 2k
    int max_iters = 200;
    std::uint64_t seed = 0;

    void validate() const {
        if (k < 1) throw ValidationError("cluster: k must be >= 1");
        if (restarts < 1) throw ValidationError("cluster: restarts must be >= 1");
        if (!(trim_fraction >= 0.0 && trim_fraction <= 0.2))
            throw ValidationError("cluster: trim_fraction must be in [0, 0.2]");
        if (max_iters < 1) throw ValidationError("cluster: max_iters must be >= 1");
    }
};

struct ClusterResult {
    std::vector<int> assignment;       // label in [0,k) per point
    Eigen::MatrixXd means;             // k x d, ambient-space cluster means
    std::vector<std::int64_t> sizes;   // per label, over all points
    double objective = 0.0;            // within-cluster SSQ of the winning restart
    ClusterBackend backend_used = ClusterBackend::kmeans_pp;
    std::vector<double> objective_trace;  // per-iteration objective, winning restart
};

// ---------------------------------------------------------------------------
// PCA preprocessing
// ---------------------------------------------------------------------------

/// Top-k subspace of the uncentered second moment. Uncentered because the
/// cluster means themselves carry the signal; centering would erase a common
/// mean direction (k = 1 would project it away entirely).
struct PcaProjection {
    Eigen::MatrixXd projected;  // n x k
    Eigen::MatrixXd basis;      // k x d, orthonormal rows, leading axis first

    Eigen::VectorXd lift(const Eigen::VectorXd& mean_k) const { return basis.transpose() * mean_k; }
};

inline PcaProjection pca_project(const Eigen::MatrixXd& points, int k) {
    const auto n = points.rows();
    const auto d = points.cols();
    if (k < 1 || n < k) throw DomainError("pca_project: need at least k points");
    if (d < k) throw DomainError("pca_project: need d >= k");

    Eigen::MatrixXd second_moment = (points.transpose() * points) / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(second_moment);
    if (eig.info() != Eigen::Success) throw NumericalError("pca_project: eigendecomposition failed");
    const Eigen::VectorXd& vals = eig.eigenvalues();  // ascending
    double top = vals(d - 1);
    double kth = vals(d - k);
    if (!(top > 0.0) || kth <= top * 1e-12)
        throw RankError("pca_project: numerical rank below k");

    PcaProjection out;
    out.basis.resize(k, d);
    for (int j = 0; j < k; ++j) {
        Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - j);
        // deterministic sign: largest-|coefficient| entry made positive
        Eigen::Index arg;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        out.basis.row(j) = v.transpose();
    }
    out.projected = points * out.basis.transpose();
    return out;
}

/// Leading axis of the uncentered second moment, sign-fixed; used to order
/// cluster labels deterministically.
inline Eigen::VectorXd principal_axis(const Eigen::MatrixXd& points) {
    Eigen::MatrixXd second_moment =
        (points.transpose() * points) / static_cast<double>(points.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(second_moment);
    Eigen::VectorXd v = eig.eigenvectors().col(points.cols() - 1);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    return v;
}

// ---------------------------------------------------------------------------
// Robust mean
// ---------------------------------------------------------------------------

/// Coordinate-wise trimmed mean: per coordinate, drop the floor(trim*n)
/// smallest and largest values and average the rest. trim = 0 reduces to the
/// arithmetic mean exactly.
inline Eigen::VectorXd robust_mean(const Eigen::MatrixXd& points, double trim_fraction) {
    const auto n = points.rows();
    const auto d = points.cols();
    if (!(trim_fraction >= 0.0 && trim_fraction < 0.5))
        throw DomainError("robust_mean: trim_fraction must be in [0, 0.5)");
    if (n < 3) throw DomainError("robust_mean: need at least 3 points");

    const auto g = static_cast<std::int64_t>(std::floor(trim_fraction * static_cast<double>(n)));
    Eigen::VectorXd out(d);
    std::vector<double> col(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < d; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = points(i, j);
        std::sort(col.begin(), col.end());
        NeumaierSum acc;
        for (std::int64_t i = g; i < n - g; ++i) acc.add(col[static_cast<std::size_t>(i)]);
        out(j) = acc.value() / static_cast<double>(n - 2 * g);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backends (operate in the working space; ambient means are recomputed later)
// ---------------------------------------------------------------------------

namespace detail {

struct BackendRun {
    std::vector<int> assignment;
    std::vector<char> kept;  // trimmed_kmeans: untrimmed mask; others: all ones
    double objective = std::numeric_limits<double>::infinity();
    std::vector<double> trace;
    bool valid = false;
};

/// Squared distances points x centers via one GEMM per iteration.
inline void pairwise_sq_dists(const Eigen::MatrixXd& w, const Eigen::VectorXd& row_norms2,
                              const Eigen::MatrixXd& centers, Eigen::MatrixXd& out) {
    out.noalias() = -2.0 * (w * centers.transpose());
    out.colwise() += row_norms2;
    out.rowwise() += centers.rowwise().squaredNorm().transpose();
}

inline Eigen::MatrixXd kmeanspp_init(const Eigen::MatrixXd& w, int k, Rng& rng) {
    const auto n = w.rows();
    Eigen::MatrixXd centers(k, w.cols());
    auto first = static_cast<Eigen::Index>(rng.uniform() * static_cast<double>(n));
    first = std::min(first, n - 1);
    centers.row(0) = w.row(first);
    Eigen::VectorXd min_d2 = (w.rowwise() - centers.row(0)).rowwise().squaredNorm();
    for (int j = 1; j < k; ++j) {
        double total = min_d2.sum();
        Eigen::Index pick;
        if (total > 0.0) {
            double u = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += min_d2(i);
                if (u < acc) { pick = i; break; }
            }
        } else {
            pick = std::min(static_cast<Eigen::Index>(rng.uniform() * static_cast<double>(n)), n - 1);
        }
        centers.row(j) = w.row(pick);
        min_d2 = min_d2.cwiseMin((w.rowwise() - centers.row(j)).rowwise().squaredNorm());
    }
    return centers;
}

/// Ties go to the lower-indexed center (strict < while scanning in order).
inline void assign_nearest(const Eigen::MatrixXd& d2, std::vector<int>& assignment) {
    const auto n = d2.rows();
    const int k = static_cast<int>(d2.cols());
    assignment.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        int best = 0;
        double bd = d2(i, 0);
        for (int j = 1; j < k; ++j)
            if (d2(i, j) < bd) { bd = d2(i, j); best = j; }
        assignment[static_cast<std::size_t>(i)] = best;
    }
}

/// Lloyd iterations; with trim > 0 this is the classical trimmed k-means:
/// the floor(trim*n) points farthest from their centers are excluded from the
/// mean update and the objective, which keeps the objective monotone.
/// A repair (reseeding an empty center) resets the monotonic trace.
inline BackendRun lloyd_run(const Eigen::MatrixXd& w, int k, int max_iters, double trim, Rng& rng) {
    const auto n = w.rows();
    const auto dim = w.cols();
    const auto n_trim = static_cast<std::int64_t>(std::floor(trim * static_cast<double>(n)));
    Eigen::VectorXd row_norms2 = w.rowwise().squaredNorm();
    Eigen::MatrixXd centers = kmeanspp_init(w, k, rng);
    Eigen::MatrixXd d2(n, k);

    BackendRun run;
    run.kept.assign(static_cast<std::size_t>(n), 1);
    std::vector<int> prev_assignment;
    std::vector<char> prev_kept;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    int repairs_left = k;

    for (int iter = 0; iter < max_iters; ++iter) {
        pairwise_sq_dists(w, row_norms2, centers, d2);
        assign_nearest(d2, run.assignment);

        // empty-cluster repair: reseed at the point farthest from its center
        bool repaired = false;
        for (;;) {
            std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);
            for (int a : run.assignment) ++counts[static_cast<std::size_t>(a)];
            int empty = -1;
            for (int j = 0; j < k; ++j)
                if (counts[static_cast<std::size_t>(j)] == 0) { empty = j; break; }
            if (empty < 0) break;
            if (repairs_left-- <= 0) return run;  // invalid, caller restarts
            Eigen::Index far = 0;
            double far_d = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                double di = d2(i, run.assignment[static_cast<std::size_t>(i)]);
                if (di > far_d) { far_d = di; far = i; }
            }
            centers.row(empty) = w.row(far);
            pairwise_sq_dists(w, row_norms2, centers, d2);
            assign_nearest(d2, run.assignment);
            repaired = true;
        }
        if (repaired) run.trace.clear();

        // trimming: drop the n_trim globally largest assigned distances
        std::fill(run.kept.begin(), run.kept.end(), 1);
        if (n_trim > 0) {
            std::iota(order.begin(), order.end(), Eigen::Index{0});
            std::nth_element(order.begin(), order.begin() + (n - n_trim), order.end(),
                             [&](Eigen::Index a, Eigen::Index b) {
                                 double da = d2(a, run.assignment[static_cast<std::size_t>(a)]);
                                 double db = d2(b, run.assignment[static_cast<std::size_t>(b)]);
                                 return da != db ? da < db : a < b;
                             });
            for (std::int64_t t = n - n_trim; t < n; ++t)
                run.kept[static_cast<std::size_t>(order[static_cast<std::size_t>(t)])] = 0;
        }

        // mean update over kept points
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, dim);
        std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!run.kept[static_cast<std::size_t>(i)]) continue;
            int a = run.assignment[static_cast<std::size_t>(i)];
            sums.row(a) += w.row(i);
            ++counts[static_cast<std::size_t>(a)];
        }
        for (int j = 0; j < k; ++j)
            if (counts[static_cast<std::size_t>(j)] > 0)
                centers.row(j) = sums.row(j) / static_cast<double>(counts[static_cast<std::size_t>(j)]);

        // objective with the updated means
        pairwise_sq_dists(w, row_norms2, centers, d2);
        NeumaierSum obj;
        for (Eigen::Index i = 0; i < n; ++i)
            if (run.kept[static_cast<std::size_t>(i)])
                obj.add(d2(i, run.assignment[static_cast<std::size_t>(i)]));
        run.trace.push_back(obj.value());

        if (run.assignment == prev_assignment && run.kept == prev_kept) break;
        prev_assignment = run.assignment;
        prev_kept = run.kept;
    }

    run.objective = run.trace.empty() ? std::numeric_limits<double>::infinity() : run.trace.back();
    run.valid = true;
    return run;
}

/// Single-linkage cut: MST over a (possibly subsampled) point set, remove the
/// k-1 longest edges, then assign every point to the nearest component mean.
inline BackendRun single_linkage_run(const Eigen::MatrixXd& w, int k, Rng& rng) {
    const auto n = w.rows();
    const Eigen::Index max_linkage = 4096;
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    Eigen::Index m = std::min(n, max_linkage);
    if (m < n) {
        for (Eigen::Index i = 0; i < m; ++i) {
            auto j = i + static_cast<Eigen::Index>(rng.uniform() * static_cast<double>(n - i));
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(std::min(j, n - 1))]);
        }
        idx.resize(static_cast<std::size_t>(m));
        std::sort(idx.begin(), idx.end());
    }

    // Prim MST on the subsample
    std::vector<char> in_tree(static_cast<std::size_t>(m), 0);
    std::vector<double> best_d2(static_cast<std::size_t>(m), std::numeric_limits<double>::infinity());
    std::vector<Eigen::Index> best_from(static_cast<std::size_t>(m), 0);
    struct Edge { Eigen::Index a, b; double d2; };
    std::vector<Edge> mst;
    mst.reserve(static_cast<std::size_t>(m) - 1);
    Eigen::Index current = 0;
    in_tree[0] = 1;
    for (Eigen::Index added = 1; added < m; ++added) {
        for (Eigen::Index i = 0; i < m; ++i) {
            if (in_tree[static_cast<std::size_t>(i)]) continue;
            double d2 = (w.row(idx[static_cast<std::size_t>(i)]) - w.row(idx[static_cast<std::size_t>(current)])).squaredNorm();
            if (d2 < best_d2[static_cast<std::size_t>(i)]) {
                best_d2[static_cast<std::size_t>(i)] = d2;
                best_from[static_cast<std::size_t>(i)] = current;
            }
        }
        Eigen::Index next = -1;
        double nd = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < m; ++i)
            if (!in_tree[static_cast<std::size_t>(i)] && best_d2[static_cast<std::size_t>(i)] < nd) {
                nd = best_d2[static_cast<std::size_t>(i)];
                next = i;
            }
        mst.push_back({best_from[static_cast<std::size_t>(next)], next, nd});
        in_tree[static_cast<std::size_t>(next)] = 1;
        current = next;
    }

    // cut the k-1 longest edges, flood components over the rest
    std::sort(mst.begin(), mst.end(), [](const Edge& a, const Edge& b) { return a.d2 > b.d2; });
    std::vector<Eigen::Index> parent(static_cast<std::size_t>(m));
    std::iota(parent.begin(), parent.end(), Eigen::Index{0});
    std::function<Eigen::Index(Eigen::Index)> find = [&](Eigen::Index a) {
        while (parent[static_cast<std::size_t>(a)] != a) {
            parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
            a = parent[static_cast<std::size_t>(a)];
        }
        return a;
    };
    for (std::size_t e = static_cast<std::size_t>(k) - 1; e < mst.size(); ++e)
        parent[static_cast<std::size_t>(find(mst[e].a))] = find(mst[e].b);

    std::vector<int> comp_of(static_cast<std::size_t>(m), -1);
    int n_comp = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
        Eigen::Index root = find(i);
        if (comp_of[static_cast<std::size_t>(root)] < 0) comp_of[static_cast<std::size_t>(root)] = n_comp++;
        comp_of[static_cast<std::size_t>(i)] = comp_of[static_cast<std::size_t>(root)];
    }

    Eigen::MatrixXd centers = Eigen::MatrixXd::Zero(k, w.cols());
    std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < m; ++i) {
        centers.row(comp_of[static_cast<std::size_t>(i)]) += w.row(idx[static_cast<std::size_t>(i)]);
        ++counts[static_cast<std::size_t>(comp_of[static_cast<std::size_t>(i)])];
    }
    for (int j = 0; j < k; ++j)
        if (counts[static_cast<std::size_t>(j)] > 0) centers.row(j) /= static_cast<double>(counts[static_cast<std::size_t>(j)]);

    BackendRun run;
    Eigen::VectorXd row_norms2 = w.rowwise().squaredNorm();
    Eigen::MatrixXd d2(n, k);
    pairwise_sq_dists(w, row_norms2, centers, d2);
    assign_nearest(d2, run.assignment);

    std::vector<std::int64_t> full_counts(static_cast<std::size_t>(k), 0);
    for (int a : run.assignment) ++full_counts[static_cast<std::size_t>(a)];
    for (int j = 0; j < k; ++j)
        if (full_counts[static_cast<std::size_t>(j)] == 0) return run;  // invalid

    // one mean refresh, then score
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, w.cols());
    for (Eigen::Index i = 0; i < n; ++i) sums.row(run.assignment[static_cast<std::size_t>(i)]) += w.row(i);
    for (int j = 0; j < k; ++j) centers.row(j) = sums.row(j) / static_cast<double>(full_counts[static_cast<std::size_t>(j)]);
    pairwise_sq_dists(w, row_norms2, centers, d2);
    NeumaierSum obj;
    for (Eigen::Index i = 0; i < n; ++i) obj.add(d2(i, run.assignment[static_cast<std::size_t>(i)]));
    run.kept.assign(static_cast<std::size_t>(n), 1);
    run.trace.push_back(obj.value());
    run.objective = obj.value();
    run.valid = true;
    return run;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Front end
// ---------------------------------------------------------------------------

/// Partitions points into k groups. Preprocessing projects to the top-k
/// principal subspace when d > 2k. Restarts are independent streams; the best
/// objective wins, ties broken by restart index. Reported means are always
/// arithmetic means of the assigned points in the ambient space (over the
/// untrimmed points for the trimmed backend); labels are ordered by the
/// projection of the means onto the leading principal axis.
inline ClusterResult cluster_points(const Eigen::MatrixXd& points, const ClusterParams& params) {
    params.validate();
    const auto n = points.rows();
    const auto d = points.cols();
    const int k = params.k;
    if (n < static_cast<Eigen::Index>(10) * k)
        throw DomainError("cluster_points: need at least 10*k points, got " + std::to_string(n));

    ClusterResult result;
    result.backend_used = params.backend;

    if (k == 1) {
        result.assignment.assign(static_cast<std::size_t>(n), 0);
        result.means = points.colwise().mean();
        result.sizes = {n};
        result.objective = (points.rowwise() - result.means.row(0)).rowwise().squaredNorm().sum();
        result.objective_trace = {result.objective};
        return result;
    }

    const bool use_pca = params.pca_preprocess && d > 2 * k;
    PcaProjection pca;
    if (use_pca) pca = pca_project(points, k);
    const Eigen::MatrixXd& w = use_pca ? pca.projected : points;

    detail::BackendRun best;
    for (int r = 0; r < params.restarts; ++r) {
        Rng rng(params.seed, "cluster-restart", static_cast<std::uint64_t>(r));
        detail::BackendRun run;
        switch (params.backend) {
            case ClusterBackend::kmeans_pp:
                run = detail::lloyd_run(w, k, params.max_iters, 0.0, rng);
                break;
            case ClusterBackend::trimmed_kmeans:
                run = detail::lloyd_run(w, k, params.max_iters, params.trim_fraction, rng);
                break;
            case ClusterBackend::single_linkage_cut:
                run = detail::single_linkage_run(w, k, rng);
                break;
        }
        if (run.valid && run.objective < best.objective) best = std::move(run);
        if (params.backend == ClusterBackend::single_linkage_cut && best.valid && n <= 4096)
            break;  // deterministic without subsampling; more restarts are identical
    }
    if (!best.valid)
        throw DegenerateClusterError("cluster_points: all restarts produced an empty cluster");

    // ambient means over (kept) members
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
    std::vector<std::int64_t> kept_counts(static_cast<std::size_t>(k), 0);
    std::vector<std::int64_t> sizes(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
        int a = best.assignment[static_cast<std::size_t>(i)];
        ++sizes[static_cast<std::size_t>(a)];
        if (!best.kept[static_cast<std::size_t>(i)]) continue;
        sums.row(a) += points.row(i);
        ++kept_counts[static_cast<std::size_t>(a)];
    }
    Eigen::MatrixXd means(k, d);
    for (int j = 0; j < k; ++j) {
        if (kept_counts[static_cast<std::size_t>(j)] == 0)
            throw DegenerateClusterError("cluster_points: cluster " + std::to_string(j) +
                                         " lost all untrimmed members");
        means.row(j) = sums.row(j) / static_cast<double>(kept_counts[static_cast<std::size_t>(j)]);
    }

    // canonical label order: ascending first principal coordinate of the means
    Eigen::VectorXd axis = use_pca ? Eigen::VectorXd(pca.basis.row(0)) : principal_axis(points);
    std::vector<int> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        double pa = means.row(a).dot(axis);
        double pb = means.row(b).dot(axis);
        return pa != pb ? pa < pb : a < b;
    });
    std::vector<int> relabel(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) relabel[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] = j;

    result.assignment.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        result.assignment[static_cast<std::size_t>(i)] =
            relabel[static_cast<std::size_t>(best.assignment[static_cast<std::size_t>(i)])];
    result.means.resize(k, d);
    result.sizes.resize(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
        result.means.row(relabel[static_cast<std::size_t>(j)]) = means.row(j);
        result.sizes[static_cast<std::size_t>(relabel[static_cast<std::size_t>(j)])] = sizes[static_cast<std::size_t>(j)];
    }
    result.objective = best.objective;
    result.objective_trace = std::move(best.trace);
    return result;
}

inline std::string cluster_result_to_json(const ClusterResult& r) {
    nlohmann::json j;
    j["backend"] = backend_name(r.backend_used);
    j["sizes"] = r.sizes;
    std::vector<std::vector<double>> means;
    for (Eigen::Index i = 0; i < r.means.rows(); ++i) {
        means.emplace_back(r.means.row(i).begin(), r.means.row(i).end());
    }
    j["means"] = means;
    j["objective"] = r.objective;
    return j.dump();
}

} // namespace mlr

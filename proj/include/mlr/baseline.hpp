#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "mlr/errors.hpp"
#include "mlr/model.hpp"
#include "mlr/rng.hpp"

namespace mlr {

enum class EMInit { random_weights, spectral_stub };

inline std::string em_init_name(EMInit i) {
    return i == EMInit::random_weights ? "random_weights" : "spectral_stub";
}

inline EMInit parse_em_init(const std::string& name) {
    if (name == "random_weights") return EMInit::random_weights;
    if (name == "spectral_stub") return EMInit::spectral_stub;
    throw ValidationError("unknown EM init: " + name);
}

struct EMConfig {
    int k = 1;
    int max_iters = 500;
    double tol = 1e-8;  // on log-likelihood change
    int restarts = 10;
    EMInit init = EMInit::random_weights;
    std::uint64_t seed = 0;

    void validate() const {
        if (k < 1) throw ValidationError("em: k must be >= 1");
        if (!(tol > 0.0)) throw ValidationError("em: tol must be positive");
        if (restarts < 1 || max_iters < 1) throw ValidationError("em: restarts/max_iters must be >= 1");
    }
};

struct EMResult {
    Eigen::MatrixXd weights;  // k x d
    Eigen::VectorXd mixing;
    double log_likelihood = -std::numeric_limits<double>::infinity();
    std::vector<double> ll_trace;  // winning restart
    int iterations = 0;
};

namespace detail {

inline Eigen::MatrixXd em_init_weights(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, int k,
                                       double sigma, EMInit init, Rng& rng) {
    const auto d = x.cols();
    const auto n = x.rows();
    double scale = std::sqrt(std::max(y.squaredNorm() / static_cast<double>(n) - sigma * sigma, 0.01));
    Eigen::MatrixXd w(k, d);
    if (init == EMInit::spectral_stub) {
        // top-k eigenvectors of sum y^2 x x^T / n, scaled; crude but data-driven
        Eigen::MatrixXd m2 = Eigen::MatrixXd::Zero(d, d);
        for (Eigen::Index i = 0; i < n; ++i)
            m2.noalias() += (y(i) * y(i)) * (x.row(i).transpose() * x.row(i));
        m2 /= static_cast<double>(n);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m2);
        for (int j = 0; j < k; ++j)
            w.row(j) = scale * eig.eigenvectors().col(d - 1 - (j % static_cast<int>(d))).transpose();
        // symmetry breaking when k exceeds the informative spectrum
        for (int j = 0; j < k; ++j)
            for (int c = 0; c < d; ++c) w(j, c) += 0.05 * scale * rng.gaussian();
        return w;
    }
    for (int j = 0; j < k; ++j) {
        Eigen::VectorXd dir(d);
        for (int c = 0; c < d; ++c) dir(c) = rng.gaussian();
        w.row(j) = scale * dir.normalized().transpose();
    }
    return w;
}

struct EMRun {
    Eigen::MatrixXd weights;
    Eigen::VectorXd mixing;
    double ll = -std::numeric_limits<double>::infinity();
    std::vector<double> trace;
    int iterations = 0;
};

inline EMRun em_single_run(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const EMConfig& cfg,
                           double sigma, Rng& rng) {
    const auto n = x.rows();
    const auto d = x.cols();
    const int k = cfg.k;
    const double sig = std::max(sigma, 1e-6);  // zero-noise runs keep a density floor
    const double inv_two_var = 1.0 / (2.0 * sig * sig);
    const double log_norm = -std::log(sig) - 0.5 * std::log(2.0 * std::numbers::pi);

    EMRun run;
    run.weights = em_init_weights(x, y, k, sigma, cfg.init, rng);
    run.mixing = Eigen::VectorXd::Constant(k, 1.0 / k);

    Eigen::MatrixXd resp(n, k);
    Eigen::MatrixXd log_like(n, k);
    double prev_ll = -std::numeric_limits<double>::infinity();

    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        // E-step: responsibilities via log-sum-exp
        Eigen::MatrixXd resid = y.replicate(1, k) - x * run.weights.transpose();
        for (int j = 0; j < k; ++j)
            log_like.col(j) = (-(resid.col(j).array().square()) * inv_two_var + log_norm +
                               std::log(run.mixing(j)))
                                  .matrix();
        double ll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double mx = log_like.row(i).maxCoeff();
            double sum = 0.0;
            for (int j = 0; j < k; ++j) sum += std::exp(log_like(i, j) - mx);
            for (int j = 0; j < k; ++j) resp(i, j) = std::exp(log_like(i, j) - mx) / sum;
            ll += mx + std::log(sum);
        }
        run.trace.push_back(ll);
        run.ll = ll;
        run.iterations = iter + 1;

        // M-step: responsibility-weighted ridge least squares per component
        for (int j = 0; j < k; ++j) {
            Eigen::VectorXd r = resp.col(j);
            Eigen::MatrixXd xw = x.array().colwise() * r.array();
            Eigen::MatrixXd gram = x.transpose() * xw;
            gram.diagonal().array() += 1e-8;
            Eigen::VectorXd rhs = xw.transpose() * y;
            Eigen::LDLT<Eigen::MatrixXd> solver(gram);
            Eigen::VectorXd w = solver.solve(rhs);
            if (solver.info() != Eigen::Success || !w.allFinite())
                throw SingularSystemError("em: weighted normal equations rank-deficient for component " +
                                          std::to_string(j));
            run.weights.row(j) = w.transpose();
        }
        Eigen::VectorXd counts = resp.colwise().sum();
        run.mixing = (counts.array().max(1e-12) / static_cast<double>(n)).matrix();
        run.mixing /= run.mixing.sum();

        if (iter > 0 && std::abs(ll - prev_ll) < cfg.tol * (1.0 + std::abs(ll))) break;
        prev_ll = ll;
    }
    (void)d;
    return run;
}

} // namespace detail

/// Classical EM for the mixture of linear regressions with known noise scale.
/// The dataset's hidden labels are never read. Best restart by final
/// log-likelihood; the log-likelihood is non-decreasing along each run.
inline EMResult em_fit(const Dataset& ds, const EMConfig& cfg, double noise_sigma) {
    cfg.validate();
    const auto n = ds.size();
    if (n < static_cast<std::int64_t>(10) * cfg.k * ds.d)
        throw DomainError("em_fit: need at least 10*k*d samples, got " + std::to_string(n));

    detail::EMRun best;
    for (int r = 0; r < cfg.restarts; ++r) {
        Rng rng(cfg.seed, "em-restart", static_cast<std::uint64_t>(r));
        detail::EMRun run = detail::em_single_run(ds.x, ds.y, cfg, noise_sigma, rng);
        if (run.ll > best.ll) best = std::move(run);
    }

    EMResult out;
    out.weights = std::move(best.weights);
    out.mixing = std::move(best.mixing);
    out.log_likelihood = best.ll;
    out.ll_trace = std::move(best.trace);
    out.iterations = best.iterations;
    return out;
}

} // namespace mlr

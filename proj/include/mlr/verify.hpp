#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mlr/errors.hpp"
#include "mlr/model.hpp"
#include "mlr/parallel.hpp"
#include "mlr/rng.hpp"
#include "mlr/stats.hpp"
#include "mlr/threshold.hpp"

namespace mlr {

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct LemmaRow {
    std::string quantity;
    int component = -1;  // -1 when not applicable
    int s = -1;          // moment order, -1 when not applicable
    double empirical = 0.0;
    double bound = 0.0;
    double margin = 0.0;     // nonnegative means inside the bound/tolerance
    double std_error = 0.0;  // 0 for exact arithmetic rows
    bool pass = false;
};

struct LemmaReport {
    std::string lemma;
    std::vector<LemmaRow> rows;
    bool pass = false;
    std::int64_t samples_used = 0;
    std::uint64_t seed = 0;

    void finish() {
        pass = true;
        for (const auto& r : rows) pass = pass && r.pass;
    }
};

/// Calibration constants hiding behind the O(.) bounds; defaults leave >= 3x
/// headroom at desk scale.
struct VerifyTolerances {
    double K = 5.0;     // conditional-mean closeness multiplier of eps
    double K_m = 10.0;  // truncated-moment bound multiplier
    double C_pp = 4.0;  // directional variance-proxy constant
};

inline void write_reports_jsonl(const std::vector<LemmaReport>& reports, std::ostream& os) {
    for (const auto& rep : reports) {
        for (const auto& row : rep.rows) {
            nlohmann::json j;
            j["lemma"] = rep.lemma;
            j["quantity"] = row.quantity;
            if (row.component >= 0) j["component"] = row.component;
            if (row.s >= 0) j["s"] = row.s;
            j["empirical"] = row.empirical;
            j["bound"] = row.bound;
            j["margin"] = row.margin;
            j["std_error"] = row.std_error;
            j["pass"] = row.pass;
            j["samples_used"] = rep.samples_used;
            j["seed"] = rep.seed;
            os << j.dump() << "\n";
        }
    }
}

// ---------------------------------------------------------------------------
// Conditional sampling of one component
// ---------------------------------------------------------------------------

namespace detail {

/// Instance slice that always draws component `comp`.
inline ModelInstance component_slice(const ModelInstance& m, int comp) {
    ModelInstance s;
    s.k = 1;
    s.d = m.d;
    s.weights = m.weights.row(comp);
    s.mixing = Eigen::VectorXd::Ones(1);
    s.noise = m.noise;
    s.c = m.c;
    s.delta = m.delta;
    s.p_min = 1.0;
    return s;
}

/// Up to `target` retained covariates of component `comp` conditioned on the
/// band, with the raw budget planned from the component acceptance rate.
inline Eigen::MatrixXd sample_component_conditional(const ModelInstance& m, int comp,
                                                    const ThresholdBand& band, std::int64_t target,
                                                    std::uint64_t seed, std::int64_t raw_cap,
                                                    std::int64_t& raw_used) {
    ModelInstance slice = component_slice(m, comp);
    RateMethod method = slice.noise.gaussian_response() ? RateMethod::closed_form : RateMethod::monte_carlo;
    AcceptanceRates rates = acceptance_rate(slice, band, method, 400'000,
                                            stream_key(seed, "rate-mc", static_cast<std::uint64_t>(comp)));
    std::int64_t raw = required_raw_from_rate(rates.mixture, target, 1.25, raw_cap);
    ThresholdedSet ts = sample_thresholded(slice, band, raw,
                                           stream_key(seed, "verify-comp", static_cast<std::uint64_t>(comp)));
    raw_used = raw;
    std::int64_t take = std::min(ts.kept_count, target);
    return ts.points.topRows(take);
}

inline Eigen::VectorXd col_means_compensated(const Eigen::MatrixXd& x) {
    Eigen::VectorXd mean(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        NeumaierSum acc;
        for (Eigen::Index i = 0; i < x.rows(); ++i) acc.add(x(i, j));
        mean(j) = acc.value() / static_cast<double>(x.rows());
    }
    return mean;
}

/// Accumulates sum of v^s and v^(2s) for every even s in [4, s_max]; powers
/// built from v^2 by repeated multiplication, compensated 64-bit sums.
struct EvenMomentAccumulator {
    int s_max;
    std::vector<NeumaierSum> pow_s;    // index t: s = 4 + 2t
    std::vector<NeumaierSum> pow_2s;
    std::vector<double> scratch;       // v^{2m}, m = 1..s_max, reused per add
    std::int64_t count = 0;

    explicit EvenMomentAccumulator(int s_max_)
        : s_max(s_max_), pow_s(static_cast<std::size_t>((s_max_ - 4) / 2 + 1)),
          pow_2s(pow_s.size()), scratch(static_cast<std::size_t>(s_max_)) {}

    void add(double v) {
        double v2 = v * v;
        double p = 1.0;
        for (int mexp = 1; mexp <= s_max; ++mexp) {
            p *= v2;
            scratch[static_cast<std::size_t>(mexp - 1)] = p;
        }
        for (std::size_t t = 0; t < pow_s.size(); ++t) {
            int s = 4 + 2 * static_cast<int>(t);
            pow_s[t].add(scratch[static_cast<std::size_t>(s / 2 - 1)]);
            pow_2s[t].add(scratch[static_cast<std::size_t>(s - 1)]);
        }
        ++count;
    }

    // mean of v^s and the standard error of that mean
    void moment(int s, double& m_hat, double& se) const {
        std::size_t t = static_cast<std::size_t>((s - 4) / 2);
        double n = static_cast<double>(count);
        m_hat = pow_s[t].value() / n;
        double m2 = pow_2s[t].value() / n;
        double var = std::max(m2 - m_hat * m_hat, 0.0);
        se = std::sqrt(var / n);
    }
};

} // namespace detail

// ---------------------------------------------------------------------------
// Conditional mean (band concentration)
// ---------------------------------------------------------------------------

/// For each component in isolation: sample the band-conditioned covariate and
/// compare its mean against the target vector. Tolerance K*eps plus a
/// 3*sqrt(d/M) sampling allowance.
inline LemmaReport check_conditional_mean(const ModelInstance& m, const BandConfig& cfg,
                                          std::int64_t target_retained, std::uint64_t seed,
                                          const VerifyTolerances& tol = {},
                                          std::int64_t raw_cap = 2'000'000'000) {
    ThresholdBand band = compute_band(cfg);
    Eigen::MatrixXd v = target_vectors(m, cfg);

    LemmaReport rep;
    rep.lemma = "conditional_mean";
    rep.seed = seed;

    for (int comp = 0; comp < m.k; ++comp) {
        std::int64_t raw_used = 0;
        Eigen::MatrixXd x = detail::sample_component_conditional(m, comp, band, target_retained,
                                                                 seed, raw_cap, raw_used);
        const auto used = x.rows();
        rep.samples_used += used;
        Eigen::VectorXd mean = detail::col_means_compensated(x);

        double dev = (mean - v.row(comp).transpose()).norm();
        double se = std::sqrt(static_cast<double>(m.d) / static_cast<double>(used));
        double bound = tol.K * cfg.eps;
        rep.rows.push_back({"mean_deviation", comp, -1, dev, bound, bound - dev, se,
                            dev <= bound + 3.0 * se});

        // off-axis part of the mean should be pure sampling noise
        Eigen::VectorXd w_hat = m.weights.row(comp).normalized().transpose();
        Eigen::VectorXd off = mean - mean.dot(w_hat) * w_hat;
        double off_norm = off.norm();
        double off_se = std::sqrt(static_cast<double>(m.d - 1) / static_cast<double>(used));
        rep.rows.push_back({"mean_offaxis_norm", comp, -1, off_norm, 3.0 * off_se,
                            3.0 * off_se - off_norm, off_se, off_norm <= 3.0 * off_se});

        double axis_gap = std::abs(mean.dot(w_hat) - band.upper / m.weights.row(comp).norm());
        rep.rows.push_back({"band_axis_gap", comp, -1, axis_gap, tol.K * cfg.eps,
                            tol.K * cfg.eps - axis_gap,
                            1.0 / std::sqrt(static_cast<double>(used)),
                            axis_gap <= tol.K * cfg.eps + 3.0 / std::sqrt(static_cast<double>(used))});
    }
    rep.finish();
    return rep;
}

// ---------------------------------------------------------------------------
// Separation of target vectors (exact arithmetic, no sampling)
// ---------------------------------------------------------------------------

inline LemmaReport check_separation(const ModelInstance& m, const BandConfig& cfg) {
    cfg.validate();
    for (int i = 0; i < m.k; ++i)
        for (int j = i + 1; j < m.k; ++j) {
            double dist = (m.weights.row(i) - m.weights.row(j)).norm();
            if (dist < cfg.c)
                throw HypothesisError("separation hypothesis needs |w_i - w_j| >= c; pair (" +
                                      std::to_string(i) + "," + std::to_string(j) + ") has " +
                                      format_double17(dist));
        }

    Eigen::MatrixXd v = target_vectors(m, cfg);
    double bound = cfg.c_prime * (1.0 + cfg.sigma) * std::sqrt(std::log(1.0 / cfg.eps)) / cfg.c;

    LemmaReport rep;
    rep.lemma = "separation";
    rep.seed = 0;
    for (int i = 0; i < m.k; ++i) {
        for (int j = i + 1; j < m.k; ++j) {
            double dist = (v.row(i) - v.row(j)).norm();
            rep.rows.push_back({"v_sep_" + std::to_string(i) + "_" + std::to_string(j), i, -1,
                                dist, bound, dist - bound, 0.0, dist >= bound});
        }
    }
    if (m.k < 2)
        rep.rows.push_back({"v_sep_vacuous", -1, -1, 0.0, 0.0, 0.0, 0.0, true});
    rep.finish();
    return rep;
}

// ---------------------------------------------------------------------------
// Moment bounds
// ---------------------------------------------------------------------------

/// Standard-normal coordinates: exact moments (double factorial oracle) and
/// empirical moments must both sit below (s/2)^(s/2).
inline LemmaReport check_coordinate_moments(int s_max, std::int64_t n_samples, std::uint64_t seed) {
    if (s_max < 4 || s_max > 20 || s_max % 2 != 0)
        throw DomainError("check_coordinate_moments: s_max must be even in [4, 20]");
    if (n_samples < 1) throw ValidationError("check_coordinate_moments: need samples");

    const std::int64_t chunk = 1 << 16;
    const std::int64_t n_chunks = (n_samples + chunk - 1) / chunk;
    std::vector<detail::EvenMomentAccumulator> accs(static_cast<std::size_t>(n_chunks),
                                                    detail::EvenMomentAccumulator(s_max));
    parallel_chunks(n_samples, chunk, max_threads(), [&](std::int64_t ci, std::int64_t begin, std::int64_t end) {
        auto& acc = accs[static_cast<std::size_t>(ci)];
        for (std::int64_t i = begin; i < end; ++i) {
            Rng rng(seed, "coord-moments", static_cast<std::uint64_t>(i));
            acc.add(rng.gaussian());
        }
    });
    detail::EvenMomentAccumulator total(s_max);
    for (auto& a : accs) {
        for (std::size_t t = 0; t < total.pow_s.size(); ++t) {
            total.pow_s[t].merge(a.pow_s[t]);
            total.pow_2s[t].merge(a.pow_2s[t]);
        }
        total.count += a.count;
    }

    LemmaReport rep;
    rep.lemma = "coordinate_moments";
    rep.seed = seed;
    rep.samples_used = n_samples;
    for (int s = 4; s <= s_max; s += 2) {
        double bound = std::pow(static_cast<double>(s) / 2.0, static_cast<double>(s) / 2.0);
        double exact = gaussian_abs_moment_even(s);
        rep.rows.push_back({"exact_vs_bound", -1, s, exact, bound, bound - exact, 0.0, exact <= bound});

        double m_hat, se;
        total.moment(s, m_hat, se);
        rep.rows.push_back({"empirical_vs_bound", -1, s, m_hat, bound, bound - m_hat, se,
                            m_hat <= bound + 3.0 * se});
        rep.rows.push_back({"empirical_vs_exact", -1, s, m_hat, exact, 3.0 * se - std::abs(m_hat - exact),
                            se, std::abs(m_hat - exact) <= 3.0 * se});
    }
    rep.finish();
    return rep;
}

/// Central absolute moments of the band coordinate under the conditional
/// distribution, against K_m ((1+sigma)/c)^s (s/2)^(s/2).
inline LemmaReport check_truncated_moments(const ModelInstance& m, const BandConfig& cfg, int s_max,
                                           std::int64_t target_retained, std::uint64_t seed,
                                           const VerifyTolerances& tol = {},
                                           std::int64_t raw_cap = 2'000'000'000) {
    if (s_max < 4 || s_max > 12 || s_max % 2 != 0)
        throw DomainError("check_truncated_moments: s_max must be even in [4, 12]");
    ThresholdBand band = compute_band(cfg);

    LemmaReport rep;
    rep.lemma = "truncated_moments";
    rep.seed = seed;
    for (int comp = 0; comp < m.k; ++comp) {
        std::int64_t raw_used = 0;
        Eigen::MatrixXd x = detail::sample_component_conditional(m, comp, band, target_retained,
                                                                 seed, raw_cap, raw_used);
        rep.samples_used += x.rows();
        Eigen::VectorXd u = m.weights.row(comp).normalized().transpose();
        Eigen::VectorXd t = x * u;
        NeumaierSum mean_acc;
        for (Eigen::Index i = 0; i < t.size(); ++i) mean_acc.add(t(i));
        double mu = mean_acc.value() / static_cast<double>(t.size());

        detail::EvenMomentAccumulator acc(s_max);
        for (Eigen::Index i = 0; i < t.size(); ++i) acc.add(t(i) - mu);

        double scale = (1.0 + cfg.sigma) / cfg.c;
        for (int s = 4; s <= s_max; s += 2) {
            double bound = tol.K_m * std::pow(scale, s) *
                           std::pow(static_cast<double>(s) / 2.0, static_cast<double>(s) / 2.0);
            double m_hat, se;
            acc.moment(s, m_hat, se);
            rep.rows.push_back({"central_abs_moment", comp, s, m_hat, bound, bound - m_hat, se,
                                m_hat <= bound + 3.0 * se});
        }
    }
    rep.finish();
    return rep;
}

/// Sampled relaxation of the explicit-boundedness polynomial: for unit
/// directions u (2d axes plus uniform draws) and even s, the directional
/// central moment must stay below (C''(1+sigma)^2 s / c^2)^(s/2).
inline LemmaReport check_directional_moments(const ModelInstance& m, const BandConfig& cfg, int s_max,
                                             int n_directions, std::int64_t target_retained,
                                             std::uint64_t seed, const VerifyTolerances& tol = {},
                                             std::int64_t raw_cap = 2'000'000'000) {
    if (s_max < 4 || s_max > 12 || s_max % 2 != 0)
        throw DomainError("check_directional_moments: s_max must be even in [4, 12]");
    if (n_directions < 1) throw ValidationError("check_directional_moments: need directions");
    ThresholdBand band = compute_band(cfg);

    // 2d axis directions first, then uniform unit vectors
    const int n_dirs = 2 * m.d + n_directions;
    Eigen::MatrixXd dirs = Eigen::MatrixXd::Zero(n_dirs, m.d);
    for (int j = 0; j < m.d; ++j) {
        dirs(2 * j, j) = 1.0;
        dirs(2 * j + 1, j) = -1.0;
    }
    for (int r = 0; r < n_directions; ++r) {
        Rng rng(seed, "directions", static_cast<std::uint64_t>(r));
        Eigen::VectorXd g(m.d);
        do {
            for (int j = 0; j < m.d; ++j) g(j) = rng.gaussian();
        } while (g.norm() == 0.0);
        dirs.row(2 * m.d + r) = g.normalized().transpose();
    }

    LemmaReport rep;
    rep.lemma = "directional_moments";
    rep.seed = seed;
    for (int comp = 0; comp < m.k; ++comp) {
        std::int64_t raw_used = 0;
        Eigen::MatrixXd x = detail::sample_component_conditional(m, comp, band, target_retained,
                                                                 seed, raw_cap, raw_used);
        rep.samples_used += x.rows();
        Eigen::VectorXd mu = detail::col_means_compensated(x);
        Eigen::MatrixXd centered = x.rowwise() - mu.transpose();

        std::vector<detail::EvenMomentAccumulator> accs(static_cast<std::size_t>(n_dirs),
                                                        detail::EvenMomentAccumulator(s_max));
        const Eigen::Index block = 8192;
        for (Eigen::Index start = 0; start < centered.rows(); start += block) {
            Eigen::Index rows = std::min(block, centered.rows() - start);
            Eigen::MatrixXd proj = centered.middleRows(start, rows) * dirs.transpose();
            for (int dct = 0; dct < n_dirs; ++dct)
                for (Eigen::Index i = 0; i < rows; ++i)
                    accs[static_cast<std::size_t>(dct)].add(proj(i, dct));
        }

        double proxy = tol.C_pp * (1.0 + cfg.sigma) * (1.0 + cfg.sigma) / (cfg.c * cfg.c);
        for (int s = 4; s <= s_max; s += 2) {
            double bound = std::pow(proxy * static_cast<double>(s), static_cast<double>(s) / 2.0);
            // weakest direction under the 3-SE allowance
            double worst_margin = std::numeric_limits<double>::infinity();
            double worst_m = 0.0, worst_se = 0.0;
            bool all_pass = true;
            for (int dct = 0; dct < n_dirs; ++dct) {
                double m_hat, se;
                accs[static_cast<std::size_t>(dct)].moment(s, m_hat, se);
                double slack_margin = bound + 3.0 * se - m_hat;
                all_pass = all_pass && (m_hat <= bound + 3.0 * se);
                if (slack_margin < worst_margin) {
                    worst_margin = slack_margin;
                    worst_m = m_hat;
                    worst_se = se;
                }
            }
            rep.rows.push_back({"directional_moment_worst", comp, s, worst_m, bound,
                                bound - worst_m, worst_se, all_pass});
        }
    }
    rep.finish();
    return rep;
}

} // namespace mlr

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "mlr/errors.hpp"
#include "mlr/model.hpp"
#include "mlr/parallel.hpp"
#include "mlr/rng.hpp"
#include "mlr/stats.hpp"

namespace mlr {

// ---------------------------------------------------------------------------
// Band placement
// ---------------------------------------------------------------------------

/// Parameters of the response band. c_prime is the universal constant in the
/// band height; it is configurable because only its existence is guaranteed.
/// Logarithms are natural.
struct BandConfig {
    double c = 0.0;        // in (0,1)
    double sigma = 0.0;    // subgaussian proxy, >= 0
    double eps = 0.0;      // target accuracy, in (0,1); pipelines also require eps < 1/k
    double c_prime = 1.0;  // > 0

    void validate() const {
        if (!(0.0 < c && c < 1.0)) throw DomainError("band: c must be in (0,1)");
        if (!(sigma >= 0.0)) throw DomainError("band: sigma must be nonnegative");
        if (!(0.0 < eps && eps < 1.0)) throw DomainError("band: eps must be in (0,1)");
        if (!(c_prime > 0.0)) throw DomainError("band: c_prime must be positive");
    }
};

/// Response interval (lower, upper) with upper = c_prime*(1+sigma)*sqrt(ln(1/eps))/c^2
/// and width exactly c*eps. Both edges are strict when filtering.
struct ThresholdBand {
    double upper = 0.0;
    double lower = 0.0;

    double width() const { return upper - lower; }
    bool contains(double y) const { return lower < y && y < upper; }
};

inline ThresholdBand compute_band(const BandConfig& cfg) {
    cfg.validate();
    double upper = cfg.c_prime * (1.0 + cfg.sigma) * std::sqrt(std::log(1.0 / cfg.eps)) / (cfg.c * cfg.c);
    return ThresholdBand{upper, upper - cfg.c * cfg.eps};
}

/// Scaled weight copies the band concentrates the covariate around:
/// v_i = upper * w_i / |w_i|^2. Ground-truth quantity; used by verification
/// and evaluation only, never by recovery.
inline Eigen::MatrixXd target_vectors(const ModelInstance& m, const BandConfig& cfg) {
    ThresholdBand band = compute_band(cfg);
    Eigen::MatrixXd v(m.k, m.d);
    for (int i = 0; i < m.k; ++i) {
        double n2 = m.weights.row(i).squaredNorm();
        v.row(i) = band.upper * m.weights.row(i) / n2;
    }
    return v;
}

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

/// Samples whose response fell strictly inside the band. The membership
/// condition w_z . x + eta in (lower, upper) is exactly a condition on y,
/// identical for every component, so one scalar filter implements all the
/// per-component band sets at once.
struct ThresholdedSet {
    Eigen::MatrixXd points;        // kept x's, one per row
    Eigen::VectorXd responses;     // kept y's, paired by index
    std::vector<int> hidden_labels; // evaluation only
    std::int64_t raw_count = 0;
    std::int64_t kept_count = 0;
    ThresholdBand band;
};

inline ThresholdedSet apply_threshold(const Dataset& ds, const ThresholdBand& band) {
    if (!(band.lower < band.upper)) throw DomainError("apply_threshold: empty band");
    std::vector<std::int64_t> kept;
    for (std::int64_t i = 0; i < ds.size(); ++i)
        if (band.contains(ds.y(i))) kept.push_back(i);
    if (kept.empty())
        throw EmptySelectionError("apply_threshold: no responses inside (" +
                                  format_double17(band.lower) + ", " + format_double17(band.upper) + ")");
    ThresholdedSet out;
    out.band = band;
    out.raw_count = ds.size();
    out.kept_count = static_cast<std::int64_t>(kept.size());
    out.points.resize(out.kept_count, ds.d);
    out.responses.resize(out.kept_count);
    out.hidden_labels.resize(kept.size());
    for (std::int64_t r = 0; r < out.kept_count; ++r) {
        std::int64_t i = kept[static_cast<std::size_t>(r)];
        out.points.row(r) = ds.x.row(i);
        out.responses(r) = ds.y(i);
        out.hidden_labels[static_cast<std::size_t>(r)] = ds.z[static_cast<std::size_t>(i)];
    }
    return out;
}

/// Streaming generator of the post-threshold conditional mixture. Per raw
/// sample it draws only (z, signal, noise); the full covariate is materialized
/// for accepted samples via the exact Gaussian decomposition
/// x = g + w_z (s - <g, w_z>)/|w_z|^2 with g ~ N(0, I), which has the correct
/// conditional law given <w_z, x> = s. Raw samples are never stored, so the
/// budget can run to 10^8+ in constant memory. Deterministic and independent
/// of the thread count.
inline ThresholdedSet sample_thresholded(const ModelInstance& m, const ThresholdBand& band,
                                         std::int64_t raw_n, std::uint64_t seed,
                                         int threads = max_threads()) {
    if (raw_n < 1) throw ValidationError("sample_thresholded: raw_n must be >= 1");
    if (!(band.lower < band.upper)) throw DomainError("sample_thresholded: empty band");

    const auto cum = m.mixing_cumulative();
    std::vector<double> norms2(static_cast<std::size_t>(m.k));
    std::vector<double> norms(static_cast<std::size_t>(m.k));
    for (int i = 0; i < m.k; ++i) {
        norms2[static_cast<std::size_t>(i)] = m.weights.row(i).squaredNorm();
        norms[static_cast<std::size_t>(i)] = std::sqrt(norms2[static_cast<std::size_t>(i)]);
    }

    struct Chunk {
        std::vector<double> xs;
        std::vector<double> ys;
        std::vector<int> zs;
    };
    const std::int64_t chunk_size = 1 << 16;
    const std::int64_t n_chunks = (raw_n + chunk_size - 1) / chunk_size;
    std::vector<Chunk> chunks(static_cast<std::size_t>(n_chunks));

    parallel_chunks(raw_n, chunk_size, threads, [&](std::int64_t ci, std::int64_t begin, std::int64_t end) {
        Chunk& ch = chunks[static_cast<std::size_t>(ci)];
        Eigen::VectorXd g(m.d);
        for (std::int64_t i = begin; i < end; ++i) {
            Rng rng(seed, "cond-sample", static_cast<std::uint64_t>(i));
            int z = rng.discrete_cumulative(cum);
            double s = norms[static_cast<std::size_t>(z)] * rng.gaussian();
            double y = s + m.noise.sample(rng);
            if (!band.contains(y)) continue;
            for (int j = 0; j < m.d; ++j) g(j) = rng.gaussian();
            double shift = (s - m.weights.row(z).dot(g)) / norms2[static_cast<std::size_t>(z)];
            for (int j = 0; j < m.d; ++j) ch.xs.push_back(g(j) + shift * m.weights(z, j));
            ch.ys.push_back(y);
            ch.zs.push_back(z);
        }
    });

    std::int64_t kept = 0;
    for (const auto& ch : chunks) kept += static_cast<std::int64_t>(ch.ys.size());
    if (kept == 0)
        throw EmptySelectionError("sample_thresholded: no samples accepted out of " +
                                  std::to_string(raw_n));

    ThresholdedSet out;
    out.band = band;
    out.raw_count = raw_n;
    out.kept_count = kept;
    out.points.resize(kept, m.d);
    out.responses.resize(kept);
    out.hidden_labels.resize(static_cast<std::size_t>(kept));
    std::int64_t row = 0;
    for (const auto& ch : chunks) {
        for (std::size_t r = 0; r < ch.ys.size(); ++r, ++row) {
            for (int j = 0; j < m.d; ++j) out.points(row, j) = ch.xs[r * static_cast<std::size_t>(m.d) + static_cast<std::size_t>(j)];
            out.responses(row) = ch.ys[r];
            out.hidden_labels[static_cast<std::size_t>(row)] = ch.zs[r];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Acceptance rates and budgets
// ---------------------------------------------------------------------------

enum class RateMethod { closed_form, monte_carlo };

struct AcceptanceRates {
    Eigen::VectorXd per_component;    // q_i = P(y in band | z = i)
    Eigen::VectorXd effective_mixing; // p_i' = p_i q_i / sum_j p_j q_j
    double mixture = 0.0;             // sum_i p_i q_i
};

/// Band acceptance probabilities. Closed form is exact for Gaussian or zero
/// noise, where y | z=i ~ N(0, |w_i|^2 + sigma^2); Monte Carlo draws the scalar
/// response law directly and works for every family.
inline AcceptanceRates acceptance_rate(const ModelInstance& m, const ThresholdBand& band,
                                       RateMethod method, std::int64_t mc_n = 1'000'000,
                                       std::uint64_t seed = 0) {
    AcceptanceRates rates;
    rates.per_component.resize(m.k);

    if (method == RateMethod::closed_form) {
        if (!m.noise.gaussian_response())
            throw UnsupportedNoiseError("closed-form acceptance needs Gaussian or zero noise, got " +
                                        noise_family_name(m.noise.family));
        for (int i = 0; i < m.k; ++i) {
            double sd = std::sqrt(m.weights.row(i).squaredNorm() + m.noise.sigma * m.noise.sigma);
            rates.per_component(i) = normal_interval_prob(band.lower / sd, band.upper / sd);
        }
    } else {
        if (mc_n < 1) throw ValidationError("acceptance_rate: mc_n must be >= 1");
        std::vector<double> norms(static_cast<std::size_t>(m.k));
        for (int i = 0; i < m.k; ++i) norms[static_cast<std::size_t>(i)] = m.weights.row(i).norm();
        // per-component hit/trial counters, merged in chunk order
        const std::int64_t chunk_size = 1 << 16;
        const std::int64_t n_chunks = (mc_n + chunk_size - 1) / chunk_size;
        std::vector<std::vector<std::int64_t>> hits(static_cast<std::size_t>(n_chunks));
        std::vector<std::vector<std::int64_t>> trials(static_cast<std::size_t>(n_chunks));
        const auto cum = m.mixing_cumulative();
        parallel_chunks(mc_n, chunk_size, max_threads(), [&](std::int64_t ci, std::int64_t begin, std::int64_t end) {
            auto& h = hits[static_cast<std::size_t>(ci)];
            auto& t = trials[static_cast<std::size_t>(ci)];
            h.assign(static_cast<std::size_t>(m.k), 0);
            t.assign(static_cast<std::size_t>(m.k), 0);
            for (std::int64_t i = begin; i < end; ++i) {
                Rng rng(seed, "accept-mc", static_cast<std::uint64_t>(i));
                int z = rng.discrete_cumulative(cum);
                double y = norms[static_cast<std::size_t>(z)] * rng.gaussian() + m.noise.sample(rng);
                ++t[static_cast<std::size_t>(z)];
                if (band.contains(y)) ++h[static_cast<std::size_t>(z)];
            }
        });
        for (int i = 0; i < m.k; ++i) {
            std::int64_t h = 0, t = 0;
            for (std::int64_t ci = 0; ci < n_chunks; ++ci) {
                h += hits[static_cast<std::size_t>(ci)][static_cast<std::size_t>(i)];
                t += trials[static_cast<std::size_t>(ci)][static_cast<std::size_t>(i)];
            }
            rates.per_component(i) = t > 0 ? static_cast<double>(h) / static_cast<double>(t) : 0.0;
        }
    }

    rates.mixture = m.mixing.dot(rates.per_component);
    rates.effective_mixing.resize(m.k);
    if (rates.mixture > 0.0) {
        for (int i = 0; i < m.k; ++i)
            rates.effective_mixing(i) = m.mixing(i) * rates.per_component(i) / rates.mixture;
    } else {
        rates.effective_mixing.setZero();
    }
    return rates;
}

/// ceil(safety * kept_target / rate), guarded by the raw-sample cap.
inline std::int64_t required_raw_from_rate(double rate, std::int64_t kept_target, double safety = 1.5,
                                           std::int64_t cap = 1'000'000'000) {
    if (kept_target < 1) throw ValidationError("required_raw_samples: kept_target must be >= 1");
    if (!(safety >= 1.0)) throw ValidationError("required_raw_samples: safety must be >= 1");
    if (!(rate > 0.0))
        throw InfeasibleBudgetError("acceptance rate is zero; band is unreachable at any budget");
    double need = std::ceil(safety * static_cast<double>(kept_target) / rate);
    if (!(need <= static_cast<double>(cap)))
        throw InfeasibleBudgetError("raw budget " + std::to_string(need) + " exceeds cap " +
                                    std::to_string(cap) + " (acceptance rate " + format_double17(rate) + ")");
    return static_cast<std::int64_t>(need);
}

/// Raw samples needed so that roughly safety * kept_target survive the band.
inline std::int64_t required_raw_samples(const ModelInstance& m, const ThresholdBand& band,
                                         std::int64_t kept_target, double safety = 1.5,
                                         std::int64_t cap = 1'000'000'000,
                                         std::int64_t mc_n = 1'000'000, std::uint64_t mc_seed = 0x5eedu) {
    RateMethod method = m.noise.gaussian_response() ? RateMethod::closed_form : RateMethod::monte_carlo;
    AcceptanceRates rates = acceptance_rate(m, band, method, mc_n, mc_seed);
    return required_raw_from_rate(rates.mixture, kept_target, safety, cap);
}

// ---------------------------------------------------------------------------
// CSV: header "# mlr-thresholded v1 lower=<...> upper=<...>", rows as dataset
// ---------------------------------------------------------------------------

inline void write_thresholded_csv(const ThresholdedSet& ts, std::ostream& os) {
    os << "# mlr-thresholded v1 lower=" << format_double17(ts.band.lower)
       << " upper=" << format_double17(ts.band.upper) << "\n";
    const int d = static_cast<int>(ts.points.cols());
    for (std::int64_t i = 0; i < ts.kept_count; ++i) {
        for (int j = 0; j < d; ++j) os << format_double17(ts.points(i, j)) << ',';
        os << format_double17(ts.responses(i)) << ',' << ts.hidden_labels[static_cast<std::size_t>(i)] << "\n";
    }
}

inline void write_thresholded_csv(const ThresholdedSet& ts, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path);
    write_thresholded_csv(ts, out);
}

inline ThresholdedSet read_thresholded_csv(std::istream& is) {
    std::string header;
    if (!std::getline(is, header) || header.rfind("# mlr-thresholded v1", 0) != 0)
        throw Error("not a mlr-thresholded v1 file");
    ThresholdedSet ts;
    auto grab = [&header](const char* key) {
        auto pos = header.find(std::string(key) + "=");
        if (pos == std::string::npos) throw Error(std::string("thresholded header missing ") + key);
        pos += std::string(key).size() + 1;
        auto end = header.find(' ', pos);
        return parse_double(std::string_view(header).substr(pos, end == std::string::npos ? header.size() - pos : end - pos));
    };
    ts.band.lower = grab("lower");
    ts.band.upper = grab("upper");

    std::vector<double> xs, ys;
    std::vector<int> zs;
    int d = -1;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto fields = detail::split_csv(line);
        if (d < 0) d = static_cast<int>(fields.size()) - 2;
        if (static_cast<int>(fields.size()) != d + 2) throw Error("thresholded row has wrong field count");
        for (int j = 0; j < d; ++j) xs.push_back(parse_double(fields[static_cast<std::size_t>(j)]));
        ys.push_back(parse_double(fields[static_cast<std::size_t>(d)]));
        zs.push_back(static_cast<int>(parse_int(fields[static_cast<std::size_t>(d) + 1])));
    }
    const std::int64_t n = static_cast<std::int64_t>(ys.size());
    ts.kept_count = n;
    ts.raw_count = n;  // raw total is not part of the on-disk format
    ts.points.resize(n, std::max(d, 0));
    ts.responses.resize(n);
    ts.hidden_labels = std::move(zs);
    for (std::int64_t i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) ts.points(i, j) = xs[static_cast<std::size_t>(i * d + j)];
        ts.responses(i) = ys[static_cast<std::size_t>(i)];
    }
    return ts;
}

inline ThresholdedSet read_thresholded_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open for reading: " + path);
    return read_thresholded_csv(in);
}

} // namespace mlr

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mlr/errors.hpp"
#include "mlr/parallel.hpp"
#include "mlr/rng.hpp"
#include "mlr/stats.hpp"

namespace mlr {

// ---------------------------------------------------------------------------
// Noise families
// ---------------------------------------------------------------------------

enum class NoiseFamily { gaussian, uniform_bounded, scaled_rademacher, zero };

/// Zero-mean noise with subgaussian proxy sigma. UniformBounded draws from
/// [-sigma, sigma] (proxy sigma by Hoeffding's lemma); ScaledRademacher is
/// +-sigma with equal probability.
struct NoiseModel {
    NoiseFamily family = NoiseFamily::zero;
    double sigma = 0.0;

    double sample(Rng& rng) const {
        switch (family) {
            case NoiseFamily::gaussian: return sigma * rng.gaussian();
            case NoiseFamily::uniform_bounded: return rng.uniform(-sigma, sigma);
            case NoiseFamily::scaled_rademacher: return rng.uniform() < 0.5 ? -sigma : sigma;
            case NoiseFamily::zero: return 0.0;
        }
        return 0.0;
    }

    bool gaussian_response() const {
        return family == NoiseFamily::gaussian || family == NoiseFamily::zero || sigma == 0.0;
    }

    void validate() const {
        if (!(sigma >= 0.0)) throw ValidationError("noise sigma must be nonnegative");
        if (family == NoiseFamily::zero && sigma != 0.0)
            throw ValidationError("zero noise must have sigma == 0");
    }
};

inline std::string noise_family_name(NoiseFamily f) {
    switch (f) {
        case NoiseFamily::gaussian: return "gaussian";
        case NoiseFamily::uniform_bounded: return "uniform_bounded";
        case NoiseFamily::scaled_rademacher: return "scaled_rademacher";
        case NoiseFamily::zero: return "zero";
    }
    return "?";
}

inline NoiseFamily parse_noise_family(const std::string& name) {
    if (name == "gaussian") return NoiseFamily::gaussian;
    if (name == "uniform_bounded") return NoiseFamily::uniform_bounded;
    if (name == "scaled_rademacher") return NoiseFamily::scaled_rademacher;
    if (name == "zero") return NoiseFamily::zero;
    throw ValidationError("unknown noise family: " + name);
}

// ---------------------------------------------------------------------------
// Problem instance
// ---------------------------------------------------------------------------

/// Ground-truth mixture of linear regressions: k weight rows in R^d with norms
/// in [c, 1] and pairwise separation >= delta, mixing vector on the simplex
/// with every entry >= p_min, and a zero-mean subgaussian noise model.
struct ModelInstance {
    int k = 0;
    int d = 0;
    Eigen::MatrixXd weights;  // k x d, one weight vector per row
    Eigen::VectorXd mixing;   // k, sums to 1
    NoiseModel noise;
    double c = 0.0;
    double delta = 0.0;
    double p_min = 0.0;

    std::uint64_t fingerprint() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        auto feed = [&h](std::uint64_t v) {
            for (int b = 0; b < 8; ++b) {
                h ^= (v >> (8 * b)) & 0xff;
                h *= 0x100000001b3ull;
            }
        };
        auto feed_double = [&](double x) {
            std::uint64_t bits;
            static_assert(sizeof(bits) == sizeof(x));
            std::memcpy(&bits, &x, sizeof(bits));
            feed(bits);
        };
        feed(static_cast<std::uint64_t>(k));
        feed(static_cast<std::uint64_t>(d));
        feed(static_cast<std::uint64_t>(noise.family));
        feed_double(noise.sigma);
        feed_double(c);
        feed_double(delta);
        feed_double(p_min);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < d; ++j) feed_double(weights(i, j));
        for (int i = 0; i < k; ++i) feed_double(mixing(i));
        return h;
    }

    std::vector<double> mixing_cumulative() const {
        std::vector<double> cum(static_cast<std::size_t>(k));
        double acc = 0.0;
        for (int i = 0; i < k; ++i) {
            acc += mixing(i);
            cum[static_cast<std::size_t>(i)] = acc;
        }
        cum.back() = 1.0;
        return cum;
    }
};

struct AssumptionCheck {
    std::string name;
    bool pass = false;
    double margin = 0.0;  // nonnegative iff the assumption holds
};

struct ValidationReport {
    std::vector<AssumptionCheck> checks;
    bool pass = false;
    double worst_margin = 0.0;

    const AssumptionCheck& find(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return c;
        throw Error("no such assumption check: " + name);
    }
};

/// Reports pass/fail and worst-case margin for each model assumption:
/// simplex sum, minimum mixing weight, norm bounds, pairwise separation.
inline ValidationReport validate_assumptions(const ModelInstance& m) {
    ValidationReport report;

    double sum_p = m.mixing.sum();
    double simplex_margin = 1e-12 - std::abs(sum_p - 1.0);
    report.checks.push_back({"simplex", simplex_margin >= 0.0, simplex_margin});

    double a1_margin = m.mixing.minCoeff() - m.p_min;
    report.checks.push_back({"A1_min_mixing", a1_margin >= 0.0, a1_margin});

    double norm_margin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < m.k; ++i) {
        double n = m.weights.row(i).norm();
        norm_margin = std::min(norm_margin, std::min(n - m.c, 1.0 - n));
    }
    report.checks.push_back({"A2_norms", norm_margin >= 0.0, norm_margin});

    double sep_margin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < m.k; ++i)
        for (int j = i + 1; j < m.k; ++j)
            sep_margin = std::min(sep_margin, (m.weights.row(i) - m.weights.row(j)).norm() - m.delta);
    if (m.k < 2) sep_margin = 0.0;  // vacuous
    report.checks.push_back({"A2_separation", sep_margin >= 0.0, sep_margin});

    report.pass = true;
    report.worst_margin = std::numeric_limits<double>::infinity();
    for (const auto& c : report.checks) {
        report.pass = report.pass && c.pass;
        report.worst_margin = std::min(report.worst_margin, c.margin);
    }
    return report;
}

/// Builds a valid instance deterministically from the seed. Weight directions
/// are uniform on the sphere with norms uniform in [c, 1]; draws violating the
/// pairwise separation are rejected, up to 10,000 attempts in total. The
/// mixing vector is a flat Dirichlet draw mapped through
/// p <- p_min + (1 - k*p_min) * p, which keeps the simplex and enforces the
/// minimum weight exactly.
inline ModelInstance make_instance(int k, int d, double c, double delta, double p_min,
                                   NoiseModel noise, std::uint64_t seed) {
    if (k < 1) throw ValidationError("make_instance: k must be >= 1");
    if (d < 2) throw ValidationError("make_instance: d must be >= 2");
    if (!(0.0 < c && c < delta && delta < 1.0))
        throw ValidationError("make_instance: need 0 < c < delta < 1");
    if (!(0.0 < p_min && p_min <= 1.0 / k + 1e-15))
        throw ValidationError("make_instance: need 0 < p_min <= 1/k");
    noise.validate();

    ModelInstance m;
    m.k = k;
    m.d = d;
    m.noise = noise;
    m.c = c;
    m.delta = delta;
    m.p_min = p_min;
    m.weights.resize(k, d);

    constexpr int kMaxAttempts = 10000;
    Rng wrng(seed, "instance-weights", 0);
    int accepted = 0;
    for (int attempt = 0; accepted < k; ++attempt) {
        if (attempt >= kMaxAttempts)
            throw FeasibilityError("make_instance: could not pack " + std::to_string(k) +
                                   " weights with separation " + std::to_string(delta) +
                                   " in dimension " + std::to_string(d));
        Eigen::VectorXd dir(d);
        for (int j = 0; j < d; ++j) dir(j) = wrng.gaussian();
        double n = dir.norm();
        if (n == 0.0) continue;
        dir /= n;
        double norm = wrng.uniform(c, 1.0);
        Eigen::RowVectorXd w = norm * dir.transpose();
        bool ok = true;
        for (int i = 0; i < accepted; ++i) {
            if ((m.weights.row(i) - w).norm() < delta) {
                ok = false;
                break;
            }
        }
        if (!ok) continue;
        m.weights.row(accepted++) = w;
    }

    Rng prng(seed, "instance-mixing", 0);
    Eigen::VectorXd p(k);
    double total = 0.0;
    for (int i = 0; i < k; ++i) {
        p(i) = prng.exponential();
        total += p(i);
    }
    p /= total;
    m.mixing = Eigen::VectorXd::Constant(k, p_min) + (1.0 - k * p_min) * p;
    // renormalize away the last-ulp drift so the simplex check is exact
    m.mixing /= m.mixing.sum();

    return m;
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// One sample of the generative model. The component index z is carried for
/// evaluation only; recovery code never reads it.
struct LabeledSample {
    Eigen::VectorXd x;
    double y = 0.0;
    int z = 0;
};

struct Dataset {
    int d = 0;
    int k = 0;
    std::uint64_t seed = 0;
    std::uint64_t instance_fingerprint = 0;
    Eigen::MatrixXd x;  // n x d
    Eigen::VectorXd y;  // n
    std::vector<int> z; // n, quarantined ground truth

    std::int64_t size() const { return static_cast<std::int64_t>(y.size()); }

    LabeledSample sample(std::int64_t i) const {
        return {x.row(i).transpose(), y(i), z[static_cast<std::size_t>(i)]};
    }
};

namespace detail {

/// Draws sample `index` of the stream: component, covariate, noise, response.
/// One stream per index keeps generation order-independent.
inline void draw_sample(const ModelInstance& m, const std::vector<double>& cum,
                        std::uint64_t seed, std::int64_t index,
                        Eigen::VectorXd& x_out, double& y_out, int& z_out) {
    Rng rng(seed, "sample", static_cast<std::uint64_t>(index));
    int z = rng.discrete_cumulative(cum);
    for (int j = 0; j < m.d; ++j) x_out(j) = rng.gaussian();
    double eta = m.noise.sample(rng);
    y_out = m.weights.row(z) * x_out + eta;
    z_out = z;
}

} // namespace detail

/// Samples n points of the model. Identical output for any thread count.
inline Dataset sample_dataset(const ModelInstance& m, std::int64_t n, std::uint64_t seed,
                              int threads = max_threads()) {
    if (n < 1) throw ValidationError("sample_dataset: n must be >= 1");
    Dataset ds;
    ds.d = m.d;
    ds.k = m.k;
    ds.seed = seed;
    ds.instance_fingerprint = m.fingerprint();
    ds.x.resize(n, m.d);
    ds.y.resize(n);
    ds.z.resize(static_cast<std::size_t>(n));

    const auto cum = m.mixing_cumulative();
    parallel_chunks(n, 1 << 16, threads, [&](std::int64_t, std::int64_t begin, std::int64_t end) {
        Eigen::VectorXd x_buf(m.d);
        for (std::int64_t i = begin; i < end; ++i) {
            detail::draw_sample(m, cum, seed, i, x_buf, ds.y(i), ds.z[static_cast<std::size_t>(i)]);
            ds.x.row(i) = x_buf.transpose();
        }
    });
    return ds;
}

// ---------------------------------------------------------------------------
// Dataset CSV: header "# mlr-dataset v1 d=<d> k=<k> seed=<seed>", then one
// record per line, "x[0],...,x[d-1],y,z" with 17-significant-digit floats.
// ---------------------------------------------------------------------------

inline void write_dataset_csv(const Dataset& ds, std::ostream& os) {
    os << "# mlr-dataset v1 d=" << ds.d << " k=" << ds.k << " seed=" << ds.seed << "\n";
    for (std::int64_t i = 0; i < ds.size(); ++i) {
        for (int j = 0; j < ds.d; ++j) os << format_double17(ds.x(i, j)) << ',';
        os << format_double17(ds.y(i)) << ',' << ds.z[static_cast<std::size_t>(i)] << "\n";
    }
}

inline void write_dataset_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for writing: " + path);
    write_dataset_csv(ds, out);
}

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

inline std::uint64_t header_field_u64(const std::string& header, const std::string& key) {
    auto pos = header.find(key + "=");
    if (pos == std::string::npos) throw Error("dataset header missing field: " + key);
    return static_cast<std::uint64_t>(std::stoull(header.substr(pos + key.size() + 1)));
}

} // namespace detail

inline Dataset read_dataset_csv(std::istream& is) {
    std::string header;
    if (!std::getline(is, header) || header.rfind("# mlr-dataset v1", 0) != 0)
        throw Error("not a mlr-dataset v1 file");
    Dataset ds;
    ds.d = static_cast<int>(detail::header_field_u64(header, "d"));
    ds.k = static_cast<int>(detail::header_field_u64(header, "k"));
    ds.seed = detail::header_field_u64(header, "seed");

    std::vector<double> xs;
    std::vector<double> ys;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto fields = detail::split_csv(line);
        if (static_cast<int>(fields.size()) != ds.d + 2)
            throw Error("dataset row has wrong field count");
        for (int j = 0; j < ds.d; ++j) xs.push_back(parse_double(fields[static_cast<std::size_t>(j)]));
        ys.push_back(parse_double(fields[static_cast<std::size_t>(ds.d)]));
        ds.z.push_back(static_cast<int>(parse_int(fields[static_cast<std::size_t>(ds.d) + 1])));
    }
    const std::int64_t n = static_cast<std::int64_t>(ys.size());
    ds.x.resize(n, ds.d);
    ds.y.resize(n);
    for (std::int64_t i = 0; i < n; ++i) {
        for (int j = 0; j < ds.d; ++j) ds.x(i, j) = xs[static_cast<std::size_t>(i * ds.d + j)];
        ds.y(i) = ys[static_cast<std::size_t>(i)];
    }
    return ds;
}

inline Dataset read_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open for reading: " + path);
    return read_dataset_csv(in);
}

} // namespace mlr

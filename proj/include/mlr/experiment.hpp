#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mlr/baseline.hpp"
#include "mlr/cluster.hpp"
#include "mlr/errors.hpp"
#include "mlr/model.hpp"
#include "mlr/recover.hpp"
#include "mlr/threshold.hpp"
#include "mlr/verify.hpp"

namespace mlr {

// ---------------------------------------------------------------------------
// Configuration (single JSON file, schema "mlr-config v1")
// ---------------------------------------------------------------------------

struct InstanceConfig {
    int k = 2;
    int d = 10;
    double c = 0.95;
    double delta = 0.96;
    double p_min = 0.3;
    NoiseModel noise{NoiseFamily::gaussian, 0.1};
};

struct BandSettings {
    double eps = 0.05;
    double c_prime = 1.0;
};

struct BudgetConfig {
    std::int64_t kept_target = 10000;  // per component
    double safety = 1.5;
    std::int64_t raw_cap = 1'000'000'000;
};

struct EMSettings {
    int max_iters = 500;
    double tol = 1e-8;
    int restarts = 10;
    EMInit init = EMInit::random_weights;
    std::int64_t max_samples = 100'000;  // tractability cap on the EM dataset
};

struct VerifySettings {
    std::int64_t retained = 100'000;  // target retained samples per component
    int s_max = 8;
    int n_directions = 100;
    VerifyTolerances tol;
};

struct SweepGrid {
    std::vector<double> sigma{0.1, 0.5, 1.0};
    std::vector<double> eps{0.05};
    std::vector<int> k{4};
    std::vector<std::string> backend{"kmeans_pp"};
    std::vector<std::string> method{"threshold", "em"};
};

struct ExperimentConfig {
    InstanceConfig instance;
    BandSettings band;
    ClusterParams cluster;  // k and seed are filled per run
    BudgetConfig budget;
    EMSettings em;
    VerifySettings verify;
    SweepGrid sweep;
    std::vector<std::uint64_t> seeds{1};
    std::string out_dir = "results";
    std::int64_t gen_n = 0;               // 0: use the computed raw budget
    double p_floor_factor = 0.5;          // warn when min p_i' < factor * p_min
    double magnitude_switch_ratio = 0.15; // sigma/c ratio enabling the tilt correction

    BandConfig band_config(double sigma_override = -1.0) const {
        BandConfig b;
        b.c = instance.c;
        b.sigma = sigma_override >= 0.0 ? sigma_override : instance.noise.sigma;
        b.eps = band.eps;
        b.c_prime = band.c_prime;
        return b;
    }

    void validate() const {
        if (instance.k < 1 || instance.d < 2) throw ValidationError("config: bad instance k/d");
        if (!(band.eps > 0.0 && band.eps < 1.0 / instance.k))
            throw ValidationError("config: eps must be in (0, 1/k)");
        band_config().validate();
        cluster.validate();
        instance.noise.validate();
        EMConfig emc;
        emc.k = instance.k;
        emc.max_iters = em.max_iters;
        emc.tol = em.tol;
        emc.restarts = em.restarts;
        emc.validate();
        if (budget.kept_target < 1 || !(budget.safety >= 1.0) || budget.raw_cap < 1)
            throw ValidationError("config: bad budget");
        if (verify.retained < 1 || verify.s_max < 4) throw ValidationError("config: bad verify block");
        if (seeds.empty()) throw ValidationError("config: seeds must be nonempty");
    }
};

namespace detail {

inline void from_json_instance(const nlohmann::json& j, InstanceConfig& c) {
    c.k = j.value("k", c.k);
    c.d = j.value("d", c.d);
    c.c = j.value("c", c.c);
    c.delta = j.value("delta", c.delta);
    c.p_min = j.value("p_min", c.p_min);
    if (j.contains("noise")) {
        const auto& n = j.at("noise");
        c.noise.family = parse_noise_family(n.value("family", noise_family_name(c.noise.family)));
        c.noise.sigma = n.value("sigma", c.noise.sigma);
    }
}

} // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    if (j.value("schema_version", "") != "mlr-config v1")
        throw ValidationError("config: schema_version must be \"mlr-config v1\"");
    ExperimentConfig cfg;
    try {
        if (j.contains("instance")) detail::from_json_instance(j.at("instance"), cfg.instance);
        if (j.contains("band")) {
            cfg.band.eps = j.at("band").value("eps", cfg.band.eps);
            cfg.band.c_prime = j.at("band").value("c_prime", cfg.band.c_prime);
        }
        if (j.contains("cluster")) {
            const auto& c = j.at("cluster");
            cfg.cluster.backend = parse_backend(c.value("backend", backend_name(cfg.cluster.backend)));
            cfg.cluster.restarts = c.value("restarts", cfg.cluster.restarts);
            cfg.cluster.trim_fraction = c.value("trim_fraction", cfg.cluster.trim_fraction);
            cfg.cluster.pca_preprocess = c.value("pca_preprocess", cfg.cluster.pca_preprocess);
            cfg.cluster.max_iters = c.value("max_iters", cfg.cluster.max_iters);
        }
        if (j.contains("budget")) {
            const auto& b = j.at("budget");
            cfg.budget.kept_target = b.value("kept_target", cfg.budget.kept_target);
            cfg.budget.safety = b.value("safety", cfg.budget.safety);
            cfg.budget.raw_cap = b.value("raw_cap", cfg.budget.raw_cap);
        }
        if (j.contains("em")) {
            const auto& e = j.at("em");
            cfg.em.max_iters = e.value("max_iters", cfg.em.max_iters);
            cfg.em.tol = e.value("tol", cfg.em.tol);
            cfg.em.restarts = e.value("restarts", cfg.em.restarts);
            cfg.em.init = parse_em_init(e.value("init", em_init_name(cfg.em.init)));
            cfg.em.max_samples = e.value("max_samples", cfg.em.max_samples);
        }
        if (j.contains("verify")) {
            const auto& v = j.at("verify");
            cfg.verify.retained = v.value("retained", cfg.verify.retained);
            cfg.verify.s_max = v.value("s_max", cfg.verify.s_max);
            cfg.verify.n_directions = v.value("n_directions", cfg.verify.n_directions);
            cfg.verify.tol.K = v.value("K", cfg.verify.tol.K);
            cfg.verify.tol.K_m = v.value("K_m", cfg.verify.tol.K_m);
            cfg.verify.tol.C_pp = v.value("C_pp", cfg.verify.tol.C_pp);
        }
        if (j.contains("sweep")) {
            const auto& s = j.at("sweep");
            cfg.sweep.sigma = s.value("sigma", cfg.sweep.sigma);
            cfg.sweep.eps = s.value("eps", cfg.sweep.eps);
            cfg.sweep.k = s.value("k", cfg.sweep.k);
            cfg.sweep.backend = s.value("backend", cfg.sweep.backend);
            cfg.sweep.method = s.value("method", cfg.sweep.method);
        }
        cfg.seeds = j.value("seeds", cfg.seeds);
        cfg.out_dir = j.value("out_dir", cfg.out_dir);
        cfg.gen_n = j.value("gen_n", cfg.gen_n);
        cfg.p_floor_factor = j.value("p_floor_factor", cfg.p_floor_factor);
        cfg.magnitude_switch_ratio = j.value("magnitude_switch_ratio", cfg.magnitude_switch_ratio);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config parse error: ") + e.what());
    }
    return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Result rows (CSV schema fixed; runtime_ms is the only unstable column)
// ---------------------------------------------------------------------------

struct RunRow {
    std::string method = "threshold";
    std::uint64_t seed = 0;
    int k = 0, d = 0;
    double c = 0.0, delta = 0.0, sigma = 0.0, eps = 0.0, c_prime = 0.0;
    std::string backend;
    std::int64_t n_raw = 0, n_kept = 0;
    double acc_rate = 0.0;
    double max_err = std::numeric_limits<double>::quiet_NaN();
    double mean_err = std::numeric_limits<double>::quiet_NaN();
    std::int64_t runtime_ms = 0;
    std::string error;
};

/// Shortest exact decimal form; round-trips and is bit-stable across runs.
inline std::string format_double_shortest(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

inline std::string recover_csv_header() {
    return "seed,k,d,c,delta,sigma,eps,c_prime,backend,n_raw,n_kept,acc_rate,max_err,mean_err,runtime_ms";
}

inline std::string row_to_recover_csv(const RunRow& r) {
    std::string out;
    out += std::to_string(r.seed) + ',' + std::to_string(r.k) + ',' + std::to_string(r.d) + ',';
    out += format_double_shortest(r.c) + ',' + format_double_shortest(r.delta) + ',';
    out += format_double_shortest(r.sigma) + ',' + format_double_shortest(r.eps) + ',';
    out += format_double_shortest(r.c_prime) + ',' + r.backend + ',';
    out += std::to_string(r.n_raw) + ',' + std::to_string(r.n_kept) + ',';
    out += format_double_shortest(r.acc_rate) + ',' + format_double_shortest(r.max_err) + ',';
    out += format_double_shortest(r.mean_err) + ',' + std::to_string(r.runtime_ms);
    return out;
}

inline std::string sweep_csv_header() { return "method," + recover_csv_header() + ",error"; }

inline std::string row_to_sweep_csv(const RunRow& r) {
    return r.method + ',' + row_to_recover_csv(r) + ',' + r.error;
}

// ---------------------------------------------------------------------------
// Single runs
// ---------------------------------------------------------------------------

struct ThresholdRunResult {
    RunRow row;
    RecoveryOutput output;
    MatchResult match;
    ModelInstance instance;
    AcceptanceRates rates;
};

/// Full pipeline for one seed: instance -> band -> budget -> conditional
/// sampling -> clustering -> weight estimates -> permutation-matched scoring.
inline ThresholdRunResult run_threshold_recovery(const ExperimentConfig& cfg, std::uint64_t seed,
                                                 int threads = max_threads()) {
    auto t0 = std::chrono::steady_clock::now();
    cfg.validate();

    ThresholdRunResult res;
    res.instance = make_instance(cfg.instance.k, cfg.instance.d, cfg.instance.c, cfg.instance.delta,
                                 cfg.instance.p_min, cfg.instance.noise, seed);
    ValidationReport report = validate_assumptions(res.instance);
    if (!report.pass) throw ValidationError("instance failed assumption validation");

    BandConfig bc = cfg.band_config();
    ThresholdBand band = compute_band(bc);

    RateMethod method = res.instance.noise.gaussian_response() ? RateMethod::closed_form
                                                               : RateMethod::monte_carlo;
    res.rates = acceptance_rate(res.instance, band, method, 1'000'000, stream_key(seed, "accept", 0));

    std::int64_t raw = required_raw_from_rate(res.rates.mixture,
                                              cfg.budget.kept_target * cfg.instance.k,
                                              cfg.budget.safety, cfg.budget.raw_cap);
    ThresholdedSet ts = sample_thresholded(res.instance, band, raw, seed, threads);

    ClusterParams cp = cfg.cluster;
    cp.k = cfg.instance.k;
    cp.seed = stream_key(seed, "cluster", 0);
    MagnitudeCorrection corr =
        MagnitudeCorrection::auto_rule(res.instance.noise, cfg.instance.c, cfg.magnitude_switch_ratio);
    res.output = recover_weights(ts, cfg.instance.k, cp, band, corr);

    res.output.diagnostics["acceptance_predicted"] = res.rates.mixture;
    res.output.diagnostics["p_floor_warning"] =
        res.rates.effective_mixing.minCoeff() < cfg.p_floor_factor * cfg.instance.p_min ? 1.0 : 0.0;
    res.output.diagnostics["magnitude_corrected"] = corr.enabled ? 1.0 : 0.0;

    res.match = match_and_score(res.output.estimates, res.instance.weights);
    res.output.diagnostics["matching_cost"] = res.match.total_cost;
    res.output.diagnostics["max_err"] = res.match.max_error;

    auto& row = res.row;
    row.method = "threshold";
    row.seed = seed;
    row.k = cfg.instance.k;
    row.d = cfg.instance.d;
    row.c = cfg.instance.c;
    row.delta = cfg.instance.delta;
    row.sigma = cfg.instance.noise.sigma;
    row.eps = cfg.band.eps;
    row.c_prime = cfg.band.c_prime;
    row.backend = backend_name(cfg.cluster.backend);
    row.n_raw = ts.raw_count;
    row.n_kept = ts.kept_count;
    row.acc_rate = res.rates.mixture;
    row.max_err = res.match.max_error;
    double total = 0.0;
    for (double e : res.match.errors) total += e;
    row.mean_err = total / static_cast<double>(res.match.errors.size());
    row.runtime_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::steady_clock::now() - t0).count();
    return res;
}

struct EMRunResult {
    RunRow row;
    EMResult fit;
    MatchResult match;
    ModelInstance instance;
    std::int64_t matched_budget = 0;
};

/// EM baseline on the same instance. The sample count matches the threshold
/// pipeline's raw budget up to the tractability cap em.max_samples; EM is not
/// sample-starved at the cap, its failures at large sigma are structural.
inline EMRunResult run_em_baseline(const ExperimentConfig& cfg, std::uint64_t seed,
                                   int threads = max_threads()) {
    auto t0 = std::chrono::steady_clock::now();
    cfg.validate();

    EMRunResult res;
    res.instance = make_instance(cfg.instance.k, cfg.instance.d, cfg.instance.c, cfg.instance.delta,
                                 cfg.instance.p_min, cfg.instance.noise, seed);

    std::int64_t matched = cfg.em.max_samples;
    try {
        BandConfig bc = cfg.band_config();
        ThresholdBand band = compute_band(bc);
        matched = required_raw_samples(res.instance, band, cfg.budget.kept_target * cfg.instance.k,
                                       cfg.budget.safety, cfg.budget.raw_cap);
    } catch (const Error&) {
        // no feasible threshold budget to match; EM still gets its cap
    }
    res.matched_budget = matched;
    std::int64_t n = std::min(matched, cfg.em.max_samples);
    n = std::max<std::int64_t>(n, static_cast<std::int64_t>(10) * cfg.instance.k * cfg.instance.d);

    Dataset ds = sample_dataset(res.instance, n, stream_key(seed, "em-data", 0), threads);
    EMConfig emc;
    emc.k = cfg.instance.k;
    emc.max_iters = cfg.em.max_iters;
    emc.tol = cfg.em.tol;
    emc.restarts = cfg.em.restarts;
    emc.init = cfg.em.init;
    emc.seed = stream_key(seed, "em", 0);
    res.fit = em_fit(ds, emc, cfg.instance.noise.sigma);

    res.match = match_rows(res.fit.weights, res.instance.weights);

    auto& row = res.row;
    row.method = "em";
    row.seed = seed;
    row.k = cfg.instance.k;
    row.d = cfg.instance.d;
    row.c = cfg.instance.c;
    row.delta = cfg.instance.delta;
    row.sigma = cfg.instance.noise.sigma;
    row.eps = cfg.band.eps;
    row.c_prime = cfg.band.c_prime;
    row.backend = em_init_name(cfg.em.init);
    row.n_raw = n;
    row.n_kept = n;
    row.acc_rate = 1.0;
    row.max_err = res.match.max_error;
    double total = 0.0;
    for (double e : res.match.errors) total += e;
    row.mean_err = total / static_cast<double>(res.match.errors.size());
    row.runtime_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::steady_clock::now() - t0).count();
    return res;
}

// ---------------------------------------------------------------------------
// JSON result output ("mlr-recovery v1")
// ---------------------------------------------------------------------------

inline nlohmann::json recovery_output_json(const RecoveryOutput& out, const RunRow& row) {
    nlohmann::json j;
    j["schema_version"] = "mlr-recovery v1";
    j["method"] = row.method;
    j["seed"] = row.seed;
    j["k"] = row.k;
    j["d"] = row.d;
    j["band"] = {{"lower", out.band.lower}, {"upper", out.band.upper}};
    j["raw_count"] = out.raw_count;
    j["kept_count"] = out.kept_count;
    j["effective_mixing"] = std::vector<double>(out.effective_mixing.begin(), out.effective_mixing.end());
    nlohmann::json ests = nlohmann::json::array();
    for (const auto& e : out.estimates) {
        nlohmann::json je;
        je["cluster_index"] = e.cluster_index;
        je["kept_count"] = e.kept_count;
        je["magnitude"] = e.magnitude;
        je["direction"] = std::vector<double>(e.direction.begin(), e.direction.end());
        je["w_star"] = std::vector<double>(e.w_star.begin(), e.w_star.end());
        ests.push_back(je);
    }
    j["estimates"] = ests;
    nlohmann::json diag;
    for (const auto& [key, val] : out.diagnostics) diag[key] = val;
    diag["runtime_ms"] = row.runtime_ms;
    diag["max_err"] = row.max_err;
    diag["mean_err"] = row.mean_err;
    j["diagnostics"] = diag;
    return j;
}

inline nlohmann::json em_result_json(const EMRunResult& res) {
    nlohmann::json j;
    j["schema_version"] = "mlr-recovery v1";
    j["method"] = "em";
    j["seed"] = res.row.seed;
    j["k"] = res.row.k;
    j["d"] = res.row.d;
    j["band"] = nullptr;
    j["raw_count"] = res.row.n_raw;
    j["kept_count"] = res.row.n_kept;
    j["effective_mixing"] = std::vector<double>(res.fit.mixing.begin(), res.fit.mixing.end());
    nlohmann::json ests = nlohmann::json::array();
    for (Eigen::Index i = 0; i < res.fit.weights.rows(); ++i) {
        Eigen::VectorXd w = res.fit.weights.row(i).transpose();
        nlohmann::json je;
        je["cluster_index"] = static_cast<int>(i);
        je["kept_count"] = res.row.n_kept;
        je["magnitude"] = w.norm();
        Eigen::VectorXd dir = w.norm() > 0 ? Eigen::VectorXd(w / w.norm()) : w;
        je["direction"] = std::vector<double>(dir.begin(), dir.end());
        je["w_star"] = std::vector<double>(w.begin(), w.end());
        ests.push_back(je);
    }
    j["estimates"] = ests;
    j["diagnostics"] = {{"log_likelihood", res.fit.log_likelihood},
                        {"iterations", res.fit.iterations},
                        {"matched_budget", res.matched_budget},
                        {"max_err", res.row.max_err},
                        {"mean_err", res.row.mean_err},
                        {"runtime_ms", res.row.runtime_ms}};
    return j;
}

// ---------------------------------------------------------------------------
// Sweep with resumable manifest
// ---------------------------------------------------------------------------

struct SweepCell {
    std::string method;
    int k = 0;
    double sigma = 0.0;
    double eps = 0.0;
    std::string backend;
    std::uint64_t seed = 0;

    std::string key() const {
        return "method=" + method + ";k=" + std::to_string(k) +
               ";sigma=" + format_double_shortest(sigma) + ";eps=" + format_double_shortest(eps) +
               ";backend=" + backend + ";seed=" + std::to_string(seed);
    }
};

inline std::vector<SweepCell> expand_sweep_grid(const ExperimentConfig& cfg) {
    std::vector<SweepCell> cells;
    for (const auto& method : cfg.sweep.method)
        for (int k : cfg.sweep.k)
            for (double sigma : cfg.sweep.sigma)
                for (double eps : cfg.sweep.eps)
                    for (const auto& backend : cfg.sweep.backend)
                        for (std::uint64_t seed : cfg.seeds)
                            cells.push_back({method, k, sigma, eps, backend, seed});
    return cells;
}

/// Cell-specific configuration: grid values override the base config; p_min
/// is clamped to 1/k so grid k values stay feasible.
inline ExperimentConfig cell_config(const ExperimentConfig& base, const SweepCell& cell) {
    ExperimentConfig cfg = base;
    cfg.instance.k = cell.k;
    cfg.instance.noise.sigma = cell.sigma;
    if (cfg.instance.noise.family == NoiseFamily::zero && cell.sigma > 0.0)
        cfg.instance.noise.family = NoiseFamily::gaussian;
    cfg.band.eps = cell.eps;
    cfg.cluster.backend = parse_backend(cell.backend);
    cfg.instance.p_min = std::min(cfg.instance.p_min, 1.0 / cell.k);
    return cfg;
}

namespace detail {

inline std::set<std::string> load_manifest(const std::filesystem::path& path) {
    std::set<std::string> done;
    std::ifstream in(path);
    if (!in) return done;
    nlohmann::json j;
    try {
        in >> j;
        for (const auto& key : j.value("done", std::vector<std::string>{})) done.insert(key);
    } catch (const nlohmann::json::exception&) {
        throw Error("corrupt sweep manifest: " + path.string());
    }
    return done;
}

inline void store_manifest(const std::filesystem::path& path, const std::set<std::string>& done) {
    nlohmann::json j;
    j["schema_version"] = "mlr-sweep-manifest v1";
    j["done"] = done;
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw Error("cannot write manifest: " + tmp.string());
        out << j.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, path);  // atomic replace
}

} // namespace detail

struct SweepOutcome {
    std::int64_t total = 0;
    std::int64_t executed = 0;
    std::int64_t skipped = 0;
    std::int64_t failed = 0;
};

/// Runs the grid x seeds product; one CSV row per cell, resumable through the
/// manifest (completed cells are skipped on restart). Per-cell errors are
/// recorded in-row and the sweep continues.
inline SweepOutcome run_sweep(const ExperimentConfig& cfg, const std::string& out_dir,
                              int threads = max_threads(), std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const fs::path manifest_path = fs::path(out_dir) / "sweep_manifest.json";
    const fs::path csv_path = fs::path(out_dir) / "sweep.csv";

    std::set<std::string> done = detail::load_manifest(manifest_path);
    const bool new_csv = !fs::exists(csv_path);
    std::ofstream csv(csv_path, std::ios::app);
    if (!csv) throw Error("cannot open sweep csv: " + csv_path.string());
    if (new_csv) csv << sweep_csv_header() << "\n";

    SweepOutcome outcome;
    std::vector<SweepCell> cells = expand_sweep_grid(cfg);
    outcome.total = static_cast<std::int64_t>(cells.size());

    for (const auto& cell : cells) {
        if (done.count(cell.key())) {
            ++outcome.skipped;
            continue;
        }
        RunRow row;
        try {
            ExperimentConfig ccfg = cell_config(cfg, cell);
            if (cell.method == "threshold") {
                row = run_threshold_recovery(ccfg, cell.seed, threads).row;
            } else if (cell.method == "em") {
                row = run_em_baseline(ccfg, cell.seed, threads).row;
            } else {
                throw ValidationError("unknown sweep method: " + cell.method);
            }
        } catch (const Error& e) {
            row.method = cell.method;
            row.seed = cell.seed;
            row.k = cell.k;
            row.sigma = cell.sigma;
            row.eps = cell.eps;
            row.backend = cell.backend;
            row.error = e.what();
            for (auto& ch : row.error)
                if (ch == ',' || ch == '\n') ch = ';';
            ++outcome.failed;
        }
        csv << row_to_sweep_csv(row) << "\n";
        csv.flush();
        done.insert(cell.key());
        detail::store_manifest(manifest_path, done);
        ++outcome.executed;
        if (log) (*log) << "[sweep] " << cell.key() << " max_err="
                        << format_double_shortest(row.max_err)
                        << (row.error.empty() ? "" : (" error=" + row.error)) << "\n";
    }
    return outcome;
}

} // namespace mlr

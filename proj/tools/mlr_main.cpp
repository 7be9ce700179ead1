// Command-line harness: generate datasets, run the thresholding recovery
// pipeline, verify the concentration lemmas, sweep parameter grids, and run
// the EM baseline. All numerics live in the library; this file is I/O glue.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "mlr/mlr.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitBudget = 3;
constexpr int kExitNumerical = 4;

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed_override;
    std::string backend_override;
    bool quiet = false;
};

mlr::ExperimentConfig load(const CommonOpts& opts) {
    mlr::ExperimentConfig cfg = mlr::load_config(opts.config_path);
    if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
    if (opts.seed_override) cfg.seeds = {*opts.seed_override};
    if (!opts.backend_override.empty()) cfg.cluster.backend = mlr::parse_backend(opts.backend_override);
    return cfg;
}

int cmd_gen(const CommonOpts& opts) {
    mlr::ExperimentConfig cfg = load(opts);
    fs::create_directories(cfg.out_dir);
    for (std::uint64_t seed : cfg.seeds) {
        mlr::ModelInstance instance =
            mlr::make_instance(cfg.instance.k, cfg.instance.d, cfg.instance.c, cfg.instance.delta,
                               cfg.instance.p_min, cfg.instance.noise, seed);
        mlr::ThresholdBand band = mlr::compute_band(cfg.band_config());
        std::int64_t required = mlr::required_raw_samples(instance, band,
                                                          cfg.budget.kept_target * cfg.instance.k,
                                                          cfg.budget.safety, cfg.budget.raw_cap);
        std::int64_t n = cfg.gen_n > 0 ? cfg.gen_n : required;
        mlr::Dataset ds = mlr::sample_dataset(instance, n, seed);
        fs::path out = fs::path(cfg.out_dir) / ("dataset_" + std::to_string(seed) + ".csv");
        mlr::write_dataset_csv(ds, out.string());
        if (!opts.quiet) {
            mlr::AcceptanceRates rates = mlr::acceptance_rate(
                instance, band,
                instance.noise.gaussian_response() ? mlr::RateMethod::closed_form
                                                   : mlr::RateMethod::monte_carlo,
                1'000'000, mlr::stream_key(seed, "accept", 0));
            std::cout << "seed " << seed << ": wrote " << n << " samples to " << out.string()
                      << " (acceptance rate " << mlr::format_double_shortest(rates.mixture)
                      << ", required raw for kept target " << required << ")\n";
        }
    }
    return kExitOk;
}

int cmd_recover(const CommonOpts& opts) {
    mlr::ExperimentConfig cfg = load(opts);
    fs::create_directories(cfg.out_dir);
    fs::path csv_path = fs::path(cfg.out_dir) / "summary.csv";
    bool new_csv = !fs::exists(csv_path);
    std::ofstream csv(csv_path, std::ios::app);
    if (new_csv) csv << mlr::recover_csv_header() << "\n";

    for (std::uint64_t seed : cfg.seeds) {
        mlr::ThresholdRunResult res = mlr::run_threshold_recovery(cfg, seed);
        fs::path json_path = fs::path(cfg.out_dir) / ("recovery_" + std::to_string(seed) + ".json");
        std::ofstream(json_path.string()) << mlr::recovery_output_json(res.output, res.row).dump(2) << "\n";
        csv << mlr::row_to_recover_csv(res.row) << "\n";
        csv.flush();
        if (!opts.quiet) {
            std::cout << mlr::row_to_recover_csv(res.row) << "\n";
            if (res.output.diagnostics.at("p_floor_warning") > 0.0)
                std::cerr << "warning: effective mixing fell below the p_floor gate\n";
        }
    }
    return kExitOk;
}

int cmd_verify(const CommonOpts& opts) {
    mlr::ExperimentConfig cfg = load(opts);
    fs::create_directories(cfg.out_dir);
    bool all_pass = true;
    for (std::uint64_t seed : cfg.seeds) {
        mlr::ModelInstance instance =
            mlr::make_instance(cfg.instance.k, cfg.instance.d, cfg.instance.c, cfg.instance.delta,
                               cfg.instance.p_min, cfg.instance.noise, seed);
        mlr::BandConfig bc = cfg.band_config();
        std::vector<mlr::LemmaReport> reports;
        reports.push_back(mlr::check_conditional_mean(instance, bc, cfg.verify.retained,
                                                      mlr::stream_key(seed, "v-mean", 0), cfg.verify.tol));
        reports.push_back(mlr::check_separation(instance, bc));
        reports.push_back(mlr::check_coordinate_moments(cfg.verify.s_max, 1'000'000,
                                                        mlr::stream_key(seed, "v-coord", 0)));
        reports.push_back(mlr::check_truncated_moments(instance, bc, cfg.verify.s_max,
                                                       cfg.verify.retained,
                                                       mlr::stream_key(seed, "v-trunc", 0), cfg.verify.tol));
        reports.push_back(mlr::check_directional_moments(instance, bc, cfg.verify.s_max,
                                                         cfg.verify.n_directions, cfg.verify.retained,
                                                         mlr::stream_key(seed, "v-dir", 0), cfg.verify.tol));
        fs::path out = fs::path(cfg.out_dir) / ("lemmas_" + std::to_string(seed) + ".jsonl");
        std::ofstream os(out.string());
        mlr::write_reports_jsonl(reports, os);
        for (const auto& rep : reports) {
            all_pass = all_pass && rep.pass;
            if (!opts.quiet)
                std::cout << "seed " << seed << " " << rep.lemma << ": "
                          << (rep.pass ? "pass" : "FAIL") << " (" << rep.rows.size() << " rows, "
                          << rep.samples_used << " samples)\n";
        }
    }
    return all_pass ? kExitOk : kExitNumerical;
}

int cmd_sweep(const CommonOpts& opts) {
    mlr::ExperimentConfig cfg = load(opts);
    mlr::SweepOutcome outcome = mlr::run_sweep(cfg, cfg.out_dir, mlr::max_threads(),
                                               opts.quiet ? nullptr : &std::cout);
    if (!opts.quiet)
        std::cout << "sweep: " << outcome.executed << " executed, " << outcome.skipped
                  << " skipped, " << outcome.failed << " failed (of " << outcome.total << ")\n";
    return kExitOk;
}

int cmd_em(const CommonOpts& opts) {
    mlr::ExperimentConfig cfg = load(opts);
    fs::create_directories(cfg.out_dir);
    fs::path csv_path = fs::path(cfg.out_dir) / "em_summary.csv";
    bool new_csv = !fs::exists(csv_path);
    std::ofstream csv(csv_path, std::ios::app);
    if (new_csv) csv << mlr::recover_csv_header() << "\n";

    for (std::uint64_t seed : cfg.seeds) {
        mlr::EMRunResult res = mlr::run_em_baseline(cfg, seed);
        fs::path json_path = fs::path(cfg.out_dir) / ("em_" + std::to_string(seed) + ".json");
        std::ofstream(json_path.string()) << mlr::em_result_json(res).dump(2) << "\n";
        csv << mlr::row_to_recover_csv(res.row) << "\n";
        csv.flush();
        if (!opts.quiet) std::cout << mlr::row_to_recover_csv(res.row) << "\n";
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixtures-of-linear-regressions recovery via response thresholding"};
    app.require_subcommand(1);

    CommonOpts opts;
    app.add_option("--config", opts.config_path, "experiment config JSON")->required();
    app.add_option("--seed", opts.seed_override, "override the config seed list with one seed");
    app.add_option("--out", opts.out_dir, "output directory (overrides config out_dir)");
    app.add_option("--backend", opts.backend_override,
                   "cluster backend: kmeans_pp | trimmed_kmeans | single_linkage_cut");
    app.add_flag("--quiet", opts.quiet, "suppress progress output");

    auto* gen = app.add_subcommand("gen", "sample a dataset CSV per seed");
    auto* recover = app.add_subcommand("recover", "run the thresholding recovery pipeline");
    auto* verify = app.add_subcommand("verify", "run the lemma verification harness");
    auto* sweep = app.add_subcommand("sweep", "run the configured parameter grid");
    auto* em = app.add_subcommand("em", "run the EM baseline");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(opts);
        if (recover->parsed()) return cmd_recover(opts);
        if (verify->parsed()) return cmd_verify(opts);
        if (sweep->parsed()) return cmd_sweep(opts);
        if (em->parsed()) return cmd_em(opts);
    } catch (const mlr::InfeasibleBudgetError& e) {
        std::cerr << "budget error: " << e.what() << "\n";
        return kExitBudget;
    } catch (const mlr::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const mlr::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitOk;
}

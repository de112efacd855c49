#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedshare/config.hpp"
#include "fedshare/csv.hpp"
#include "fedshare/datagen.hpp"
#include "fedshare/errors.hpp"
#include "fedshare/hetero.hpp"
#include "fedshare/pipeline.hpp"
#include "fedshare/rng.hpp"
#include "fedshare/theory.hpp"

namespace {

using namespace fedshare;

struct CommonOpts {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out;
    int workers = 1;
    CLI::App* cmd = nullptr;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool needs_config) {
    opts.cmd = cmd;
    auto* config = cmd->add_option("--config", opts.config_path, "run configuration JSON");
    if (needs_config) config->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", opts.seed, "override the config's global seed");
    cmd->add_option("--out", opts.out, "override the config's output directory");
    cmd->add_option("--workers", opts.workers, "parallel workers for independent points")
        ->check(CLI::PositiveNumber);
}

config::RunConfig load(const CommonOpts& opts) {
    auto cfg = config::load_run_config(opts.config_path);
    if (opts.cmd->count("--seed")) cfg.seed = opts.seed;
    if (opts.cmd->count("--out")) cfg.output_dir = opts.out;
    return cfg;
}

std::string ensure_out(const config::RunConfig& cfg) {
    std::filesystem::create_directories(cfg.output_dir);
    return cfg.output_dir;
}

std::string path_in(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

void cmd_partition(const CommonOpts& opts) {
    const auto cfg = load(opts);
    const auto out = ensure_out(cfg);
    const auto data = pipeline::generate_data(cfg);
    pipeline::detail::write_label_histograms(data.clients, path_in(out, "label_histograms_before.csv"));
    hetero::make_report(data.stats(), data.global).write_csv(path_in(out, "heterogeneity_before.csv"));
    const auto client_dir = path_in(out, "clients");
    std::filesystem::create_directories(client_dir);
    for (std::size_t k = 0; k < data.clients.size(); ++k) {
        datagen::write_client_bin(path_in(client_dir, "client_" + std::to_string(k) + ".bin"),
                                  data.clients[k]);
    }
    datagen::write_client_bin(path_in(client_dir, "test.bin"), data.test);
    std::cout << "partitioned " << data.clients.size() << " clients, average emd "
              << hetero::average_emd(data.stats(), data.global) << ", artifacts in " << out << "\n";
}

void cmd_cluster(const CommonOpts& opts) {
    const auto cfg = load(opts);
    const auto out = ensure_out(cfg);
    const auto data = pipeline::generate_data(cfg);
    const auto closeness = config::closeness_matrix(cfg);
    const auto distances = config::distance_matrix(cfg);
    const auto art = pipeline::build_clusters(cfg, data.stats(), data.global, closeness, distances);
    pipeline::detail::write_graph_csv(art.graph, path_in(out, "graph.csv"));
    pipeline::detail::write_clusters_csv(art, art.graph.emd, path_in(out, "clusters.csv"));
    pipeline::detail::write_json_file(pipeline::detail::clusters_to_json(art),
                                      path_in(out, "clusters.json"));
    std::cout << "clustered " << cfg.scenario.num_clients << " clients into " << art.assignment.heads.size()
              << " clusters, artifacts in " << out << "\n";
}

void cmd_fit_rounds(const CommonOpts& opts) {
    const auto cfg = load(opts);
    const auto out = ensure_out(cfg);
    const auto data = pipeline::generate_data(cfg);
    const auto clusters = pipeline::build_clusters(cfg, data.stats(), data.global,
                                                   config::closeness_matrix(cfg), config::distance_matrix(cfg));
    const auto art = pipeline::calibrate_rounds(cfg, data, clusters.assignment, opts.workers);
    pipeline::detail::write_rounds_curve(art.curve, path_in(out, "rounds_curve.csv"));
    pipeline::detail::write_json_file(roundsfit::to_json(art.model), path_in(out, "round_model.json"));
    std::cout << "fitted rounds law on " << art.curve.size() << " levels, nmse " << art.model.nmse
              << ", artifacts in " << out << "\n";
}

void cmd_optimize(const CommonOpts& opts) {
    const auto cfg = load(opts);
    const auto out = ensure_out(cfg);
    const auto data = pipeline::generate_data(cfg);
    const auto closeness = config::closeness_matrix(cfg);
    const auto distances = config::distance_matrix(cfg);
    const auto clusters = pipeline::build_clusters(cfg, data.stats(), data.global, closeness, distances);

    roundsfit::RoundModel model;
    const auto model_path = path_in(out, "round_model.json");
    if (std::filesystem::exists(model_path)) {
        model = roundsfit::round_model_from_json(pipeline::detail::read_json_file(model_path));
        std::cout << "reusing " << model_path << "\n";
    } else {
        const auto art = pipeline::calibrate_rounds(cfg, data, clusters.assignment, opts.workers);
        pipeline::detail::write_rounds_curve(art.curve, path_in(out, "rounds_curve.csv"));
        pipeline::detail::write_json_file(roundsfit::to_json(art.model), model_path);
        model = art.model;
    }

    const auto ctx = pipeline::build_objective_context(cfg, data.stats(), data.global,
                                                       clusters.assignment, clusters.multicast_rate, model);
    const auto opt =
        jfvo::jfvo_optimize(ctx, cfg.ssca, derive_seed(cfg.seed, {pipeline::seeds::optimizer}));
    pipeline::detail::write_json_file(pipeline::detail::plan_to_json(opt), path_in(out, "plan.json"));
    pipeline::detail::write_ssca_trace(ctx, opt, path_in(out, "ssca_trace.csv"));
    std::int64_t shared = 0;
    for (const auto& [h, v] : opt.plan.volumes) shared += v;
    std::cout << "plan shares " << shared << " samples across " << opt.plan.volumes.size()
              << " clusters, objective " << opt.objective
              << (opt.oscillation_warning ? " (oscillation warning)" : "") << ", artifacts in " << out
              << "\n";
}

void cmd_simulate(const CommonOpts& opts) {
    const auto cfg = load(opts);
    const auto out = ensure_out(cfg);
    const auto data = pipeline::generate_data(cfg);
    fedsim::TrainingTrace first;
    const auto summary = pipeline::detail::run_training(
        data.clients, data.test, cfg.train, derive_seed(cfg.seed, {pipeline::seeds::train}),
        cfg.train_seeds, opts.workers, &first);
    first.write_csv(path_in(out, "training.csv"));
    nlohmann::ordered_json j;
    j["rounds"] = summary.rounds;
    j["rounds_mean"] = summary.rounds_mean;
    j["censored"] = summary.censored;
    j["final_accuracy"] = summary.final_accuracy;
    pipeline::detail::write_json_file(j, path_in(out, "simulate.json"));
    std::cout << "trained " << cfg.train_seeds << " seeds, mean rounds to target " << summary.rounds_mean
              << " (" << summary.censored << " censored), artifacts in " << out << "\n";
}

void cmd_pipeline(const CommonOpts& opts) {
    const auto cfg = load(opts);
    const auto result = pipeline::run_pipeline(cfg, cfg.output_dir, opts.workers);
    std::cout << "total delay " << result.summary.total_delay_shared << " s shared vs "
              << result.summary.total_delay_baseline << " s baseline (advantage "
              << 100.0 * result.summary.advantage << "%), artifacts in " << cfg.output_dir << "\n";
}

void cmd_sweep(const CommonOpts& opts, const std::string& axis, const std::vector<double>& values) {
    auto cfg = load(opts);
    config::SweepSpec spec = cfg.sweep;
    if (!axis.empty()) spec.axis = axis;
    if (!values.empty()) spec.values = values;
    const auto result = pipeline::run_sweep(cfg, spec, cfg.output_dir, opts.workers);
    int failed = 0;
    for (const auto& p : result.points) failed += p.failed ? 1 : 0;
    std::cout << "swept " << spec.axis << " over " << result.points.size() << " values (" << failed
              << " failed), artifacts in " << cfg.output_dir << "\n";
}

void cmd_theory_check(const CommonOpts& opts) {
    const auto cfg = load(opts);
    const auto out = ensure_out(cfg);
    const auto data = pipeline::generate_data(cfg);
    const auto base = derive_seed(cfg.seed, {pipeline::seeds::theory});

    theory::ProbeConfig pc;
    pc.num_probes = cfg.theory.probes;
    pc.weight_scale = cfg.theory.weight_scale;
    pc.l2_reg = cfg.theory.l2_reg;
    pc.batch_size = cfg.theory.batch_size;

    const auto constants = theory::estimate_constants(data.clients, {}, pc, derive_seed(base, {1}));
    const auto dissimilarity =
        theory::check_gradient_dissimilarity(data.clients, pc, derive_seed(base, {2}));

    // recorded runs under the rate hypothesis with the inflated constant
    const double eta = 0.9 / (4.0 * cfg.theory.inflation * constants.constants.l_smooth);
    std::vector<theory::RecordedRun> runs;
    runs.reserve(static_cast<std::size_t>(cfg.theory.recorded_seeds));
    for (int s = 0; s < cfg.theory.recorded_seeds; ++s) {
        runs.push_back(theory::simulate_recorded(data.clients, eta, cfg.train.local_epochs,
                                                 cfg.theory.recorded_rounds, cfg.theory.l2_reg,
                                                 cfg.theory.batch_size,
                                                 derive_seed(base, {42, static_cast<std::uint64_t>(s)})));
    }
    const auto drift = theory::check_drift_bound(runs, constants.constants, cfg.theory.inflation);
    const auto rate = theory::check_rate_bound(data.clients, runs, constants.constants,
                                               constants.minimizer.value, cfg.theory.inflation);

    nlohmann::ordered_json j;
    j["constants"] = theory::to_json(constants.constants);
    j["minimizer"] = {{"value", constants.minimizer.value},
                      {"gradient_norm", constants.minimizer.gradient_norm},
                      {"iterations", constants.minimizer.iterations}};
    j["eta"] = eta;
    j["local_steps"] = cfg.train.local_epochs;
    j["recorded_rounds"] = cfg.theory.recorded_rounds;
    j["recorded_seeds"] = cfg.theory.recorded_seeds;
    j["inflation"] = cfg.theory.inflation;
    j["dissimilarity"] = theory::to_json(dissimilarity);
    j["drift"] = theory::to_json(drift);
    j["rate"] = theory::to_json(rate);
    pipeline::detail::write_json_file(j, path_in(out, "theory_report.json"));

    std::cout << "dissimilarity " << (dissimilarity.holds ? "holds" : "VIOLATED") << " (max ratio "
              << dissimilarity.max_ratio << "), drift bound "
              << (drift.holds_inflated ? "holds" : "VIOLATED") << ", rate bound "
              << (rate.holds_inflated ? "holds" : "VIOLATED") << " at inflation " << cfg.theory.inflation
              << ", report in " << out << "\n";
}

void cmd_report(const std::string& dir) {
    const auto report_dir = pipeline::write_report(dir);
    std::cout << "report written to " << report_dir << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"clustered data-sharing federated edge learning toolkit"};
    app.require_subcommand(1);

    CommonOpts partition_opts;
    add_common(app.add_subcommand("partition", "generate the client datasets and heterogeneity report"),
               partition_opts, true);
    partition_opts.cmd->callback([&] { cmd_partition(partition_opts); });

    CommonOpts cluster_opts;
    add_common(app.add_subcommand("cluster", "build the constrained graph and cluster it"), cluster_opts,
               true);
    cluster_opts.cmd->callback([&] { cmd_cluster(cluster_opts); });

    CommonOpts fit_opts;
    add_common(app.add_subcommand("fit-rounds", "measure the rounds-vs-heterogeneity curve and fit it"),
               fit_opts, true);
    fit_opts.cmd->callback([&] { cmd_fit_rounds(fit_opts); });

    CommonOpts optimize_opts;
    add_common(app.add_subcommand("optimize",
                                  "optimize shared volumes and frequencies (reuses round_model.json "
                                  "from the output directory when present)"),
               optimize_opts, true);
    optimize_opts.cmd->callback([&] { cmd_optimize(optimize_opts); });

    CommonOpts simulate_opts;
    add_common(app.add_subcommand("simulate", "run plain federated training on the scenario"),
               simulate_opts, true);
    simulate_opts.cmd->callback([&] { cmd_simulate(simulate_opts); });

    CommonOpts pipeline_opts;
    add_common(app.add_subcommand("pipeline", "cluster, calibrate, optimize, share and train end to end"),
               pipeline_opts, true);
    pipeline_opts.cmd->callback([&] { cmd_pipeline(pipeline_opts); });

    CommonOpts sweep_opts;
    std::string sweep_axis;
    std::vector<double> sweep_values;
    {
        auto* cmd = app.add_subcommand("sweep", "run one reduced pipeline per axis value");
        add_common(cmd, sweep_opts, true);
        cmd->add_option("--axis", sweep_axis, "emd_level, shared_fraction or num_clusters");
        cmd->add_option("--values", sweep_values, "axis values")->delimiter(',');
        cmd->callback([&] { cmd_sweep(sweep_opts, sweep_axis, sweep_values); });
    }

    CommonOpts theory_opts;
    add_common(app.add_subcommand("theory-check", "estimate constants and check the convergence bounds"),
               theory_opts, true);
    theory_opts.cmd->callback([&] { cmd_theory_check(theory_opts); });

    std::string report_dir;
    {
        auto* cmd = app.add_subcommand("report", "emit per-figure CSVs and a text summary for a run");
        cmd->add_option("--out", report_dir, "artifact directory of a finished pipeline run")
            ->required()
            ->check(CLI::ExistingDirectory);
        cmd->callback([&] { cmd_report(report_dir); });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const fedshare::infeasibility_error& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return 3;
    } catch (const fedshare::numerical_error& e) {
        std::cerr << "numerical: " << e.what() << "\n";
        return 4;
    } catch (const fedshare::validation_error& e) {
        std::cerr << "invalid: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}

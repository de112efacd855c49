#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fedshare/config.hpp"
#include "fedshare/csv.hpp"
#include "fedshare/daca.hpp"
#include "fedshare/datagen.hpp"
#include "fedshare/errors.hpp"
#include "fedshare/fedsim.hpp"
#include "fedshare/hetero.hpp"
#include "fedshare/jfvo.hpp"
#include "fedshare/rng.hpp"
#include "fedshare/roundsfit.hpp"
#include "fedshare/types.hpp"
#include "fedshare/wireless.hpp"

// End-to-end orchestration: data partition, constrained-graph clustering,
// rounds-law calibration, volume/frequency optimization, sharing, federated
// training, and artifact emission. Every stage derives its random streams
// from the global seed with a fixed tag, so a (config, seed) pair replays
// byte-identically regardless of the worker count.
namespace fedshare::pipeline {

namespace detail {

// Runs fn(0..count-1) on up to `workers` threads. Each index owns its output
// slot, and the lowest-index failure wins, so results and errors do not
// depend on scheduling.
template <typename Fn>
inline void parallel_for(std::size_t count, int workers, Fn&& fn) {
    if (count == 0) return;
    const int threads = std::max(1, std::min(workers, static_cast<int>(count)));
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto body = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(body);
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

// Prefixes escaping errors with the stage name while keeping their family
// (and with it the CLI exit code).
template <typename Fn>
inline auto stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const infeasibility_error& e) {
        throw infeasibility_error("stage " + name + ": " + e.what());
    } catch (const numerical_error& e) {
        throw numerical_error("stage " + name + ": " + e.what());
    } catch (const validation_error& e) {
        throw validation_error("stage " + name + ": " + e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        throw validation_error("stage " + name + ": " + e.what());
    }
}

inline std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

inline void write_json_file(const nlohmann::ordered_json& j, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw validation_error("pipeline: cannot write " + path);
    out << j.dump(2) << '\n';
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw validation_error("pipeline: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw validation_error("pipeline: " + path + " is not valid JSON: " + e.what());
    }
    return j;
}

inline void write_label_histograms(const std::vector<datagen::ClientDataset>& clients,
                                   const std::string& path) {
    csv::writer w(path);
    w.row("client", "class", "count");
    for (std::size_t k = 0; k < clients.size(); ++k) {
        const auto counts = clients[k].label_counts();
        for (std::size_t y = 0; y < counts.size(); ++y) {
            w.row(k, y, counts[y]);
        }
    }
}

inline void write_rounds_curve(const std::vector<fedsim::RoundsPoint>& curve, const std::string& path) {
    csv::writer w(path);
    w.row("emd", "rounds", "censored", "seeds");
    for (const auto& p : curve) w.row(p.emd, p.rounds, p.censored, p.seeds);
}

} // namespace detail

// Stage seed tags hanging off the global seed. Module-internal streams use
// their own tags below these, so stages never collide.
namespace seeds {
inline constexpr std::uint64_t data = 51;
inline constexpr std::uint64_t calibration_data = 52;
inline constexpr std::uint64_t calibration_train = 53;
inline constexpr std::uint64_t optimizer = 54;
inline constexpr std::uint64_t sharing = 55;
inline constexpr std::uint64_t train = 56;
inline constexpr std::uint64_t fading = 59;
inline constexpr std::uint64_t theory = 60;
inline constexpr std::uint64_t sweep_data = 82;
inline constexpr std::uint64_t sweep_train = 83;
inline constexpr std::uint64_t sweep_assignment = 84;
inline constexpr std::uint64_t sweep_sharing = 85;
} // namespace seeds

struct ClusterArtifacts {
    daca::ConstrainedGraph graph;
    ClusterAssignment assignment;
    std::map<int, double> multicast_rate; // bits/s, 0 for singleton heads
    std::map<int, double> min_sinr;       // worst member SINR per head, 0 for singletons
};

struct CalibrationArtifacts {
    std::vector<fedsim::RoundsPoint> curve;
    roundsfit::RoundModel model;
};

struct TrainingSummary {
    std::vector<double> rounds; // per seed; censored runs count the round cap
    std::vector<double> final_accuracy;
    int censored = 0;
    double rounds_mean = 0.0;
};

struct PipelineSummary {
    double emd_before = 0.0;
    double emd_after_planned = 0.0;  // from the plan's expected label mix
    double emd_after_realized = 0.0; // from the actually multicast samples
    double sharing_delay = 0.0;
    double round_delay_shared = 0.0;
    double round_delay_baseline = 0.0;
    TrainingSummary shared;
    TrainingSummary baseline;
    double total_delay_shared = 0.0;
    double total_delay_baseline = 0.0;
    double advantage = 0.0; // 1 - shared/baseline total delay
};

struct PipelineResult {
    ClusterAssignment assignment;
    std::map<int, double> multicast_rate;
    std::vector<fedsim::RoundsPoint> curve;
    roundsfit::RoundModel model;
    jfvo::JfvoResult opt;
    PipelineSummary summary;
};

inline datagen::GeneratedData generate_data(const config::RunConfig& cfg) {
    return datagen::generate(cfg.scenario, derive_seed(cfg.seed, {seeds::data}));
}

inline ClusterArtifacts build_clusters(const config::RunConfig& cfg,
                                       const std::vector<ClientStat>& stats,
                                       const LabelDistribution& global,
                                       const std::vector<std::vector<double>>& closeness,
                                       const std::vector<std::vector<double>>& distances) {
    ClusterArtifacts out;
    out.graph = daca::build_graph(stats, global, closeness, distances, cfg.sidelink, cfg.radio,
                                  cfg.thresholds.e_th, cfg.thresholds.v_th);
    out.assignment = daca::daca_cluster(out.graph);
    for (int h : out.assignment.heads) {
        const auto& members = out.assignment.members_of(h);
        if (members.empty()) {
            out.multicast_rate[h] = 0.0;
            out.min_sinr[h] = 0.0;
            continue;
        }
        std::vector<double> sinrs;
        sinrs.reserve(members.size());
        for (int c : members) {
            sinrs.push_back(cfg.sidelink.sinr_at(
                distances[static_cast<std::size_t>(h)][static_cast<std::size_t>(c)], cfg.radio));
        }
        out.min_sinr[h] = *std::min_element(sinrs.begin(), sinrs.end());
        out.multicast_rate[h] = wireless::cluster_multicast_rate(sinrs, cfg.radio.sidelink_bandwidth);
    }
    return out;
}

// Rounds-vs-dispersion calibration along the sharing trajectory itself: each
// level executes the sharing operator at an even fraction of every head's
// stock and measures rounds-to-target on the resulting datasets. Levels are
// indexed by the same predicted post-sharing dispersion the optimizer later
// queries, so the fitted law is sampled exactly where it will be evaluated,
// and the test task is identical across levels. When no cluster has members
// the trajectory is a single point and the law degenerates to a constant.
inline CalibrationArtifacts calibrate_rounds(const config::RunConfig& cfg,
                                             const datagen::GeneratedData& data,
                                             const ClusterAssignment& assignment, int workers) {
    const int seeds_per_level = cfg.calibration.seeds;
    const auto stats = data.stats();

    std::int64_t stock = 0;
    for (int h : assignment.heads) {
        if (!assignment.members_of(h).empty()) stock += stats[static_cast<std::size_t>(h)].n;
    }
    const int levels = stock > 0 ? cfg.calibration.levels : 1;

    std::vector<std::map<int, std::int64_t>> level_volumes;
    std::vector<double> level_emd;
    for (int i = 0; i < levels; ++i) {
        const double t = levels == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(levels - 1);
        std::map<int, std::int64_t> volumes;
        std::map<int, double> real;
        for (int h : assignment.heads) {
            if (assignment.members_of(h).empty()) continue;
            const auto v = std::llround(t * static_cast<double>(stats[static_cast<std::size_t>(h)].n));
            volumes[h] = v;
            real[h] = static_cast<double>(v);
        }
        level_emd.push_back(hetero::post_sharing_average_emd_real(stats, assignment, real, data.global,
                                                                  hetero::EmdDenominator::post_sharing));
        level_volumes.push_back(std::move(volumes));
    }

    fedsim::TrainConfig base = cfg.train;
    base.max_rounds = cfg.calibration_rounds();
    const std::uint64_t train_base = derive_seed(cfg.seed, {seeds::calibration_train});

    // same seed formula as the serial curve measurement, runs spread over workers
    const auto total = static_cast<std::size_t>(levels) * static_cast<std::size_t>(seeds_per_level);
    std::vector<std::optional<int>> reached(total);
    detail::parallel_for(total, workers, [&](std::size_t idx) {
        const auto level = idx / static_cast<std::size_t>(seeds_per_level);
        const auto s = idx % static_cast<std::size_t>(seeds_per_level);
        SharingPlan plan;
        plan.volumes = level_volumes[level];
        const auto clients = datagen::apply_sharing(
            data.clients, assignment, plan,
            derive_seed(cfg.seed, {seeds::calibration_data, static_cast<std::uint64_t>(level)}));
        fedsim::TrainConfig run = base;
        run.rng_seed = derive_seed(train_base, {23, static_cast<std::uint64_t>(s)});
        const auto trace = fedsim::run_federated(clients, data.test, run);
        reached[idx] = trace.rounds_to_target;
    });

    CalibrationArtifacts out;
    for (int i = 0; i < levels; ++i) {
        fedsim::RoundsPoint point;
        point.emd = level_emd[static_cast<std::size_t>(i)];
        point.seeds = seeds_per_level;
        double sum = 0.0;
        int hit = 0;
        for (int s = 0; s < seeds_per_level; ++s) {
            const auto& r = reached[static_cast<std::size_t>(i) * static_cast<std::size_t>(seeds_per_level) +
                                    static_cast<std::size_t>(s)];
            if (r) {
                sum += static_cast<double>(*r);
                ++hit;
            } else {
                ++point.censored;
            }
        }
        point.rounds = hit > 0 ? sum / static_cast<double>(hit) : 0.0;
        out.curve.push_back(point);
    }
    std::sort(out.curve.begin(), out.curve.end(),
              [](const fedsim::RoundsPoint& a, const fedsim::RoundsPoint& b) { return a.emd < b.emd; });

    if (levels == 1) {
        const auto& p = out.curve.front();
        const double rounds = p.censored == 0 ? p.rounds : static_cast<double>(base.max_rounds);
        out.model.beta = {0.0, 0.0, 1.0 / rounds};
        out.model.valid_range = {p.emd, p.emd};
        return out;
    }

    std::vector<std::pair<double, double>> samples;
    for (const auto& p : out.curve) {
        if (p.censored == 0) samples.emplace_back(p.emd, p.rounds);
    }
    if (samples.size() < 3) {
        throw numerical_error("calibration: only " + std::to_string(samples.size()) +
                              " levels reached the target accuracy, need 3 to fit");
    }
    out.model = roundsfit::fit(samples);
    return out;
}

// Wires the wireless snapshot, the cluster structure and the fitted rounds
// law into the optimizer's objective.
inline jfvo::ObjectiveContext build_objective_context(const config::RunConfig& cfg,
                                                      const std::vector<ClientStat>& stats,
                                                      const LabelDistribution& global,
                                                      const ClusterAssignment& assignment,
                                                      const std::map<int, double>& multicast_rate,
                                                      const roundsfit::RoundModel& model) {
    jfvo::ObjectiveContext ctx;
    ctx.assignment = assignment;
    ctx.round_model = model;
    ctx.clients = stats;
    ctx.global = global;
    ctx.multicast_rate = multicast_rate;
    ctx.bits_per_sample = cfg.bits_per_sample;
    ctx.compute = cfg.compute;
    ctx.energy_budget = cfg.thresholds.gamma_th;

    wireless::FadingModel fading = cfg.fading;
    fading.seed = derive_seed(cfg.seed, {seeds::fading});
    const double payload = cfg.payload_bits();
    const int k_count = cfg.scenario.num_clients;
    const double download = wireless::expected_download_delay(cfg.radio, fading, payload);
    const auto subcarriers = wireless::allocate_subcarriers(cfg.radio.num_subcarriers, k_count);
    ctx.download_delay.assign(static_cast<std::size_t>(k_count), download);
    ctx.upload_delay.resize(static_cast<std::size_t>(k_count));
    ctx.upload_energy.resize(static_cast<std::size_t>(k_count));
    for (int k = 0; k < k_count; ++k) {
        const double ul = wireless::expected_upload_delay(cfg.radio, fading, payload,
                                                          subcarriers[static_cast<std::size_t>(k)]);
        ctx.upload_delay[static_cast<std::size_t>(k)] = ul;
        ctx.upload_energy[static_cast<std::size_t>(k)] = wireless::upload_energy(cfg.radio, ul);
    }
    return ctx;
}

namespace detail {

// Box and energy slack of one averaged iterate: feasible points report 0.
inline double iterate_violation(const jfvo::ObjectiveContext& ctx, const std::vector<double>& volumes) {
    double worst = 0.0;
    std::map<int, double> as_map;
    for (std::size_t m = 0; m < volumes.size(); ++m) {
        const int h = ctx.assignment.heads[m];
        const double cap = ctx.multicast_rate.at(h) > 0.0
                               ? static_cast<double>(ctx.clients[static_cast<std::size_t>(h)].n)
                               : 0.0;
        worst = std::max({worst, -volumes[m], volumes[m] - cap});
        as_map[h] = std::max(0.0, volumes[m]);
    }
    const auto freqs = jfvo::response_frequencies(ctx, as_map);
    const auto counts = jfvo::effective_counts(ctx, as_map);
    for (int k = 0; k < ctx.num_clients(); ++k) {
        wireless::ComputeParams c = ctx.compute;
        c.frequency = freqs[static_cast<std::size_t>(k)];
        const double gamma = ctx.upload_energy[static_cast<std::size_t>(k)] +
                             wireless::computation_energy(c, counts[static_cast<std::size_t>(k)]);
        worst = std::max(worst, gamma - ctx.energy_budget);
    }
    return std::max(0.0, worst);
}

inline void write_ssca_trace(const jfvo::ObjectiveContext& ctx, const jfvo::JfvoResult& opt,
                             const std::string& path) {
    csv::writer w(path);
    w.row("iteration", "objective", "max_violation");
    for (std::size_t i = 0; i < opt.trace.size(); ++i) {
        w.row(i + 1, opt.trace[i], iterate_violation(ctx, opt.trace_volumes[i]));
    }
}

inline nlohmann::ordered_json plan_to_json(const jfvo::JfvoResult& opt) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json volumes;
    for (const auto& [h, v] : opt.plan.volumes) volumes[std::to_string(h)] = v;
    nlohmann::ordered_json freqs;
    for (const auto& [k, f] : opt.plan.frequencies) freqs[std::to_string(k)] = f;
    j["volumes"] = volumes;
    j["frequencies"] = freqs;
    j["objective"] = opt.objective;
    j["oscillation_warning"] = opt.oscillation_warning;
    return j;
}

inline SharingPlan plan_from_json(const nlohmann::json& j) {
    SharingPlan plan;
    for (const auto& [key, v] : j.at("volumes").items()) {
        plan.volumes[std::stoi(key)] = v.get<std::int64_t>();
    }
    for (const auto& [key, v] : j.at("frequencies").items()) {
        plan.frequencies[std::stoi(key)] = v.get<double>();
    }
    return plan;
}

inline nlohmann::ordered_json clusters_to_json(const ClusterArtifacts& art) {
    nlohmann::ordered_json j;
    j["heads"] = art.assignment.heads;
    nlohmann::ordered_json members;
    for (const auto& [h, mem] : art.assignment.members) members[std::to_string(h)] = mem;
    j["members"] = members;
    nlohmann::ordered_json rate;
    for (const auto& [h, r] : art.multicast_rate) rate[std::to_string(h)] = r;
    j["multicast_rate"] = rate;
    nlohmann::ordered_json sinr;
    for (const auto& [h, s] : art.min_sinr) sinr[std::to_string(h)] = s;
    j["min_sinr"] = sinr;
    return j;
}

inline void write_graph_csv(const daca::ConstrainedGraph& g, const std::string& path) {
    csv::writer w(path);
    w.row("client_a", "client_b", "closeness", "rate_bps", "edge");
    const std::size_t n = g.adj.size();
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) {
            w.row(a, b, g.closeness[a][b], g.rate[a][b], g.adj[a][b] ? 1 : 0);
        }
    }
}

inline void write_clusters_csv(const ClusterArtifacts& art, const std::vector<double>& emd,
                               const std::string& path) {
    csv::writer w(path);
    w.row("client", "role", "head", "emd");
    for (std::size_t k = 0; k < emd.size(); ++k) {
        const int id = static_cast<int>(k);
        const bool head = art.assignment.is_head(id);
        w.row(k, head ? "head" : "member", head ? id : art.assignment.head_of(id), emd[k]);
    }
}

// Seed-paired training runs; censored runs are counted and enter the mean at
// the round cap, which understates any advantage computed from them.
inline TrainingSummary run_training(const std::vector<datagen::ClientDataset>& clients,
                                    const datagen::ClientDataset& test, const fedsim::TrainConfig& base,
                                    std::uint64_t seed_base, int num_seeds, int workers,
                                    fedsim::TrainingTrace* first_trace = nullptr) {
    std::vector<fedsim::TrainingTrace> traces(static_cast<std::size_t>(num_seeds));
    detail::parallel_for(static_cast<std::size_t>(num_seeds), workers, [&](std::size_t s) {
        fedsim::TrainConfig run = base;
        run.rng_seed = derive_seed(seed_base, {23, static_cast<std::uint64_t>(s)});
        traces[s] = fedsim::run_federated(clients, test, run);
    });
    TrainingSummary out;
    for (const auto& t : traces) {
        if (t.rounds_to_target) {
            out.rounds.push_back(static_cast<double>(*t.rounds_to_target));
        } else {
            out.rounds.push_back(static_cast<double>(base.max_rounds));
            ++out.censored;
        }
        out.final_accuracy.push_back(t.final_accuracy);
    }
    out.rounds_mean = std::accumulate(out.rounds.begin(), out.rounds.end(), 0.0) /
                      static_cast<double>(out.rounds.size());
    if (first_trace) *first_trace = traces.front();
    return out;
}

inline nlohmann::ordered_json summary_to_json(const PipelineSummary& s) {
    nlohmann::ordered_json j;
    j["emd_before"] = s.emd_before;
    j["emd_after_planned"] = s.emd_after_planned;
    j["emd_after_realized"] = s.emd_after_realized;
    j["sharing_delay_s"] = s.sharing_delay;
    j["round_delay_shared_s"] = s.round_delay_shared;
    j["round_delay_baseline_s"] = s.round_delay_baseline;
    j["rounds_shared"] = s.shared.rounds;
    j["rounds_baseline"] = s.baseline.rounds;
    j["rounds_shared_mean"] = s.shared.rounds_mean;
    j["rounds_baseline_mean"] = s.baseline.rounds_mean;
    j["censored_shared"] = s.shared.censored;
    j["censored_baseline"] = s.baseline.censored;
    j["final_accuracy_shared"] = s.shared.final_accuracy;
    j["final_accuracy_baseline"] = s.baseline.final_accuracy;
    j["total_delay_shared_s"] = s.total_delay_shared;
    j["total_delay_baseline_s"] = s.total_delay_baseline;
    j["advantage"] = s.advantage;
    return j;
}

inline void write_summary_csv(const PipelineSummary& s, const std::string& path) {
    csv::writer w(path);
    w.row("key", "value");
    w.row("emd_before", s.emd_before);
    w.row("emd_after_planned", s.emd_after_planned);
    w.row("emd_after_realized", s.emd_after_realized);
    w.row("sharing_delay_s", s.sharing_delay);
    w.row("round_delay_shared_s", s.round_delay_shared);
    w.row("round_delay_baseline_s", s.round_delay_baseline);
    w.row("rounds_shared_mean", s.shared.rounds_mean);
    w.row("rounds_baseline_mean", s.baseline.rounds_mean);
    w.row("censored_shared", s.shared.censored);
    w.row("censored_baseline", s.baseline.censored);
    w.row("total_delay_shared_s", s.total_delay_shared);
    w.row("total_delay_baseline_s", s.total_delay_baseline);
    w.row("advantage", s.advantage);
}

// Slowest-client round delay with per-client frequencies responding to the
// current effective sample counts.
inline double plan_round_delay(const jfvo::ObjectiveContext& ctx, const std::map<int, double>& volumes) {
    const auto freqs = jfvo::response_frequencies(ctx, volumes);
    const auto counts = jfvo::effective_counts(ctx, volumes);
    std::vector<double> compute(static_cast<std::size_t>(ctx.num_clients()));
    for (int k = 0; k < ctx.num_clients(); ++k) {
        wireless::ComputeParams c = ctx.compute;
        c.frequency = freqs[static_cast<std::size_t>(k)];
        compute[static_cast<std::size_t>(k)] = wireless::computation_delay(c, counts[static_cast<std::size_t>(k)]);
    }
    return wireless::round_delay(ctx.download_delay, compute, ctx.upload_delay);
}

} // namespace detail

// The full decomposition: cluster first, then optimize volumes/frequencies,
// then train on the shared data, with a no-sharing run alongside. Artifacts
// land under out_dir as they are produced, so a failed stage leaves the
// earlier ones on disk.
inline PipelineResult run_pipeline(const config::RunConfig& cfg, const std::string& out_dir,
                                   int workers = 1) {
    cfg.validate();
    if (workers < 1) throw validation_error("pipeline: need at least one worker");
    std::filesystem::create_directories(out_dir);
    config::save_run_config(cfg, detail::join_path(out_dir, "config.json"));

    PipelineResult result;

    auto data = detail::stage("partition", [&] {
        auto d = generate_data(cfg);
        detail::write_label_histograms(d.clients, detail::join_path(out_dir, "label_histograms_before.csv"));
        hetero::make_report(d.stats(), d.global)
            .write_csv(detail::join_path(out_dir, "heterogeneity_before.csv"));
        return d;
    });
    const auto stats = data.stats();

    auto clusters = detail::stage("cluster", [&] {
        const auto closeness = config::closeness_matrix(cfg);
        const auto distances = config::distance_matrix(cfg);
        auto art = build_clusters(cfg, stats, data.global, closeness, distances);
        detail::write_graph_csv(art.graph, detail::join_path(out_dir, "graph.csv"));
        detail::write_clusters_csv(art, art.graph.emd, detail::join_path(out_dir, "clusters.csv"));
        detail::write_json_file(detail::clusters_to_json(art), detail::join_path(out_dir, "clusters.json"));
        return art;
    });
    result.assignment = clusters.assignment;
    result.multicast_rate = clusters.multicast_rate;

    auto calibration = detail::stage("calibrate", [&] {
        auto art = calibrate_rounds(cfg, data, clusters.assignment, workers);
        detail::write_rounds_curve(art.curve, detail::join_path(out_dir, "rounds_curve.csv"));
        detail::write_json_file(roundsfit::to_json(art.model), detail::join_path(out_dir, "round_model.json"));
        return art;
    });
    result.curve = calibration.curve;
    result.model = calibration.model;

    const auto ctx = detail::stage("optimize", [&] {
        return build_objective_context(cfg, stats, data.global, clusters.assignment,
                                       clusters.multicast_rate, calibration.model);
    });
    result.opt = detail::stage("optimize", [&] {
        auto opt = jfvo::jfvo_optimize(ctx, cfg.ssca, derive_seed(cfg.seed, {seeds::optimizer}));
        detail::write_json_file(detail::plan_to_json(opt), detail::join_path(out_dir, "plan.json"));
        detail::write_ssca_trace(ctx, opt, detail::join_path(out_dir, "ssca_trace.csv"));
        return opt;
    });

    std::map<int, double> planned_volumes;
    for (const auto& [h, v] : result.opt.plan.volumes) planned_volumes[h] = static_cast<double>(v);

    auto shared_clients = detail::stage("share", [&] {
        auto shared = datagen::apply_sharing(data.clients, clusters.assignment, result.opt.plan,
                                             derive_seed(cfg.seed, {seeds::sharing}));
        detail::write_label_histograms(shared, detail::join_path(out_dir, "label_histograms_after.csv"));
        std::vector<ClientStat> after;
        after.reserve(shared.size());
        for (const auto& c : shared) after.push_back({c.n(), c.label_distribution()});
        hetero::make_report(after, data.global)
            .write_csv(detail::join_path(out_dir, "heterogeneity_after.csv"));
        return shared;
    });

    detail::stage("train", [&] {
        fedsim::TrainingTrace shared_trace;
        fedsim::TrainingTrace baseline_trace;
        const std::uint64_t train_base = derive_seed(cfg.seed, {seeds::train});
        result.summary.shared = detail::run_training(shared_clients, data.test, cfg.train, train_base,
                                                     cfg.train_seeds, workers, &shared_trace);
        result.summary.baseline = detail::run_training(data.clients, data.test, cfg.train, train_base,
                                                       cfg.train_seeds, workers, &baseline_trace);
        shared_trace.write_csv(detail::join_path(out_dir, "training.csv"));
        baseline_trace.write_csv(detail::join_path(out_dir, "training_baseline.csv"));
        return 0;
    });

    detail::stage("summary", [&] {
        auto& s = result.summary;
        s.emd_before = hetero::average_emd(stats, data.global);
        s.emd_after_planned = jfvo::emd_at(ctx, planned_volumes);
        // realized mix from the drawn samples, same denominator convention
        {
            double weighted = 0.0;
            double total = 0.0;
            for (const auto& c : shared_clients) {
                weighted += static_cast<double>(c.n()) * hetero::emd(c.label_distribution(), data.global);
                total += static_cast<double>(c.n());
            }
            s.emd_after_realized = weighted / total;
        }
        s.sharing_delay = wireless::sharing_delay(result.opt.plan.volumes, clusters.multicast_rate,
                                                  cfg.bits_per_sample);
        s.round_delay_shared = detail::plan_round_delay(ctx, planned_volumes);
        s.round_delay_baseline = detail::plan_round_delay(ctx, {});
        s.total_delay_shared = s.sharing_delay + s.shared.rounds_mean * s.round_delay_shared;
        s.total_delay_baseline = s.baseline.rounds_mean * s.round_delay_baseline;
        s.advantage = 1.0 - s.total_delay_shared / s.total_delay_baseline;
        detail::write_json_file(detail::summary_to_json(s), detail::join_path(out_dir, "summary.json"));
        detail::write_summary_csv(s, detail::join_path(out_dir, "summary.csv"));
        return 0;
    });

    return result;
}

// --- sweeps ---------------------------------------------------------------

struct SweepPoint {
    double value = 0.0;
    TrainingSummary training;
    double final_accuracy_mean = 0.0;
    bool failed = false;
    std::string error;
};

struct SweepResult {
    std::string axis;
    std::vector<SweepPoint> points;
};

namespace detail {

// Random grouping into `clusters` parts: shuffled ids, first ids become
// heads, the rest join heads round-robin.
inline ClusterAssignment random_assignment(int num_clients, int clusters, std::mt19937_64& rng) {
    if (clusters < 1 || clusters > num_clients) {
        throw validation_error("sweep: cluster count outside [1, num_clients]");
    }
    std::vector<int> ids(static_cast<std::size_t>(num_clients));
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    ClusterAssignment out;
    for (int c = 0; c < clusters; ++c) out.heads.push_back(ids[static_cast<std::size_t>(c)]);
    std::sort(out.heads.begin(), out.heads.end());
    for (int i = clusters; i < num_clients; ++i) {
        const int head = ids[static_cast<std::size_t>(i % clusters)];
        out.members[head].push_back(ids[static_cast<std::size_t>(i)]);
    }
    for (auto& [h, mem] : out.members) std::sort(mem.begin(), mem.end());
    return out;
}

inline SharingPlan fraction_plan(const std::vector<datagen::ClientDataset>& clients,
                                 const ClusterAssignment& assignment, double fraction) {
    SharingPlan plan;
    for (int h : assignment.heads) {
        const auto n = clients[static_cast<std::size_t>(h)].n();
        plan.volumes[h] = std::min<std::int64_t>(
            n, static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(n))));
    }
    return plan;
}

} // namespace detail

// One reduced pipeline per axis value: rounds-to-target and the seed-0 loss
// curve, seed-paired across values so level comparisons share randomness.
// Point failures are recorded and the sweep continues.
inline SweepResult run_sweep(const config::RunConfig& cfg, const config::SweepSpec& spec,
                             const std::string& out_dir, int workers = 1) {
    cfg.validate();
    spec.validate();
    if (workers < 1) throw validation_error("sweep: need at least one worker");
    if (spec.axis == "emd_level" && cfg.scenario.kind == datagen::SkewKind::feature_noise) {
        throw validation_error("sweep: emd_level axis needs a label-skew scenario");
    }
    std::filesystem::create_directories(out_dir);

    SweepResult result;
    result.axis = spec.axis;
    result.points.resize(spec.values.size());

    detail::parallel_for(spec.values.size(), workers, [&](std::size_t i) {
        auto& point = result.points[i];
        point.value = spec.values[i];
        const std::string point_dir = detail::join_path(out_dir, "point_" + std::to_string(i));
        try {
            std::filesystem::create_directories(point_dir);
            fedsim::TrainConfig base = cfg.train;
            for (int s = 0; s < spec.seeds; ++s) {
                const auto tag = static_cast<std::uint64_t>(s);
                const std::uint64_t data_seed = derive_seed(cfg.seed, {seeds::sweep_data, tag});

                datagen::Scenario sc = cfg.scenario;
                if (spec.axis == "emd_level") {
                    if (sc.kind == datagen::SkewKind::single_class_fraction) {
                        sc.fraction = point.value;
                    } else {
                        sc.alpha = point.value;
                    }
                }
                auto data = datagen::generate(sc, data_seed);
                std::vector<datagen::ClientDataset> train_set = data.clients;

                if (spec.axis != "emd_level") {
                    ClusterAssignment assignment;
                    double share = 0.0;
                    if (spec.axis == "shared_fraction") {
                        share = point.value;
                        const auto closeness = config::closeness_matrix(cfg);
                        const auto distances = config::distance_matrix(cfg);
                        assignment = build_clusters(cfg, data.stats(), data.global, closeness, distances)
                                         .assignment;
                    } else { // num_clusters; the value 0 keeps the adaptive clustering
                        share = spec.share_fraction;
                        const int clusters = static_cast<int>(std::llround(point.value));
                        if (clusters == 0) {
                            const auto closeness = config::closeness_matrix(cfg);
                            const auto distances = config::distance_matrix(cfg);
                            assignment =
                                build_clusters(cfg, data.stats(), data.global, closeness, distances)
                                    .assignment;
                        } else {
                            auto rng = make_rng(cfg.seed, {seeds::sweep_assignment, tag,
                                                           static_cast<std::uint64_t>(i)});
                            assignment = detail::random_assignment(cfg.scenario.num_clients, clusters, rng);
                        }
                    }
                    const auto plan = detail::fraction_plan(data.clients, assignment, share);
                    train_set = datagen::apply_sharing(
                        data.clients, assignment, plan,
                        derive_seed(cfg.seed, {seeds::sweep_sharing, tag, static_cast<std::uint64_t>(i)}));
                }

                fedsim::TrainConfig run = base;
                run.rng_seed = derive_seed(cfg.seed, {seeds::sweep_train, tag});
                const auto trace = fedsim::run_federated(train_set, data.test, run);
                if (trace.rounds_to_target) {
                    point.training.rounds.push_back(static_cast<double>(*trace.rounds_to_target));
                } else {
                    point.training.rounds.push_back(static_cast<double>(base.max_rounds));
                    ++point.training.censored;
                }
                point.training.final_accuracy.push_back(trace.final_accuracy);
                if (s == 0) {
                    trace.write_csv(detail::join_path(point_dir, "training_s0.csv"));
                }
            }
            point.training.rounds_mean =
                std::accumulate(point.training.rounds.begin(), point.training.rounds.end(), 0.0) /
                static_cast<double>(point.training.rounds.size());
            point.final_accuracy_mean = std::accumulate(point.training.final_accuracy.begin(),
                                                        point.training.final_accuracy.end(), 0.0) /
                                        static_cast<double>(point.training.final_accuracy.size());

            nlohmann::ordered_json pj;
            pj["axis"] = spec.axis;
            pj["value"] = point.value;
            pj["rounds"] = point.training.rounds;
            pj["rounds_mean"] = point.training.rounds_mean;
            pj["censored"] = point.training.censored;
            pj["final_accuracy"] = point.training.final_accuracy;
            detail::write_json_file(pj, detail::join_path(point_dir, "point.json"));
        } catch (const std::exception& e) {
            point.failed = true;
            point.error = e.what();
        }
    });

    csv::writer w(detail::join_path(out_dir, "sweep.csv"));
    w.row("index", "axis", "value", "rounds_mean", "censored", "seeds", "final_accuracy_mean", "status");
    for (std::size_t i = 0; i < result.points.size(); ++i) {
        const auto& p = result.points[i];
        std::string status = p.failed ? p.error : "ok";
        std::replace(status.begin(), status.end(), ',', ';');
        w.row(i, spec.axis, p.value, p.training.rounds_mean, p.training.censored,
              static_cast<std::int64_t>(p.training.rounds.size()), p.final_accuracy_mean, status);
    }
    return result;
}

// --- report ----------------------------------------------------------------

namespace detail {

inline std::vector<std::string> required_artifacts() {
    return {"config.json",
            "label_histograms_before.csv",
            "label_histograms_after.csv",
            "heterogeneity_before.csv",
            "heterogeneity_after.csv",
            "graph.csv",
            "clusters.csv",
            "clusters.json",
            "rounds_curve.csv",
            "round_model.json",
            "plan.json",
            "ssca_trace.csv",
            "training.csv",
            "training_baseline.csv",
            "summary.json",
            "summary.csv"};
}

} // namespace detail

// Turns a finished run directory into per-figure CSVs plus a text summary
// under <dir>/report. Missing inputs are listed by name.
inline std::string write_report(const std::string& artifact_dir) {
    std::vector<std::string> missing;
    for (const auto& name : detail::required_artifacts()) {
        if (!std::filesystem::exists(detail::join_path(artifact_dir, name))) missing.push_back(name);
    }
    if (!missing.empty()) {
        std::string list;
        for (std::size_t i = 0; i < missing.size(); ++i) {
            if (i) list += ", ";
            list += missing[i];
        }
        throw validation_error("report: missing artifacts in " + artifact_dir + ": " + list);
    }

    const std::string report_dir = detail::join_path(artifact_dir, "report");
    std::filesystem::create_directories(report_dir);

    const auto config_json = detail::read_json_file(detail::join_path(artifact_dir, "config.json"));
    const auto summary = detail::read_json_file(detail::join_path(artifact_dir, "summary.json"));
    const auto clusters = detail::read_json_file(detail::join_path(artifact_dir, "clusters.json"));
    const auto plan_json = detail::read_json_file(detail::join_path(artifact_dir, "plan.json"));
    const auto model =
        roundsfit::round_model_from_json(detail::read_json_file(detail::join_path(artifact_dir, "round_model.json")));
    const double bits_per_sample = config_json.at("bits_per_sample").get<double>();

    { // paired shared/baseline loss curves
        auto shared = csv::read_rows(detail::join_path(artifact_dir, "training.csv"));
        auto baseline = csv::read_rows(detail::join_path(artifact_dir, "training_baseline.csv"));
        csv::writer w(detail::join_path(report_dir, "loss_curves.csv"));
        w.row("round", "shared_loss", "shared_accuracy", "baseline_loss", "baseline_accuracy");
        const std::size_t rows = std::max(shared.size(), baseline.size());
        for (std::size_t r = 1; r < rows; ++r) {
            std::vector<std::string> cells{csv::format_int(static_cast<std::int64_t>(r)), "", "", "", ""};
            if (r < shared.size()) {
                cells[1] = shared[r][1];
                cells[2] = shared[r][2];
            }
            if (r < baseline.size()) {
                cells[3] = baseline[r][1];
                cells[4] = baseline[r][2];
            }
            w.raw_row(cells);
        }
    }

    { // measured staircase next to the fitted law
        auto curve = csv::read_rows(detail::join_path(artifact_dir, "rounds_curve.csv"));
        csv::writer w(detail::join_path(report_dir, "rounds_vs_emd.csv"));
        w.row("emd", "measured_rounds", "censored", "seeds", "fitted_rounds");
        for (std::size_t r = 1; r < curve.size(); ++r) {
            const double emd = csv::parse_double(curve[r][0]);
            w.raw_row({curve[r][0], curve[r][1], curve[r][2], curve[r][3],
                       csv::format_double(roundsfit::predict(model, emd))});
        }
    }

    { // optimizer convergence
        auto trace = csv::read_rows(detail::join_path(artifact_dir, "ssca_trace.csv"));
        csv::writer w(detail::join_path(report_dir, "convergence_trace.csv"));
        w.row("iteration", "objective", "max_violation");
        for (std::size_t r = 1; r < trace.size(); ++r) w.raw_row(trace[r]);
    }

    { // per-cluster sharing table
        csv::writer w(detail::join_path(report_dir, "cluster_table.csv"));
        w.row("head", "cluster_size", "min_sinr", "multicast_rate_bps", "shared_samples",
              "multicast_delay_s", "head_frequency_hz");
        for (const auto& head : clusters.at("heads")) {
            const std::string key = std::to_string(head.get<int>());
            const auto members = clusters.at("members").contains(key)
                                     ? clusters.at("members").at(key).size()
                                     : 0;
            const double rate = clusters.at("multicast_rate").at(key).get<double>();
            const double sinr = clusters.at("min_sinr").at(key).get<double>();
            const auto volume = plan_json.at("volumes").at(key).get<std::int64_t>();
            const double delay = volume > 0 ? bits_per_sample * static_cast<double>(volume) / rate : 0.0;
            const double freq = plan_json.at("frequencies").at(key).get<double>();
            w.row(key, members + 1, sinr, rate, volume, delay, freq);
        }
    }

    { // per-client class mix before and after sharing
        auto before = csv::read_rows(detail::join_path(artifact_dir, "label_histograms_before.csv"));
        auto after = csv::read_rows(detail::join_path(artifact_dir, "label_histograms_after.csv"));
        if (before.size() != after.size()) {
            throw validation_error("report: label histogram row counts disagree");
        }
        csv::writer w(detail::join_path(report_dir, "label_histograms.csv"));
        w.row("client", "class", "before", "after");
        for (std::size_t r = 1; r < before.size(); ++r) {
            w.raw_row({before[r][0], before[r][1], before[r][2], after[r][2]});
        }
    }

    { // text summary
        std::ofstream out(detail::join_path(report_dir, "summary.txt"), std::ios::binary);
        if (!out) throw validation_error("report: cannot write summary.txt");
        out << "run summary\n===========\n";
        out << "clusters: " << clusters.at("heads").size() << "\n";
        out << "average emd before sharing:  " << summary.at("emd_before").get<double>() << "\n";
        out << "average emd after sharing:   " << summary.at("emd_after_planned").get<double>()
            << " planned, " << summary.at("emd_after_realized").get<double>() << " realized\n";
        out << "rounds to target:            " << summary.at("rounds_shared_mean").get<double>()
            << " shared vs " << summary.at("rounds_baseline_mean").get<double>() << " baseline\n";
        out << "sharing delay:               " << summary.at("sharing_delay_s").get<double>() << " s\n";
        out << "round delay:                 " << summary.at("round_delay_shared_s").get<double>()
            << " s shared vs " << summary.at("round_delay_baseline_s").get<double>() << " s baseline\n";
        out << "total delay:                 " << summary.at("total_delay_shared_s").get<double>()
            << " s shared vs " << summary.at("total_delay_baseline_s").get<double>() << " s baseline\n";
        out << "advantage:                   " << 100.0 * summary.at("advantage").get<double>() << "%\n";
    }

    return report_dir;
}

} // namespace fedshare::pipeline

#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "fedshare/theory.hpp"

using namespace fedshare;
using theory::ProbeConfig;
using theory::TheoryConstants;

namespace {

// Clients assembled from whole copies of shared per-class sample pools, so
// every client's class-conditional sample mean equals the pooled one and
// label counts are the only source of heterogeneity.
std::vector<datagen::ClientDataset> pool_clients(const std::vector<std::vector<int>>& copies, int pool_size,
                                                 int feature_dim, std::uint64_t seed) {
    const int num_classes = static_cast<int>(copies.front().size());
    std::vector<std::vector<float>> pools(static_cast<std::size_t>(num_classes));
    for (int y = 0; y < num_classes; ++y) {
        auto rng = make_rng(seed, {101, static_cast<std::uint64_t>(y)});
        std::normal_distribution<double> gauss(0.0, 1.0);
        auto& pool = pools[static_cast<std::size_t>(y)];
        pool.resize(static_cast<std::size_t>(pool_size) * static_cast<std::size_t>(feature_dim));
        for (int i = 0; i < pool_size; ++i) {
            for (int j = 0; j < feature_dim; ++j) {
                const double mean = j == y % feature_dim ? 2.0 : 0.0;
                pool[static_cast<std::size_t>(i * feature_dim + j)] = static_cast<float>(mean + gauss(rng));
            }
        }
    }

    std::vector<datagen::ClientDataset> clients;
    for (const auto& client_copies : copies) {
        datagen::ClientDataset d;
        d.feature_dim = feature_dim;
        d.num_classes = num_classes;
        for (int y = 0; y < num_classes; ++y) {
            for (int r = 0; r < client_copies[static_cast<std::size_t>(y)]; ++r) {
                const auto& pool = pools[static_cast<std::size_t>(y)];
                d.features.insert(d.features.end(), pool.begin(), pool.end());
                for (int i = 0; i < pool_size; ++i) d.labels.push_back(static_cast<std::uint16_t>(y));
            }
        }
        clients.push_back(std::move(d));
    }
    return clients;
}

std::vector<datagen::ClientDataset> skewed_clients(std::uint64_t seed = 9) {
    return pool_clients({{4, 1, 1}, {1, 4, 1}, {1, 1, 4}}, 5, 4, seed);
}

TheoryConstants manual_constants(double l, double sigma, double g, double a, std::vector<double> emds) {
    TheoryConstants c;
    c.l_smooth = l;
    c.sigma = sigma;
    c.grad_bound = g;
    c.initial_distance = a;
    double sum = 0.0;
    for (double d : emds) sum += d;
    c.mean_emd = sum / static_cast<double>(emds.size());
    c.client_emd = std::move(emds);
    return c;
}

} // namespace

TEST_CASE("smoothness estimator recovers known curvatures") {
    auto rng = make_rng(7, {31});
    const auto identity = [](const std::vector<double>& w) { return w; };
    REQUIRE_THAT(theory::estimate_smoothness(identity, 5, 50, 1.0, rng), Catch::Matchers::WithinRel(1.0, 0.05));

    const auto tripled = [](const std::vector<double>& w) {
        auto g = w;
        for (double& x : g) x *= 3.0;
        return g;
    };
    REQUIRE_THAT(theory::estimate_smoothness(tripled, 5, 50, 1.0, rng), Catch::Matchers::WithinRel(3.0, 0.05));
}

TEST_CASE("constants estimator on a label-skew scenario") {
    const auto clients = skewed_clients();
    ProbeConfig cfg;
    cfg.num_probes = 200;
    cfg.weight_scale = 1.0;

    const auto report = theory::estimate_constants(clients, {}, cfg, 5);
    const auto& c = report.constants;

    SECTION("estimates are positive and the smoothness stays under its analytic ceiling") {
        REQUIRE(c.l_smooth > 0.0);
        REQUIRE(c.sigma > 0.0);
        REQUIRE(c.grad_bound > 0.0);
        REQUIRE(c.initial_distance > 0.0);
        double peak = 1.0;
        for (const auto& d : clients) {
            for (std::int64_t i = 0; i < d.n(); ++i) {
                double s = 1.0;
                for (int j = 0; j < d.feature_dim; ++j) {
                    s += static_cast<double>(d.sample(i)[j]) * static_cast<double>(d.sample(i)[j]);
                }
                peak = std::max(peak, s);
            }
        }
        REQUIRE(c.l_smooth <= cfg.l2_reg + 0.5 * peak + 1e-9);
    }
    SECTION("minimizer is certified and below the zero-weight loss") {
        REQUIRE(report.minimizer.gradient_norm < cfg.minimizer_tolerance);
        REQUIRE(report.minimizer.value < std::log(3.0));
        REQUIRE_THAT(c.initial_distance,
                     Catch::Matchers::WithinRel(theory::detail::norm(report.minimizer.weights), 1e-12));
    }
    SECTION("label gaps match the copy pattern") {
        REQUIRE(c.client_emd.size() == 3);
        // each client: own class 4/6 vs global 1/3, others 1/6 each
        for (double d : c.client_emd) REQUIRE_THAT(d, Catch::Matchers::WithinAbs(2.0 * (4.0 / 6.0 - 1.0 / 3.0), 1e-12));
        REQUIRE_THAT(c.mean_emd, Catch::Matchers::WithinAbs(c.client_emd[0], 1e-12));
    }
    SECTION("repeat call is bit-identical") {
        const auto again = theory::estimate_constants(clients, {}, cfg, 5);
        REQUIRE(again.constants.l_smooth == c.l_smooth);
        REQUIRE(again.constants.sigma == c.sigma);
        REQUIRE(again.constants.grad_bound == c.grad_bound);
        REQUIRE(again.minimizer.weights == report.minimizer.weights);
    }
    SECTION("full-batch noise estimate is exactly zero") {
        ProbeConfig full = cfg;
        full.num_probes = 20;
        full.batch_size = static_cast<int>(clients.front().n());
        REQUIRE(theory::estimate_constants(clients, {}, full, 5).constants.sigma == 0.0);
    }
    SECTION("non-logistic models are rejected as unsupported") {
        fedsim::ModelSpec mlp;
        mlp.kind = fedsim::ModelSpec::Kind::mlp;
        REQUIRE_THROWS_WITH(theory::estimate_constants(clients, mlp, cfg, 5),
                            Catch::Matchers::ContainsSubstring("unsupported"));
    }
    SECTION("unequal client sizes are rejected") {
        auto uneven = pool_clients({{2, 1}, {1, 1}}, 5, 3, 4);
        REQUIRE_THROWS_WITH(theory::estimate_constants(uneven, {}, cfg, 5),
                            Catch::Matchers::ContainsSubstring("equal client sample counts"));
    }
}

TEST_CASE("duplicated datasets have zero label gaps and zero dissimilarity") {
    const auto clients = pool_clients({{2, 2, 2}, {2, 2, 2}, {2, 2, 2}}, 5, 4, 13);
    ProbeConfig cfg;
    cfg.num_probes = 50;

    const auto c = theory::estimate_constants(clients, {}, cfg, 3).constants;
    for (double d : c.client_emd) REQUIRE(d == 0.0);
    REQUIRE(c.mean_emd == 0.0);

    const auto report = theory::check_gradient_dissimilarity(clients, cfg, 3);
    REQUIRE(report.max_ratio == 0.0);
    REQUIRE(report.holds);
}

TEST_CASE("rate ceiling formula") {
    SECTION("only the horizon term survives without noise or skew") {
        const auto c = manual_constants(2.0, 0.0, 5.0, 3.0, {0.0, 0.0});
        REQUIRE_THAT(theory::convergence_rate_bound(c, 0.1, 4, 10, 2),
                     Catch::Matchers::WithinRel(3.0 / (2.0 * 0.1 * 4.0 * 10.0), 1e-12));
    }
    SECTION("doubling the mean label gap quadruples the drift terms") {
        const auto c1 = manual_constants(1.0, 0.0, 2.0, 0.0, {0.3, 0.5});
        const auto c2 = manual_constants(1.0, 0.0, 2.0, 0.0, {0.6, 1.0});
        REQUIRE_THAT(theory::convergence_rate_bound(c2, 0.05, 3, 7, 2),
                     Catch::Matchers::WithinRel(4.0 * theory::convergence_rate_bound(c1, 0.05, 3, 7, 2), 1e-12));
    }
    SECTION("long horizons approach the noise-and-drift floor") {
        const auto c = manual_constants(1.5, 0.8, 2.0, 4.0, {0.4, 0.6});
        auto floor_only = c;
        floor_only.initial_distance = 0.0;
        const double floor = theory::convergence_rate_bound(floor_only, 0.1, 2, 5, 2);
        REQUIRE_THAT(theory::convergence_rate_bound(c, 0.1, 2, 1000000000, 2),
                     Catch::Matchers::WithinRel(floor, 1e-6));
    }
    SECTION("learning rates above the smoothness hypothesis are rejected") {
        const auto c = manual_constants(2.0, 0.1, 1.0, 1.0, {0.2});
        REQUIRE_NOTHROW(theory::convergence_rate_bound(c, 0.125, 1, 1, 1));
        REQUIRE_THROWS_AS(theory::convergence_rate_bound(c, 0.13, 1, 1, 1), validation_error);
    }
    SECTION("monotone in distance, noise, skew; drift terms monotone in steps and clients") {
        std::mt19937_64 rng(99);
        std::uniform_real_distribution<double> unit(0.1, 2.0);
        for (int trial = 0; trial < 30; ++trial) {
            const double l = unit(rng), s = unit(rng), g = unit(rng), a = unit(rng), d = unit(rng);
            const int e = 1 + static_cast<int>(unit(rng) * 3.0);
            const int t = 1 + static_cast<int>(unit(rng) * 20.0);
            const int k = 2 + static_cast<int>(unit(rng) * 3.0);
            const double eta = 0.9 * unit(rng) / (2.0 * 4.0 * l);

            const auto base = manual_constants(l, s, g, a, {d, d});
            const double value = theory::convergence_rate_bound(base, eta, e, t, k);
            auto more_a = base;
            more_a.initial_distance *= 1.5;
            REQUIRE(theory::convergence_rate_bound(more_a, eta, e, t, k) > value);
            auto more_s = base;
            more_s.sigma *= 1.5;
            REQUIRE(theory::convergence_rate_bound(more_s, eta, e, t, k) > value);
            const auto more_d = manual_constants(l, s, g, a, {1.5 * d, 1.5 * d});
            REQUIRE(theory::convergence_rate_bound(more_d, eta, e, t, k) > value);

            const auto drift = manual_constants(l, 0.0, g, 0.0, {d, d});
            const double drift_value = theory::convergence_rate_bound(drift, eta, e, t, k);
            REQUIRE(theory::convergence_rate_bound(drift, eta, e + 1, t, k) > drift_value);
            REQUIRE(theory::convergence_rate_bound(drift, eta, e, t, k + 1) > drift_value);
        }
    }
}

TEST_CASE("client-vs-pooled gradient gap stays under the label-gap bound") {
    SECTION("label-skew scenario with shared class pools") {
        const auto clients = skewed_clients();
        ProbeConfig cfg;
        cfg.num_probes = 300;
        const auto report = theory::check_gradient_dissimilarity(clients, cfg, 21);
        REQUIRE(report.holds);
        REQUIRE(report.max_ratio <= 1.0 + 1e-9);
        REQUIRE(report.max_ratio > 0.0);
        REQUIRE(report.worst_right > 0.0);
        REQUIRE(report.probes == 300);
    }
    SECTION("disjoint one-hot clients") {
        const auto clients = pool_clients({{3, 0}, {0, 3}}, 5, 3, 17);
        const ProbeConfig cfg{200, 1.0};
        const auto report = theory::check_gradient_dissimilarity(clients, cfg, 23);
        REQUIRE(report.holds);
        REQUIRE(report.max_ratio <= 1.0 + 1e-9);
    }
    SECTION("single client gap is exactly zero") {
        const auto clients = pool_clients({{2, 2, 2}}, 5, 4, 19);
        const ProbeConfig cfg{50, 1.0};
        const auto report = theory::check_gradient_dissimilarity(clients, cfg, 29);
        REQUIRE(report.max_ratio == 0.0);
        REQUIRE(report.holds);
    }
}

TEST_CASE("recorded runs keep exact shadow bookkeeping") {
    const auto clients = skewed_clients();
    const auto run = theory::simulate_recorded(clients, 0.05, 3, 4, 0.01, 1, 11);

    REQUIRE(run.rounds == 4);
    REQUIRE(run.local_steps == 3);
    REQUIRE(run.num_clients == 3);

    SECTION("round-end average is the next round's broadcast, bitwise") {
        for (int t = 0; t + 1 < run.rounds; ++t) {
            const auto& handoff = run.shadow[static_cast<std::size_t>(t)][3];
            for (int k = 0; k < run.num_clients; ++k) {
                REQUIRE(run.local[static_cast<std::size_t>(t) + 1][0][static_cast<std::size_t>(k)] == handoff);
            }
        }
    }
    SECTION("shadow is the client mean at every step") {
        for (int t = 0; t < run.rounds; ++t) {
            for (int i = 0; i <= run.local_steps; ++i) {
                std::vector<double> mean(run.dim, 0.0);
                for (std::size_t k = 0; k < 3; ++k) {
                    const auto& w = run.local[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)][k];
                    for (std::size_t j = 0; j < run.dim; ++j) mean[j] += w[j] / 3.0;
                }
                REQUIRE(run.shadow[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] == mean);
            }
        }
    }
    SECTION("identical seeds replay, fresh seeds differ") {
        const auto again = theory::simulate_recorded(clients, 0.05, 3, 4, 0.01, 1, 11);
        REQUIRE(again.local == run.local);
        const auto other = theory::simulate_recorded(clients, 0.05, 3, 4, 0.01, 1, 12);
        REQUIRE(other.local != run.local);
    }
}

TEST_CASE("drift stays under the per-client ceiling") {
    const auto clients = skewed_clients();
    ProbeConfig cfg;
    cfg.num_probes = 200;
    const auto constants = theory::estimate_constants(clients, {}, cfg, 5).constants;

    std::vector<theory::RecordedRun> runs;
    for (int s = 0; s < 10; ++s) {
        runs.push_back(theory::simulate_recorded(clients, 0.05, 5, 8, cfg.l2_reg, 1, derive_seed(3, {static_cast<std::uint64_t>(s)})));
    }

    const auto report = theory::check_drift_bound(runs, constants, 2.0);
    INFO("raw ratio " << report.max_ratio_raw << " inflated " << report.max_ratio_inflated);
    REQUIRE(report.holds_inflated);
    REQUIRE(report.worst_left >= 0.0);
    REQUIRE(report.worst_right_raw > 0.0);
    REQUIRE(report.worst_right_inflated > report.worst_right_raw);

    SECTION("identical clients on full batches never drift") {
        const auto iid = pool_clients({{2, 2}, {2, 2}}, 5, 3, 31);
        ProbeConfig full = cfg;
        full.num_probes = 20;
        full.batch_size = static_cast<int>(iid.front().n());
        const auto iid_constants = theory::estimate_constants(iid, {}, full, 7).constants;
        std::vector<theory::RecordedRun> iid_runs;
        for (int s = 0; s < 10; ++s) {
            iid_runs.push_back(theory::simulate_recorded(iid, 0.05, 4, 3, full.l2_reg,
                                                         full.batch_size, derive_seed(8, {static_cast<std::uint64_t>(s)})));
        }
        const auto iid_report = theory::check_drift_bound(iid_runs, iid_constants, 2.0);
        REQUIRE(iid_report.max_ratio_raw == 0.0);
        REQUIRE(iid_report.holds_raw);
    }
    SECTION("missing recordings are an instrumentation error") {
        REQUIRE_THROWS_WITH(theory::check_drift_bound({}, constants, 2.0),
                            Catch::Matchers::ContainsSubstring("recording missing"));
        REQUIRE_THROWS_WITH(theory::check_drift_bound({theory::RecordedRun{}}, constants, 2.0),
                            Catch::Matchers::ContainsSubstring("recording missing"));
    }
}

TEST_CASE("shadow-sequence loss gap stays under the rate ceiling") {
    const auto clients = skewed_clients();
    ProbeConfig cfg;
    cfg.num_probes = 200;
    const auto est = theory::estimate_constants(clients, {}, cfg, 5);
    const double inflation = 2.0;
    const double eta = 0.9 / (4.0 * inflation * est.constants.l_smooth);

    std::vector<theory::RecordedRun> runs;
    for (int s = 0; s < 5; ++s) {
        runs.push_back(theory::simulate_recorded(clients, eta, 3, 6, cfg.l2_reg, 1,
                                                 derive_seed(14, {static_cast<std::uint64_t>(s)})));
    }

    const auto report = theory::check_rate_bound(clients, runs, est.constants, est.minimizer.value, inflation);
    INFO("left " << report.left << " right " << report.right_inflated);
    REQUIRE(report.left > 0.0);
    REQUIRE(report.right_raw > 0.0);
    REQUIRE(report.holds_inflated);
    REQUIRE(report.slack_inflated >= 1.0);

    SECTION("single client with a tiny learning rate") {
        const auto solo = pool_clients({{2, 2, 2}}, 5, 4, 41);
        const auto solo_est = theory::estimate_constants(solo, {}, cfg, 6);
        const double solo_eta = 0.9 / (4.0 * inflation * solo_est.constants.l_smooth);
        std::vector<theory::RecordedRun> solo_runs;
        for (int s = 0; s < 3; ++s) {
            solo_runs.push_back(theory::simulate_recorded(solo, solo_eta, 2, 5, cfg.l2_reg, 1,
                                                          derive_seed(15, {static_cast<std::uint64_t>(s)})));
        }
        const auto solo_report =
            theory::check_rate_bound(solo, solo_runs, solo_est.constants, solo_est.minimizer.value, inflation);
        REQUIRE(solo_report.left > 0.0);
        REQUIRE(solo_report.holds_raw);
        REQUIRE(solo_report.holds_inflated);
    }
}

TEST_CASE("reports serialize with both sides") {
    const auto c = manual_constants(1.0, 0.5, 2.0, 1.5, {0.4, 0.8});
    const auto j = theory::to_json(c);
    REQUIRE(j.at("l_smooth").get<double>() == 1.0);
    REQUIRE(j.at("client_emd").size() == 2);

    theory::DriftReport drift;
    drift.worst_left = 0.25;
    drift.worst_right_raw = 0.5;
    const auto dj = theory::to_json(drift);
    REQUIRE(dj.at("worst_left").get<double>() == 0.25);
    REQUIRE(dj.at("worst_right_raw").get<double>() == 0.5);

    theory::RateReport rate;
    rate.left = 0.1;
    rate.right_inflated = 0.9;
    const auto rj = theory::to_json(rate);
    REQUIRE(rj.at("left").get<double>() == 0.1);
    REQUIRE(rj.at("right_inflated").get<double>() == 0.9);
}

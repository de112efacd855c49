#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedshare/errors.hpp"
#include "fedshare/fedsim.hpp"
#include "fedshare/hetero.hpp"
#include "fedshare/rng.hpp"

namespace fedshare::theory {

// Empirical stand-ins for the convergence analysis constants. The suprema
// (smoothness, noise, gradient norm) are maxima over finite probe sets and
// therefore lower bounds on the true values; bound checks report results
// both raw and with these three inflated by a configurable factor.
struct TheoryConstants {
    double l_smooth = 0.0;         // gradient Lipschitz constant of the pooled loss
    double sigma = 0.0;            // stochastic-gradient deviation bound per draw
    double grad_bound = 0.0;       // per-sample gradient norm bound
    double initial_distance = 0.0; // distance from the start weights to the minimizer
    std::vector<double> client_emd;
    double mean_emd = 0.0;

    void validate() const {
        if (l_smooth < 0.0 || sigma < 0.0 || grad_bound < 0.0 || initial_distance < 0.0) {
            throw validation_error("constants: negative value");
        }
        if (client_emd.empty()) throw validation_error("constants: no clients");
        double sum = 0.0;
        for (double d : client_emd) {
            if (d < 0.0) throw validation_error("constants: negative client emd");
            sum += d;
        }
        if (std::abs(sum / static_cast<double>(client_emd.size()) - mean_emd) > 1e-9) {
            throw validation_error("constants: mean_emd is not the mean of client_emd");
        }
    }

    TheoryConstants inflated(double factor) const {
        if (factor < 1.0) throw validation_error("constants: inflation factor below 1");
        TheoryConstants out = *this;
        out.l_smooth *= factor;
        out.sigma *= factor;
        out.grad_bound *= factor;
        return out;
    }
};

struct ProbeConfig {
    int num_probes = 1000;
    double weight_scale = 1.0; // stddev of the random probe weights
    double l2_reg = 0.01;
    int batch_size = 1; // draws per local step; >= n_k means the full gradient
    int minimizer_max_iters = 100000;
    double minimizer_tolerance = 1e-6; // gradient-norm certificate

    void validate() const {
        if (num_probes < 1) throw validation_error("probe config: need at least one probe");
        if (!(weight_scale > 0.0)) throw validation_error("probe config: weight scale must be positive");
        if (l2_reg < 0.0) throw validation_error("probe config: negative regularization");
        if (batch_size < 1) throw validation_error("probe config: batch size must be positive");
        if (minimizer_max_iters < 1) throw validation_error("probe config: minimizer budget must be positive");
        if (!(minimizer_tolerance > 0.0)) throw validation_error("probe config: tolerance must be positive");
    }
};

namespace detail {

inline void require_uniform(const std::vector<datagen::ClientDataset>& datasets) {
    if (datasets.empty()) throw validation_error("theory: no client datasets");
    const auto n0 = datasets.front().n();
    if (n0 == 0) throw validation_error("theory: empty client dataset");
    for (const auto& d : datasets) {
        if (d.n() != n0) throw validation_error("theory: checks assume equal client sample counts");
        if (d.feature_dim != datasets.front().feature_dim || d.num_classes != datasets.front().num_classes) {
            throw dimension_error("theory: client datasets have mismatched shapes");
        }
    }
}

inline fedsim::Model weight_view(const std::vector<datagen::ClientDataset>& datasets, std::vector<double> weights) {
    fedsim::Model m = fedsim::make_model({}, datasets.front().feature_dim, datasets.front().num_classes);
    if (weights.size() != m.size()) throw dimension_error("theory: weight vector does not match the model");
    m.weights = std::move(weights);
    return m;
}

// Per-sample loss gradient including the ridge term, so the single-draw
// estimator stays unbiased for the regularized client objective.
inline void sample_gradient(const fedsim::Model& m, const datagen::ClientDataset& data, std::int64_t i,
                            double l2, std::vector<double>& out) {
    std::fill(out.begin(), out.end(), 0.0);
    fedsim::accumulate_gradient(m, data.sample(i), data.labels[static_cast<std::size_t>(i)], out);
    if (l2 > 0.0) {
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += l2 * m.weights[j];
    }
}

inline std::vector<double> client_gradient(const fedsim::Model& m, const datagen::ClientDataset& data, double l2) {
    auto grad = fedsim::dataset_gradient(m, data);
    if (l2 > 0.0) {
        for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += l2 * m.weights[j];
    }
    return grad;
}

// Uniform client counts make the pooled objective the plain client mean.
inline std::vector<double> pooled_gradient(const fedsim::Model& m, const std::vector<datagen::ClientDataset>& datasets,
                                           double l2) {
    std::vector<double> grad(m.size(), 0.0);
    for (const auto& d : datasets) {
        for (std::int64_t i = 0; i < d.n(); ++i) {
            fedsim::accumulate_gradient(m, d.sample(i), d.labels[static_cast<std::size_t>(i)], grad);
        }
    }
    const double scale = 1.0 / (static_cast<double>(datasets.size()) * static_cast<double>(datasets.front().n()));
    for (std::size_t j = 0; j < grad.size(); ++j) grad[j] = grad[j] * scale + l2 * m.weights[j];
    return grad;
}

inline double pooled_loss(const fedsim::Model& m, const std::vector<datagen::ClientDataset>& datasets, double l2) {
    double total = 0.0;
    for (const auto& d : datasets) total += fedsim::dataset_loss(m, d);
    double ridge = 0.0;
    for (double w : m.weights) ridge += w * w;
    return total / static_cast<double>(datasets.size()) + 0.5 * l2 * ridge;
}

inline double norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline std::vector<double> random_weights(std::size_t dim, double scale, std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, scale);
    std::vector<double> w(dim);
    for (double& x : w) x = gauss(rng);
    return w;
}

// Curvature ceiling of the regularized softmax loss: the per-sample Hessian
// is bounded by half the squared augmented-feature norm.
inline double curvature_ceiling(const std::vector<datagen::ClientDataset>& datasets, double l2) {
    double peak = 0.0;
    for (const auto& d : datasets) {
        for (std::int64_t i = 0; i < d.n(); ++i) {
            const float* x = d.sample(i);
            double s = 1.0; // bias column
            for (int j = 0; j < d.feature_dim; ++j) s += static_cast<double>(x[j]) * static_cast<double>(x[j]);
            peak = std::max(peak, s);
        }
    }
    return l2 + 0.5 * peak;
}

inline std::vector<double> client_label_probs(const datagen::ClientDataset& d) {
    const auto counts = d.label_counts();
    std::vector<double> p(counts.size());
    for (std::size_t y = 0; y < counts.size(); ++y) {
        p[y] = static_cast<double>(counts[y]) / static_cast<double>(d.n());
    }
    return p;
}

} // namespace detail

struct MinimizerReport {
    std::vector<double> weights;
    double value = 0.0;
    double gradient_norm = 0.0;
    int iterations = 0;
};

// Accelerated full-batch descent on the pooled ridge-regularized loss,
// certified by the gradient norm at the returned point.
inline MinimizerReport centralized_minimum(const std::vector<datagen::ClientDataset>& datasets, double l2,
                                           double tolerance, int max_iters) {
    detail::require_uniform(datasets);
    if (!(l2 > 0.0)) throw validation_error("centralized_minimum: needs strictly positive regularization");
    if (!(tolerance > 0.0) || max_iters < 1) throw validation_error("centralized_minimum: bad budget");

    auto m = detail::weight_view(datasets, std::vector<double>(
        fedsim::parameter_count({}, datasets.front().feature_dim, datasets.front().num_classes), 0.0));
    const double step_l = detail::curvature_ceiling(datasets, l2);
    const double momentum = (std::sqrt(step_l / l2) - 1.0) / (std::sqrt(step_l / l2) + 1.0);

    std::vector<double> w = m.weights;
    std::vector<double> y = w;
    MinimizerReport report;
    for (int it = 0; it < max_iters; ++it) {
        m.weights = y;
        const auto grad = detail::pooled_gradient(m, datasets, l2);
        std::vector<double> w_next(w.size());
        for (std::size_t j = 0; j < w.size(); ++j) w_next[j] = y[j] - grad[j] / step_l;
        for (std::size_t j = 0; j < w.size(); ++j) y[j] = w_next[j] + momentum * (w_next[j] - w[j]);
        w = std::move(w_next);
        report.iterations = it + 1;
        if (it % 10 == 0 || it + 1 == max_iters) {
            m.weights = w;
            const double g = detail::norm(detail::pooled_gradient(m, datasets, l2));
            if (g < tolerance) {
                report.weights = w;
                report.gradient_norm = g;
                report.value = detail::pooled_loss(m, datasets, l2);
                return report;
            }
        }
    }
    throw numerical_error("centralized_minimum: gradient norm certificate not reached within the budget");
}

// Largest observed gradient difference ratio over random weight pairs; a
// probe-set lower bound on the true smoothness constant.
inline double estimate_smoothness(const std::function<std::vector<double>(const std::vector<double>&)>& grad_fn,
                                  std::size_t dim, int probes, double scale, std::mt19937_64& rng) {
    if (probes < 1 || dim == 0) throw validation_error("estimate_smoothness: bad probe setup");
    double best = 0.0;
    for (int p = 0; p < probes; ++p) {
        const auto w1 = detail::random_weights(dim, scale, rng);
        const auto w2 = detail::random_weights(dim, scale, rng);
        std::vector<double> dw(dim);
        for (std::size_t j = 0; j < dim; ++j) dw[j] = w1[j] - w2[j];
        const double denom = detail::norm(dw);
        if (denom < 1e-12) continue;
        const auto g1 = grad_fn(w1);
        const auto g2 = grad_fn(w2);
        std::vector<double> dg(dim);
        for (std::size_t j = 0; j < dim; ++j) dg[j] = g1[j] - g2[j];
        best = std::max(best, detail::norm(dg) / denom);
    }
    return best;
}

struct ConstantsReport {
    TheoryConstants constants;
    MinimizerReport minimizer;
};

// Probe-based estimates: smoothness from random weight pairs, noise and
// gradient ceiling from per-sample gradients at random weights, start-to-
// minimizer distance from certified centralized training, and per-client
// label-distribution gaps from the data itself.
inline ConstantsReport estimate_constants(const std::vector<datagen::ClientDataset>& datasets,
                                          const fedsim::ModelSpec& spec, const ProbeConfig& cfg,
                                          std::uint64_t seed) {
    cfg.validate();
    detail::require_uniform(datasets);
    if (spec.kind != fedsim::ModelSpec::Kind::logistic) {
        throw validation_error("estimate_constants: unsupported model class (convex multinomial logistic only)");
    }

    ConstantsReport out;
    out.minimizer = centralized_minimum(datasets, cfg.l2_reg, cfg.minimizer_tolerance, cfg.minimizer_max_iters);

    auto& c = out.constants;
    c.initial_distance = detail::norm(out.minimizer.weights); // zero start

    std::vector<ClientStat> stats;
    stats.reserve(datasets.size());
    for (const auto& d : datasets) {
        stats.push_back({d.n(), LabelDistribution(detail::client_label_probs(d))});
    }
    const auto global = hetero::pooled_distribution(stats);
    for (const auto& s : stats) c.client_emd.push_back(hetero::emd(s.dist, global));
    double sum = 0.0;
    for (double d : c.client_emd) sum += d;
    c.mean_emd = sum / static_cast<double>(c.client_emd.size());

    const std::size_t dim = fedsim::parameter_count({}, datasets.front().feature_dim, datasets.front().num_classes);
    auto pair_rng = make_rng(seed, {31});
    c.l_smooth = estimate_smoothness(
        [&](const std::vector<double>& w) {
            auto m = detail::weight_view(datasets, w);
            return detail::pooled_gradient(m, datasets, cfg.l2_reg);
        },
        dim, cfg.num_probes, cfg.weight_scale, pair_rng);

    // noise and gradient ceiling share one probe grid
    auto grid_rng = make_rng(seed, {32});
    std::vector<double> g(dim);
    for (int p = 0; p < cfg.num_probes; ++p) {
        auto m = detail::weight_view(datasets, detail::random_weights(dim, cfg.weight_scale, grid_rng));
        for (const auto& d : datasets) {
            const auto full = detail::client_gradient(m, d, cfg.l2_reg);
            double var = 0.0;
            for (std::int64_t i = 0; i < d.n(); ++i) {
                detail::sample_gradient(m, d, i, cfg.l2_reg, g);
                c.grad_bound = std::max(c.grad_bound, detail::norm(g));
                double dev = 0.0;
                for (std::size_t j = 0; j < dim; ++j) dev += (g[j] - full[j]) * (g[j] - full[j]);
                var += dev;
            }
            var /= static_cast<double>(d.n());
            // the local step averages batch_size independent draws
            const double batch_var = cfg.batch_size >= d.n() ? 0.0 : var / static_cast<double>(cfg.batch_size);
            c.sigma = std::max(c.sigma, std::sqrt(batch_var));
        }
    }

    c.validate();
    return out;
}

// Upper bound on the horizon-averaged optimality gap of federated SGD:
//   A/(2 eta E T) + eta sigma^2/K
//   + 2 K L E^2 eta^2 Dbar^2 G^2 + 6 K L E eta^2 Dbar^2 + 4 L E eta^2 sigma^2
inline double convergence_rate_bound(const TheoryConstants& c, double eta, int local_steps, int rounds,
                                     int num_clients) {
    c.validate();
    if (!(eta > 0.0)) throw validation_error("rate bound: learning rate must be positive");
    if (local_steps < 1 || rounds < 1 || num_clients < 1) {
        throw validation_error("rate bound: steps, rounds and clients must be positive");
    }
    if (c.l_smooth > 0.0 && eta > 1.0 / (4.0 * c.l_smooth)) {
        throw validation_error("rate bound: learning rate violates the smoothness hypothesis eta <= 1/(4 L)");
    }
    const double e = static_cast<double>(local_steps);
    const double t = static_cast<double>(rounds);
    const double k = static_cast<double>(num_clients);
    const double d2 = c.mean_emd * c.mean_emd;
    return c.initial_distance / (2.0 * eta * e * t) + eta * c.sigma * c.sigma / k +
           2.0 * k * c.l_smooth * e * e * eta * eta * d2 * c.grad_bound * c.grad_bound +
           6.0 * k * c.l_smooth * e * eta * eta * d2 + 4.0 * c.l_smooth * e * eta * eta * c.sigma * c.sigma;
}

// One client-vs-pooled gradient gap compared against its label-gap bound:
// for every probe weight w and client k,
//   ||grad F_k(w) - grad F(w)|| <= client_emd_k * max_y ||class-mean grad(w)||
struct DissimilarityReport {
    int probes = 0;
    int clients = 0;
    double max_ratio = 0.0;
    double worst_left = 0.0;
    double worst_right = 0.0;
    int worst_client = -1;
    bool holds = false;
};

inline nlohmann::ordered_json to_json(const DissimilarityReport& r) {
    nlohmann::ordered_json j;
    j["probes"] = r.probes;
    j["clients"] = r.clients;
    j["max_ratio"] = r.max_ratio;
    j["worst_left"] = r.worst_left;
    j["worst_right"] = r.worst_right;
    j["worst_client"] = r.worst_client;
    j["holds"] = r.holds;
    return j;
}

inline DissimilarityReport check_gradient_dissimilarity(const std::vector<datagen::ClientDataset>& datasets,
                                                        const ProbeConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    detail::require_uniform(datasets);
    const std::size_t dim = fedsim::parameter_count({}, datasets.front().feature_dim, datasets.front().num_classes);
    const auto classes = static_cast<std::size_t>(datasets.front().num_classes);
    const auto k_count = datasets.size();

    std::vector<std::vector<double>> client_probs;
    client_probs.reserve(k_count);
    for (const auto& d : datasets) client_probs.push_back(detail::client_label_probs(d));
    std::vector<double> global_probs(classes, 0.0);
    for (const auto& p : client_probs) {
        for (std::size_t y = 0; y < classes; ++y) global_probs[y] += p[y] / static_cast<double>(k_count);
    }
    std::vector<double> client_emd(k_count, 0.0);
    for (std::size_t k = 0; k < k_count; ++k) {
        for (std::size_t y = 0; y < classes; ++y) client_emd[k] += std::abs(client_probs[k][y] - global_probs[y]);
    }

    DissimilarityReport report;
    report.probes = cfg.num_probes;
    report.clients = static_cast<int>(k_count);
    bool finite = true;

    auto rng = make_rng(seed, {33});
    std::vector<double> g(dim);
    for (int p = 0; p < cfg.num_probes; ++p) {
        auto m = detail::weight_view(datasets, detail::random_weights(dim, cfg.weight_scale, rng));

        // class-conditional mean gradients over the pooled data
        std::vector<std::vector<double>> class_mean(classes, std::vector<double>(dim, 0.0));
        std::vector<std::int64_t> class_count(classes, 0);
        for (const auto& d : datasets) {
            for (std::int64_t i = 0; i < d.n(); ++i) {
                detail::sample_gradient(m, d, i, cfg.l2_reg, g);
                auto& acc = class_mean[d.labels[static_cast<std::size_t>(i)]];
                for (std::size_t j = 0; j < dim; ++j) acc[j] += g[j];
                ++class_count[d.labels[static_cast<std::size_t>(i)]];
            }
        }
        double class_ceiling = 0.0;
        for (std::size_t y = 0; y < classes; ++y) {
            if (class_count[y] == 0) continue;
            for (auto& v : class_mean[y]) v /= static_cast<double>(class_count[y]);
            class_ceiling = std::max(class_ceiling, detail::norm(class_mean[y]));
        }

        std::vector<std::vector<double>> grads(k_count);
        std::vector<double> pooled(dim, 0.0);
        for (std::size_t k = 0; k < k_count; ++k) {
            grads[k] = detail::client_gradient(m, datasets[k], cfg.l2_reg);
            for (std::size_t j = 0; j < dim; ++j) pooled[j] += grads[k][j] / static_cast<double>(k_count);
        }

        for (std::size_t k = 0; k < k_count; ++k) {
            double left = 0.0;
            for (std::size_t j = 0; j < dim; ++j) left += (grads[k][j] - pooled[j]) * (grads[k][j] - pooled[j]);
            left = std::sqrt(left);
            const double right = client_emd[k] * class_ceiling;
            double ratio;
            if (right < 1e-300) {
                ratio = left <= 1e-12 ? 0.0 : std::numeric_limits<double>::infinity();
            } else {
                ratio = left / right;
            }
            if (!std::isfinite(ratio) && right >= 1e-300) finite = false;
            if (ratio > report.max_ratio) {
                report.max_ratio = ratio;
                report.worst_left = left;
                report.worst_right = right;
                report.worst_client = static_cast<int>(k);
            }
        }
    }
    report.holds = finite && report.max_ratio <= 1.0 + 1e-9;
    return report;
}

// One federated run with every per-step local iterate and the per-step
// average (virtual global model) kept for the drift and rate checks.
struct RecordedRun {
    double eta = 0.0;
    double l2_reg = 0.0;
    int batch_size = 1;
    int local_steps = 0;
    int rounds = 0;
    int num_clients = 0;
    std::size_t dim = 0;
    // local[t][i][k], i = 0..local_steps; shadow[t][i] is the client mean
    std::vector<std::vector<std::vector<std::vector<double>>>> local;
    std::vector<std::vector<std::vector<double>>> shadow;
};

inline RecordedRun simulate_recorded(const std::vector<datagen::ClientDataset>& datasets, double eta,
                                     int local_steps, int rounds, double l2, int batch_size, std::uint64_t seed) {
    detail::require_uniform(datasets);
    if (!(eta > 0.0) || local_steps < 1 || rounds < 1 || batch_size < 1 || l2 < 0.0) {
        throw validation_error("simulate_recorded: bad training setup");
    }

    RecordedRun run;
    run.eta = eta;
    run.l2_reg = l2;
    run.batch_size = batch_size;
    run.local_steps = local_steps;
    run.rounds = rounds;
    run.num_clients = static_cast<int>(datasets.size());
    run.dim = fedsim::parameter_count({}, datasets.front().feature_dim, datasets.front().num_classes);

    const auto k_count = datasets.size();
    const auto n = datasets.front().n();
    std::vector<double> broadcast(run.dim, 0.0);
    auto m = detail::weight_view(datasets, broadcast);
    std::vector<double> g(run.dim);
    std::vector<double> batch(run.dim);

    run.local.resize(static_cast<std::size_t>(rounds));
    run.shadow.resize(static_cast<std::size_t>(rounds));
    for (int t = 0; t < rounds; ++t) {
        auto& round_local = run.local[static_cast<std::size_t>(t)];
        round_local.assign(static_cast<std::size_t>(local_steps) + 1,
                           std::vector<std::vector<double>>(k_count));
        for (std::size_t k = 0; k < k_count; ++k) {
            auto rng = make_rng(seed, {41, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(k)});
            std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
            std::vector<double> w = broadcast;
            round_local[0][k] = w;
            for (int i = 1; i <= local_steps; ++i) {
                m.weights = w;
                if (batch_size >= n) {
                    g = detail::client_gradient(m, datasets[k], l2);
                } else {
                    std::fill(g.begin(), g.end(), 0.0);
                    for (int b = 0; b < batch_size; ++b) {
                        detail::sample_gradient(m, datasets[k], pick(rng), l2, batch);
                        for (std::size_t j = 0; j < run.dim; ++j) g[j] += batch[j] / static_cast<double>(batch_size);
                    }
                }
                for (std::size_t j = 0; j < run.dim; ++j) w[j] -= eta * g[j];
                round_local[static_cast<std::size_t>(i)][k] = w;
            }
        }
        auto& round_shadow = run.shadow[static_cast<std::size_t>(t)];
        round_shadow.assign(static_cast<std::size_t>(local_steps) + 1, std::vector<double>(run.dim, 0.0));
        for (int i = 0; i <= local_steps; ++i) {
            auto& avg = round_shadow[static_cast<std::size_t>(i)];
            for (std::size_t k = 0; k < k_count; ++k) {
                for (std::size_t j = 0; j < run.dim; ++j) {
                    avg[j] += round_local[static_cast<std::size_t>(i)][k][j] / static_cast<double>(k_count);
                }
            }
        }
        broadcast = round_shadow[static_cast<std::size_t>(local_steps)];
    }
    return run;
}

namespace detail {

inline void require_recorded(const std::vector<RecordedRun>& runs) {
    if (runs.empty()) throw validation_error("bound check: iterate recording missing (no runs)");
    for (const auto& r : runs) {
        if (r.rounds < 1 || r.local.empty() || r.shadow.empty()) {
            throw validation_error("bound check: iterate recording missing (empty run)");
        }
        if (r.eta != runs.front().eta || r.local_steps != runs.front().local_steps ||
            r.rounds != runs.front().rounds || r.num_clients != runs.front().num_clients ||
            r.dim != runs.front().dim) {
            throw dimension_error("bound check: runs disagree on shape or training setup");
        }
    }
}

} // namespace detail

// Seed-averaged squared client-to-average distances at every local step,
// each compared against its per-client drift ceiling
//   2 E^2 eta^2 D_k^2 G^2 + 6 E eta^2 D_k^2 + 4 E eta^2 sigma^2
struct DriftReport {
    double max_ratio_raw = 0.0;
    double max_ratio_inflated = 0.0;
    double inflation = 1.0;
    double worst_left = 0.0;
    double worst_right_raw = 0.0;
    double worst_right_inflated = 0.0;
    int worst_round = -1;
    int worst_step = -1;
    int worst_client = -1;
    bool holds_raw = false;
    bool holds_inflated = false;
};

inline nlohmann::ordered_json to_json(const DriftReport& r) {
    nlohmann::ordered_json j;
    j["max_ratio_raw"] = r.max_ratio_raw;
    j["max_ratio_inflated"] = r.max_ratio_inflated;
    j["inflation"] = r.inflation;
    j["worst_left"] = r.worst_left;
    j["worst_right_raw"] = r.worst_right_raw;
    j["worst_right_inflated"] = r.worst_right_inflated;
    j["worst_round"] = r.worst_round;
    j["worst_step"] = r.worst_step;
    j["worst_client"] = r.worst_client;
    j["holds_raw"] = r.holds_raw;
    j["holds_inflated"] = r.holds_inflated;
    return j;
}

inline DriftReport check_drift_bound(const std::vector<RecordedRun>& runs, const TheoryConstants& constants,
                                     double inflation = 2.0) {
    detail::require_recorded(runs);
    constants.validate();
    const auto& shape = runs.front();
    if (constants.client_emd.size() != static_cast<std::size_t>(shape.num_clients)) {
        throw dimension_error("drift check: constants cover a different client count");
    }
    const auto inflated = constants.inflated(inflation);
    const double e = static_cast<double>(shape.local_steps);
    const double eta2 = shape.eta * shape.eta;

    auto ceiling = [&](const TheoryConstants& c, std::size_t k) {
        const double dk2 = c.client_emd[k] * c.client_emd[k];
        return 2.0 * e * e * eta2 * dk2 * c.grad_bound * c.grad_bound + 6.0 * e * eta2 * dk2 +
               4.0 * e * eta2 * c.sigma * c.sigma;
    };

    DriftReport report;
    report.inflation = inflation;
    bool finite = true;
    for (int t = 0; t < shape.rounds; ++t) {
        for (int i = 0; i <= shape.local_steps; ++i) {
            for (int k = 0; k < shape.num_clients; ++k) {
                double left = 0.0;
                for (const auto& run : runs) {
                    const auto& w = run.local[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)]
                                             [static_cast<std::size_t>(k)];
                    const auto& avg = run.shadow[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
                    double dist2 = 0.0;
                    for (std::size_t j = 0; j < shape.dim; ++j) dist2 += (w[j] - avg[j]) * (w[j] - avg[j]);
                    left += dist2;
                }
                left /= static_cast<double>(runs.size());
                if (!std::isfinite(left)) finite = false;

                const double right_raw = ceiling(constants, static_cast<std::size_t>(k));
                const double right_inflated = ceiling(inflated, static_cast<std::size_t>(k));
                auto ratio_of = [&](double right) {
                    if (right < 1e-300) return left <= 1e-12 ? 0.0 : std::numeric_limits<double>::infinity();
                    return left / right;
                };
                const double raw = ratio_of(right_raw);
                if (raw > report.max_ratio_raw) {
                    report.max_ratio_raw = raw;
                    report.worst_left = left;
                    report.worst_right_raw = right_raw;
                    report.worst_right_inflated = right_inflated;
                    report.worst_round = t;
                    report.worst_step = i;
                    report.worst_client = k;
                }
                report.max_ratio_inflated = std::max(report.max_ratio_inflated, ratio_of(right_inflated));
            }
        }
    }
    report.holds_raw = finite && report.max_ratio_raw <= 1.0 + 1e-9;
    report.holds_inflated = finite && report.max_ratio_inflated <= 1.0 + 1e-9;
    return report;
}

// Horizon-averaged pooled-loss gap of the shadow sequence against the rate
// ceiling, seed-averaged; slack is ceiling over gap.
struct RateReport {
    double left = 0.0;
    double right_raw = 0.0;
    double right_inflated = 0.0;
    double slack_raw = 0.0;
    double slack_inflated = 0.0;
    double inflation = 1.0;
    bool holds_raw = false;
    bool holds_inflated = false;
};

inline nlohmann::ordered_json to_json(const RateReport& r) {
    nlohmann::ordered_json j;
    j["left"] = r.left;
    j["right_raw"] = r.right_raw;
    j["right_inflated"] = r.right_inflated;
    j["slack_raw"] = r.slack_raw;
    j["slack_inflated"] = r.slack_inflated;
    j["inflation"] = r.inflation;
    j["holds_raw"] = r.holds_raw;
    j["holds_inflated"] = r.holds_inflated;
    return j;
}

inline RateReport check_rate_bound(const std::vector<datagen::ClientDataset>& datasets,
                                   const std::vector<RecordedRun>& runs, const TheoryConstants& constants,
                                   double minimizer_value, double inflation = 2.0) {
    detail::require_recorded(runs);
    detail::require_uniform(datasets);
    constants.validate();
    const auto& shape = runs.front();
    if (datasets.size() != static_cast<std::size_t>(shape.num_clients)) {
        throw dimension_error("rate check: datasets cover a different client count");
    }

    auto m = detail::weight_view(datasets, std::vector<double>(shape.dim, 0.0));
    double total = 0.0;
    for (const auto& run : runs) {
        double sum = 0.0;
        for (int t = 0; t < shape.rounds; ++t) {
            for (int i = 1; i <= shape.local_steps; ++i) {
                m.weights = run.shadow[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
                sum += detail::pooled_loss(m, datasets, run.l2_reg) - minimizer_value;
            }
        }
        total += sum / (static_cast<double>(shape.local_steps) * static_cast<double>(shape.rounds));
    }

    RateReport report;
    report.inflation = inflation;
    report.left = total / static_cast<double>(runs.size());
    report.right_raw =
        convergence_rate_bound(constants, shape.eta, shape.local_steps, shape.rounds, shape.num_clients);
    report.right_inflated = convergence_rate_bound(constants.inflated(inflation), shape.eta, shape.local_steps,
                                                   shape.rounds, shape.num_clients);
    const bool finite = std::isfinite(report.left) && std::isfinite(report.right_raw);
    report.slack_raw = report.left > 0.0 ? report.right_raw / report.left : std::numeric_limits<double>::infinity();
    report.slack_inflated =
        report.left > 0.0 ? report.right_inflated / report.left : std::numeric_limits<double>::infinity();
    report.holds_raw = finite && report.left <= report.right_raw * (1.0 + 1e-9);
    report.holds_inflated = finite && report.left <= report.right_inflated * (1.0 + 1e-9);
    return report;
}

inline nlohmann::ordered_json to_json(const TheoryConstants& c) {
    nlohmann::ordered_json j;
    j["l_smooth"] = c.l_smooth;
    j["sigma"] = c.sigma;
    j["grad_bound"] = c.grad_bound;
    j["initial_distance"] = c.initial_distance;
    j["client_emd"] = c.client_emd;
    j["mean_emd"] = c.mean_emd;
    return j;
}

} // namespace fedshare::theory

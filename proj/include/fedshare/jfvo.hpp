#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fedshare/errors.hpp"
#include "fedshare/hetero.hpp"
#include "fedshare/rng.hpp"
#include "fedshare/roundsfit.hpp"
#include "fedshare/types.hpp"
#include "fedshare/wireless.hpp"

namespace fedshare::jfvo {

// Everything the time objective needs: the clustering, the fitted rounds
// law, label statistics for the post-sharing dispersion, and a wireless
// snapshot (per-cluster multicast rates plus per-client fixed delays).
// The two override hooks swap in synthetic rounds/delay laws for tests.
struct ObjectiveContext {
    ClusterAssignment assignment;
    roundsfit::RoundModel round_model;
    std::vector<ClientStat> clients;
    LabelDistribution global{std::vector<double>{1.0}};
    std::map<int, double> multicast_rate; // head -> bits/s
    double bits_per_sample = 6272.0;
    std::vector<double> download_delay; // s, per client
    std::vector<double> upload_delay;   // s, per client
    std::vector<double> upload_energy;  // J, per client
    wireless::ComputeParams compute;
    double energy_budget = 0.005; // J per round and client
    hetero::EmdDenominator denom = hetero::EmdDenominator::post_sharing;

    std::function<double(const std::map<int, double>&)> rounds_override;
    std::function<double(const std::map<int, double>&, const std::vector<double>&)> round_delay_override;

    int num_clients() const { return static_cast<int>(clients.size()); }

    void validate() const {
        const int n = num_clients();
        if (n == 0) throw validation_error("objective context: no clients");
        assignment.validate(n);
        if (download_delay.size() != clients.size() || upload_delay.size() != clients.size() ||
            upload_energy.size() != clients.size()) {
            throw dimension_error("objective context: per-client delay/energy vectors must match client count");
        }
        for (int h : assignment.heads) {
            if (!multicast_rate.count(h)) {
                throw validation_error("objective context: no multicast rate for head " + std::to_string(h));
            }
            if (!(multicast_rate.at(h) >= 0.0)) {
                throw validation_error("objective context: negative multicast rate for head " + std::to_string(h));
            }
        }
        if (bits_per_sample <= 0.0) throw validation_error("objective context: bits_per_sample must be positive");
        if (energy_budget <= 0.0) throw validation_error("objective context: energy budget must be positive");
        for (double d : download_delay) {
            if (!(d >= 0.0)) throw validation_error("objective context: negative download delay");
        }
        for (double d : upload_delay) {
            if (!(d >= 0.0)) throw validation_error("objective context: negative upload delay");
        }
        for (double e : upload_energy) {
            if (!(e >= 0.0)) throw validation_error("objective context: negative upload energy");
        }
        compute.validate();
    }
};

// Post-sharing sample count of one client under fractional volumes.
inline std::vector<double> effective_counts(const ObjectiveContext& ctx, const std::map<int, double>& volumes) {
    std::vector<double> out(static_cast<std::size_t>(ctx.num_clients()));
    for (int k = 0; k < ctx.num_clients(); ++k) out[static_cast<std::size_t>(k)] = static_cast<double>(ctx.clients[static_cast<std::size_t>(k)].n);
    for (const auto& [h, v] : volumes) {
        if (v < 0.0) throw validation_error("volumes: negative volume for head " + std::to_string(h));
        for (int m : ctx.assignment.members_of(h)) {
            out[static_cast<std::size_t>(m)] += v;
        }
    }
    return out;
}

// Multicast phase length: the slowest cluster determines it.
inline double sharing_delay_of(const ObjectiveContext& ctx, const std::map<int, double>& volumes) {
    double worst = 0.0;
    for (int h : ctx.assignment.heads) {
        auto it = volumes.find(h);
        const double v = it == volumes.end() ? 0.0 : it->second;
        if (v <= 0.0) continue;
        const double rate = ctx.multicast_rate.at(h);
        if (rate <= 0.0) {
            throw infeasibility_error("sharing delay: head " + std::to_string(h) +
                                      " has zero multicast rate but positive volume");
        }
        worst = std::max(worst, ctx.bits_per_sample * v / rate);
    }
    return worst;
}

// Largest compute frequency the per-round energy budget allows, capped at
// the hardware maximum. With the budget binding this solves
//   gamma_upload + coeff * cycles * epochs * n_eff * f^2 = budget
// so the returned frequency either sits at f_max or meets the budget with
// equality.
inline double optimal_frequency(const ObjectiveContext& ctx, int client, const std::map<int, double>& volumes) {
    if (client < 0 || client >= ctx.num_clients()) throw validation_error("optimal_frequency: client id out of range");
    const double head_room = ctx.energy_budget - ctx.upload_energy[static_cast<std::size_t>(client)];
    if (head_room <= 0.0) {
        throw infeasibility_error("optimal_frequency: upload energy of client " + std::to_string(client) +
                                  " already exceeds the budget");
    }
    const double n_eff = effective_counts(ctx, volumes)[static_cast<std::size_t>(client)];
    const double denom = ctx.compute.energy_coeff * ctx.compute.cycles_per_sample *
                         static_cast<double>(ctx.compute.local_epochs) * n_eff;
    if (denom <= 0.0) return ctx.compute.max_frequency;
    return std::min(ctx.compute.max_frequency, std::sqrt(head_room / denom));
}

inline std::vector<double> response_frequencies(const ObjectiveContext& ctx, const std::map<int, double>& volumes) {
    std::vector<double> out(static_cast<std::size_t>(ctx.num_clients()));
    const auto counts = effective_counts(ctx, volumes);
    for (int k = 0; k < ctx.num_clients(); ++k) {
        const double head_room = ctx.energy_budget - ctx.upload_energy[static_cast<std::size_t>(k)];
        if (head_room <= 0.0) {
            throw infeasibility_error("optimal_frequency: upload energy of client " + std::to_string(k) +
                                      " already exceeds the budget");
        }
        const double denom = ctx.compute.energy_coeff * ctx.compute.cycles_per_sample *
                             static_cast<double>(ctx.compute.local_epochs) * counts[static_cast<std::size_t>(k)];
        out[static_cast<std::size_t>(k)] =
            denom <= 0.0 ? ctx.compute.max_frequency : std::min(ctx.compute.max_frequency, std::sqrt(head_room / denom));
    }
    return out;
}

// One communication round: slowest download, then slowest compute+upload.
inline double round_delay_at(const ObjectiveContext& ctx, const std::map<int, double>& volumes,
                             const std::vector<double>& freqs) {
    if (ctx.round_delay_override) return ctx.round_delay_override(volumes, freqs);
    if (freqs.size() != ctx.clients.size()) throw dimension_error("round delay: one frequency per client required");
    const auto counts = effective_counts(ctx, volumes);
    double dl = 0.0;
    double rest = 0.0;
    for (int k = 0; k < ctx.num_clients(); ++k) {
        const auto ks = static_cast<std::size_t>(k);
        if (freqs[ks] <= 0.0) throw validation_error("round delay: non-positive frequency for client " + std::to_string(k));
        dl = std::max(dl, ctx.download_delay[ks]);
        const double cmp = ctx.compute.cycles_per_sample * static_cast<double>(ctx.compute.local_epochs) *
                           counts[ks] / freqs[ks];
        rest = std::max(rest, cmp + ctx.upload_delay[ks]);
    }
    return dl + rest;
}

inline double emd_at(const ObjectiveContext& ctx, const std::map<int, double>& volumes) {
    return hetero::post_sharing_average_emd_real(ctx.clients, ctx.assignment, volumes, ctx.global, ctx.denom);
}

inline double rounds_at(const ObjectiveContext& ctx, const std::map<int, double>& volumes,
                        const std::array<double, 3>& beta) {
    if (ctx.rounds_override) return ctx.rounds_override(volumes);
    roundsfit::RoundModel m = ctx.round_model;
    m.beta = beta;
    return roundsfit::predict(m, emd_at(ctx, volumes));
}

// Total time objective: sharing phase plus rounds-to-target times round
// length, with frequencies as given.
inline double objective_at(const ObjectiveContext& ctx, const std::map<int, double>& volumes,
                           const std::vector<double>& freqs, const std::array<double, 3>& beta) {
    return sharing_delay_of(ctx, volumes) + rounds_at(ctx, volumes, beta) * round_delay_at(ctx, volumes, freqs);
}

// Same, with each client's frequency set by its energy budget at these
// volumes. The energy constraint then holds by construction at every
// evaluated point, which keeps the volume subproblem a plain box.
inline double objective_at(const ObjectiveContext& ctx, const std::map<int, double>& volumes,
                           const std::array<double, 3>& beta) {
    if (ctx.round_delay_override) return objective_at(ctx, volumes, {}, beta);
    return objective_at(ctx, volumes, response_frequencies(ctx, volumes), beta);
}

// Constraint audit of a finished plan: volume boxes, frequency bounds, and
// the per-client energy budget. Throws naming the first violation.
inline void verify_plan(const ObjectiveContext& ctx, const SharingPlan& plan) {
    for (const auto& [h, v] : plan.volumes) {
        if (!ctx.assignment.is_head(h)) {
            throw infeasibility_error("plan: volume for non-head client " + std::to_string(h));
        }
        if (v < 0 || v > ctx.clients[static_cast<std::size_t>(h)].n) {
            throw infeasibility_error("plan: volume of head " + std::to_string(h) + " outside [0, n_m]");
        }
    }
    std::map<int, double> volumes;
    for (const auto& [h, v] : plan.volumes) volumes[h] = static_cast<double>(v);
    const auto counts = effective_counts(ctx, volumes);
    for (int k = 0; k < ctx.num_clients(); ++k) {
        const auto ks = static_cast<std::size_t>(k);
        auto it = plan.frequencies.find(k);
        if (it == plan.frequencies.end()) {
            throw infeasibility_error("plan: no frequency for client " + std::to_string(k));
        }
        const double f = it->second;
        if (!(f > 0.0) || f > ctx.compute.max_frequency * (1.0 + 1e-12)) {
            throw infeasibility_error("plan: frequency of client " + std::to_string(k) + " outside (0, f_max]");
        }
        const double gamma = ctx.upload_energy[ks] + ctx.compute.energy_coeff * ctx.compute.cycles_per_sample *
                                                         static_cast<double>(ctx.compute.local_epochs) * counts[ks] * f * f;
        if (gamma > ctx.energy_budget * (1.0 + 1e-9)) {
            throw infeasibility_error("plan: energy of client " + std::to_string(k) + " exceeds the budget");
        }
    }
}

// Decaying step weights: the surrogate mix rho decays slower than the
// iterate mix mu, and both sum to infinity with square-summable tails.
struct SscaSchedule {
    int inner_iters = 20;
    int outer_iters = 20;
    double lipschitz = 0.0;  // <= 0 picks a scale from the starting objective
    double beta_noise = 1.0; // scales the fitted standard errors in draws

    static double rho(int i) { return std::pow(static_cast<double>(i + 1), -0.6); }
    static double mu(int i) { return std::pow(static_cast<double>(i + 1), -0.9); }

    void validate() const {
        if (inner_iters < 0 || outer_iters < 1) throw validation_error("schedule: need J >= 1 and I >= 0");
        if (beta_noise < 0.0) throw validation_error("schedule: negative beta noise");
    }
};

// Quadratic-plus-sharing surrogate:
//   value(N) = sharing_coeff * max_m(slope_m N_m) + (quad/2) ||N||^2 + lin.N + constant
// Averaging two members of this family stays inside it, which is what the
// recursive smoothing needs.
struct Surrogate {
    double sharing_coeff = 0.0;
    double quad = 0.0;
    std::vector<double> lin;
    double constant = 0.0;

    double value_at(const std::vector<double>& n, const std::vector<double>& slopes) const {
        double ramp = 0.0;
        double rest = constant;
        for (std::size_t m = 0; m < n.size(); ++m) {
            ramp = std::max(ramp, slopes[m] * n[m]);
            rest += 0.5 * quad * n[m] * n[m] + lin[m] * n[m];
        }
        return sharing_coeff * ramp + rest;
    }
};

namespace detail {

inline std::map<int, double> to_volume_map(const ObjectiveContext& ctx, const std::vector<double>& n) {
    std::map<int, double> out;
    for (std::size_t m = 0; m < ctx.assignment.heads.size(); ++m) {
        out[ctx.assignment.heads[m]] = n[m];
    }
    return out;
}

// T(D(N)) * tau(N, f*(N)) at fractional volumes
inline double smooth_part(const ObjectiveContext& ctx, const std::vector<double>& n,
                          const std::array<double, 3>& beta) {
    const auto volumes = to_volume_map(ctx, n);
    if (ctx.round_delay_override) {
        return rounds_at(ctx, volumes, beta) * ctx.round_delay_override(volumes, {});
    }
    return rounds_at(ctx, volumes, beta) * round_delay_at(ctx, volumes, response_frequencies(ctx, volumes));
}

} // namespace detail

// One sampled surrogate: first-order model of the smooth product around
// n_prev (gradient by central differences, shrunk one-sided at the box
// edges) plus the exact sharing ramp and a proximal curvature term.
inline Surrogate surrogate_build(const ObjectiveContext& ctx, const std::vector<double>& n_prev,
                                 const std::array<double, 3>& beta, double lipschitz) {
    const std::size_t dims = ctx.assignment.heads.size();
    if (n_prev.size() != dims) throw dimension_error("surrogate: one volume per head required");
    if (!(lipschitz > 0.0)) throw validation_error("surrogate: curvature must be positive");

    const double value = detail::smooth_part(ctx, n_prev, beta);
    std::vector<double> grad(dims, 0.0);
    for (std::size_t m = 0; m < dims; ++m) {
        const double cap = static_cast<double>(ctx.clients[static_cast<std::size_t>(ctx.assignment.heads[m])].n);
        const double step = std::max(1.0, 1e-3 * cap);
        auto hi = n_prev;
        auto lo = n_prev;
        hi[m] = std::min(cap, n_prev[m] + step);
        lo[m] = std::max(0.0, n_prev[m] - step);
        if (hi[m] > lo[m]) {
            grad[m] = (detail::smooth_part(ctx, hi, beta) - detail::smooth_part(ctx, lo, beta)) / (hi[m] - lo[m]);
        }
        if (!std::isfinite(grad[m])) {
            throw numerical_error("surrogate: non-finite gradient in coordinate " + std::to_string(m));
        }
    }

    Surrogate g;
    g.sharing_coeff = 1.0;
    g.quad = lipschitz;
    g.lin.resize(dims);
    double lin_const = 0.0;
    for (std::size_t m = 0; m < dims; ++m) {
        g.lin[m] = grad[m] - lipschitz * n_prev[m];
        lin_const += -grad[m] * n_prev[m] + 0.5 * lipschitz * n_prev[m] * n_prev[m];
    }
    g.constant = value + lin_const;
    return g;
}

inline Surrogate surrogate_blend(const Surrogate& prev, const Surrogate& fresh, double rho) {
    if (prev.lin.size() != fresh.lin.size()) throw dimension_error("surrogate blend: dimension mismatch");
    if (rho < 0.0 || rho > 1.0) throw validation_error("surrogate blend: weight outside [0,1]");
    Surrogate out;
    out.sharing_coeff = (1.0 - rho) * prev.sharing_coeff + rho * fresh.sharing_coeff;
    out.quad = (1.0 - rho) * prev.quad + rho * fresh.quad;
    out.constant = (1.0 - rho) * prev.constant + rho * fresh.constant;
    out.lin.resize(prev.lin.size());
    for (std::size_t m = 0; m < prev.lin.size(); ++m) {
        out.lin[m] = (1.0 - rho) * prev.lin[m] + rho * fresh.lin[m];
    }
    return out;
}

// Proximal seed centered at the outer iterate.
inline Surrogate surrogate_seed(const std::vector<double>& center, double prox_weight) {
    Surrogate g;
    g.sharing_coeff = 0.0;
    g.quad = prox_weight;
    g.lin.resize(center.size());
    g.constant = 0.0;
    for (std::size_t m = 0; m < center.size(); ++m) {
        g.lin[m] = -prox_weight * center[m];
        g.constant += 0.5 * prox_weight * center[m] * center[m];
    }
    return g;
}

// Exact box minimizer of the surrogate. Apart from the sharing ramp the
// objective is separable, so for a fixed ramp height t each coordinate
// clamps independently; the height itself is swept across its breakpoints,
// where the one-sided derivative is affine, and the first sign change pins
// the optimum.
inline std::vector<double> surrogate_solve(const Surrogate& g, const std::vector<double>& slopes,
                                           const std::vector<double>& caps) {
    const std::size_t dims = g.lin.size();
    if (slopes.size() != dims || caps.size() != dims) throw dimension_error("surrogate solve: dimension mismatch");
    if (!(g.quad > 0.0)) throw numerical_error("surrogate solve: curvature must be positive");
    for (std::size_t m = 0; m < dims; ++m) {
        if (caps[m] < 0.0) throw infeasibility_error("surrogate solve: empty feasible box in coordinate " + std::to_string(m));
        if (slopes[m] < 0.0) throw validation_error("surrogate solve: negative sharing slope");
    }

    // per-coordinate minimizer ignoring the ramp
    std::vector<double> target(dims);
    for (std::size_t m = 0; m < dims; ++m) {
        target[m] = std::clamp(-g.lin[m] / g.quad, 0.0, caps[m]);
    }
    const bool ramp_active = g.sharing_coeff > 0.0 &&
                             std::any_of(slopes.begin(), slopes.end(), [](double s) { return s > 0.0; });
    if (!ramp_active) return target;

    // coordinate m is pinned to t/slope_m until t exceeds slope_m * target_m
    std::vector<double> breakpoints{0.0};
    for (std::size_t m = 0; m < dims; ++m) {
        if (slopes[m] > 0.0) breakpoints.push_back(slopes[m] * target[m]);
    }
    std::sort(breakpoints.begin(), breakpoints.end());
    breakpoints.erase(std::unique(breakpoints.begin(), breakpoints.end()), breakpoints.end());

    auto assemble = [&](double t) {
        std::vector<double> x(dims);
        for (std::size_t m = 0; m < dims; ++m) {
            x[m] = slopes[m] > 0.0 ? std::min(target[m], t / slopes[m]) : target[m];
        }
        return x;
    };

    // phi(t) = sharing_coeff * t + sum_m q_m(x_m(t)); between breakpoints
    // phi' is affine: a * t + b with a, b from the still-pinned coordinates
    double best_t = breakpoints.back();
    for (std::size_t seg = 0; seg < breakpoints.size(); ++seg) {
        const double lo = breakpoints[seg];
        const double hi = seg + 1 < breakpoints.size() ? breakpoints[seg + 1] : lo;
        double a = 0.0;
        double b = g.sharing_coeff;
        for (std::size_t m = 0; m < dims; ++m) {
            if (slopes[m] > 0.0 && slopes[m] * target[m] > lo) {
                a += g.quad / (slopes[m] * slopes[m]);
                b += g.lin[m] / slopes[m];
            }
        }
        const double derivative_at_lo = a * lo + b;
        if (derivative_at_lo >= 0.0) {
            best_t = lo;
            break;
        }
        if (seg + 1 == breakpoints.size()) {
            best_t = lo;
            break;
        }
        const double root = a > 0.0 ? -b / a : hi;
        if (root < hi) {
            best_t = std::max(lo, root);
            break;
        }
    }
    return assemble(best_t);
}

struct JfvoResult {
    SharingPlan plan;
    std::vector<double> trace; // objective at the fitted mean beta, one entry per outer iteration
    std::vector<std::vector<double>> trace_volumes; // averaged iterate after each outer pass, head order
    double objective = 0.0;
    bool oscillation_warning = false;
};

namespace detail {

// Integer volumes near the relaxed optimum: enumerate floor/ceil patterns
// when the cluster count allows, otherwise round greedily coordinate-wise.
inline std::vector<double> round_volumes(const ObjectiveContext& ctx, const std::vector<double>& relaxed,
                                         const std::array<double, 3>& beta) {
    const std::size_t dims = relaxed.size();
    std::vector<double> caps(dims);
    for (std::size_t m = 0; m < dims; ++m) {
        caps[m] = static_cast<double>(ctx.clients[static_cast<std::size_t>(ctx.assignment.heads[m])].n);
    }
    auto objective_of = [&](const std::vector<double>& n) {
        return objective_at(ctx, to_volume_map(ctx, n), beta);
    };

    if (dims <= 12) {
        std::vector<double> best;
        double best_value = 0.0;
        const std::size_t patterns = std::size_t{1} << dims;
        for (std::size_t mask = 0; mask < patterns; ++mask) {
            std::vector<double> n(dims);
            for (std::size_t m = 0; m < dims; ++m) {
                const double lo = std::floor(relaxed[m]);
                const double hi = std::ceil(relaxed[m]);
                n[m] = std::clamp((mask >> m) & 1 ? hi : lo, 0.0, caps[m]);
            }
            const double value = objective_of(n);
            if (best.empty() || value < best_value) {
                best = n;
                best_value = value;
            }
        }
        return best;
    }

    std::vector<double> n(dims);
    for (std::size_t m = 0; m < dims; ++m) n[m] = std::clamp(std::floor(relaxed[m]), 0.0, caps[m]);
    for (std::size_t m = 0; m < dims; ++m) {
        auto up = n;
        up[m] = std::clamp(std::ceil(relaxed[m]), 0.0, caps[m]);
        if (objective_of(up) < objective_of(n)) n = up;
    }
    return n;
}

} // namespace detail

// Alternating optimization: frequencies respond to volumes in closed form
// inside every evaluation, and the volumes walk through successive convex
// approximations with averaged iterates. The trace records the mean-beta
// objective after each outer pass.
inline JfvoResult jfvo_optimize(const ObjectiveContext& ctx, const SscaSchedule& schedule, std::uint64_t seed) {
    ctx.validate();
    schedule.validate();
    const std::size_t dims = ctx.assignment.heads.size();

    std::vector<double> slopes(dims, 0.0);
    std::vector<double> caps(dims, 0.0);
    for (std::size_t m = 0; m < dims; ++m) {
        const int h = ctx.assignment.heads[m];
        const double rate = ctx.multicast_rate.at(h);
        caps[m] = rate > 0.0 ? static_cast<double>(ctx.clients[static_cast<std::size_t>(h)].n) : 0.0;
        slopes[m] = rate > 0.0 ? ctx.bits_per_sample / rate : 0.0;
    }

    std::vector<double> n(dims, 0.0);
    auto mean_objective = [&](const std::vector<double>& point) {
        return objective_at(ctx, detail::to_volume_map(ctx, point), ctx.round_model.beta);
    };

    double lipschitz = schedule.lipschitz;
    if (!(lipschitz > 0.0)) {
        const double cap_peak = std::max(1.0, *std::max_element(caps.begin(), caps.end()));
        lipschitz = 10.0 * std::max(1e-12, mean_objective(n)) / (cap_peak * cap_peak);
    }

    JfvoResult result;
    double prev_outer = mean_objective(n);
    for (int j = 0; j < schedule.outer_iters; ++j) {
        Surrogate bar = surrogate_seed(n, lipschitz);
        for (int i = 0; i < schedule.inner_iters; ++i) {
            const auto beta = roundsfit::sample_beta(
                ctx.round_model, schedule.beta_noise,
                derive_seed(seed, {static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(i)}));
            const Surrogate fresh = surrogate_build(ctx, n, beta, lipschitz);
            bar = surrogate_blend(bar, fresh, SscaSchedule::rho(i));
            const auto solved = surrogate_solve(bar, slopes, caps);
            const double mu = SscaSchedule::mu(i);
            for (std::size_t m = 0; m < dims; ++m) n[m] = (1.0 - mu) * n[m] + mu * solved[m];
        }
        const double current = mean_objective(n);
        result.trace.push_back(current);
        result.trace_volumes.push_back(n);
        if (current > prev_outer * (1.0 + 1e-12)) lipschitz *= 2.0;
        prev_outer = current;
    }

    const auto rounded = detail::round_volumes(ctx, n, ctx.round_model.beta);
    SharingPlan plan;
    for (std::size_t m = 0; m < dims; ++m) {
        plan.volumes[ctx.assignment.heads[m]] = static_cast<std::int64_t>(std::llround(rounded[m]));
    }
    std::map<int, double> final_volumes;
    for (const auto& [h, v] : plan.volumes) final_volumes[h] = static_cast<double>(v);
    const auto freqs = response_frequencies(ctx, final_volumes);
    for (int k = 0; k < ctx.num_clients(); ++k) plan.frequencies[k] = freqs[static_cast<std::size_t>(k)];
    verify_plan(ctx, plan);
    result.plan = plan;
    result.objective = mean_objective(rounded);

    // flag (do not fail) runs whose tail still swings by more than 5%
    const std::size_t tail = std::max<std::size_t>(1, result.trace.size() / 4);
    double tail_low = result.trace.back();
    double tail_high = result.trace.back();
    for (std::size_t t = result.trace.size() - tail; t < result.trace.size(); ++t) {
        tail_low = std::min(tail_low, result.trace[t]);
        tail_high = std::max(tail_high, result.trace[t]);
    }
    result.oscillation_warning = tail_high > tail_low * 1.05;
    return result;
}

// Exhaustive reference: volumes on a per-head lattice, mean-beta objective,
// frequencies responding. First lattice point wins ties, so the result is
// deterministic.
inline JfvoResult grid_oracle(const ObjectiveContext& ctx, std::int64_t resolution) {
    ctx.validate();
    if (resolution < 1) throw validation_error("grid oracle: resolution must be >= 1");
    const std::size_t dims = ctx.assignment.heads.size();

    std::vector<std::int64_t> head_cap(dims);
    double points = 1.0;
    for (std::size_t m = 0; m < dims; ++m) {
        const int h = ctx.assignment.heads[m];
        head_cap[m] = ctx.multicast_rate.at(h) > 0.0 ? ctx.clients[static_cast<std::size_t>(h)].n : 0;
        const double interior = head_cap[m] > 0 ? static_cast<double>((head_cap[m] - 1) / resolution + 1) : 0.0;
        points *= interior + 1.0;
    }
    if (points > 1e7) throw size_guard_error("grid oracle: lattice exceeds 1e7 points");

    std::vector<std::vector<std::int64_t>> lattice(dims);
    for (std::size_t m = 0; m < dims; ++m) {
        for (std::int64_t v = 0; v < head_cap[m]; v += resolution) lattice[m].push_back(v);
        lattice[m].push_back(head_cap[m]);
    }

    std::vector<std::size_t> idx(dims, 0);
    std::vector<double> best;
    double best_value = 0.0;
    while (true) {
        std::vector<double> n(dims);
        for (std::size_t m = 0; m < dims; ++m) n[m] = static_cast<double>(lattice[m][idx[m]]);
        const double value = objective_at(ctx, detail::to_volume_map(ctx, n), ctx.round_model.beta);
        if (best.empty() || value < best_value) {
            best = n;
            best_value = value;
        }
        std::size_t m = 0;
        while (m < dims && ++idx[m] == lattice[m].size()) {
            idx[m] = 0;
            ++m;
        }
        if (m == dims) break;
    }

    JfvoResult result;
    for (std::size_t m = 0; m < dims; ++m) {
        result.plan.volumes[ctx.assignment.heads[m]] = static_cast<std::int64_t>(best[m]);
    }
    std::map<int, double> volumes;
    for (const auto& [h, v] : result.plan.volumes) volumes[h] = static_cast<double>(v);
    const auto freqs = response_frequencies(ctx, volumes);
    for (int k = 0; k < ctx.num_clients(); ++k) result.plan.frequencies[k] = freqs[static_cast<std::size_t>(k)];
    verify_plan(ctx, result.plan);
    result.objective = best_value;
    result.trace = {best_value};
    return result;
}

} // namespace fedshare::jfvo

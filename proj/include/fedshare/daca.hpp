#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fedshare/errors.hpp"
#include "fedshare/hetero.hpp"
#include "fedshare/types.hpp"
#include "fedshare/wireless.hpp"

namespace fedshare::daca {

// Undirected graph over clients whose edges survive both the closeness and
// the sidelink-rate threshold. Per-node heterogeneity is attached so the
// clustering pass never recomputes it.
struct ConstrainedGraph {
    double e_th = 0.0;
    double v_th = 0.0;
    std::vector<double> emd;
    std::vector<std::vector<bool>> adj;
    std::vector<std::vector<double>> closeness;
    std::vector<std::vector<double>> rate;

    int size() const { return static_cast<int>(emd.size()); }

    bool has_edge(int k, int j) const {
        return k != j && adj[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
    }

    // Directed gap member-minus-head; positive when joining lowers the member's side.
    double emd_gap(int member, int head) const {
        return emd[static_cast<std::size_t>(member)] - emd[static_cast<std::size_t>(head)];
    }

    std::vector<int> neighbors(int k) const {
        std::vector<int> out;
        for (int j = 0; j < size(); ++j) {
            if (has_edge(k, j)) out.push_back(j);
        }
        return out;
    }

    // Same nodes and EMDs with every pair connected: the clustering problem
    // with the closeness and rate constraints set aside.
    ConstrainedGraph unconstrained() const {
        ConstrainedGraph g = *this;
        const std::size_t n = g.emd.size();
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t j = 0; j < n; ++j) g.adj[k][j] = k != j;
        return g;
    }

    // Graph from explicit per-node EMDs and an edge list; for tests and for
    // callers that precomputed their own link feasibility.
    static ConstrainedGraph manual(std::vector<double> emds, const std::vector<std::pair<int, int>>& edges) {
        ConstrainedGraph g;
        const std::size_t n = emds.size();
        g.e_th = 0.5;
        g.v_th = 0.0;
        g.emd = std::move(emds);
        g.adj.assign(n, std::vector<bool>(n, false));
        g.closeness.assign(n, std::vector<double>(n, 0.0));
        g.rate.assign(n, std::vector<double>(n, 1.0));
        for (auto [a, b] : edges) {
            if (a < 0 || b < 0 || a >= static_cast<int>(n) || b >= static_cast<int>(n) || a == b) {
                throw validation_error("graph: bad edge (" + std::to_string(a) + "," + std::to_string(b) + ")");
            }
            g.adj[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = true;
            g.adj[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)] = true;
            g.closeness[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = 1.0;
            g.closeness[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)] = 1.0;
        }
        return g;
    }
};

namespace detail {

inline void check_square(const std::vector<std::vector<double>>& m, std::size_t n, const char* name) {
    if (m.size() != n) throw dimension_error(std::string(name) + ": matrix size does not match client count");
    for (const auto& row : m) {
        if (row.size() != n) throw dimension_error(std::string(name) + ": matrix is not square");
    }
}

} // namespace detail

// Builds the constrained graph: pairwise sidelink rates from distances, edges
// kept where closeness >= e_th and rate >= v_th, node EMDs attached.
inline ConstrainedGraph build_graph(const std::vector<ClientStat>& clients,
                                    const LabelDistribution& global,
                                    const std::vector<std::vector<double>>& closeness,
                                    const std::vector<std::vector<double>>& distances,
                                    const wireless::SidelinkModel& link,
                                    const wireless::RadioParams& radio,
                                    double e_th, double v_th) {
    if (clients.empty()) throw validation_error("build_graph: no clients");
    const std::size_t n = clients.size();
    detail::check_square(closeness, n, "build_graph closeness");
    detail::check_square(distances, n, "build_graph distances");
    if (e_th < 0.0 || v_th < 0.0) throw validation_error("build_graph: negative threshold");

    ConstrainedGraph g;
    g.e_th = e_th;
    g.v_th = v_th;
    g.emd.resize(n);
    g.adj.assign(n, std::vector<bool>(n, false));
    g.closeness.assign(n, std::vector<double>(n, 0.0));
    g.rate.assign(n, std::vector<double>(n, 0.0));

    for (std::size_t k = 0; k < n; ++k) {
        g.emd[k] = hetero::emd(clients[k].dist, global);
    }
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t j = k + 1; j < n; ++j) {
            const double e = closeness[k][j];
            if (std::abs(e - closeness[j][k]) > 1e-9) {
                throw validation_error("build_graph: closeness matrix not symmetric");
            }
            if (e < 0.0 || e > 1.0) throw validation_error("build_graph: closeness outside [0,1]");
            const double d = distances[k][j];
            if (std::abs(d - distances[j][k]) > 1e-9 * std::max(1.0, std::abs(d))) {
                throw validation_error("build_graph: distance matrix not symmetric");
            }
            const double v = link.rate_at(d, radio);
            g.closeness[k][j] = g.closeness[j][k] = e;
            g.rate[k][j] = g.rate[j][k] = v;
            const bool edge = e >= e_th && v >= v_th;
            g.adj[k][j] = g.adj[j][k] = edge;
        }
    }
    return g;
}

// Greedy clustering: walk clients by ascending EMD (ties by id), promoting a
// client to head whenever no already-chosen head covers it, so the head set is
// an independent dominating set. Every remaining client then joins the
// reachable head with the largest member-minus-head gap, i.e. the lowest-EMD
// reachable head, ties to the lowest head id.
inline ClusterAssignment daca_cluster(const ConstrainedGraph& graph) {
    const int n = graph.size();
    if (n == 0) throw validation_error("daca_cluster: empty graph");

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) order[static_cast<std::size_t>(k)] = k;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        double ea = graph.emd[static_cast<std::size_t>(a)];
        double eb = graph.emd[static_cast<std::size_t>(b)];
        return ea != eb ? ea < eb : a < b;
    });

    std::vector<bool> is_head(static_cast<std::size_t>(n), false);
    for (int k : order) {
        bool covered = false;
        for (int j = 0; j < n && !covered; ++j) {
            covered = is_head[static_cast<std::size_t>(j)] && graph.has_edge(k, j);
        }
        if (!covered) is_head[static_cast<std::size_t>(k)] = true;
    }

    ClusterAssignment out;
    for (int k = 0; k < n; ++k) {
        if (is_head[static_cast<std::size_t>(k)]) out.heads.push_back(k);
    }
    for (int k = 0; k < n; ++k) {
        if (is_head[static_cast<std::size_t>(k)]) continue;
        int best = -1;
        for (int m : out.heads) {
            if (!graph.has_edge(k, m)) continue;
            if (best < 0 || graph.emd[static_cast<std::size_t>(m)] < graph.emd[static_cast<std::size_t>(best)]) {
                best = m;
            }
        }
        out.members[best].push_back(k);
    }
    out.validate(n);
    return out;
}

// Checks the two optimality conditions on an assignment: every head sits at
// or below its members' EMD, and every member is attached to the lowest-EMD
// head it can reach.
struct ConditionReport {
    std::vector<std::pair<int, int>> high_head;   // (head, member) with emd(head) > emd(member)
    std::vector<std::pair<int, int>> better_head; // (member, lower-EMD reachable head)

    bool head_below_members() const { return high_head.empty(); }
    bool best_reachable_head() const { return better_head.empty(); }
    bool pass() const { return head_below_members() && best_reachable_head(); }
};

inline ConditionReport verify_conditions(const ClusterAssignment& assignment, const ConstrainedGraph& graph) {
    assignment.validate(graph.size());
    ConditionReport rep;
    constexpr double tol = 1e-12;
    for (int m : assignment.heads) {
        for (int c : assignment.members_of(m)) {
            if (graph.emd[static_cast<std::size_t>(m)] > graph.emd[static_cast<std::size_t>(c)] + tol) {
                rep.high_head.emplace_back(m, c);
            }
            for (int other : assignment.heads) {
                if (other == m || !graph.has_edge(c, other)) continue;
                if (graph.emd[static_cast<std::size_t>(other)] + tol < graph.emd[static_cast<std::size_t>(m)]) {
                    rep.better_head.emplace_back(c, other);
                }
            }
        }
    }
    return rep;
}

// Post-sharing average EMD of an assignment under the fixed volume rule
// n_m^s = volume_fraction * n_m, normalized by the grown totals. Uses the
// clients' actual label distributions.
inline double evaluate_post_sharing(const std::vector<ClientStat>& clients,
                                    const LabelDistribution& global,
                                    const ClusterAssignment& assignment,
                                    double volume_fraction = 1.0) {
    if (volume_fraction < 0.0 || volume_fraction > 1.0) {
        throw validation_error("evaluate_post_sharing: volume fraction outside [0,1]");
    }
    std::map<int, double> volumes;
    for (int m : assignment.heads) {
        volumes[m] = volume_fraction * static_cast<double>(clients[static_cast<std::size_t>(m)].n);
    }
    return hetero::post_sharing_average_emd_real(clients, assignment, volumes, global,
                                                 hetero::EmdDenominator::post_sharing);
}

// Scalar mixing calculus: a member's blended EMD is the count-weighted mean
// of its own and its head's EMD, as if their deviations never cancel. This is
// the currency of the clustering analysis, where per-node EMDs are the only
// data; it upper-bounds the distributional value.
inline double scalar_average_emd(const std::vector<std::int64_t>& counts, const std::vector<double>& emds) {
    if (counts.empty() || counts.size() != emds.size()) {
        throw dimension_error("scalar_average_emd: counts and emds must be equal non-empty size");
    }
    double total = 0.0;
    double sum = 0.0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
        if (counts[k] <= 0) throw validation_error("scalar_average_emd: non-positive sample count");
        total += static_cast<double>(counts[k]);
        sum += static_cast<double>(counts[k]) * emds[k];
    }
    return sum / total;
}

inline double scalar_post_sharing_emd(const std::vector<std::int64_t>& counts,
                                      const std::vector<double>& emds,
                                      const ClusterAssignment& assignment,
                                      double volume_fraction = 1.0) {
    if (counts.size() != emds.size()) {
        throw dimension_error("scalar_post_sharing_emd: counts and emds must be equal size");
    }
    if (volume_fraction < 0.0 || volume_fraction > 1.0) {
        throw validation_error("scalar_post_sharing_emd: volume fraction outside [0,1]");
    }
    assignment.validate(static_cast<int>(counts.size()));
    double numerator = 0.0;
    double denominator = 0.0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
        if (counts[k] <= 0) throw validation_error("scalar_post_sharing_emd: non-positive sample count");
        numerator += static_cast<double>(counts[k]) * emds[k];
        denominator += static_cast<double>(counts[k]);
    }
    for (const auto& [head, members] : assignment.members) {
        const double share = volume_fraction * static_cast<double>(counts[static_cast<std::size_t>(head)]);
        numerator += static_cast<double>(members.size()) * share * emds[static_cast<std::size_t>(head)];
        denominator += static_cast<double>(members.size()) * share;
    }
    return numerator / denominator;
}

struct OptimumResult {
    ClusterAssignment assignment;
    double value = 0.0;
};

// Brute-force minimizer of the scalar post-sharing average over every head
// set and every edge-respecting member assignment. Small instances only; the
// first assignment attaining the minimum (head sets in ascending bitmask
// order, members in mixed-radix order) is kept.
inline OptimumResult exhaustive_optimum(const std::vector<std::int64_t>& counts,
                                        const ConstrainedGraph& graph,
                                        double volume_fraction = 1.0) {
    const int n = graph.size();
    if (n == 0 || static_cast<std::size_t>(n) != counts.size()) {
        throw dimension_error("exhaustive_optimum: graph and count list disagree");
    }
    if (n > 8) {
        throw size_guard_error("exhaustive_optimum: " + std::to_string(n) + " clients exceeds the 8-client guard");
    }

    OptimumResult best;
    best.value = std::numeric_limits<double>::infinity();

    for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
        std::vector<int> heads;
        std::vector<int> rest;
        for (int k = 0; k < n; ++k) {
            if (mask & (1u << k)) heads.push_back(k);
            else rest.push_back(k);
        }

        std::vector<std::vector<int>> choices(rest.size());
        bool feasible = true;
        for (std::size_t i = 0; i < rest.size() && feasible; ++i) {
            for (int m : heads) {
                if (graph.has_edge(rest[i], m)) choices[i].push_back(m);
            }
            feasible = !choices[i].empty();
        }
        if (!feasible) continue;

        std::vector<std::size_t> digit(rest.size(), 0);
        while (true) {
            ClusterAssignment a;
            a.heads = heads;
            for (std::size_t i = 0; i < rest.size(); ++i) {
                a.members[choices[i][digit[i]]].push_back(rest[i]);
            }
            const double v = scalar_post_sharing_emd(counts, graph.emd, a, volume_fraction);
            if (v < best.value) {
                best.value = v;
                best.assignment = std::move(a);
            }

            std::size_t pos = 0;
            while (pos < digit.size() && ++digit[pos] == choices[pos].size()) {
                digit[pos] = 0;
                ++pos;
            }
            if (pos == digit.size()) break;
        }
    }
    return best;
}

namespace detail {

// Greedy repair loop shared by both calculi: while demoting one member to a
// singleton head lowers the evaluated average, apply the best such demotion
// (ties to the lowest head id, then member id). The fixed point keeps only
// sharing that helps, so it never sits above the no-sharing average.
template <class Evaluate>
ClusterAssignment prune_with(ClusterAssignment assignment, Evaluate&& value_of) {
    double current = value_of(assignment);
    while (true) {
        ClusterAssignment best;
        double best_value = current;
        bool found = false;
        for (int m : assignment.heads) {
            for (int c : assignment.members_of(m)) {
                ClusterAssignment candidate = assignment;
                auto& list = candidate.members[m];
                list.erase(std::find(list.begin(), list.end(), c));
                if (list.empty()) candidate.members.erase(m);
                candidate.heads.insert(
                    std::lower_bound(candidate.heads.begin(), candidate.heads.end(), c), c);
                const double v = value_of(candidate);
                if (v < best_value - 1e-15) {
                    best_value = v;
                    best = std::move(candidate);
                    found = true;
                }
            }
        }
        if (!found) return assignment;
        assignment = std::move(best);
        current = best_value;
    }
}

} // namespace detail

inline ClusterAssignment prune_nonbeneficial_members(const std::vector<ClientStat>& clients,
                                                     const LabelDistribution& global,
                                                     ClusterAssignment assignment,
                                                     double volume_fraction = 1.0) {
    assignment.validate(static_cast<int>(clients.size()));
    return detail::prune_with(std::move(assignment), [&](const ClusterAssignment& a) {
        return evaluate_post_sharing(clients, global, a, volume_fraction);
    });
}

inline ClusterAssignment prune_nonbeneficial_members(const std::vector<std::int64_t>& counts,
                                                     const ConstrainedGraph& graph,
                                                     ClusterAssignment assignment,
                                                     double volume_fraction = 1.0) {
    assignment.validate(graph.size());
    return detail::prune_with(std::move(assignment), [&](const ClusterAssignment& a) {
        return scalar_post_sharing_emd(counts, graph.emd, a, volume_fraction);
    });
}

} // namespace fedshare::daca

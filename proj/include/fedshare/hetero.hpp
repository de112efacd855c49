#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedshare/csv.hpp"
#include "fedshare/errors.hpp"
#include "fedshare/types.hpp"

namespace fedshare::hetero {

// L1 distance between a client's label distribution and the global one:
// sum_i |p_i - g_i|. Range [0, 2]; 0 iff identical, 2 for disjoint supports.
inline double emd(const LabelDistribution& p, const LabelDistribution& g) {
    if (p.num_classes() != g.num_classes()) {
        throw dimension_error("emd: class counts differ: " + std::to_string(p.num_classes()) +
                              " vs " + std::to_string(g.num_classes()));
    }
    double d = 0.0;
    for (int i = 0; i < p.num_classes(); ++i) d += std::abs(p[i] - g[i]);
    return d;
}

// Volume-weighted mean of per-client EMDs: sum_k (n_k / n) * emd(p_k, g).
inline double average_emd(const std::vector<ClientStat>& clients, const LabelDistribution& global) {
    if (clients.empty()) throw validation_error("average_emd: no clients");
    std::int64_t total = 0;
    for (const auto& c : clients) {
        if (c.n <= 0) throw validation_error("average_emd: client with non-positive sample count");
        total += c.n;
    }
    double sum = 0.0;
    for (const auto& c : clients) sum += static_cast<double>(c.n) * emd(c.dist, global);
    return sum / static_cast<double>(total);
}

// Volume-weighted mixture of the client distributions, i.e. the label
// distribution of the pooled data.
inline LabelDistribution pooled_distribution(const std::vector<ClientStat>& clients) {
    if (clients.empty()) throw validation_error("pooled_distribution: no clients");
    const int classes = clients[0].dist.num_classes();
    std::int64_t total = 0;
    std::vector<double> acc(static_cast<std::size_t>(classes), 0.0);
    for (const auto& c : clients) {
        if (c.n <= 0) throw validation_error("pooled_distribution: client with non-positive sample count");
        if (c.dist.num_classes() != classes) throw dimension_error("pooled_distribution: class counts differ");
        total += c.n;
        for (int i = 0; i < classes; ++i) acc[static_cast<std::size_t>(i)] += static_cast<double>(c.n) * c.dist[i];
    }
    for (double& v : acc) v /= static_cast<double>(total);
    return LabelDistribution(std::move(acc));
}

// Distribution of a member's data after receiving n_s samples drawn from the
// head's distribution p_m: effective count n_k + n_s, histogram the
// count-weighted blend of p_k and p_m.
inline std::pair<std::int64_t, LabelDistribution>
mix_distribution(std::int64_t n_k, const LabelDistribution& p_k,
                 std::int64_t n_s, const LabelDistribution& p_m) {
    if (n_k <= 0) throw validation_error("mix_distribution: member sample count must be positive");
    if (n_s < 0) throw validation_error("mix_distribution: negative shared volume");
    if (p_k.num_classes() != p_m.num_classes()) {
        throw dimension_error("mix_distribution: class counts differ");
    }
    if (n_s == 0) return {n_k, p_k};
    const double denom = static_cast<double>(n_k + n_s);
    std::vector<double> mixed(p_k.num_classes());
    for (int i = 0; i < p_k.num_classes(); ++i) {
        mixed[i] = (static_cast<double>(n_k) * p_k[i] + static_cast<double>(n_s) * p_m[i]) / denom;
    }
    return {n_k + n_s, LabelDistribution(std::move(mixed))};
}

// Denominator convention for the post-sharing average. The verbatim form
// divides by the pre-sharing total even though effective counts grew, so the
// weights exceed 1 in aggregate. The normalized form divides by the
// post-sharing total and equals the plain volume-weighted average of the
// post-sharing data; optimization and oracle comparisons use it.
enum class EmdDenominator { pre_sharing, post_sharing };

// Real-valued core: volumes may be fractional (the optimizer relaxes them).
inline double post_sharing_average_emd_real(const std::vector<ClientStat>& clients,
                                            const ClusterAssignment& assignment,
                                            const std::map<int, double>& volumes,
                                            const LabelDistribution& global,
                                            EmdDenominator denom = EmdDenominator::pre_sharing) {
    if (clients.empty()) throw validation_error("post_sharing_average_emd: no clients");
    const int num_clients = static_cast<int>(clients.size());
    assignment.validate(num_clients);
    for (const auto& [h, v] : volumes) {
        if (!assignment.is_head(h)) {
            throw validation_error("post_sharing_average_emd: volume for unknown head " + std::to_string(h));
        }
        if (v < 0 || v > static_cast<double>(clients[static_cast<std::size_t>(h)].n)) {
            throw validation_error("post_sharing_average_emd: volume for head " + std::to_string(h) +
                                   " outside [0, n_m]");
        }
    }

    double pre_total = 0.0;
    double post_total = 0.0;
    double weighted = 0.0;
    const int classes = global.num_classes();

    for (int k = 0; k < num_clients; ++k) {
        const auto& ck = clients[static_cast<std::size_t>(k)];
        if (ck.n <= 0) throw validation_error("post_sharing_average_emd: client with non-positive count");
        if (ck.dist.num_classes() != classes) throw dimension_error("post_sharing_average_emd: class counts differ");
        pre_total += static_cast<double>(ck.n);

        int head = assignment.is_head(k) ? -1 : assignment.head_of(k);
        double share = 0.0;
        if (head >= 0) {
            auto it = volumes.find(head);
            if (it != volumes.end()) share = it->second;
        }
        post_total += static_cast<double>(ck.n) + share;

        // n_tilde * emd(p_tilde, g) == || n_k (p_k - g) + n_s (p_m - g) ||_1,
        // so the weighted term needs no explicit renormalization.
        double term = 0.0;
        if (share > 0.0) {
            const auto& pm = clients[static_cast<std::size_t>(head)].dist;
            for (int i = 0; i < classes; ++i) {
                term += std::abs(static_cast<double>(ck.n) * (ck.dist[i] - global[i]) +
                                 share * (pm[i] - global[i]));
            }
        } else {
            term = static_cast<double>(ck.n) * emd(ck.dist, global);
        }
        weighted += term;
    }

    return weighted / (denom == EmdDenominator::pre_sharing ? pre_total : post_total);
}

// Post-sharing average EMD for an integer-volume plan: members of each head m
// mix with p_m at the planned volume, heads and singletons keep their own.
inline double post_sharing_average_emd(const std::vector<ClientStat>& clients,
                                       const ClusterAssignment& assignment,
                                       const SharingPlan& plan,
                                       const LabelDistribution& global,
                                       EmdDenominator denom = EmdDenominator::pre_sharing) {
    std::map<int, double> volumes;
    for (const auto& [h, v] : plan.volumes) volumes[h] = static_cast<double>(v);
    return post_sharing_average_emd_real(clients, assignment, volumes, global, denom);
}

struct ClientEmdRow {
    int client_id = 0;
    std::int64_t n = 0;
    double emd = 0.0;
};

struct HeterogeneityReport {
    std::vector<ClientEmdRow> per_client;
    double average = 0.0;
    std::optional<double> post_sharing;

    void write_csv(const std::string& path) const {
        csv::writer w(path);
        w.row("client_id", "n", "emd");
        std::int64_t total = 0;
        for (const auto& r : per_client) {
            w.row(r.client_id, r.n, r.emd);
            total += r.n;
        }
        w.row("all", total, average);
        if (post_sharing) w.row("post_sharing", total, *post_sharing);
    }
};

inline HeterogeneityReport make_report(const std::vector<ClientStat>& clients,
                                       const LabelDistribution& global,
                                       std::optional<double> post_sharing = std::nullopt) {
    HeterogeneityReport rep;
    for (std::size_t k = 0; k < clients.size(); ++k) {
        rep.per_client.push_back({static_cast<int>(k), clients[k].n, emd(clients[k].dist, global)});
    }
    rep.average = average_emd(clients, global);
    rep.post_sharing = post_sharing;
    return rep;
}

} // namespace fedshare::hetero

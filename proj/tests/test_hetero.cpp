#include <catch_amalgamated.hpp>

#include "fedshare/hetero.hpp"
#include "test_support.hpp"

#include <random>

using namespace fedshare;
using namespace fedshare::hetero;
using Catch::Approx;

TEST_CASE("emd of identical distributions is zero") {
    auto u = LabelDistribution::uniform(10);
    REQUIRE(emd(u, u) == 0.0);
    auto p = LabelDistribution({0.5, 0.3, 0.2});
    REQUIRE(emd(p, p) == 0.0);
}

TEST_CASE("emd frozen values") {
    auto p = LabelDistribution({0.5, 0.3, 0.2});
    auto g = LabelDistribution({0.2, 0.3, 0.5});
    REQUIRE(emd(p, g) == Approx(0.6).margin(1e-15));

    // one-hot vs uniform over 10 classes: |1 - 0.1| + 9 * 0.1 = 1.8
    REQUIRE(emd(LabelDistribution::one_hot(10, 3), LabelDistribution::uniform(10)) ==
            Approx(1.8).margin(1e-15));

    // disjoint supports hit the upper bound 2
    auto a = LabelDistribution({1.0, 0.0});
    auto b = LabelDistribution({0.0, 1.0});
    REQUIRE(emd(a, b) == Approx(2.0).margin(1e-15));
}

TEST_CASE("emd dimension mismatch throws") {
    auto p = LabelDistribution::uniform(3);
    auto g = LabelDistribution::uniform(4);
    REQUIRE_THROWS_AS(emd(p, g), dimension_error);
}

TEST_CASE("emd metric properties on random draws") {
    std::mt19937_64 rng(20240817ULL);
    for (int it = 0; it < 2000; ++it) {
        int classes = 2 + static_cast<int>(rng() % 9);
        auto p = testsup::random_distribution(rng, classes);
        auto q = testsup::random_distribution(rng, classes);
        auto r = testsup::random_distribution(rng, classes);
        double pq = emd(p, q);
        REQUIRE(pq >= 0.0);
        REQUIRE(pq <= 2.0 + 1e-12);
        REQUIRE(pq == Approx(emd(q, p)).margin(1e-15));
        REQUIRE(emd(p, r) <= pq + emd(q, r) + 1e-12);
        REQUIRE(emd(p, p) == 0.0);
    }
}

TEST_CASE("average_emd weights by sample count") {
    auto g = LabelDistribution({0.2, 0.3, 0.5});
    // client 0: one-hot class 0 -> emd = 0.8 + 0.3 + 0.5 = 1.6; client 1 matches g.
    std::vector<ClientStat> clients = {
        {100, LabelDistribution::one_hot(3, 0)},
        {300, g},
    };
    REQUIRE(average_emd(clients, g) == Approx(0.25 * 1.6).margin(1e-12));
}

TEST_CASE("average_emd validation") {
    auto g = LabelDistribution::uniform(3);
    REQUIRE_THROWS_AS(average_emd({}, g), validation_error);
    std::vector<ClientStat> bad = {{0, g}};
    REQUIRE_THROWS_AS(average_emd(bad, g), validation_error);
}

TEST_CASE("mix_distribution blends counts and histograms") {
    auto one_hot = LabelDistribution::one_hot(10, 0);
    auto u = LabelDistribution::uniform(10);
    auto [n, mixed] = mix_distribution(600, one_hot, 600, u);
    REQUIRE(n == 1200);
    REQUIRE(mixed[0] == Approx(0.55).margin(1e-12));
    for (int i = 1; i < 10; ++i) REQUIRE(mixed[i] == Approx(0.05).margin(1e-12));

    // receiving data drawn from the global distribution halves the gap here
    REQUIRE(emd(mixed, u) == Approx(0.9).margin(1e-12));
    REQUIRE(emd(mixed, u) < emd(one_hot, u));
}

TEST_CASE("mix_distribution edge cases") {
    auto p = LabelDistribution({0.7, 0.3});
    auto q = LabelDistribution({0.1, 0.9});
    auto [n, same] = mix_distribution(50, p, 0, q);
    REQUIRE(n == 50);
    REQUIRE(same == p);

    REQUIRE_THROWS_AS(mix_distribution(0, p, 10, q), validation_error);
    REQUIRE_THROWS_AS(mix_distribution(10, p, -1, q), validation_error);
    REQUIRE_THROWS_AS(mix_distribution(10, p, 5, LabelDistribution::uniform(3)), dimension_error);
}

namespace {

std::vector<ClientStat> head_member_pair() {
    // head 0: matches global exactly; member 1: one-hot
    return {
        {600, LabelDistribution::uniform(10)},
        {600, LabelDistribution::one_hot(10, 2)},
    };
}

ClusterAssignment pair_assignment() {
    ClusterAssignment a;
    a.heads = {0};
    a.members[0] = {1};
    return a;
}

} // namespace

TEST_CASE("post_sharing_average_emd: zero volumes reduce to the plain average") {
    auto clients = head_member_pair();
    auto g = LabelDistribution::uniform(10);
    auto assignment = pair_assignment();
    SharingPlan plan; // no volumes
    double pre = average_emd(clients, g);
    REQUIRE(post_sharing_average_emd(clients, assignment, plan, g, EmdDenominator::pre_sharing) ==
            Approx(pre).margin(1e-12));
    REQUIRE(post_sharing_average_emd(clients, assignment, plan, g, EmdDenominator::post_sharing) ==
            Approx(pre).margin(1e-12));
}

TEST_CASE("post_sharing_average_emd frozen values for a global-matching head") {
    auto clients = head_member_pair();
    auto g = LabelDistribution::uniform(10);
    auto assignment = pair_assignment();
    SharingPlan plan;
    plan.volumes[0] = 600;

    // member term || n_k (p_k - g) + n_s (p_m - g) ||_1 = 600 * 1.8 since the
    // head matches g; the verbatim denominator keeps the pre-sharing total.
    double verbatim = post_sharing_average_emd(clients, assignment, plan, g, EmdDenominator::pre_sharing);
    REQUIRE(verbatim == Approx(1080.0 / 1200.0).margin(1e-12));

    double normalized = post_sharing_average_emd(clients, assignment, plan, g, EmdDenominator::post_sharing);
    REQUIRE(normalized == Approx(1080.0 / 1800.0).margin(1e-12));
    REQUIRE(normalized < verbatim);

    // per-member distribution strictly improves even when the weighted
    // verbatim average does not move
    auto [nn, mixed] = mix_distribution(600, clients[1].dist, 600, clients[0].dist);
    REQUIRE(emd(mixed, g) < emd(clients[1].dist, g));
}

TEST_CASE("post_sharing_average_emd validation") {
    auto clients = head_member_pair();
    auto g = LabelDistribution::uniform(10);
    auto assignment = pair_assignment();

    SharingPlan unknown;
    unknown.volumes[1] = 5; // client 1 is a member, not a head
    REQUIRE_THROWS_AS(post_sharing_average_emd(clients, assignment, unknown, g), validation_error);

    SharingPlan too_big;
    too_big.volumes[0] = 601; // head only owns 600 samples
    REQUIRE_THROWS_AS(post_sharing_average_emd(clients, assignment, too_big, g), validation_error);
}

TEST_CASE("post_sharing_average_emd matches hand-computed mixing") {
    std::mt19937_64 rng(99ULL);
    for (int it = 0; it < 200; ++it) {
        int classes = 2 + static_cast<int>(rng() % 6);
        std::vector<ClientStat> clients;
        for (int k = 0; k < 4; ++k) {
            clients.push_back({100 + static_cast<std::int64_t>(rng() % 400),
                               testsup::random_distribution(rng, classes)});
        }
        auto g = testsup::random_distribution(rng, classes);
        ClusterAssignment a;
        a.heads = {0, 3};
        a.members[0] = {1};
        a.members[3] = {2};
        SharingPlan plan;
        plan.volumes[0] = clients[0].n / 2;
        plan.volumes[3] = clients[3].n;

        // independent recomputation: mix each member explicitly, then average
        auto mixed1 = mix_distribution(clients[1].n, clients[1].dist, plan.volumes[0], clients[0].dist);
        auto mixed2 = mix_distribution(clients[2].n, clients[2].dist, plan.volumes[3], clients[3].dist);
        double num = static_cast<double>(clients[0].n) * emd(clients[0].dist, g) +
                     static_cast<double>(mixed1.first) * emd(mixed1.second, g) +
                     static_cast<double>(mixed2.first) * emd(mixed2.second, g) +
                     static_cast<double>(clients[3].n) * emd(clients[3].dist, g);
        double pre_total = 0.0;
        for (const auto& c : clients) pre_total += static_cast<double>(c.n);
        double post_total = pre_total + static_cast<double>(plan.volumes[0] + plan.volumes[3]);

        REQUIRE(post_sharing_average_emd(clients, a, plan, g, EmdDenominator::pre_sharing) ==
                Approx(num / pre_total).margin(1e-9));
        REQUIRE(post_sharing_average_emd(clients, a, plan, g, EmdDenominator::post_sharing) ==
                Approx(num / post_total).margin(1e-9));
    }
}

TEST_CASE("heterogeneity report rows") {
    auto clients = head_member_pair();
    auto g = LabelDistribution::uniform(10);
    auto rep = make_report(clients, g, 0.5);
    REQUIRE(rep.per_client.size() == 2);
    REQUIRE(rep.per_client[0].emd == Approx(0.0));
    REQUIRE(rep.per_client[1].emd == Approx(1.8));
    REQUIRE(rep.average == Approx(0.9));
    REQUIRE(rep.post_sharing.has_value());
}

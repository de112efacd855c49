#include <catch_amalgamated.hpp>

#include "fedshare/datagen.hpp"
#include "fedshare/hetero.hpp"

#include <cstdio>
#include <fstream>

using namespace fedshare;
using namespace fedshare::datagen;
using Catch::Approx;

namespace {

Scenario base_scenario() {
    Scenario sc;
    sc.num_clients = 6;
    sc.num_classes = 6;
    sc.feature_dim = 16;
    sc.samples_per_client = {120};
    sc.kind = SkewKind::single_class_fraction;
    sc.fraction = 1.0;
    sc.test_fraction = 0.2;
    return sc;
}

} // namespace

TEST_CASE("all single-class clients: average EMD hits 2(K-1)/K") {
    auto sc = base_scenario(); // K == Y == 6
    auto data = generate(sc, 7);
    REQUIRE(hetero::average_emd(data.stats(), data.global) == Approx(2.0 * 5.0 / 6.0).margin(1e-12));

    Scenario sc2 = sc;
    sc2.num_clients = 4;
    sc2.num_classes = 10;
    sc2.feature_dim = 16;
    auto data2 = generate(sc2, 7);
    // pooled mass 1/4 on four classes; one-hot vs that: (1 - 1/4) + 3/4
    REQUIRE(hetero::average_emd(data2.stats(), data2.global) == Approx(1.5).margin(1e-12));
}

TEST_CASE("single-class fraction splits clients as requested") {
    auto sc = base_scenario();
    sc.fraction = 0.5;
    auto data = generate(sc, 11);
    for (int k = 0; k < 3; ++k) {
        auto counts = data.clients[static_cast<std::size_t>(k)].label_counts();
        REQUIRE(counts[static_cast<std::size_t>(k)] == 120);
    }
    for (int k = 3; k < 6; ++k) {
        auto counts = data.clients[static_cast<std::size_t>(k)].label_counts();
        for (auto c : counts) REQUIRE(c == 20); // 120 / 6 exactly, round-robin
    }
}

TEST_CASE("more single-class clients than classes is rejected") {
    Scenario sc = base_scenario();
    sc.num_clients = 12;
    sc.num_classes = 10;
    sc.fraction = 1.0;
    REQUIRE_THROWS_AS(generate(sc, 1), validation_error);
}

TEST_CASE("dirichlet with huge alpha approaches uniform per client") {
    Scenario sc;
    sc.num_clients = 4;
    sc.num_classes = 10;
    sc.feature_dim = 12;
    sc.samples_per_client = {6000};
    sc.kind = SkewKind::dirichlet;
    sc.alpha = 1e6;
    auto data = generate(sc, 42);
    auto u = LabelDistribution::uniform(10);
    for (const auto& c : data.clients) {
        REQUIRE(hetero::emd(c.label_distribution(), u) < 0.05);
    }
}

TEST_CASE("dirichlet with small alpha produces real skew") {
    Scenario sc;
    sc.num_clients = 4;
    sc.num_classes = 10;
    sc.feature_dim = 12;
    sc.samples_per_client = {2000};
    sc.kind = SkewKind::dirichlet;
    sc.alpha = 0.1;
    auto data = generate(sc, 42);
    double max_emd = 0.0;
    for (const auto& c : data.clients) {
        max_emd = std::max(max_emd, hetero::emd(c.label_distribution(), data.global));
    }
    REQUIRE(max_emd > 0.5);
}

TEST_CASE("feature_noise with zero levels yields identical clients and pseudo-distributions") {
    Scenario sc;
    sc.num_clients = 3;
    sc.num_classes = 4;
    sc.feature_dim = 8;
    sc.samples_per_client = {300};
    sc.kind = SkewKind::feature_noise;
    sc.noise_levels = {0.0, 0.0, 0.0};
    auto data = generate(sc, 5);
    REQUIRE(data.clients[0].features == data.clients[1].features);
    REQUIRE(data.clients[0].features == data.clients[2].features);
    auto pseudo = feature_statistic_distributions(data.clients, 4);
    REQUIRE(pseudo[0] == pseudo[1]);
    REQUIRE(pseudo[0] == pseudo[2]);
}

TEST_CASE("feature_noise shifts the binned statistic upward with the level") {
    Scenario sc;
    sc.num_clients = 3;
    sc.num_classes = 4;
    sc.feature_dim = 8;
    sc.samples_per_client = {500};
    sc.kind = SkewKind::feature_noise;
    sc.noise_levels = {0.0, 0.0, 3.0};
    auto data = generate(sc, 5);
    auto pseudo = feature_statistic_distributions(data.clients, 6);
    REQUIRE(pseudo[0] == pseudo[1]);
    auto mean_bin = [](const LabelDistribution& p) {
        double m = 0.0;
        for (int i = 0; i < p.num_classes(); ++i) m += i * p[i];
        return m;
    };
    REQUIRE(mean_bin(pseudo[2]) > mean_bin(pseudo[0]) + 0.5);
}

TEST_CASE("generation is deterministic in the seed") {
    auto sc = base_scenario();
    auto a = generate(sc, 123);
    auto b = generate(sc, 123);
    auto c = generate(sc, 124);
    REQUIRE(a.clients[0].features == b.clients[0].features);
    REQUIRE(a.clients[0].labels == b.clients[0].labels);
    REQUIRE(a.test.features == b.test.features);
    REQUIRE(a.clients[0].features != c.clients[0].features);
}

TEST_CASE("global histogram equals the pooled client counts") {
    auto sc = base_scenario();
    sc.fraction = 0.5;
    auto data = generate(sc, 9);
    std::vector<std::int64_t> pooled(static_cast<std::size_t>(sc.num_classes), 0);
    std::int64_t total = 0;
    for (const auto& cda : data.clients) {
        auto counts = cda.label_counts();
        for (std::size_t i = 0; i < counts.size(); ++i) pooled[i] += counts[i];
        total += cda.n();
    }
    for (int i = 0; i < sc.num_classes; ++i) {
        REQUIRE(data.global[i] == Approx(static_cast<double>(pooled[static_cast<std::size_t>(i)]) /
                                         static_cast<double>(total)).margin(1e-12));
    }
}

TEST_CASE("test pool matches the requested size and global mix") {
    auto sc = base_scenario();
    sc.fraction = 0.5;
    auto data = generate(sc, 13);
    REQUIRE(data.test.n() == static_cast<std::int64_t>(std::llround(0.2 * 6 * 120)));
    REQUIRE(hetero::emd(data.test.label_distribution(), data.global) < 0.05);
}

TEST_CASE("class blobs sit at the requested pairwise distance") {
    Scenario sc;
    sc.num_clients = 4;
    sc.num_classes = 4;
    sc.feature_dim = 8;
    sc.samples_per_client = {3000};
    sc.kind = SkewKind::single_class_fraction;
    sc.fraction = 1.0;
    auto data = generate(sc, 21);

    std::vector<std::vector<double>> means(4, std::vector<double>(8, 0.0));
    for (int k = 0; k < 4; ++k) {
        const auto& ds = data.clients[static_cast<std::size_t>(k)];
        for (std::int64_t i = 0; i < ds.n(); ++i) {
            const float* x = ds.sample(i);
            for (int j = 0; j < 8; ++j) means[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)] += x[j];
        }
        for (auto& v : means[static_cast<std::size_t>(k)]) v /= static_cast<double>(ds.n());
    }
    for (int a = 0; a < 4; ++a) {
        for (int b = a + 1; b < 4; ++b) {
            double sq = 0.0;
            for (int j = 0; j < 8; ++j) {
                double d = means[static_cast<std::size_t>(a)][static_cast<std::size_t>(j)] -
                           means[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)];
                sq += d * d;
            }
            REQUIRE(std::sqrt(sq) == Approx(4.0).margin(0.2));
        }
    }
}

TEST_CASE("apply_sharing with the full head dataset reproduces the mixed histogram exactly") {
    Scenario sc;
    sc.num_clients = 2;
    sc.num_classes = 4;
    sc.feature_dim = 8;
    sc.samples_per_client = {400};
    sc.kind = SkewKind::single_class_fraction;
    sc.fraction = 1.0;
    auto data = generate(sc, 31);

    ClusterAssignment a;
    a.heads = {0};
    a.members[0] = {1};
    SharingPlan plan;
    plan.volumes[0] = 400;

    auto shared = apply_sharing(data.clients, a, plan, 99);
    REQUIRE(shared[1].n() == 800);
    auto expected = hetero::mix_distribution(400, data.clients[1].label_distribution(),
                                             400, data.clients[0].label_distribution());
    REQUIRE(shared[1].label_distribution() == expected.second);
    // head untouched
    REQUIRE(shared[0].features == data.clients[0].features);
}

TEST_CASE("apply_sharing partial volume tracks the mixed histogram within 0.1 l1, seed-averaged") {
    Scenario sc;
    sc.num_clients = 2;
    sc.num_classes = 10;
    sc.feature_dim = 12;
    sc.samples_per_client = {1000};
    sc.kind = SkewKind::dirichlet;
    sc.alpha = 1.0;
    auto data = generate(sc, 57);

    ClusterAssignment a;
    a.heads = {0};
    a.members[0] = {1};
    SharingPlan plan;
    plan.volumes[0] = 500;

    auto expected = hetero::mix_distribution(1000, data.clients[1].label_distribution(),
                                             500, data.clients[0].label_distribution());
    double gap = 0.0;
    const int seeds = 5;
    for (int s = 0; s < seeds; ++s) {
        auto shared = apply_sharing(data.clients, a, plan, 1000 + static_cast<std::uint64_t>(s));
        gap += hetero::emd(shared[1].label_distribution(), expected.second);
    }
    REQUIRE(gap / seeds <= 0.1);
}

TEST_CASE("apply_sharing hands every member the identical subset") {
    Scenario sc;
    sc.num_clients = 3;
    sc.num_classes = 3;
    sc.feature_dim = 6;
    sc.samples_per_client = {90};
    sc.kind = SkewKind::single_class_fraction;
    sc.fraction = 1.0;
    auto data = generate(sc, 3);

    ClusterAssignment a;
    a.heads = {0};
    a.members[0] = {1, 2};
    SharingPlan plan;
    plan.volumes[0] = 30;
    auto shared = apply_sharing(data.clients, a, plan, 8);

    std::vector<float> tail1(shared[1].features.end() - 30 * 6, shared[1].features.end());
    std::vector<float> tail2(shared[2].features.end() - 30 * 6, shared[2].features.end());
    REQUIRE(tail1 == tail2);

    auto again = apply_sharing(data.clients, a, plan, 8);
    REQUIRE(again[1].features == shared[1].features);
}

TEST_CASE("apply_sharing validation") {
    Scenario sc;
    sc.num_clients = 2;
    sc.num_classes = 3;
    sc.feature_dim = 6;
    sc.samples_per_client = {50};
    sc.kind = SkewKind::single_class_fraction;
    sc.fraction = 1.0;
    auto data = generate(sc, 3);

    ClusterAssignment a;
    a.heads = {0};
    a.members[0] = {1};

    SharingPlan unknown;
    unknown.volumes[1] = 5;
    REQUIRE_THROWS_AS(apply_sharing(data.clients, a, unknown, 1), validation_error);

    SharingPlan too_big;
    too_big.volumes[0] = 51;
    REQUIRE_THROWS_AS(apply_sharing(data.clients, a, too_big, 1), validation_error);
}

TEST_CASE("binary dump round-trips") {
    Scenario sc;
    sc.num_clients = 2;
    sc.num_classes = 3;
    sc.feature_dim = 5;
    sc.samples_per_client = {40};
    sc.kind = SkewKind::single_class_fraction;
    sc.fraction = 0.5;
    auto data = generate(sc, 17);

    const std::string path = "datagen_roundtrip.bin";
    write_client_bin(path, data.clients[0]);
    auto back = read_client_bin(path);
    REQUIRE(back.feature_dim == 5);
    REQUIRE(back.num_classes == 3);
    REQUIRE(back.features == data.clients[0].features);
    REQUIRE(back.labels == data.clients[0].labels);
    std::remove(path.c_str());
}

TEST_CASE("idx loaders parse the big-endian format") {
    const std::string img_path = "test_images.idx";
    const std::string lbl_path = "test_labels.idx";
    {
        std::ofstream img(img_path, std::ios::binary);
        const unsigned char bytes[] = {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2,
                                       0, 51, 102, 153, 204, 255, 0, 128};
        img.write(reinterpret_cast<const char*>(bytes), sizeof(bytes));
    }
    {
        std::ofstream lbl(lbl_path, std::ios::binary);
        const unsigned char bytes[] = {0, 0, 8, 1, 0, 0, 0, 2, 7, 3};
        lbl.write(reinterpret_cast<const char*>(bytes), sizeof(bytes));
    }
    auto [pixels, shape] = load_idx_images(img_path);
    REQUIRE(shape.first == 2);
    REQUIRE(shape.second == 4);
    REQUIRE(pixels[0] == Approx(0.0));
    REQUIRE(pixels[1] == Approx(51.0 / 255.0));
    REQUIRE(pixels[5] == Approx(1.0));
    auto labels = load_idx_labels(lbl_path);
    REQUIRE(labels == std::vector<std::uint16_t>{7, 3});

    // magic mismatch caught
    REQUIRE_THROWS_AS(load_idx_images(lbl_path), validation_error);
    REQUIRE_THROWS_AS(load_idx_labels(img_path), validation_error);
    std::remove(img_path.c_str());
    std::remove(lbl_path.c_str());
}

TEST_CASE("feature squeeze keeps labels and histograms, reshapes features") {
    datagen::Scenario sc;
    sc.num_clients = 3;
    sc.num_classes = 3;
    sc.feature_dim = 6;
    sc.samples_per_client = {40};
    sc.fraction = 1.0;
    sc.test_fraction = 0.25;

    auto plain = datagen::generate(sc, 77);
    sc.condition_number = 10.0;
    auto squeezed = datagen::generate(sc, 77);

    REQUIRE(squeezed.global.probs() == plain.global.probs());
    for (std::size_t k = 0; k < plain.clients.size(); ++k) {
        REQUIRE(squeezed.clients[k].labels == plain.clients[k].labels);
        REQUIRE(squeezed.clients[k].features != plain.clients[k].features);
    }
    REQUIRE(squeezed.test.labels == plain.test.labels);

    auto again = datagen::generate(sc, 77);
    REQUIRE(again.clients[0].features == squeezed.clients[0].features);
    REQUIRE(again.test.features == squeezed.test.features);

    sc.condition_number = 0.5;
    REQUIRE_THROWS_AS(datagen::generate(sc, 77), validation_error);
}

TEST_CASE("conditioning matrix is symmetric with eigenvalues inside [1/kappa, 1]") {
    const int d = 5;
    const double kappa = 8.0;
    auto rng = make_rng(123, {7});
    auto a = datagen::detail::conditioning_matrix(d, kappa, rng);

    for (int r = 0; r < d; ++r) {
        for (int c = 0; c < d; ++c) {
            REQUIRE_THAT(a[static_cast<std::size_t>(r * d + c)],
                         Catch::Matchers::WithinAbs(a[static_cast<std::size_t>(c * d + r)], 1e-12));
        }
    }

    // Rayleigh quotients of a symmetric matrix stay between the extreme
    // eigenvalues; sampled directions must respect the designed range.
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> x(d);
        double norm2 = 0.0;
        for (auto& v : x) {
            v = gauss(rng);
            norm2 += v * v;
        }
        double quad = 0.0;
        for (int r = 0; r < d; ++r) {
            for (int c = 0; c < d; ++c) {
                quad += x[static_cast<std::size_t>(r)] * a[static_cast<std::size_t>(r * d + c)] *
                        x[static_cast<std::size_t>(c)];
            }
        }
        const double rayleigh = quad / norm2;
        REQUIRE(rayleigh >= 1.0 / kappa - 1e-9);
        REQUIRE(rayleigh <= 1.0 + 1e-9);
    }
}

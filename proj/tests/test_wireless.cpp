#include <catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "fedshare/errors.hpp"
#include "fedshare/wireless.hpp"

using namespace fedshare;
using namespace fedshare::wireless;

namespace {

RadioParams sidelink_radio() {
    RadioParams r;
    r.noise_density = 2e-15;
    r.sidelink_bandwidth = 1e9;
    r.multicast_interference = 5e-7; // floor 2e-6 + 5e-7 = 2.5e-6
    return r;
}

SidelinkGeometry simple_geometry(double distance) {
    SidelinkGeometry g;
    g.distance = distance;
    g.states = {PathLossState{}}; // kappa=1, A=1, zeta=2, S=U=1
    return g;
}

} // namespace

TEST_CASE("multicast sinr single-state value") {
    // 0.01 / 100 = 1e-4 received over a 2.5e-6 floor
    double sinr = multicast_sinr(0.01, simple_geometry(10.0), sidelink_radio());
    REQUIRE(sinr == Catch::Approx(40.0).epsilon(1e-12));
    REQUIRE(sidelink_rate(0.01, simple_geometry(10.0), sidelink_radio()) ==
            Catch::Approx(1e9 * std::log2(41.0)).epsilon(1e-12));
}

TEST_CASE("multicast sinr state mixture") {
    SidelinkGeometry g = simple_geometry(10.0);
    PathLossState a{0.5, 1.0, 2.0, 1.0, 1.0};
    PathLossState b{0.5, 1.0, 2.0, 1.0, 1.0};
    g.states = {a, b};
    REQUIRE(multicast_sinr(0.01, g, sidelink_radio()) == Catch::Approx(40.0).epsilon(1e-12));

    // heavier path loss in one state pulls the average down
    g.states[1].coefficient = 10.0;
    REQUIRE(multicast_sinr(0.01, g, sidelink_radio()) < 40.0);
}

TEST_CASE("multicast sinr decreases with distance") {
    RadioParams r = sidelink_radio();
    double prev = multicast_sinr(0.01, simple_geometry(1.0), r);
    for (double d : {2.0, 5.0, 10.0, 50.0, 200.0}) {
        double cur = multicast_sinr(0.01, simple_geometry(d), r);
        REQUIRE(cur < prev);
        REQUIRE(cur > 0.0);
        prev = cur;
    }
}

TEST_CASE("multicast sinr validation") {
    RadioParams r = sidelink_radio();
    REQUIRE_THROWS_AS(multicast_sinr(0.01, simple_geometry(0.0), r), validation_error);
    REQUIRE_THROWS_AS(multicast_sinr(0.0, simple_geometry(10.0), r), validation_error);

    SidelinkGeometry g = simple_geometry(10.0);
    g.states.clear();
    REQUIRE_THROWS_AS(multicast_sinr(0.01, g, r), validation_error);

    g = simple_geometry(10.0);
    g.states[0].probability = 0.7; // does not sum to 1
    REQUIRE_THROWS_AS(multicast_sinr(0.01, g, r), validation_error);

    g = simple_geometry(10.0);
    g.states[0].coefficient = 0.0;
    REQUIRE_THROWS_AS(multicast_sinr(0.01, g, r), validation_error);
}

TEST_CASE("cluster multicast rate is the weakest member") {
    REQUIRE(cluster_multicast_rate({40.0, 3.0}, 1e9) == Catch::Approx(2e9).epsilon(1e-12));
    REQUIRE(cluster_multicast_rate({3.0}, 1e9) == Catch::Approx(2e9).epsilon(1e-12));
    REQUIRE_THROWS_AS(cluster_multicast_rate({}, 1e9), validation_error);
    REQUIRE_THROWS_AS(cluster_multicast_rate({1.0, -0.5}, 1e9), validation_error);
    REQUIRE_THROWS_AS(cluster_multicast_rate({1.0}, 0.0), validation_error);
}

TEST_CASE("sharing delay takes the slowest cluster") {
    std::map<int, std::int64_t> volumes{{1, 600}, {2, 300}};
    std::map<int, double> rates{{1, 1e6}, {2, 1e6}};
    REQUIRE(sharing_delay(volumes, rates, 6272.0) == Catch::Approx(3.7632).epsilon(1e-12));

    // nothing shared, nothing waited for
    REQUIRE(sharing_delay({{1, 0}, {2, 0}}, rates, 6272.0) == 0.0);
    REQUIRE(sharing_delay({}, {}, 6272.0) == 0.0);

    // a zero-volume cluster may have a dead link; a positive-volume one may not
    REQUIRE(sharing_delay({{1, 0}}, {{1, 0.0}}, 6272.0) == 0.0);
    REQUIRE_THROWS_AS(sharing_delay({{1, 10}}, {{1, 0.0}}, 6272.0), infeasibility_error);
    REQUIRE_THROWS_AS(sharing_delay({{1, 10}}, {}, 6272.0), infeasibility_error);
    REQUIRE_THROWS_AS(sharing_delay({{1, -5}}, rates, 6272.0), validation_error);
    REQUIRE_THROWS_AS(sharing_delay(volumes, rates, 0.0), validation_error);
}

namespace {

RadioParams bs_radio() {
    RadioParams r;
    r.noise_density = 4e-21;
    r.downlink_bandwidth = 20e6;
    r.uplink_bandwidth = 1e6;
    r.num_subcarriers = 10;
    r.bs_power = 1.0;
    r.ue_power = 0.01;
    return r;
}

} // namespace

TEST_CASE("download delay, deterministic channel") {
    // SNR = 1 * 2.4e-13 / (20e6 * 4e-21) = 3, rate = 20e6 * 2 = 4e7 bit/s
    FadingModel f;
    f.kind = FadingModel::Kind::deterministic;
    f.scale = 2.4e-13;
    REQUIRE(expected_download_delay(bs_radio(), f, 8e6) == Catch::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("download delay, rayleigh channel") {
    FadingModel det;
    det.scale = 2.4e-13;
    const double at_mean = expected_download_delay(bs_radio(), det, 8e6);

    FadingModel ray;
    ray.kind = FadingModel::Kind::rayleigh;
    ray.scale = std::sqrt(2.4e-13 / 2.0); // E|h|^2 = 2.4e-13
    ray.seed = 42;
    ray.num_draws = 10000;
    const double mc = expected_download_delay(bs_radio(), ray, 8e6);

    // 1/log2(1+c*g) is convex in g, so fading can only hurt on average
    REQUIRE(mc > at_mean);

    // doubling the sample count barely moves the estimate
    ray.num_draws = 20000;
    const double mc2 = expected_download_delay(bs_radio(), ray, 8e6);
    REQUIRE(std::abs(mc2 - mc) / mc < 0.01);

    // same seed, same estimate
    ray.num_draws = 10000;
    REQUIRE(expected_download_delay(bs_radio(), ray, 8e6) == mc);

    ray.min_gain_fraction = 0.0;
    REQUIRE_THROWS_AS(expected_download_delay(bs_radio(), ray, 8e6), validation_error);
}

TEST_CASE("subcarrier allocation") {
    REQUIRE(allocate_subcarriers(10, 3) == std::vector<int>{4, 3, 3});
    REQUIRE(allocate_subcarriers(9, 4) == std::vector<int>{3, 2, 2, 2});
    REQUIRE(allocate_subcarriers(10, 10) == std::vector<int>(10, 1));
    REQUIRE(allocate_subcarriers(10, 1) == std::vector<int>{10});
    REQUIRE_THROWS_AS(allocate_subcarriers(10, 11), infeasibility_error);
    REQUIRE_THROWS_AS(allocate_subcarriers(10, 0), validation_error);
}

TEST_CASE("upload delay and energy") {
    // per-subcarrier SNR = 0.01 * 1.2e-12 / (1e6 * 4e-21) = 3
    FadingModel f;
    f.scale = 1.2e-12;
    const double tau = expected_upload_delay(bs_radio(), f, 1e4, 10);
    REQUIRE(tau == Catch::Approx(5e-4).epsilon(1e-12));
    REQUIRE(upload_energy(bs_radio(), tau) == Catch::Approx(5e-6).epsilon(1e-12));

    // fewer subcarriers scale the rate down linearly
    REQUIRE(expected_upload_delay(bs_radio(), f, 1e4, 5) == Catch::Approx(1e-3).epsilon(1e-12));

    REQUIRE_THROWS_AS(expected_upload_delay(bs_radio(), f, 1e4, 0), validation_error);
    REQUIRE_THROWS_AS(expected_upload_delay(bs_radio(), f, 1e4, 11), infeasibility_error);
    REQUIRE_THROWS_AS(upload_energy(bs_radio(), -1.0), validation_error);
}

TEST_CASE("computation delay and energy") {
    ComputeParams c; // L=2.5e5, E=1, zeta=4e-26, f=1.2e9
    REQUIRE(computation_delay(c, 600.0) == Catch::Approx(0.125).epsilon(1e-12));
    REQUIRE(computation_energy(c, 600.0) == Catch::Approx(8.64).epsilon(1e-12));

    // energy grows with the square of the clock
    ComputeParams slow = c;
    slow.frequency = 0.6e9;
    REQUIRE(computation_delay(slow, 600.0) == Catch::Approx(0.25).epsilon(1e-12));
    REQUIRE(computation_energy(slow, 600.0) == Catch::Approx(2.16).epsilon(1e-12));

    ComputeParams bad = c;
    bad.frequency = 2e9; // above max_frequency
    REQUIRE_THROWS_AS(computation_delay(bad, 600.0), validation_error);
    REQUIRE_THROWS_AS(computation_delay(c, -1.0), validation_error);
    bad = c;
    bad.local_epochs = 0;
    REQUIRE_THROWS_AS(computation_energy(bad, 600.0), validation_error);
}

TEST_CASE("round delay composition") {
    std::vector<double> dl{0.2, 0.1};
    std::vector<double> comp{0.125, 0.3};
    std::vector<double> ul{0.0005, 0.001};
    REQUIRE(round_delay(dl, comp, ul) == Catch::Approx(0.501).epsilon(1e-12));
    REQUIRE(round_energy(8.64, 5e-6) == Catch::Approx(8.640005).epsilon(1e-12));
    REQUIRE_THROWS_AS(round_delay({0.1}, {0.1, 0.2}, {0.1, 0.2}), dimension_error);
    REQUIRE_THROWS_AS(round_delay({}, {}, {}), dimension_error);
}

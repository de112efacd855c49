#include <catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "fedshare/errors.hpp"
#include "fedshare/rng.hpp"
#include "fedshare/roundsfit.hpp"

using namespace fedshare;
using namespace fedshare::roundsfit;

namespace {

constexpr std::array<double, 3> kRef{0.50, -1.83, 1.70};

std::vector<std::pair<double, double>> law_samples(const std::array<double, 3>& b, int count) {
    std::vector<std::pair<double, double>> out;
    for (int i = 0; i < count; ++i) {
        const double x = 0.2 + 1.6 * static_cast<double>(i) / static_cast<double>(count - 1);
        const double q = (b[0] * x + b[1]) * x + b[2];
        out.emplace_back(x, 1.0 / q);
    }
    return out;
}

} // namespace

TEST_CASE("noiseless fit recovers the generating coefficients") {
    auto model = fit(law_samples(kRef, 20));
    REQUIRE(model.beta[0] == Catch::Approx(kRef[0]).margin(1e-6));
    REQUIRE(model.beta[1] == Catch::Approx(kRef[1]).margin(1e-6));
    REQUIRE(model.beta[2] == Catch::Approx(kRef[2]).margin(1e-6));
    REQUIRE(model.nmse < 1e-12);
    REQUIRE(model.valid_range.first == Catch::Approx(0.2));
    REQUIRE(model.valid_range.second == Catch::Approx(1.8));
}

TEST_CASE("prediction arithmetic") {
    RoundModel model;
    model.beta = kRef;
    model.valid_range = {0.2, 1.8};
    REQUIRE(predict(model, 1.0) == Catch::Approx(1.0 / 0.37).epsilon(1e-9));
    REQUIRE(predict(model, 1.8) == Catch::Approx(1.0 / 0.026).epsilon(1e-9));

    RoundModel flat;
    flat.beta = {0.0, 0.0, 0.5};
    flat.valid_range = {0.0, 2.0};
    REQUIRE(predict(flat, 0.3) == Catch::Approx(2.0));
    REQUIRE(predict(flat, 1.7) == Catch::Approx(2.0));

    RoundModel bad;
    bad.beta = {0.0, 0.0, -1.0};
    REQUIRE_THROWS_AS(predict(bad, 0.5), numerical_error);
}

TEST_CASE("constant rounds flatten the law") {
    std::vector<std::pair<double, double>> samples{{0.3, 5.0}, {0.9, 5.0}, {1.5, 5.0}};
    auto model = fit(samples);
    REQUIRE(model.beta[0] == Catch::Approx(0.0).margin(1e-9));
    REQUIRE(model.beta[1] == Catch::Approx(0.0).margin(1e-9));
    REQUIRE(model.beta[2] == Catch::Approx(0.2).margin(1e-9));
    REQUIRE(model.nmse == 0.0);
}

TEST_CASE("fit validation and failure modes") {
    REQUIRE_THROWS_AS(fit({{0.5, 10.0}, {1.0, 20.0}}), validation_error);
    REQUIRE_THROWS_AS(fit({{0.5, 10.0}, {0.5, 12.0}, {0.5, 14.0}, {1.0, 20.0}}), numerical_error);
    REQUIRE_THROWS_AS(fit({{0.5, -3.0}, {1.0, 5.0}, {1.5, 7.0}}), validation_error);
    REQUIRE_THROWS_AS(fit({{0.5, 10.0}, {1.0, std::numeric_limits<double>::infinity()}, {1.5, 7.0}}),
                      validation_error);

    // a deep dip between symmetric samples pulls the fitted law below zero
    // inside the span even though every sample itself is positive
    std::vector<std::pair<double, double>> dipping{{0.0, 1.0}, {0.9, 1000.0}, {1.1, 1000.0}, {2.0, 1.0}};
    REQUIRE_THROWS_AS(fit(dipping), numerical_error);
}

TEST_CASE("noisy fit stays near the generating law") {
    auto rng = make_rng(20260817, {501});
    std::uniform_real_distribution<double> wiggle(-0.1, 0.1);
    std::array<double, 3> mean_beta{0.0, 0.0, 0.0};
    const int seeds = 10;
    for (int s = 0; s < seeds; ++s) {
        auto samples = law_samples(kRef, 30);
        for (auto& [x, t] : samples) t *= 1.0 + wiggle(rng);
        auto model = fit(samples);
        REQUIRE(model.nmse > 0.0);
        REQUIRE(model.se[0] > 0.0);
        for (int j = 0; j < 3; ++j) mean_beta[static_cast<std::size_t>(j)] += model.beta[static_cast<std::size_t>(j)];
    }
    for (int j = 0; j < 3; ++j) {
        mean_beta[static_cast<std::size_t>(j)] /= seeds;
        REQUIRE(std::abs(mean_beta[static_cast<std::size_t>(j)] - kRef[static_cast<std::size_t>(j)]) <
                0.2 * std::abs(kRef[static_cast<std::size_t>(j)]));
    }
}

TEST_CASE("prediction is monotone where the denominator falls") {
    auto model = fit(law_samples(kRef, 20));
    // the fitted quadratic decreases over the whole span (vertex at 1.83)
    double prev = predict(model, model.valid_range.first);
    for (int i = 1; i <= 50; ++i) {
        const double x = model.valid_range.first +
                         (model.valid_range.second - model.valid_range.first) * static_cast<double>(i) / 50.0;
        const double cur = predict(model, x);
        REQUIRE(cur >= prev - 1e-12);
        prev = cur;
    }
}

TEST_CASE("coefficient uncertainty draws") {
    // noiseless model: zero spread, draws collapse onto the fit
    auto exact = fit(law_samples(kRef, 20));
    auto frozen = sample_beta(exact, 0.0, 7);
    REQUIRE(frozen[0] == Catch::Approx(exact.beta[0]).margin(1e-12));
    REQUIRE(frozen[1] == Catch::Approx(exact.beta[1]).margin(1e-12));
    REQUIRE(frozen[2] == Catch::Approx(exact.beta[2]).margin(1e-12));

    // noisy model: reproducible draws, mean near the fit, positivity kept
    auto rng = make_rng(20260817, {502});
    std::uniform_real_distribution<double> wiggle(-0.1, 0.1);
    auto samples = law_samples(kRef, 30);
    for (auto& [x, t] : samples) t *= 1.0 + wiggle(rng);
    auto noisy = fit(samples);

    auto a = sample_beta(noisy, 1.0, 99);
    auto b = sample_beta(noisy, 1.0, 99);
    REQUIRE(a == b);
    REQUIRE(sample_beta(noisy, 1.0, 100) != a);

    // every draw keeps the law positive across the whole fitted range
    const auto law_min = [](const std::array<double, 3>& d, double lo, double hi) {
        double m = std::min((d[0] * lo + d[1]) * lo + d[2], (d[0] * hi + d[1]) * hi + d[2]);
        if (d[0] != 0.0) {
            const double v = -d[1] / (2.0 * d[0]);
            if (v > lo && v < hi) m = std::min(m, (d[0] * v + d[1]) * v + d[2]);
        }
        return m;
    };
    for (int i = 0; i < 2000; ++i) {
        auto d = sample_beta(noisy, 1.0, derive_seed(3000, {static_cast<std::uint64_t>(i)}));
        REQUIRE(law_min(d, noisy.valid_range.first, noisy.valid_range.second) > 0.0);
    }

    // unbiased when the law sits far from zero and rejection never triggers
    RoundModel roomy;
    roomy.beta = {0.5, -1.0, 1.7};
    roomy.valid_range = {0.0, 2.0};
    roomy.se = {0.05, 0.05, 0.05};
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        auto d = sample_beta(roomy, 1.0, derive_seed(4000, {static_cast<std::uint64_t>(i)}));
        for (int j = 0; j < 3; ++j) mean[static_cast<std::size_t>(j)] += d[static_cast<std::size_t>(j)];
    }
    for (int j = 0; j < 3; ++j) {
        mean[static_cast<std::size_t>(j)] /= draws;
        const double tol = 3.0 * roomy.se[static_cast<std::size_t>(j)] / std::sqrt(static_cast<double>(draws));
        REQUIRE(std::abs(mean[static_cast<std::size_t>(j)] - roomy.beta[static_cast<std::size_t>(j)]) < tol);
    }

    REQUIRE_THROWS_AS(sample_beta(noisy, -1.0, 0), validation_error);

    // a law that is already non-positive at the midpoint can never be drawn from
    RoundModel hopeless;
    hopeless.beta = {0.0, 0.0, -1.0};
    hopeless.valid_range = {0.0, 1.0};
    REQUIRE_THROWS_AS(sample_beta(hopeless, 1.0, 0), numerical_error);
}

TEST_CASE("round model json round trip") {
    auto rng = make_rng(20260817, {503});
    std::uniform_real_distribution<double> wiggle(-0.1, 0.1);
    auto samples = law_samples(kRef, 30);
    for (auto& [x, t] : samples) t *= 1.0 + wiggle(rng);
    auto model = fit(samples);

    auto j = to_json(model);
    auto back = round_model_from_json(j);
    REQUIRE(back.beta == model.beta);
    REQUIRE(back.valid_range == model.valid_range);
    REQUIRE(back.nmse == model.nmse);
    REQUIRE(back.se == model.se);

    nlohmann::json missing;
    missing["beta"] = {1.0, 2.0};
    REQUIRE_THROWS_AS(round_model_from_json(missing), validation_error);
}

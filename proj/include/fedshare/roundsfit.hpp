#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fedshare/errors.hpp"
#include "fedshare/rng.hpp"

namespace fedshare::roundsfit {

// Rounds-to-target law T(x) = 1 / (b1 x^2 + b2 x + b3) over post-sharing
// average EMD x, with the coefficient standard errors kept for the
// optimizer's uncertainty draws.
struct RoundModel {
    std::array<double, 3> beta{0.0, 0.0, 0.0};
    std::pair<double, double> valid_range{0.0, 0.0};
    double nmse = 0.0;
    std::array<double, 3> se{0.0, 0.0, 0.0};

    double denominator(double x) const { return (beta[0] * x + beta[1]) * x + beta[2]; }
};

inline double predict(const RoundModel& model, double x) {
    const double q = model.denominator(x);
    if (!(q > 0.0)) {
        throw numerical_error("predict: non-positive denominator " + std::to_string(q) +
                              " at emd " + std::to_string(x));
    }
    return 1.0 / q;
}

namespace detail {

// Solves A x = b for a symmetric 3x3 system by partial-pivot elimination.
inline std::array<double, 3> solve3(std::array<std::array<double, 3>, 3> a, std::array<double, 3> b) {
    std::array<int, 3> perm{0, 1, 2};
    for (int col = 0; col < 3; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 3; ++r) {
            if (std::abs(a[static_cast<std::size_t>(r)][static_cast<std::size_t>(col)]) >
                std::abs(a[static_cast<std::size_t>(pivot)][static_cast<std::size_t>(col)])) {
                pivot = r;
            }
        }
        std::swap(a[static_cast<std::size_t>(col)], a[static_cast<std::size_t>(pivot)]);
        std::swap(b[static_cast<std::size_t>(col)], b[static_cast<std::size_t>(pivot)]);
        std::swap(perm[static_cast<std::size_t>(col)], perm[static_cast<std::size_t>(pivot)]);
        const double p = a[static_cast<std::size_t>(col)][static_cast<std::size_t>(col)];
        if (std::abs(p) < 1e-12) throw numerical_error("fit: singular design matrix (collinear emd values)");
        for (int r = col + 1; r < 3; ++r) {
            const double f = a[static_cast<std::size_t>(r)][static_cast<std::size_t>(col)] / p;
            for (int c = col; c < 3; ++c) {
                a[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] -=
                    f * a[static_cast<std::size_t>(col)][static_cast<std::size_t>(c)];
            }
            b[static_cast<std::size_t>(r)] -= f * b[static_cast<std::size_t>(col)];
        }
    }
    std::array<double, 3> x{};
    for (int r = 2; r >= 0; --r) {
        double acc = b[static_cast<std::size_t>(r)];
        for (int c = r + 1; c < 3; ++c) {
            acc -= a[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] * x[static_cast<std::size_t>(c)];
        }
        x[static_cast<std::size_t>(r)] = acc / a[static_cast<std::size_t>(r)][static_cast<std::size_t>(r)];
    }
    return x;
}

// Inverse of a symmetric positive-definite 3x3 matrix via cofactors.
inline std::array<std::array<double, 3>, 3> invert3(const std::array<std::array<double, 3>, 3>& m) {
    auto det2 = [&](int r1, int c1, int r2, int c2) {
        return m[static_cast<std::size_t>(r1)][static_cast<std::size_t>(c1)] *
                   m[static_cast<std::size_t>(r2)][static_cast<std::size_t>(c2)] -
               m[static_cast<std::size_t>(r1)][static_cast<std::size_t>(c2)] *
                   m[static_cast<std::size_t>(r2)][static_cast<std::size_t>(c1)];
    };
    const double det = m[0][0] * det2(1, 1, 2, 2) - m[0][1] * det2(1, 0, 2, 2) + m[0][2] * det2(1, 0, 2, 1);
    if (std::abs(det) < 1e-300) throw numerical_error("fit: singular design matrix (collinear emd values)");
    std::array<std::array<double, 3>, 3> inv{};
    inv[0][0] = det2(1, 1, 2, 2) / det;
    inv[0][1] = -det2(0, 1, 2, 2) / det;
    inv[0][2] = det2(0, 1, 1, 2) / det;
    inv[1][0] = inv[0][1];
    inv[1][1] = det2(0, 0, 2, 2) / det;
    inv[1][2] = -det2(0, 0, 2, 1) / det;
    inv[2][0] = inv[0][2];
    inv[2][1] = inv[1][2];
    inv[2][2] = det2(0, 0, 1, 1) / det;
    return inv;
}

} // namespace detail

// Least squares on the linearized form 1/T = b1 x^2 + b2 x + b3. Exact for
// data generated from the law itself; coefficient standard errors come from
// the usual sigma^2 (X^T X)^{-1} with the linearized residuals.
inline RoundModel fit(const std::vector<std::pair<double, double>>& samples) {
    if (samples.size() < 3) throw validation_error("fit: need at least 3 samples");
    std::vector<double> xs;
    for (const auto& [x, t] : samples) {
        if (!std::isfinite(x)) throw validation_error("fit: non-finite emd value");
        if (!(t > 0.0) || !std::isfinite(t)) throw validation_error("fit: rounds must be positive and finite");
        if (std::find(xs.begin(), xs.end(), x) == xs.end()) xs.push_back(x);
    }
    if (xs.size() < 3) throw numerical_error("fit: singular design matrix (collinear emd values)");

    // normal equations for the basis (x^2, x, 1)
    std::array<std::array<double, 3>, 3> xtx{};
    std::array<double, 3> xty{};
    for (const auto& [x, t] : samples) {
        const std::array<double, 3> row{x * x, x, 1.0};
        const double y = 1.0 / t;
        for (int i = 0; i < 3; ++i) {
            xty[static_cast<std::size_t>(i)] += row[static_cast<std::size_t>(i)] * y;
            for (int j = 0; j < 3; ++j) {
                xtx[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] +=
                    row[static_cast<std::size_t>(i)] * row[static_cast<std::size_t>(j)];
            }
        }
    }

    RoundModel model;
    model.beta = detail::solve3(xtx, xty);

    double lo = samples[0].first;
    double hi = samples[0].first;
    for (const auto& [x, t] : samples) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    model.valid_range = {lo, hi};

    // the law must stay positive over the fitted span; the quadratic's
    // minimum inside the span is the only place beyond the endpoints to check
    auto check_positive = [&](double x) {
        if (model.denominator(x) <= 0.0) {
            throw numerical_error("fit: non-positive denominator at emd " + std::to_string(x));
        }
    };
    check_positive(lo);
    check_positive(hi);
    if (model.beta[0] > 0.0) {
        const double vertex = -model.beta[1] / (2.0 * model.beta[0]);
        if (vertex > lo && vertex < hi) check_positive(vertex);
    }

    double rss = 0.0;
    double t_mean = 0.0;
    for (const auto& [x, t] : samples) t_mean += t;
    t_mean /= static_cast<double>(samples.size());
    double t_var = 0.0;
    double rss_lin = 0.0;
    for (const auto& [x, t] : samples) {
        const double predicted = 1.0 / model.denominator(x);
        rss += (predicted - t) * (predicted - t);
        t_var += (t - t_mean) * (t - t_mean);
        const double resid = model.denominator(x) - 1.0 / t;
        rss_lin += resid * resid;
    }
    model.nmse = t_var > 0.0 ? rss / t_var : 0.0;

    if (samples.size() > 3) {
        const double sigma2 = rss_lin / static_cast<double>(samples.size() - 3);
        auto cov = detail::invert3(xtx);
        for (int j = 0; j < 3; ++j) {
            model.se[static_cast<std::size_t>(j)] =
                std::sqrt(std::max(0.0, sigma2 * cov[static_cast<std::size_t>(j)][static_cast<std::size_t>(j)]));
        }
    }
    return model;
}

// Perturbed coefficient draw for the optimizer's stochastic iterations:
// independent Gaussian per coefficient, spread = noise_scale times the fit
// standard error, redrawn until the law stays positive across the whole
// fitted range (endpoints plus any interior vertex of the parabola).
inline std::array<double, 3> sample_beta(const RoundModel& model, double noise_scale, std::uint64_t seed) {
    if (noise_scale < 0.0) throw validation_error("sample_beta: negative noise scale");
    auto rng = make_rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double lo = model.valid_range.first;
    const double hi = model.valid_range.second;
    const auto positive_on_range = [&](const std::array<double, 3>& b) {
        const auto q = [&](double x) { return (b[0] * x + b[1]) * x + b[2]; };
        if (!(q(lo) > 0.0) || !(q(hi) > 0.0)) return false;
        if (b[0] != 0.0) {
            const double vertex = -b[1] / (2.0 * b[0]);
            if (vertex > lo && vertex < hi && !(q(vertex) > 0.0)) return false;
        }
        return true;
    };
    for (int attempt = 0; attempt < 100; ++attempt) {
        std::array<double, 3> draw{};
        for (int j = 0; j < 3; ++j) {
            draw[static_cast<std::size_t>(j)] =
                model.beta[static_cast<std::size_t>(j)] +
                noise_scale * model.se[static_cast<std::size_t>(j)] * gauss(rng);
        }
        if (positive_on_range(draw)) return draw;
    }
    throw numerical_error("sample_beta: no positive-denominator draw in 100 attempts");
}

inline nlohmann::ordered_json to_json(const RoundModel& model) {
    nlohmann::ordered_json j;
    j["beta"] = model.beta;
    j["range"] = {model.valid_range.first, model.valid_range.second};
    j["nmse"] = model.nmse;
    j["se"] = model.se;
    return j;
}

inline RoundModel round_model_from_json(const nlohmann::json& j) {
    RoundModel model;
    try {
        auto beta = j.at("beta");
        auto range = j.at("range");
        if (beta.size() != 3 || range.size() != 2) throw validation_error("round model: malformed arrays");
        for (int i = 0; i < 3; ++i) model.beta[static_cast<std::size_t>(i)] = beta.at(i).get<double>();
        model.valid_range = {range.at(0).get<double>(), range.at(1).get<double>()};
        model.nmse = j.at("nmse").get<double>();
        if (j.contains("se")) {
            for (int i = 0; i < 3; ++i) model.se[static_cast<std::size_t>(i)] = j.at("se").at(i).get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw validation_error(std::string("round model: bad json: ") + e.what());
    }
    return model;
}

} // namespace fedshare::roundsfit

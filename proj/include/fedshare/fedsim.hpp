#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fedshare/csv.hpp"
#include "fedshare/datagen.hpp"
#include "fedshare/errors.hpp"
#include "fedshare/rng.hpp"

namespace fedshare::fedsim {

// Multinomial logistic regression by default; a one-hidden-layer ReLU
// perceptron is available for scale checks but stays outside the convex
// analysis the logistic model supports.
struct ModelSpec {
    enum class Kind { logistic, mlp };
    Kind kind = Kind::logistic;
    int hidden_units = 32;
};

struct Model {
    ModelSpec spec;
    int feature_dim = 0;
    int num_classes = 0;
    std::vector<double> weights;

    std::size_t size() const { return weights.size(); }
};

inline std::size_t parameter_count(const ModelSpec& spec, int feature_dim, int num_classes) {
    const auto d = static_cast<std::size_t>(feature_dim);
    const auto y = static_cast<std::size_t>(num_classes);
    if (spec.kind == ModelSpec::Kind::logistic) return y * d + y;
    const auto h = static_cast<std::size_t>(spec.hidden_units);
    return h * d + h + y * h + y;
}

// Logistic weights start at zero (the convex objective needs no symmetry
// breaking); the perceptron draws a small seeded Gaussian init.
inline Model make_model(const ModelSpec& spec, int feature_dim, int num_classes, std::uint64_t seed = 0) {
    if (feature_dim < 1 || num_classes < 2) throw validation_error("make_model: need feature_dim >= 1, classes >= 2");
    if (spec.kind == ModelSpec::Kind::mlp && spec.hidden_units < 1) {
        throw validation_error("make_model: hidden layer needs at least one unit");
    }
    Model m{spec, feature_dim, num_classes, {}};
    m.weights.assign(parameter_count(spec, feature_dim, num_classes), 0.0);
    if (spec.kind == ModelSpec::Kind::mlp) {
        auto rng = make_rng(seed, {21});
        std::normal_distribution<double> gauss(0.0, 0.1);
        for (auto& w : m.weights) w = gauss(rng);
    }
    return m;
}

namespace detail {

// logits for one sample; scratch holds hidden activations for the perceptron
inline void compute_logits(const Model& m, const float* x, std::vector<double>& logits,
                           std::vector<double>& hidden) {
    const auto d = static_cast<std::size_t>(m.feature_dim);
    const auto y = static_cast<std::size_t>(m.num_classes);
    logits.assign(y, 0.0);
    if (m.spec.kind == ModelSpec::Kind::logistic) {
        for (std::size_t c = 0; c < y; ++c) {
            double acc = m.weights[y * d + c];
            const double* row = m.weights.data() + c * d;
            for (std::size_t j = 0; j < d; ++j) acc += row[j] * static_cast<double>(x[j]);
            logits[c] = acc;
        }
        return;
    }
    const auto h = static_cast<std::size_t>(m.spec.hidden_units);
    const double* w1 = m.weights.data();
    const double* b1 = w1 + h * d;
    const double* w2 = b1 + h;
    const double* b2 = w2 + y * h;
    hidden.assign(h, 0.0);
    for (std::size_t u = 0; u < h; ++u) {
        double acc = b1[u];
        const double* row = w1 + u * d;
        for (std::size_t j = 0; j < d; ++j) acc += row[j] * static_cast<double>(x[j]);
        hidden[u] = acc > 0.0 ? acc : 0.0;
    }
    for (std::size_t c = 0; c < y; ++c) {
        double acc = b2[c];
        const double* row = w2 + c * h;
        for (std::size_t u = 0; u < h; ++u) acc += row[u] * hidden[u];
        logits[c] = acc;
    }
}

// in place: logits -> softmax probabilities; returns log-sum-exp
inline double softmax_inplace(std::vector<double>& logits) {
    double peak = logits[0];
    for (double v : logits) peak = std::max(peak, v);
    double sum = 0.0;
    for (double& v : logits) {
        v = std::exp(v - peak);
        sum += v;
    }
    for (double& v : logits) v /= sum;
    return peak + std::log(sum);
}

} // namespace detail

// Mean cross-entropy of the model on a dataset.
inline double dataset_loss(const Model& m, const datagen::ClientDataset& data) {
    if (data.n() == 0) throw validation_error("dataset_loss: empty dataset");
    if (data.feature_dim != m.feature_dim || data.num_classes != m.num_classes) {
        throw dimension_error("dataset_loss: model and dataset shapes differ");
    }
    std::vector<double> logits;
    std::vector<double> hidden;
    double total = 0.0;
    for (std::int64_t i = 0; i < data.n(); ++i) {
        detail::compute_logits(m, data.sample(i), logits, hidden);
        const double true_logit = logits[data.labels[static_cast<std::size_t>(i)]];
        const double lse = detail::softmax_inplace(logits);
        total += lse - true_logit;
    }
    return total / static_cast<double>(data.n());
}

// Adds the cross-entropy gradient of one sample to grad (no scaling).
inline void accumulate_gradient(const Model& m, const float* x, int label, std::vector<double>& grad) {
    const auto d = static_cast<std::size_t>(m.feature_dim);
    const auto y = static_cast<std::size_t>(m.num_classes);
    std::vector<double> probs;
    std::vector<double> hidden;
    detail::compute_logits(m, x, probs, hidden);
    detail::softmax_inplace(probs);
    probs[static_cast<std::size_t>(label)] -= 1.0;

    if (m.spec.kind == ModelSpec::Kind::logistic) {
        for (std::size_t c = 0; c < y; ++c) {
            double* row = grad.data() + c * d;
            const double delta = probs[c];
            for (std::size_t j = 0; j < d; ++j) row[j] += delta * static_cast<double>(x[j]);
            grad[y * d + c] += delta;
        }
        return;
    }

    const auto h = static_cast<std::size_t>(m.spec.hidden_units);
    const double* w2 = m.weights.data() + h * d + h;
    double* g_w1 = grad.data();
    double* g_b1 = g_w1 + h * d;
    double* g_w2 = g_b1 + h;
    double* g_b2 = g_w2 + y * h;
    for (std::size_t c = 0; c < y; ++c) {
        const double delta = probs[c];
        double* row = g_w2 + c * h;
        for (std::size_t u = 0; u < h; ++u) row[u] += delta * hidden[u];
        g_b2[c] += delta;
    }
    for (std::size_t u = 0; u < h; ++u) {
        if (hidden[u] <= 0.0) continue; // ReLU gate
        double back = 0.0;
        for (std::size_t c = 0; c < y; ++c) back += probs[c] * w2[c * h + u];
        double* row = g_w1 + u * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += back * static_cast<double>(x[j]);
        g_b1[u] += back;
    }
}

// Mean gradient of the dataset's cross-entropy at the model's weights.
inline std::vector<double> dataset_gradient(const Model& m, const datagen::ClientDataset& data) {
    if (data.n() == 0) throw validation_error("dataset_gradient: empty dataset");
    if (data.feature_dim != m.feature_dim || data.num_classes != m.num_classes) {
        throw dimension_error("dataset_gradient: model and dataset shapes differ");
    }
    std::vector<double> grad(m.size(), 0.0);
    for (std::int64_t i = 0; i < data.n(); ++i) {
        accumulate_gradient(m, data.sample(i), data.labels[static_cast<std::size_t>(i)], grad);
    }
    const double scale = 1.0 / static_cast<double>(data.n());
    for (double& g : grad) g *= scale;
    return grad;
}

// Fraction of correctly argmax-classified samples; ties go to the lowest class id.
inline double accuracy(const Model& m, const datagen::ClientDataset& data) {
    if (data.n() == 0) throw validation_error("accuracy: empty dataset");
    if (data.feature_dim != m.feature_dim || data.num_classes != m.num_classes) {
        throw dimension_error("accuracy: model and dataset shapes differ");
    }
    std::vector<double> logits;
    std::vector<double> hidden;
    std::int64_t hits = 0;
    for (std::int64_t i = 0; i < data.n(); ++i) {
        detail::compute_logits(m, data.sample(i), logits, hidden);
        std::size_t arg = 0;
        for (std::size_t c = 1; c < logits.size(); ++c) {
            if (logits[c] > logits[arg]) arg = c;
        }
        if (static_cast<int>(arg) == static_cast<int>(data.labels[static_cast<std::size_t>(i)])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(data.n());
}

struct TrainConfig {
    double learning_rate = 0.1;
    int local_epochs = 1;
    int batch_size = 32;
    int max_rounds = 100;
    double target_accuracy = 0.9;
    std::uint64_t rng_seed = 0;
    double l2_reg = 0.0;

    void validate() const {
        if (learning_rate < 0.0) throw validation_error("train: negative learning rate");
        if (local_epochs < 1) throw validation_error("train: need at least one local epoch");
        if (batch_size < 1) throw validation_error("train: batch size must be positive");
        if (max_rounds < 1) throw validation_error("train: need at least one round");
        if (target_accuracy <= 0.0 || target_accuracy > 1.0) {
            throw validation_error("train: target accuracy outside (0,1]");
        }
        if (l2_reg < 0.0) throw validation_error("train: negative l2 coefficient");
    }
};

// E epochs of shuffled mini-batch SGD on cross-entropy (plus optional L2).
// The shuffle stream is derived from the config seed and the caller's stream
// tag, so a fixed (seed, round, client) triple always replays identically.
inline Model local_sgd(Model model, const datagen::ClientDataset& data, const TrainConfig& cfg,
                       std::uint64_t stream = 0) {
    cfg.validate();
    if (data.n() == 0) throw validation_error("local_sgd: empty dataset");
    if (data.feature_dim != model.feature_dim || data.num_classes != model.num_classes) {
        throw dimension_error("local_sgd: model and dataset shapes differ");
    }
    auto rng = make_rng(cfg.rng_seed, {22, stream});
    std::vector<std::int64_t> order(static_cast<std::size_t>(data.n()));
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> grad(model.size());

    for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t i = start; i < stop; ++i) {
                const auto idx = order[i];
                accumulate_gradient(model, data.sample(idx), data.labels[static_cast<std::size_t>(idx)], grad);
            }
            const double scale = cfg.learning_rate / static_cast<double>(stop - start);
            const double decay = cfg.learning_rate * cfg.l2_reg;
            bool finite = true;
            for (std::size_t j = 0; j < model.weights.size(); ++j) {
                model.weights[j] -= scale * grad[j] + decay * model.weights[j];
                finite = finite && std::isfinite(model.weights[j]);
            }
            if (!finite) {
                throw numerical_error("local_sgd: diverged to non-finite weights (learning rate too large?)");
            }
        }
    }
    return model;
}

// w_g = sum_k (n_k / n) w_k
inline Model aggregate(const std::vector<Model>& models, const std::vector<std::int64_t>& counts) {
    if (models.empty() || models.size() != counts.size()) {
        throw dimension_error("aggregate: need one weight per model");
    }
    std::int64_t total = 0;
    for (std::int64_t c : counts) {
        if (c < 0) throw validation_error("aggregate: negative sample count");
        total += c;
    }
    if (total <= 0) throw validation_error("aggregate: total sample count must be positive");
    Model out = models[0];
    std::fill(out.weights.begin(), out.weights.end(), 0.0);
    for (std::size_t k = 0; k < models.size(); ++k) {
        if (models[k].size() != out.size()) throw dimension_error("aggregate: model dimensions differ");
        const double w = static_cast<double>(counts[k]) / static_cast<double>(total);
        for (std::size_t j = 0; j < out.weights.size(); ++j) out.weights[j] += w * models[k].weights[j];
    }
    return out;
}

struct RoundRecord {
    double loss = 0.0;
    double accuracy = 0.0;
};

struct TrainingTrace {
    std::vector<RoundRecord> rounds;
    std::optional<int> rounds_to_target;
    double final_accuracy = 0.0;

    void write_csv(const std::string& path) const {
        csv::writer w(path);
        w.row("round", "loss", "accuracy");
        for (std::size_t t = 0; t < rounds.size(); ++t) {
            w.row(static_cast<int>(t) + 1, rounds[t].loss, rounds[t].accuracy);
        }
    }
};

// Unweighted-over-clients mean of per-client mean losses (the recorded
// training objective deliberately weights clients equally even though
// aggregation weights them by volume).
inline double global_loss(const Model& m, const std::vector<datagen::ClientDataset>& clients) {
    if (clients.empty()) throw validation_error("global_loss: no clients");
    double total = 0.0;
    for (const auto& c : clients) total += dataset_loss(m, c);
    return total / static_cast<double>(clients.size());
}

// Synchronous FedAvg: every round each client refines the current global
// model locally, the server volume-averages the results, and the trace
// records the new global model's loss and held-out accuracy. Stops at the
// first round reaching the target accuracy.
inline TrainingTrace run_federated(const std::vector<datagen::ClientDataset>& clients,
                                   const datagen::ClientDataset& test,
                                   const TrainConfig& cfg,
                                   const ModelSpec& spec = {}) {
    cfg.validate();
    if (clients.empty()) throw validation_error("run_federated: no clients");
    std::vector<std::int64_t> counts;
    for (const auto& c : clients) counts.push_back(c.n());

    Model global = make_model(spec, clients[0].feature_dim, clients[0].num_classes, cfg.rng_seed);
    TrainingTrace trace;
    for (int round = 1; round <= cfg.max_rounds; ++round) {
        std::vector<Model> locals;
        locals.reserve(clients.size());
        for (std::size_t k = 0; k < clients.size(); ++k) {
            locals.push_back(local_sgd(global, clients[k], cfg,
                                       derive_seed(static_cast<std::uint64_t>(round), {static_cast<std::uint64_t>(k)})));
        }
        global = aggregate(locals, counts);
        RoundRecord rec{global_loss(global, clients), accuracy(global, test)};
        trace.rounds.push_back(rec);
        if (!trace.rounds_to_target && rec.accuracy >= cfg.target_accuracy) {
            trace.rounds_to_target = round;
            break;
        }
    }
    trace.final_accuracy = trace.rounds.empty() ? 0.0 : trace.rounds.back().accuracy;
    return trace;
}

// One heterogeneity level of the rounds-vs-EMD measurement.
struct ScenarioData {
    std::vector<datagen::ClientDataset> clients;
    datagen::ClientDataset test;
    double emd = 0.0;
};

struct RoundsPoint {
    double emd = 0.0;
    double rounds = 0.0; // mean over seeds that reached the target
    int censored = 0;    // seeds that ran out of rounds
    int seeds = 0;
};

// Seed-averaged rounds-to-target per heterogeneity level. Seeds are paired
// across levels so level-to-level comparisons share their randomness.
inline std::vector<RoundsPoint> measure_rounds_curve(const std::vector<ScenarioData>& scenarios,
                                                     const TrainConfig& cfg, int num_seeds) {
    if (scenarios.size() < 3) throw validation_error("measure_rounds_curve: need at least 3 levels");
    if (num_seeds < 1) throw validation_error("measure_rounds_curve: need at least one seed");
    std::vector<RoundsPoint> out;
    for (const auto& sc : scenarios) {
        RoundsPoint point;
        point.emd = sc.emd;
        point.seeds = num_seeds;
        double sum = 0.0;
        int reached = 0;
        for (int s = 0; s < num_seeds; ++s) {
            TrainConfig run = cfg;
            run.rng_seed = derive_seed(cfg.rng_seed, {23, static_cast<std::uint64_t>(s)});
            auto trace = run_federated(sc.clients, sc.test, run);
            if (trace.rounds_to_target) {
                sum += static_cast<double>(*trace.rounds_to_target);
                ++reached;
            } else {
                ++point.censored;
            }
        }
        point.rounds = reached > 0 ? sum / static_cast<double>(reached) : 0.0;
        out.push_back(point);
    }
    return out;
}

} // namespace fedshare::fedsim

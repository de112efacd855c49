#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "fedshare/distribution.hpp"
#include "fedshare/errors.hpp"
#include "fedshare/rng.hpp"
#include "fedshare/types.hpp"

namespace fedshare::datagen {

enum class SkewKind {
    single_class_fraction, // a fraction of clients hold exactly one class each
    dirichlet,             // per-client label distribution ~ Dir(alpha)
    feature_noise,         // identical data, per-client Gaussian feature noise
};

struct Scenario {
    int num_clients = 0;
    int num_classes = 0;
    int feature_dim = 32;
    std::vector<std::int64_t> samples_per_client; // size 1 broadcasts to all clients
    SkewKind kind = SkewKind::single_class_fraction;
    double fraction = 0.5;            // single_class_fraction only
    double alpha = 1.0;               // dirichlet only
    std::vector<double> noise_levels; // feature_noise only, size num_clients
    double test_fraction = 0.2;
    double blob_distance = 4.0;       // pairwise distance between class means
    double condition_number = 1.0;    // >1 squeezes features along rotated axes

    std::vector<std::int64_t> client_sizes() const {
        if (samples_per_client.size() == 1) {
            return std::vector<std::int64_t>(static_cast<std::size_t>(num_clients), samples_per_client[0]);
        }
        return samples_per_client;
    }

    void validate() const {
        if (num_clients < 1) throw validation_error("scenario: need at least one client");
        if (num_classes < 2) throw validation_error("scenario: need at least two classes");
        if (feature_dim < num_classes) {
            throw validation_error("scenario: feature_dim must be >= num_classes for axis-aligned class means");
        }
        if (samples_per_client.empty() ||
            (samples_per_client.size() != 1 &&
             samples_per_client.size() != static_cast<std::size_t>(num_clients))) {
            throw validation_error("scenario: samples_per_client must have size 1 or num_clients");
        }
        for (auto n : client_sizes()) {
            if (n <= 0) throw validation_error("scenario: non-positive client sample count");
        }
        if (test_fraction < 0.0 || test_fraction > 1.0) throw validation_error("scenario: test_fraction outside [0,1]");
        if (blob_distance <= 0.0) throw validation_error("scenario: blob_distance must be positive");
        if (condition_number < 1.0) throw validation_error("scenario: condition_number must be >= 1");
        switch (kind) {
            case SkewKind::single_class_fraction: {
                if (fraction < 0.0 || fraction > 1.0) throw validation_error("scenario: fraction outside [0,1]");
                if (single_class_count() > num_classes) {
                    throw validation_error("scenario: more single-class clients than classes; disjoint classes impossible");
                }
                break;
            }
            case SkewKind::dirichlet:
                if (!(alpha > 0.0)) throw validation_error("scenario: dirichlet alpha must be positive");
                break;
            case SkewKind::feature_noise:
                if (noise_levels.size() != static_cast<std::size_t>(num_clients)) {
                    throw validation_error("scenario: noise_levels must have size num_clients");
                }
                for (double s : noise_levels) {
                    if (s < 0.0 || !std::isfinite(s)) throw validation_error("scenario: bad noise level");
                }
                break;
        }
    }

    int single_class_count() const {
        return static_cast<int>(std::llround(fraction * num_clients));
    }
};

struct ClientDataset {
    int feature_dim = 0;
    int num_classes = 0;
    std::vector<float> features; // row-major n x feature_dim
    std::vector<std::uint16_t> labels;

    std::int64_t n() const { return static_cast<std::int64_t>(labels.size()); }

    const float* sample(std::int64_t i) const {
        return features.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(feature_dim);
    }

    std::vector<std::int64_t> label_counts() const {
        std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
        for (auto y : labels) {
            if (y >= static_cast<std::uint16_t>(num_classes)) throw validation_error("dataset: label out of range");
            ++counts[y];
        }
        return counts;
    }

    LabelDistribution label_distribution() const {
        auto counts = label_counts();
        return LabelDistribution::from_counts(counts);
    }
};

struct GeneratedData {
    std::vector<ClientDataset> clients;
    ClientDataset test;
    LabelDistribution global; // pooled empirical histogram of the training data

    std::vector<ClientStat> stats() const {
        std::vector<ClientStat> s;
        s.reserve(clients.size());
        for (const auto& c : clients) s.push_back({c.n(), c.label_distribution()});
        return s;
    }
};

namespace detail {

// Class means sit on axis y at radius blob_distance / sqrt(2), so every pair
// of means is exactly blob_distance apart.
inline void write_class_mean(float* x, int dim, int cls, double blob_distance) {
    std::fill(x, x + dim, 0.0f);
    x[cls] = static_cast<float>(blob_distance / std::sqrt(2.0));
}

inline void append_sample(ClientDataset& ds, int cls, double blob_distance, std::mt19937_64& rng) {
    std::normal_distribution<double> unit(0.0, 1.0);
    const int d = ds.feature_dim;
    std::size_t base = ds.features.size();
    ds.features.resize(base + static_cast<std::size_t>(d));
    write_class_mean(ds.features.data() + base, d, cls, blob_distance);
    for (int i = 0; i < d; ++i) ds.features[base + static_cast<std::size_t>(i)] += static_cast<float>(unit(rng));
    ds.labels.push_back(static_cast<std::uint16_t>(cls));
}

// Inverse-CDF categorical draw: platform-independent determinism.
inline int draw_class(const std::vector<double>& cumulative, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    double u = u01(rng);
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    int idx = static_cast<int>(it - cumulative.begin());
    return std::min(idx, static_cast<int>(cumulative.size()) - 1);
}

inline std::vector<double> cumulative_of(const LabelDistribution& p) {
    std::vector<double> cum(static_cast<std::size_t>(p.num_classes()));
    double acc = 0.0;
    for (int i = 0; i < p.num_classes(); ++i) {
        acc += p[i];
        cum[static_cast<std::size_t>(i)] = acc;
    }
    cum.back() = 1.0;
    return cum;
}

// Largest-remainder apportionment of `total` samples to `p`: deterministic,
// counts sum exactly to total.
inline std::vector<std::int64_t> quota_counts(const LabelDistribution& p, std::int64_t total) {
    const int y = p.num_classes();
    std::vector<std::int64_t> counts(static_cast<std::size_t>(y), 0);
    std::vector<std::pair<double, int>> rema;
    std::int64_t assigned = 0;
    for (int i = 0; i < y; ++i) {
        double exact = p[i] * static_cast<double>(total);
        counts[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(std::floor(exact));
        assigned += counts[static_cast<std::size_t>(i)];
        rema.push_back({exact - std::floor(exact), i});
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::int64_t j = 0; j < total - assigned; ++j) {
        ++counts[static_cast<std::size_t>(rema[static_cast<std::size_t>(j)].second)];
    }
    return counts;
}

// A = Q diag(s) Q^T with log-spaced singular values 1 .. 1/kappa and a
// seeded random rotation Q. The map is invertible, so the Bayes boundary of
// the blob mixture is untouched; only the optimization geometry gets harder.
inline std::vector<double> conditioning_matrix(int dim, double kappa, std::mt19937_64& rng) {
    const auto d = static_cast<std::size_t>(dim);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> q(d * d);

    // Gram-Schmidt on random Gaussian columns
    for (std::size_t c = 0; c < d; ++c) {
        while (true) {
            for (std::size_t r = 0; r < d; ++r) q[r * d + c] = gauss(rng);
            for (std::size_t p = 0; p < c; ++p) {
                double dot = 0.0;
                for (std::size_t r = 0; r < d; ++r) dot += q[r * d + p] * q[r * d + c];
                for (std::size_t r = 0; r < d; ++r) q[r * d + c] -= dot * q[r * d + p];
            }
            double norm = 0.0;
            for (std::size_t r = 0; r < d; ++r) norm += q[r * d + c] * q[r * d + c];
            norm = std::sqrt(norm);
            if (norm > 1e-8) {
                for (std::size_t r = 0; r < d; ++r) q[r * d + c] /= norm;
                break;
            }
        }
    }

    std::vector<double> scale(d);
    for (std::size_t j = 0; j < d; ++j) {
        const double t = d > 1 ? static_cast<double>(j) / static_cast<double>(d - 1) : 0.0;
        scale[j] = std::pow(kappa, -t);
    }
    std::vector<double> a(d * d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += q[r * d + j] * scale[j] * q[c * d + j];
            a[r * d + c] = acc;
        }
    }
    return a;
}

inline void apply_linear(ClientDataset& ds, const std::vector<double>& a) {
    const auto d = static_cast<std::size_t>(ds.feature_dim);
    std::vector<double> buf(d);
    for (std::int64_t i = 0; i < ds.n(); ++i) {
        float* x = ds.features.data() + static_cast<std::size_t>(i) * d;
        for (std::size_t r = 0; r < d; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) acc += a[r * d + c] * static_cast<double>(x[c]);
            buf[r] = acc;
        }
        for (std::size_t r = 0; r < d; ++r) x[r] = static_cast<float>(buf[r]);
    }
}

} // namespace detail

// Deterministic synthetic federation: per-class Gaussian blobs in
// feature_dim dimensions, labels skewed per the scenario mode, plus an IID
// test pool drawn from the pooled training distribution.
inline GeneratedData generate(const Scenario& sc, std::uint64_t seed) {
    sc.validate();
    const auto sizes = sc.client_sizes();
    const int k_count = sc.num_clients;
    const int y_count = sc.num_classes;

    std::vector<ClientDataset> clients(static_cast<std::size_t>(k_count));
    for (auto& c : clients) {
        c.feature_dim = sc.feature_dim;
        c.num_classes = y_count;
    }

    switch (sc.kind) {
        case SkewKind::single_class_fraction: {
            const int solo = sc.single_class_count();
            for (int k = 0; k < k_count; ++k) {
                auto rng = make_rng(seed, {1, static_cast<std::uint64_t>(k)});
                auto& ds = clients[static_cast<std::size_t>(k)];
                ds.features.reserve(static_cast<std::size_t>(sizes[static_cast<std::size_t>(k)]) *
                                    static_cast<std::size_t>(sc.feature_dim));
                for (std::int64_t i = 0; i < sizes[static_cast<std::size_t>(k)]; ++i) {
                    int cls = k < solo ? k : static_cast<int>(i % y_count);
                    detail::append_sample(ds, cls, sc.blob_distance, rng);
                }
            }
            break;
        }
        case SkewKind::dirichlet: {
            for (int k = 0; k < k_count; ++k) {
                auto rng = make_rng(seed, {2, static_cast<std::uint64_t>(k)});
                std::gamma_distribution<double> gamma(sc.alpha, 1.0);
                std::vector<double> p(static_cast<std::size_t>(y_count));
                double sum = 0.0;
                for (auto& v : p) {
                    v = std::max(gamma(rng), 1e-300);
                    sum += v;
                }
                for (auto& v : p) v /= sum;
                double head = 0.0;
                for (std::size_t i = 0; i + 1 < p.size(); ++i) head += p[i];
                p.back() = std::max(0.0, 1.0 - head);
                auto cum = detail::cumulative_of(LabelDistribution(p));
                auto& ds = clients[static_cast<std::size_t>(k)];
                for (std::int64_t i = 0; i < sizes[static_cast<std::size_t>(k)]; ++i) {
                    detail::append_sample(ds, detail::draw_class(cum, rng), sc.blob_distance, rng);
                }
            }
            break;
        }
        case SkewKind::feature_noise: {
            // Every client takes a prefix of the same base pool, so zero noise
            // means byte-identical data; the noise level is the only skew.
            const std::int64_t n_max = *std::max_element(sizes.begin(), sizes.end());
            ClientDataset base;
            base.feature_dim = sc.feature_dim;
            base.num_classes = y_count;
            {
                auto rng = make_rng(seed, {3});
                for (std::int64_t i = 0; i < n_max; ++i) {
                    detail::append_sample(base, static_cast<int>(i % y_count), sc.blob_distance, rng);
                }
            }
            for (int k = 0; k < k_count; ++k) {
                auto& ds = clients[static_cast<std::size_t>(k)];
                const std::int64_t nk = sizes[static_cast<std::size_t>(k)];
                ds.features.assign(base.features.begin(),
                                   base.features.begin() + static_cast<std::ptrdiff_t>(nk) * sc.feature_dim);
                ds.labels.assign(base.labels.begin(), base.labels.begin() + static_cast<std::ptrdiff_t>(nk));
                const double s = sc.noise_levels[static_cast<std::size_t>(k)];
                if (s > 0.0) {
                    auto rng = make_rng(seed, {4, static_cast<std::uint64_t>(k)});
                    std::normal_distribution<double> unit(0.0, 1.0);
                    for (auto& f : ds.features) f += static_cast<float>(s * unit(rng));
                }
            }
            break;
        }
    }

    // Pooled histogram over the training data.
    std::vector<std::int64_t> pooled(static_cast<std::size_t>(y_count), 0);
    std::int64_t total = 0;
    for (const auto& c : clients) {
        auto counts = c.label_counts();
        for (int i = 0; i < y_count; ++i) pooled[static_cast<std::size_t>(i)] += counts[static_cast<std::size_t>(i)];
        total += c.n();
    }
    LabelDistribution global = LabelDistribution::from_counts(pooled);

    // IID test pool: label counts apportioned to the global histogram.
    ClientDataset test;
    test.feature_dim = sc.feature_dim;
    test.num_classes = y_count;
    const std::int64_t n_test = static_cast<std::int64_t>(std::llround(sc.test_fraction * static_cast<double>(total)));
    if (n_test > 0) {
        auto rng = make_rng(seed, {5});
        auto counts = detail::quota_counts(global, n_test);
        for (int cls = 0; cls < y_count; ++cls) {
            for (std::int64_t i = 0; i < counts[static_cast<std::size_t>(cls)]; ++i) {
                detail::append_sample(test, cls, sc.blob_distance, rng);
            }
        }
    }

    // One shared squeeze across clients and test data keeps the federation
    // consistent while making gradient descent work for its accuracy.
    if (sc.condition_number > 1.0) {
        auto rng = make_rng(seed, {7});
        const auto a = detail::conditioning_matrix(sc.feature_dim, sc.condition_number, rng);
        for (auto& c : clients) detail::apply_linear(c, a);
        detail::apply_linear(test, a);
    }

    return {std::move(clients), std::move(test), std::move(global)};
}

// Execute a sharing plan on actual data: for each head, draw the planned
// number of samples without replacement and append the same subset to every
// member of that head's cluster.
inline std::vector<ClientDataset> apply_sharing(const std::vector<ClientDataset>& clients,
                                                const ClusterAssignment& assignment,
                                                const SharingPlan& plan,
                                                std::uint64_t seed) {
    assignment.validate(static_cast<int>(clients.size()));
    for (const auto& [h, v] : plan.volumes) {
        if (!assignment.is_head(h)) throw validation_error("apply_sharing: volume for unknown head " + std::to_string(h));
        if (v < 0 || v > clients[static_cast<std::size_t>(h)].n()) {
            throw validation_error("apply_sharing: volume for head " + std::to_string(h) + " outside [0, n_m]");
        }
    }

    std::vector<ClientDataset> out = clients;
    for (int h : assignment.heads) {
        const std::int64_t v = plan.volume_of(h);
        if (v == 0) continue;
        const auto& head = clients[static_cast<std::size_t>(h)];
        const auto& members = assignment.members_of(h);
        if (members.empty()) continue;

        // partial Fisher-Yates: first v entries are a uniform subset
        std::vector<std::int64_t> idx(static_cast<std::size_t>(head.n()));
        std::iota(idx.begin(), idx.end(), 0);
        auto rng = make_rng(seed, {6, static_cast<std::uint64_t>(h)});
        for (std::int64_t i = 0; i < v; ++i) {
            std::uniform_int_distribution<std::int64_t> pick(i, head.n() - 1);
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
        }

        for (int c : members) {
            auto& ds = out[static_cast<std::size_t>(c)];
            for (std::int64_t i = 0; i < v; ++i) {
                const std::int64_t s = idx[static_cast<std::size_t>(i)];
                const float* x = head.sample(s);
                ds.features.insert(ds.features.end(), x, x + head.feature_dim);
                ds.labels.push_back(head.labels[static_cast<std::size_t>(s)]);
            }
        }
    }
    return out;
}

// --- binary dump: header u32 d, u32 n, u32 Y; then f32 features, u16 labels ---

inline void write_client_bin(const std::string& path, const ClientDataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw validation_error("datagen: cannot open for writing: " + path);
    std::uint32_t header[3] = {static_cast<std::uint32_t>(ds.feature_dim),
                               static_cast<std::uint32_t>(ds.n()),
                               static_cast<std::uint32_t>(ds.num_classes)};
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    out.write(reinterpret_cast<const char*>(ds.features.data()),
              static_cast<std::streamsize>(ds.features.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(ds.labels.data()),
              static_cast<std::streamsize>(ds.labels.size() * sizeof(std::uint16_t)));
    if (!out) throw validation_error("datagen: short write: " + path);
}

inline ClientDataset read_client_bin(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw validation_error("datagen: cannot open for reading: " + path);
    std::uint32_t header[3];
    in.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!in) throw validation_error("datagen: truncated header: " + path);
    ClientDataset ds;
    ds.feature_dim = static_cast<int>(header[0]);
    ds.num_classes = static_cast<int>(header[2]);
    const std::uint32_t n = header[1];
    if (ds.feature_dim <= 0 || ds.num_classes < 2) throw validation_error("datagen: bad header: " + path);
    ds.features.resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(ds.feature_dim));
    ds.labels.resize(n);
    in.read(reinterpret_cast<char*>(ds.features.data()),
            static_cast<std::streamsize>(ds.features.size() * sizeof(float)));
    in.read(reinterpret_cast<char*>(ds.labels.data()),
            static_cast<std::streamsize>(ds.labels.size() * sizeof(std::uint16_t)));
    if (!in) throw validation_error("datagen: truncated body: " + path);
    for (auto y : ds.labels) {
        if (y >= static_cast<std::uint16_t>(ds.num_classes)) throw validation_error("datagen: label out of range: " + path);
    }
    return ds;
}

// --- IDX (big-endian) loaders for externally supplied image/label files ---

namespace detail {
inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw validation_error("idx: truncated file: " + path);
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}
} // namespace detail

// Returns flattened images scaled to [0,1] plus (count, rows*cols).
inline std::pair<std::vector<float>, std::pair<int, int>> load_idx_images(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw validation_error("idx: cannot open: " + path);
    if (detail::read_be32(in, path) != 0x00000803u) throw validation_error("idx: bad image magic: " + path);
    const int n = static_cast<int>(detail::read_be32(in, path));
    const int rows = static_cast<int>(detail::read_be32(in, path));
    const int cols = static_cast<int>(detail::read_be32(in, path));
    std::vector<unsigned char> raw(static_cast<std::size_t>(n) * rows * cols);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw validation_error("idx: truncated pixels: " + path);
    std::vector<float> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = static_cast<float>(raw[i]) / 255.0f;
    return {std::move(out), {n, rows * cols}};
}

inline std::vector<std::uint16_t> load_idx_labels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw validation_error("idx: cannot open: " + path);
    if (detail::read_be32(in, path) != 0x00000801u) throw validation_error("idx: bad label magic: " + path);
    const int n = static_cast<int>(detail::read_be32(in, path));
    std::vector<unsigned char> raw(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw validation_error("idx: truncated labels: " + path);
    return std::vector<std::uint16_t>(raw.begin(), raw.end());
}

// Feature-skew scenarios reuse the label-EMD machinery: bin a scalar sample
// statistic (the l2 norm) into `bins` pseudo-classes over the pooled range.
inline std::vector<LabelDistribution> feature_statistic_distributions(const std::vector<ClientDataset>& clients,
                                                                      int bins) {
    if (bins < 2) throw validation_error("feature_statistic_distributions: need at least two bins");
    if (clients.empty()) throw validation_error("feature_statistic_distributions: no clients");
    std::vector<std::vector<double>> stats(clients.size());
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < clients.size(); ++k) {
        const auto& ds = clients[k];
        if (ds.n() == 0) throw validation_error("feature_statistic_distributions: empty client");
        stats[k].reserve(static_cast<std::size_t>(ds.n()));
        for (std::int64_t i = 0; i < ds.n(); ++i) {
            const float* x = ds.sample(i);
            double sq = 0.0;
            for (int j = 0; j < ds.feature_dim; ++j) sq += static_cast<double>(x[j]) * x[j];
            double s = std::sqrt(sq);
            stats[k].push_back(s);
            lo = std::min(lo, s);
            hi = std::max(hi, s);
        }
    }
    const double width = hi - lo;
    std::vector<LabelDistribution> out;
    out.reserve(clients.size());
    for (auto& vals : stats) {
        std::vector<std::int64_t> counts(static_cast<std::size_t>(bins), 0);
        for (double s : vals) {
            int b = width <= 0.0 ? 0
                                 : std::min(bins - 1, static_cast<int>((s - lo) / width * bins));
            ++counts[static_cast<std::size_t>(b)];
        }
        out.push_back(LabelDistribution::from_counts(counts));
    }
    return out;
}

} // namespace fedshare::datagen

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedshare/errors.hpp"

namespace fedshare {

// A label histogram normalized to probabilities. Entries in [0,1], sum 1
// within 1e-9. Also reused for pseudo-labels from binned feature statistics.
class LabelDistribution {
public:
    explicit LabelDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
        if (probs_.empty()) throw validation_error("distribution: empty");
        double sum = 0.0;
        for (double p : probs_) {
            if (!std::isfinite(p)) throw validation_error("distribution: non-finite entry");
            if (p < -1e-12 || p > 1.0 + 1e-9) {
                throw validation_error("distribution: entry outside [0,1]: " + std::to_string(p));
            }
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw validation_error("distribution: entries sum to " + std::to_string(sum) + ", expected 1");
        }
    }

    static LabelDistribution uniform(int classes) {
        if (classes < 1) throw validation_error("distribution: need at least one class");
        return LabelDistribution(std::vector<double>(classes, 1.0 / classes));
    }

    static LabelDistribution one_hot(int classes, int cls) {
        if (cls < 0 || cls >= classes) throw validation_error("distribution: one_hot class out of range");
        std::vector<double> p(classes, 0.0);
        p[cls] = 1.0;
        return LabelDistribution(std::move(p));
    }

    static LabelDistribution from_counts(std::span<const std::int64_t> counts) {
        std::int64_t total = 0;
        for (auto c : counts) {
            if (c < 0) throw validation_error("distribution: negative count");
            total += c;
        }
        if (total == 0) throw validation_error("distribution: all counts zero");
        std::vector<double> p(counts.size());
        for (std::size_t i = 0; i < counts.size(); ++i) p[i] = static_cast<double>(counts[i]) / total;
        return LabelDistribution(std::move(p));
    }

    int num_classes() const { return static_cast<int>(probs_.size()); }
    double operator[](int i) const { return probs_[static_cast<std::size_t>(i)]; }
    const std::vector<double>& probs() const { return probs_; }

    bool operator==(const LabelDistribution& other) const { return probs_ == other.probs_; }

private:
    std::vector<double> probs_;
};

} // namespace fedshare

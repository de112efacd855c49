#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedshare/csv.hpp"
#include "fedshare/datagen.hpp"
#include "fedshare/errors.hpp"
#include "fedshare/fedsim.hpp"
#include "fedshare/jfvo.hpp"
#include "fedshare/rng.hpp"
#include "fedshare/wireless.hpp"

// Run configuration: one JSON file describes a whole experiment. Schema
// (every key optional unless noted; unknown keys are rejected):
//
// {
//   "seed": 1,                      // global seed; all stage streams derive from it
//   "output_dir": "runs/default",
//   "scenario": {                   // synthetic federation, see datagen::Scenario
//     "num_clients": 4, "num_classes": 4, "feature_dim": 8,
//     "samples_per_client": [100],  // size 1 broadcasts
//     "kind": "single_class_fraction" | "dirichlet" | "feature_noise",
//     "fraction": 0.75, "alpha": 1.0, "noise_levels": [],
//     "test_fraction": 0.5, "blob_distance": 3.6, "condition_number": 10.0
//   },
//   "radio": {                      // linear SI units except the noise density
//     "noise_density_dbm_hz": -174.0,
//     "sidelink_bandwidth": 1e9, "downlink_bandwidth": 2e7,
//     "uplink_bandwidth": 1e6,      // per subcarrier
//     "num_subcarriers": 10, "bs_power": 1.0, "ue_power": 0.01,
//     "multicast_interference": 0.0, "downlink_interference": 0.0,
//     "uplink_interference": 0.0
//   },
//   "sidelink": {                   // device-to-device channel
//     "tx_power": 0.01, "tx_gain": 1.0, "rx_gain": 1.0,
//     "states": [ { "probability": 1.0, "coefficient": 1.3757e6,
//                   "exponent": 2.0, "shadow": 1.0, "small_scale": 1.0 } ]
//   },
//   "fading": {                     // base-station links
//     "kind": "deterministic" | "rayleigh",
//     "scale": 1.0, "num_draws": 10000, "min_gain_fraction": 0.02
//   },
//   "compute": {                    // local-training cost model; the epoch
//     "cycles_per_sample": 2.5e5,   // count comes from train.local_epochs
//     "energy_coeff": 4e-26, "frequency": 1.2e9, "max_frequency": 1.2e9
//   },
//   "placement": {                  // client geometry for the sidelink graph
//     "kind": "disc" | "matrix" | "file",
//     "area_radius": 150.0,         // disc: uniform positions, distances >= 1 m
//     "matrix": [[...]], "file": "distances.csv"
//   },
//   "closeness": {                  // social trust in [0,1]
//     "kind": "full" | "random" | "matrix" | "file",
//     "value": 1.0,                 // full: every pair gets this weight
//     "matrix": [[...]], "file": "closeness.csv"
//   },
//   "thresholds": {
//     "e_th": 0.5,                  // minimum closeness for an edge
//     "v_th": 1e6,                  // minimum sidelink rate; "inf" disables sharing
//     "theta_th": 0.9,              // target test accuracy
//     "gamma_th": 0.005             // per-round energy budget, J
//   },
//   "train": {
//     "learning_rate": 0.3, "local_epochs": 8, "batch_size": 32,
//     "max_rounds": 400, "l2_reg": 0.0,
//     "seeds": 3                    // training repetitions averaged in summaries
//   },
//   "ssca": { "inner_iters": 20, "outer_iters": 20,
//             "lipschitz": 0.0, "beta_noise": 1.0 },
//   "calibration": {                // rounds-law measurement on the same family
//     "levels": 4, "seeds": 3,
//     "max_rounds": 0               // 0 falls back to train.max_rounds
//   },
//   "theory": {                     // convergence-check knobs
//     "probes": 1000, "weight_scale": 1.0, "l2_reg": 0.01, "batch_size": 1,
//     "recorded_seeds": 5, "recorded_rounds": 8, "inflation": 2.0
//   },
//   "sweep": {                      // defaults for the sweep command
//     "axis": "", "values": [], "share_fraction": 0.1, "seeds": 3
//   },
//   "bits_per_sample": 6272.0,      // multicast payload per shared sample
//   "model_bits": 0.0               // uplink/downlink payload; 0 derives
// }                                 // 32 bits per logistic parameter
//
// "matrix" entries are dense symmetric K x K; "file" points at a headerless
// CSV of the same shape, resolved relative to the config file.
namespace fedshare::config {

struct Thresholds {
    double e_th = 0.5;
    double v_th = 1e6;
    double theta_th = 0.9;
    double gamma_th = 0.005;

    void validate() const {
        if (e_th < 0.0 || e_th > 1.0) throw validation_error("thresholds: e_th outside [0,1]");
        if (v_th < 0.0) throw validation_error("thresholds: negative v_th");
        if (theta_th <= 0.0 || theta_th > 1.0) throw validation_error("thresholds: theta_th outside (0,1]");
        if (!(gamma_th > 0.0)) throw validation_error("thresholds: gamma_th must be positive");
    }
};

struct PlacementSpec {
    std::string kind = "disc";
    double area_radius = 150.0;
    std::vector<std::vector<double>> matrix;
    std::string file;

    void validate() const {
        if (kind != "disc" && kind != "matrix" && kind != "file") {
            throw validation_error("placement: kind must be disc, matrix or file");
        }
        if (kind == "disc" && !(area_radius > 0.0)) {
            throw validation_error("placement: area_radius must be positive");
        }
        if (kind == "file" && file.empty()) throw validation_error("placement: file kind needs a path");
    }
};

struct ClosenessSpec {
    std::string kind = "full";
    double value = 1.0;
    std::vector<std::vector<double>> matrix;
    std::string file;

    void validate() const {
        if (kind != "full" && kind != "random" && kind != "matrix" && kind != "file") {
            throw validation_error("closeness: kind must be full, random, matrix or file");
        }
        if (kind == "full" && (value < 0.0 || value > 1.0)) {
            throw validation_error("closeness: value outside [0,1]");
        }
        if (kind == "file" && file.empty()) throw validation_error("closeness: file kind needs a path");
    }
};

struct CalibrationSpec {
    int levels = 4;
    int seeds = 3;
    int max_rounds = 0; // 0 -> train.max_rounds

    void validate() const {
        if (levels < 4) throw validation_error("calibration: need at least 4 heterogeneity levels");
        if (seeds < 3) throw validation_error("calibration: need at least 3 seeds");
        if (max_rounds < 0) throw validation_error("calibration: negative max_rounds");
    }
};

struct TheorySpec {
    int probes = 1000;
    double weight_scale = 1.0;
    double l2_reg = 0.01;
    int batch_size = 1;
    int recorded_seeds = 5;
    int recorded_rounds = 8;
    double inflation = 2.0;

    void validate() const {
        if (probes < 1) throw validation_error("theory: need at least one probe");
        if (!(weight_scale > 0.0)) throw validation_error("theory: weight_scale must be positive");
        if (l2_reg < 0.0) throw validation_error("theory: negative l2_reg");
        if (batch_size < 1) throw validation_error("theory: batch_size must be positive");
        if (recorded_seeds < 1) throw validation_error("theory: need at least one recorded seed");
        if (recorded_rounds < 1) throw validation_error("theory: need at least one recorded round");
        if (inflation < 1.0) throw validation_error("theory: inflation factor below 1");
    }
};

struct SweepSpec {
    std::string axis; // emd_level, shared_fraction or num_clusters
    std::vector<double> values;
    double share_fraction = 0.1; // shared volume per head for cluster-shaped axes
    int seeds = 3;

    void validate() const {
        if (axis != "emd_level" && axis != "shared_fraction" && axis != "num_clusters") {
            throw validation_error("sweep: axis must be emd_level, shared_fraction or num_clusters");
        }
        if (values.empty()) throw validation_error("sweep: no axis values");
        if (share_fraction < 0.0 || share_fraction > 1.0) {
            throw validation_error("sweep: share_fraction outside [0,1]");
        }
        if (seeds < 1) throw validation_error("sweep: need at least one seed");
    }
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string output_dir = "runs/default";
    datagen::Scenario scenario;
    wireless::RadioParams radio;
    wireless::SidelinkModel sidelink;
    wireless::FadingModel fading;
    wireless::ComputeParams compute;
    PlacementSpec placement;
    ClosenessSpec closeness;
    Thresholds thresholds;
    fedsim::TrainConfig train;
    int train_seeds = 3;
    jfvo::SscaSchedule ssca;
    CalibrationSpec calibration;
    TheorySpec theory;
    SweepSpec sweep;
    double bits_per_sample = 6272.0;
    double model_bits = 0.0;

    // Uplink/downlink payload: the explicit override, else one 32-bit word
    // per parameter of the scenario's logistic model.
    double payload_bits() const {
        if (model_bits > 0.0) return model_bits;
        return 32.0 * static_cast<double>(
                          fedsim::parameter_count({}, scenario.feature_dim, scenario.num_classes));
    }

    int calibration_rounds() const {
        return calibration.max_rounds > 0 ? calibration.max_rounds : train.max_rounds;
    }

    void validate() const {
        scenario.validate();
        radio.validate();
        fading.validate();
        compute.validate();
        placement.validate();
        closeness.validate();
        thresholds.validate();
        train.validate();
        if (train_seeds < 1) throw validation_error("train: need at least one seed");
        ssca.validate();
        calibration.validate();
        theory.validate();
        // sweep is validated on use; an empty axis just means "flags required"
        if (bits_per_sample <= 0.0) throw validation_error("config: bits_per_sample must be positive");
        if (model_bits < 0.0) throw validation_error("config: negative model_bits");
        if (compute.local_epochs != train.local_epochs) {
            throw validation_error("config: compute epochs out of sync with train.local_epochs");
        }
        if (output_dir.empty()) throw validation_error("config: empty output_dir");
        const int size = static_cast<int>(placement.matrix.size());
        if (placement.kind == "matrix" && size != scenario.num_clients) {
            throw dimension_error("placement: matrix size does not match num_clients");
        }
        if (closeness.kind == "matrix" &&
            static_cast<int>(closeness.matrix.size()) != scenario.num_clients) {
            throw dimension_error("closeness: matrix size does not match num_clients");
        }
    }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                       const std::string& section) {
    if (!j.is_object()) throw validation_error("config: " + section + " must be an object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        bool known = false;
        for (const auto& a : allowed) {
            if (key == a) {
                known = true;
                break;
            }
        }
        if (!known) throw validation_error("config: unknown key '" + key + "' in " + section);
    }
}

inline double number_at(const nlohmann::json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number()) throw validation_error(std::string("config: ") + key + " must be a number");
    return j.at(key).get<double>();
}

inline int int_at(const nlohmann::json& j, const char* key, int fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number_integer()) {
        throw validation_error(std::string("config: ") + key + " must be an integer");
    }
    return j.at(key).get<int>();
}

inline std::string string_at(const nlohmann::json& j, const char* key, const std::string& fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_string()) throw validation_error(std::string("config: ") + key + " must be a string");
    return j.at(key).get<std::string>();
}

// v_th may be the string "inf": an infinite rate floor switches sharing off.
inline double rate_floor_at(const nlohmann::json& j, const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (v.is_string()) {
        if (v.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
        throw validation_error(std::string("config: ") + key + " accepts numbers or \"inf\"");
    }
    if (!v.is_number()) throw validation_error(std::string("config: ") + key + " must be a number");
    return v.get<double>();
}

inline std::vector<std::vector<double>> matrix_of(const nlohmann::json& j, const std::string& section) {
    if (!j.is_array()) throw validation_error("config: " + section + " matrix must be an array of rows");
    std::vector<std::vector<double>> out;
    for (const auto& row : j) {
        if (!row.is_array()) throw validation_error("config: " + section + " matrix rows must be arrays");
        std::vector<double> r;
        for (const auto& cell : row) {
            if (!cell.is_number()) throw validation_error("config: " + section + " matrix entries must be numbers");
            r.push_back(cell.get<double>());
        }
        out.push_back(std::move(r));
    }
    return out;
}

inline std::vector<std::vector<double>> matrix_from_csv(const std::string& path, const std::string& section) {
    if (!std::filesystem::exists(path)) {
        throw validation_error("config: " + section + " file does not exist: " + path);
    }
    auto rows = csv::read_rows(path);
    std::vector<std::vector<double>> out;
    for (const auto& row : rows) {
        std::vector<double> r;
        for (const auto& cell : row) r.push_back(csv::parse_double(cell));
        out.push_back(std::move(r));
    }
    return out;
}

inline double dbm_per_hz_to_w_per_hz(double dbm) {
    return std::pow(10.0, dbm / 10.0) * 1e-3;
}

inline double w_per_hz_to_dbm_per_hz(double w) {
    return 10.0 * std::log10(w * 1e3);
}

} // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j, const std::string& base_dir = ".") {
    detail::check_keys(j, {"seed", "output_dir", "scenario", "radio", "sidelink", "fading", "compute",
                           "placement", "closeness", "thresholds", "train", "ssca", "calibration",
                           "theory", "sweep", "bits_per_sample", "model_bits"},
                       "top level");
    RunConfig cfg;
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer()) {
            throw validation_error("config: seed must be a non-negative integer");
        }
        cfg.seed = j.at("seed").get<std::uint64_t>();
    }
    cfg.output_dir = detail::string_at(j, "output_dir", cfg.output_dir);
    cfg.bits_per_sample = detail::number_at(j, "bits_per_sample", cfg.bits_per_sample);
    cfg.model_bits = detail::number_at(j, "model_bits", cfg.model_bits);

    if (j.contains("scenario")) {
        const auto& s = j.at("scenario");
        detail::check_keys(s, {"num_clients", "num_classes", "feature_dim", "samples_per_client", "kind",
                               "fraction", "alpha", "noise_levels", "test_fraction", "blob_distance",
                               "condition_number"},
                           "scenario");
        auto& sc = cfg.scenario;
        sc.num_clients = detail::int_at(s, "num_clients", sc.num_clients);
        sc.num_classes = detail::int_at(s, "num_classes", sc.num_classes);
        sc.feature_dim = detail::int_at(s, "feature_dim", sc.feature_dim);
        if (s.contains("samples_per_client")) {
            sc.samples_per_client.clear();
            for (const auto& v : s.at("samples_per_client")) {
                sc.samples_per_client.push_back(v.get<std::int64_t>());
            }
        }
        const std::string kind = detail::string_at(s, "kind", "single_class_fraction");
        if (kind == "single_class_fraction") {
            sc.kind = datagen::SkewKind::single_class_fraction;
        } else if (kind == "dirichlet") {
            sc.kind = datagen::SkewKind::dirichlet;
        } else if (kind == "feature_noise") {
            sc.kind = datagen::SkewKind::feature_noise;
        } else {
            throw validation_error("config: unknown scenario kind '" + kind + "'");
        }
        sc.fraction = detail::number_at(s, "fraction", sc.fraction);
        sc.alpha = detail::number_at(s, "alpha", sc.alpha);
        if (s.contains("noise_levels")) {
            sc.noise_levels.clear();
            for (const auto& v : s.at("noise_levels")) sc.noise_levels.push_back(v.get<double>());
        }
        sc.test_fraction = detail::number_at(s, "test_fraction", sc.test_fraction);
        sc.blob_distance = detail::number_at(s, "blob_distance", sc.blob_distance);
        sc.condition_number = detail::number_at(s, "condition_number", sc.condition_number);
    }

    if (j.contains("radio")) {
        const auto& r = j.at("radio");
        detail::check_keys(r, {"noise_density_dbm_hz", "sidelink_bandwidth", "downlink_bandwidth",
                               "uplink_bandwidth", "num_subcarriers", "bs_power", "ue_power",
                               "multicast_interference", "downlink_interference", "uplink_interference"},
                           "radio");
        auto& rad = cfg.radio;
        if (r.contains("noise_density_dbm_hz")) {
            rad.noise_density = detail::dbm_per_hz_to_w_per_hz(r.at("noise_density_dbm_hz").get<double>());
        }
        rad.sidelink_bandwidth = detail::number_at(r, "sidelink_bandwidth", rad.sidelink_bandwidth);
        rad.downlink_bandwidth = detail::number_at(r, "downlink_bandwidth", rad.downlink_bandwidth);
        rad.uplink_bandwidth = detail::number_at(r, "uplink_bandwidth", rad.uplink_bandwidth);
        rad.num_subcarriers = detail::int_at(r, "num_subcarriers", rad.num_subcarriers);
        rad.bs_power = detail::number_at(r, "bs_power", rad.bs_power);
        rad.ue_power = detail::number_at(r, "ue_power", rad.ue_power);
        rad.multicast_interference = detail::number_at(r, "multicast_interference", rad.multicast_interference);
        rad.downlink_interference = detail::number_at(r, "downlink_interference", rad.downlink_interference);
        rad.uplink_interference = detail::number_at(r, "uplink_interference", rad.uplink_interference);
    }

    if (j.contains("sidelink")) {
        const auto& s = j.at("sidelink");
        detail::check_keys(s, {"tx_power", "tx_gain", "rx_gain", "states"}, "sidelink");
        auto& sl = cfg.sidelink;
        sl.tx_power = detail::number_at(s, "tx_power", sl.tx_power);
        sl.tx_gain = detail::number_at(s, "tx_gain", sl.tx_gain);
        sl.rx_gain = detail::number_at(s, "rx_gain", sl.rx_gain);
        if (s.contains("states")) {
            sl.states.clear();
            for (const auto& st : s.at("states")) {
                detail::check_keys(st, {"probability", "coefficient", "exponent", "shadow", "small_scale"},
                                   "sidelink state");
                wireless::PathLossState p;
                p.probability = detail::number_at(st, "probability", p.probability);
                p.coefficient = detail::number_at(st, "coefficient", p.coefficient);
                p.exponent = detail::number_at(st, "exponent", p.exponent);
                p.shadow = detail::number_at(st, "shadow", p.shadow);
                p.small_scale = detail::number_at(st, "small_scale", p.small_scale);
                sl.states.push_back(p);
            }
        }
    }

    if (j.contains("fading")) {
        const auto& f = j.at("fading");
        detail::check_keys(f, {"kind", "scale", "num_draws", "min_gain_fraction"}, "fading");
        const std::string kind = detail::string_at(f, "kind", "deterministic");
        if (kind == "deterministic") {
            cfg.fading.kind = wireless::FadingModel::Kind::deterministic;
        } else if (kind == "rayleigh") {
            cfg.fading.kind = wireless::FadingModel::Kind::rayleigh;
        } else {
            throw validation_error("config: unknown fading kind '" + kind + "'");
        }
        cfg.fading.scale = detail::number_at(f, "scale", cfg.fading.scale);
        cfg.fading.num_draws = detail::int_at(f, "num_draws", cfg.fading.num_draws);
        cfg.fading.min_gain_fraction = detail::number_at(f, "min_gain_fraction", cfg.fading.min_gain_fraction);
    }

    if (j.contains("compute")) {
        const auto& c = j.at("compute");
        detail::check_keys(c, {"cycles_per_sample", "energy_coeff", "frequency", "max_frequency"}, "compute");
        cfg.compute.cycles_per_sample = detail::number_at(c, "cycles_per_sample", cfg.compute.cycles_per_sample);
        cfg.compute.energy_coeff = detail::number_at(c, "energy_coeff", cfg.compute.energy_coeff);
        cfg.compute.frequency = detail::number_at(c, "frequency", cfg.compute.frequency);
        cfg.compute.max_frequency = detail::number_at(c, "max_frequency", cfg.compute.max_frequency);
    }

    if (j.contains("placement")) {
        const auto& p = j.at("placement");
        detail::check_keys(p, {"kind", "area_radius", "matrix", "file"}, "placement");
        cfg.placement.kind = detail::string_at(p, "kind", cfg.placement.kind);
        cfg.placement.area_radius = detail::number_at(p, "area_radius", cfg.placement.area_radius);
        if (p.contains("matrix")) cfg.placement.matrix = detail::matrix_of(p.at("matrix"), "placement");
        cfg.placement.file = detail::string_at(p, "file", cfg.placement.file);
    }

    if (j.contains("closeness")) {
        const auto& c = j.at("closeness");
        detail::check_keys(c, {"kind", "value", "matrix", "file"}, "closeness");
        cfg.closeness.kind = detail::string_at(c, "kind", cfg.closeness.kind);
        cfg.closeness.value = detail::number_at(c, "value", cfg.closeness.value);
        if (c.contains("matrix")) cfg.closeness.matrix = detail::matrix_of(c.at("matrix"), "closeness");
        cfg.closeness.file = detail::string_at(c, "file", cfg.closeness.file);
    }

    if (j.contains("thresholds")) {
        const auto& t = j.at("thresholds");
        detail::check_keys(t, {"e_th", "v_th", "theta_th", "gamma_th"}, "thresholds");
        cfg.thresholds.e_th = detail::number_at(t, "e_th", cfg.thresholds.e_th);
        cfg.thresholds.v_th = detail::rate_floor_at(t, "v_th", cfg.thresholds.v_th);
        cfg.thresholds.theta_th = detail::number_at(t, "theta_th", cfg.thresholds.theta_th);
        cfg.thresholds.gamma_th = detail::number_at(t, "gamma_th", cfg.thresholds.gamma_th);
    }

    if (j.contains("train")) {
        const auto& t = j.at("train");
        detail::check_keys(t, {"learning_rate", "local_epochs", "batch_size", "max_rounds", "l2_reg", "seeds"},
                           "train");
        cfg.train.learning_rate = detail::number_at(t, "learning_rate", cfg.train.learning_rate);
        cfg.train.local_epochs = detail::int_at(t, "local_epochs", cfg.train.local_epochs);
        cfg.train.batch_size = detail::int_at(t, "batch_size", cfg.train.batch_size);
        cfg.train.max_rounds = detail::int_at(t, "max_rounds", cfg.train.max_rounds);
        cfg.train.l2_reg = detail::number_at(t, "l2_reg", cfg.train.l2_reg);
        cfg.train_seeds = detail::int_at(t, "seeds", cfg.train_seeds);
    }

    if (j.contains("ssca")) {
        const auto& s = j.at("ssca");
        detail::check_keys(s, {"inner_iters", "outer_iters", "lipschitz", "beta_noise"}, "ssca");
        cfg.ssca.inner_iters = detail::int_at(s, "inner_iters", cfg.ssca.inner_iters);
        cfg.ssca.outer_iters = detail::int_at(s, "outer_iters", cfg.ssca.outer_iters);
        cfg.ssca.lipschitz = detail::number_at(s, "lipschitz", cfg.ssca.lipschitz);
        cfg.ssca.beta_noise = detail::number_at(s, "beta_noise", cfg.ssca.beta_noise);
    }

    if (j.contains("calibration")) {
        const auto& c = j.at("calibration");
        detail::check_keys(c, {"levels", "seeds", "max_rounds"}, "calibration");
        cfg.calibration.levels = detail::int_at(c, "levels", cfg.calibration.levels);
        cfg.calibration.seeds = detail::int_at(c, "seeds", cfg.calibration.seeds);
        cfg.calibration.max_rounds = detail::int_at(c, "max_rounds", cfg.calibration.max_rounds);
    }

    if (j.contains("theory")) {
        const auto& t = j.at("theory");
        detail::check_keys(t, {"probes", "weight_scale", "l2_reg", "batch_size", "recorded_seeds",
                               "recorded_rounds", "inflation"},
                           "theory");
        cfg.theory.probes = detail::int_at(t, "probes", cfg.theory.probes);
        cfg.theory.weight_scale = detail::number_at(t, "weight_scale", cfg.theory.weight_scale);
        cfg.theory.l2_reg = detail::number_at(t, "l2_reg", cfg.theory.l2_reg);
        cfg.theory.batch_size = detail::int_at(t, "batch_size", cfg.theory.batch_size);
        cfg.theory.recorded_seeds = detail::int_at(t, "recorded_seeds", cfg.theory.recorded_seeds);
        cfg.theory.recorded_rounds = detail::int_at(t, "recorded_rounds", cfg.theory.recorded_rounds);
        cfg.theory.inflation = detail::number_at(t, "inflation", cfg.theory.inflation);
    }

    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        detail::check_keys(s, {"axis", "values", "share_fraction", "seeds"}, "sweep");
        cfg.sweep.axis = detail::string_at(s, "axis", cfg.sweep.axis);
        if (s.contains("values")) {
            cfg.sweep.values.clear();
            for (const auto& v : s.at("values")) cfg.sweep.values.push_back(v.get<double>());
        }
        cfg.sweep.share_fraction = detail::number_at(s, "share_fraction", cfg.sweep.share_fraction);
        cfg.sweep.seeds = detail::int_at(s, "seeds", cfg.sweep.seeds);
    }

    // file-backed matrices resolve against the config's directory
    auto resolve = [&](std::string& path) {
        if (path.empty()) return;
        std::filesystem::path p(path);
        if (p.is_relative()) path = (std::filesystem::path(base_dir) / p).string();
    };
    if (cfg.placement.kind == "file") {
        resolve(cfg.placement.file);
        cfg.placement.matrix = detail::matrix_from_csv(cfg.placement.file, "placement");
        cfg.placement.kind = "matrix";
    }
    if (cfg.closeness.kind == "file") {
        resolve(cfg.closeness.file);
        cfg.closeness.matrix = detail::matrix_from_csv(cfg.closeness.file, "closeness");
        cfg.closeness.kind = "matrix";
    }

    // one epoch knob: the compute cost model follows the trainer
    cfg.compute.local_epochs = cfg.train.local_epochs;
    cfg.train.target_accuracy = cfg.thresholds.theta_th;
    cfg.validate();
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw validation_error("config: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw validation_error("config: " + path + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j, std::filesystem::path(path).parent_path().string());
}

inline nlohmann::ordered_json to_json(const RunConfig& cfg) {
    nlohmann::ordered_json j;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;

    nlohmann::ordered_json s;
    s["num_clients"] = cfg.scenario.num_clients;
    s["num_classes"] = cfg.scenario.num_classes;
    s["feature_dim"] = cfg.scenario.feature_dim;
    s["samples_per_client"] = cfg.scenario.samples_per_client;
    switch (cfg.scenario.kind) {
        case datagen::SkewKind::single_class_fraction: s["kind"] = "single_class_fraction"; break;
        case datagen::SkewKind::dirichlet: s["kind"] = "dirichlet"; break;
        case datagen::SkewKind::feature_noise: s["kind"] = "feature_noise"; break;
    }
    s["fraction"] = cfg.scenario.fraction;
    s["alpha"] = cfg.scenario.alpha;
    s["noise_levels"] = cfg.scenario.noise_levels;
    s["test_fraction"] = cfg.scenario.test_fraction;
    s["blob_distance"] = cfg.scenario.blob_distance;
    s["condition_number"] = cfg.scenario.condition_number;
    j["scenario"] = s;

    nlohmann::ordered_json r;
    r["noise_density_dbm_hz"] = detail::w_per_hz_to_dbm_per_hz(cfg.radio.noise_density);
    r["sidelink_bandwidth"] = cfg.radio.sidelink_bandwidth;
    r["downlink_bandwidth"] = cfg.radio.downlink_bandwidth;
    r["uplink_bandwidth"] = cfg.radio.uplink_bandwidth;
    r["num_subcarriers"] = cfg.radio.num_subcarriers;
    r["bs_power"] = cfg.radio.bs_power;
    r["ue_power"] = cfg.radio.ue_power;
    r["multicast_interference"] = cfg.radio.multicast_interference;
    r["downlink_interference"] = cfg.radio.downlink_interference;
    r["uplink_interference"] = cfg.radio.uplink_interference;
    j["radio"] = r;

    nlohmann::ordered_json sl;
    sl["tx_power"] = cfg.sidelink.tx_power;
    sl["tx_gain"] = cfg.sidelink.tx_gain;
    sl["rx_gain"] = cfg.sidelink.rx_gain;
    sl["states"] = nlohmann::ordered_json::array();
    for (const auto& st : cfg.sidelink.states) {
        nlohmann::ordered_json e;
        e["probability"] = st.probability;
        e["coefficient"] = st.coefficient;
        e["exponent"] = st.exponent;
        e["shadow"] = st.shadow;
        e["small_scale"] = st.small_scale;
        sl["states"].push_back(e);
    }
    j["sidelink"] = sl;

    nlohmann::ordered_json f;
    f["kind"] = cfg.fading.kind == wireless::FadingModel::Kind::deterministic ? "deterministic" : "rayleigh";
    f["scale"] = cfg.fading.scale;
    f["num_draws"] = cfg.fading.num_draws;
    f["min_gain_fraction"] = cfg.fading.min_gain_fraction;
    j["fading"] = f;

    nlohmann::ordered_json c;
    c["cycles_per_sample"] = cfg.compute.cycles_per_sample;
    c["energy_coeff"] = cfg.compute.energy_coeff;
    c["frequency"] = cfg.compute.frequency;
    c["max_frequency"] = cfg.compute.max_frequency;
    j["compute"] = c;

    nlohmann::ordered_json pl;
    pl["kind"] = cfg.placement.kind;
    pl["area_radius"] = cfg.placement.area_radius;
    if (!cfg.placement.matrix.empty()) pl["matrix"] = cfg.placement.matrix;
    j["placement"] = pl;

    nlohmann::ordered_json cl;
    cl["kind"] = cfg.closeness.kind;
    cl["value"] = cfg.closeness.value;
    if (!cfg.closeness.matrix.empty()) cl["matrix"] = cfg.closeness.matrix;
    j["closeness"] = cl;

    nlohmann::ordered_json th;
    th["e_th"] = cfg.thresholds.e_th;
    if (std::isinf(cfg.thresholds.v_th)) {
        th["v_th"] = "inf";
    } else {
        th["v_th"] = cfg.thresholds.v_th;
    }
    th["theta_th"] = cfg.thresholds.theta_th;
    th["gamma_th"] = cfg.thresholds.gamma_th;
    j["thresholds"] = th;

    nlohmann::ordered_json tr;
    tr["learning_rate"] = cfg.train.learning_rate;
    tr["local_epochs"] = cfg.train.local_epochs;
    tr["batch_size"] = cfg.train.batch_size;
    tr["max_rounds"] = cfg.train.max_rounds;
    tr["l2_reg"] = cfg.train.l2_reg;
    tr["seeds"] = cfg.train_seeds;
    j["train"] = tr;

    nlohmann::ordered_json ss;
    ss["inner_iters"] = cfg.ssca.inner_iters;
    ss["outer_iters"] = cfg.ssca.outer_iters;
    ss["lipschitz"] = cfg.ssca.lipschitz;
    ss["beta_noise"] = cfg.ssca.beta_noise;
    j["ssca"] = ss;

    nlohmann::ordered_json ca;
    ca["levels"] = cfg.calibration.levels;
    ca["seeds"] = cfg.calibration.seeds;
    ca["max_rounds"] = cfg.calibration.max_rounds;
    j["calibration"] = ca;

    nlohmann::ordered_json ty;
    ty["probes"] = cfg.theory.probes;
    ty["weight_scale"] = cfg.theory.weight_scale;
    ty["l2_reg"] = cfg.theory.l2_reg;
    ty["batch_size"] = cfg.theory.batch_size;
    ty["recorded_seeds"] = cfg.theory.recorded_seeds;
    ty["recorded_rounds"] = cfg.theory.recorded_rounds;
    ty["inflation"] = cfg.theory.inflation;
    j["theory"] = ty;

    nlohmann::ordered_json sw;
    sw["axis"] = cfg.sweep.axis;
    sw["values"] = cfg.sweep.values;
    sw["share_fraction"] = cfg.sweep.share_fraction;
    sw["seeds"] = cfg.sweep.seeds;
    j["sweep"] = sw;

    j["bits_per_sample"] = cfg.bits_per_sample;
    j["model_bits"] = cfg.model_bits;
    return j;
}

inline void save_run_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw validation_error("config: cannot write " + path);
    out << to_json(cfg).dump(2) << '\n';
}

// Social-trust matrix for the constrained graph. Diagonal entries are unused
// by the graph builder and set to 1.
inline std::vector<std::vector<double>> closeness_matrix(const RunConfig& cfg) {
    const auto k_count = static_cast<std::size_t>(cfg.scenario.num_clients);
    if (cfg.closeness.kind == "matrix") return cfg.closeness.matrix;
    std::vector<std::vector<double>> m(k_count, std::vector<double>(k_count, 1.0));
    if (cfg.closeness.kind == "full") {
        for (std::size_t a = 0; a < k_count; ++a) {
            for (std::size_t b = 0; b < k_count; ++b) {
                if (a != b) m[a][b] = cfg.closeness.value;
            }
        }
        return m;
    }
    auto rng = make_rng(cfg.seed, {57});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t a = 0; a < k_count; ++a) {
        for (std::size_t b = a + 1; b < k_count; ++b) {
            m[a][b] = m[b][a] = unit(rng);
        }
    }
    return m;
}

// Pairwise client distances. Disc placement draws uniform positions in a
// circle of the configured radius; distances are floored at 1 m because the
// path-loss reference point is 1 m.
inline std::vector<std::vector<double>> distance_matrix(const RunConfig& cfg) {
    const auto k_count = static_cast<std::size_t>(cfg.scenario.num_clients);
    if (cfg.placement.kind == "matrix") return cfg.placement.matrix;
    auto rng = make_rng(cfg.seed, {58});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::pair<double, double>> pos(k_count);
    for (auto& p : pos) {
        const double r = cfg.placement.area_radius * std::sqrt(unit(rng));
        const double a = 2.0 * std::acos(-1.0) * unit(rng);
        p = {r * std::cos(a), r * std::sin(a)};
    }
    std::vector<std::vector<double>> m(k_count, std::vector<double>(k_count, 0.0));
    for (std::size_t a = 0; a < k_count; ++a) {
        for (std::size_t b = a + 1; b < k_count; ++b) {
            const double dx = pos[a].first - pos[b].first;
            const double dy = pos[a].second - pos[b].second;
            m[a][b] = m[b][a] = std::max(1.0, std::hypot(dx, dy));
        }
    }
    return m;
}

} // namespace fedshare::config

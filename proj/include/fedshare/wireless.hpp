#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "fedshare/errors.hpp"
#include "fedshare/rng.hpp"

namespace fedshare::wireless {

// System-level radio constants. Linear SI units throughout (W, Hz, W/Hz);
// config-file dB/dBm forms are converted at load time.
struct RadioParams {
    double noise_density = 3.9810717055349565e-21; // -174 dBm/Hz
    double sidelink_bandwidth = 1e9;               // B_s
    double downlink_bandwidth = 20e6;              // B_d
    double uplink_bandwidth = 1e6;                 // B_u, per subcarrier
    int num_subcarriers = 10;                      // R
    double bs_power = 1.0;                         // P_BS
    double ue_power = 0.01;                        // P_k
    double multicast_interference = 0.0;           // I in the sidelink SINR
    double downlink_interference = 0.0;            // I_d
    double uplink_interference = 0.0;              // I_u

    void validate() const {
        if (noise_density <= 0 || sidelink_bandwidth <= 0 || downlink_bandwidth <= 0 ||
            uplink_bandwidth <= 0 || bs_power <= 0 || ue_power <= 0) {
            throw validation_error("radio: powers, bandwidths and noise density must be positive");
        }
        if (num_subcarriers < 1) throw validation_error("radio: need at least one subcarrier");
        if (multicast_interference < 0 || downlink_interference < 0 || uplink_interference < 0) {
            throw validation_error("radio: negative interference");
        }
    }
};

// One propagation state of the multistate sidelink channel: occupancy
// probability, path-loss coefficient A (loss at 1 m, divides), exponent, and
// fixed shadowing / small-scale factors.
struct PathLossState {
    double probability = 1.0;
    double coefficient = 1.0;
    double exponent = 2.0;
    double shadow = 1.0;
    double small_scale = 1.0;
};

struct SidelinkGeometry {
    double distance = 0.0;
    double tx_gain = 1.0;
    double rx_gain = 1.0;
    std::vector<PathLossState> states;

    void validate() const {
        if (!(distance > 0.0)) throw validation_error("sidelink: distance must be positive");
        if (tx_gain <= 0 || rx_gain <= 0) throw validation_error("sidelink: gains must be positive");
        if (states.empty()) throw validation_error("sidelink: no path-loss states");
        double total = 0.0;
        for (const auto& s : states) {
            if (s.probability < 0) throw validation_error("sidelink: negative state probability");
            if (s.coefficient <= 0) throw validation_error("sidelink: path-loss coefficient must be positive");
            if (s.shadow <= 0 || s.small_scale <= 0) throw validation_error("sidelink: fading factors must be positive");
            total += s.probability;
        }
        if (std::abs(total - 1.0) > 1e-9) throw validation_error("sidelink: state probabilities must sum to 1");
    }
};

// State-averaged multicast SINR: sum_i P G_t G_r * kappa_i S_i U_i /
// (A_i d^zeta_i) over the noise-plus-interference floor.
inline double multicast_sinr(double tx_power, const SidelinkGeometry& geom, const RadioParams& radio) {
    radio.validate();
    geom.validate();
    if (tx_power <= 0) throw validation_error("multicast_sinr: tx power must be positive");
    double received = 0.0;
    for (const auto& s : geom.states) {
        received += tx_power * geom.tx_gain * geom.rx_gain * s.probability * s.shadow * s.small_scale /
                    (s.coefficient * std::pow(geom.distance, s.exponent));
    }
    const double floor = radio.noise_density * radio.sidelink_bandwidth + radio.multicast_interference;
    return received / floor;
}

inline double sidelink_rate(double tx_power, const SidelinkGeometry& geom, const RadioParams& radio) {
    return radio.sidelink_bandwidth * std::log2(1.0 + multicast_sinr(tx_power, geom, radio));
}

// Multicast serves the whole cluster at the weakest member's rate.
inline double cluster_multicast_rate(const std::vector<double>& member_sinrs, double bandwidth) {
    if (member_sinrs.empty()) throw validation_error("cluster_multicast_rate: no members");
    if (bandwidth <= 0) throw validation_error("cluster_multicast_rate: bandwidth must be positive");
    double worst = member_sinrs[0];
    for (double s : member_sinrs) {
        if (s < 0) throw validation_error("cluster_multicast_rate: negative SINR");
        worst = std::min(worst, s);
    }
    return bandwidth * std::log2(1.0 + worst);
}

// Distance-parametric sidelink: same transmit power, antenna gains and
// path-loss states for every device pair, geometry varying only in distance.
struct SidelinkModel {
    double tx_power = 0.01;
    double tx_gain = 1.0;
    double rx_gain = 1.0;
    std::vector<PathLossState> states = {PathLossState{}};

    SidelinkGeometry geometry_at(double distance) const {
        SidelinkGeometry g;
        g.distance = distance;
        g.tx_gain = tx_gain;
        g.rx_gain = rx_gain;
        g.states = states;
        return g;
    }

    double sinr_at(double distance, const RadioParams& radio) const {
        return multicast_sinr(tx_power, geometry_at(distance), radio);
    }

    double rate_at(double distance, const RadioParams& radio) const {
        return sidelink_rate(tx_power, geometry_at(distance), radio);
    }
};

// Sharing completes when the slowest cluster finishes its multicast:
// max_m bits_per_sample * n_m^s / v_m^s.
inline double sharing_delay(const std::map<int, std::int64_t>& volumes,
                            const std::map<int, double>& cluster_rates,
                            double bits_per_sample) {
    if (bits_per_sample <= 0) throw validation_error("sharing_delay: bits_per_sample must be positive");
    double worst = 0.0;
    for (const auto& [head, v] : volumes) {
        if (v < 0) throw validation_error("sharing_delay: negative volume");
        if (v == 0) continue;
        auto it = cluster_rates.find(head);
        if (it == cluster_rates.end() || !(it->second > 0.0)) {
            throw infeasibility_error("sharing_delay: zero-rate cluster " + std::to_string(head) +
                                      " with positive shared volume");
        }
        worst = std::max(worst, bits_per_sample * static_cast<double>(v) / it->second);
    }
    return worst;
}

// Fading of the base-station links. `scale` is the Rayleigh sigma of |h|
// (so E|h|^2 = 2 sigma^2) or, for the deterministic kind, |h|^2 itself.
// Draws below min_gain_fraction of the mean-square gain are clamped: the raw
// expectation of 1/log2(1+SNR) diverges as the gain approaches zero, and the
// clamp models the minimum usable modulation of a real link.
struct FadingModel {
    enum class Kind { deterministic, rayleigh };
    Kind kind = Kind::deterministic;
    double scale = 1.0;
    int num_draws = 10000;
    std::uint64_t seed = 0;
    double min_gain_fraction = 0.02;

    void validate() const {
        if (!(scale > 0.0)) throw validation_error("fading: scale must be positive");
        if (kind == Kind::rayleigh) {
            if (num_draws < 1) throw validation_error("fading: need at least one draw");
            if (min_gain_fraction <= 0 || min_gain_fraction >= 1) {
                throw validation_error("fading: min_gain_fraction must be in (0,1)");
            }
        }
    }

    double mean_square_gain() const {
        return kind == Kind::deterministic ? scale : 2.0 * scale * scale;
    }
};

namespace detail {

// E over fading of bits / (bw_mult * log2(1 + P|h|^2 / (interference + noise_bw * N0))).
inline double expected_link_delay(double bits, double bw_mult, double noise_bw,
                                  double tx_power, double interference,
                                  double noise_density, const FadingModel& fading,
                                  std::uint64_t stream_tag) {
    fading.validate();
    if (bits <= 0) throw validation_error("link delay: bits must be positive");
    if (bw_mult <= 0) throw validation_error("link delay: zero bandwidth");
    const double floor = interference + noise_bw * noise_density;
    auto delay_at = [&](double gain) {
        const double snr = tx_power * gain / floor;
        return bits / (bw_mult * std::log2(1.0 + snr));
    };
    if (fading.kind == FadingModel::Kind::deterministic) {
        return delay_at(fading.scale);
    }
    const double mean_gain = fading.mean_square_gain();
    const double gain_floor = fading.min_gain_fraction * mean_gain;
    auto rng = make_rng(fading.seed, {stream_tag});
    std::exponential_distribution<double> exp1(1.0);
    double acc = 0.0;
    for (int i = 0; i < fading.num_draws; ++i) {
        double gain = std::max(mean_gain * exp1(rng), gain_floor);
        acc += delay_at(gain);
    }
    return acc / fading.num_draws;
}

} // namespace detail

// Expected time to push model_bits through the broadcast downlink.
inline double expected_download_delay(const RadioParams& radio, const FadingModel& fading, double model_bits) {
    radio.validate();
    return detail::expected_link_delay(model_bits, radio.downlink_bandwidth, radio.downlink_bandwidth,
                                       radio.bs_power, radio.downlink_interference,
                                       radio.noise_density, fading, 11);
}

// Even split of the R uplink subcarriers, remainder to the lowest client ids.
inline std::vector<int> allocate_subcarriers(int total, int num_clients) {
    if (num_clients < 1) throw validation_error("allocate_subcarriers: no clients");
    if (total < num_clients) {
        throw infeasibility_error("allocate_subcarriers: " + std::to_string(num_clients) +
                                  " clients need more than " + std::to_string(total) + " subcarriers");
    }
    std::vector<int> out(static_cast<std::size_t>(num_clients), total / num_clients);
    for (int i = 0; i < total % num_clients; ++i) ++out[static_cast<std::size_t>(i)];
    return out;
}

// Expected OFDMA upload time for a client holding `subcarriers` of the R.
inline double expected_upload_delay(const RadioParams& radio, const FadingModel& fading,
                                    double model_bits, int subcarriers) {
    radio.validate();
    if (subcarriers < 1) throw validation_error("expected_upload_delay: client needs at least one subcarrier");
    if (subcarriers > radio.num_subcarriers) {
        throw infeasibility_error("expected_upload_delay: more subcarriers assigned than available");
    }
    return detail::expected_link_delay(model_bits, radio.uplink_bandwidth * subcarriers,
                                       radio.uplink_bandwidth, radio.ue_power,
                                       radio.uplink_interference, radio.noise_density, fading, 13);
}

inline double upload_energy(const RadioParams& radio, double upload_delay) {
    if (upload_delay < 0) throw validation_error("upload_energy: negative delay");
    return radio.ue_power * upload_delay;
}

// Local training cost knobs of one client.
struct ComputeParams {
    double cycles_per_sample = 2.5e5; // L_k
    int local_epochs = 1;             // E
    double energy_coeff = 4e-26;      // zeta in the CPU energy model
    double frequency = 1.2e9;         // operating f_k
    double max_frequency = 1.2e9;     // f_max

    void validate() const {
        if (cycles_per_sample <= 0 || energy_coeff <= 0) throw validation_error("compute: coefficients must be positive");
        if (local_epochs < 1) throw validation_error("compute: need at least one local epoch");
        if (!(frequency > 0)) throw validation_error("compute: frequency must be positive");
        if (max_frequency < frequency) throw validation_error("compute: frequency exceeds max_frequency");
    }
};

// tau_cop = L * E * n_eff / f
inline double computation_delay(const ComputeParams& c, double effective_samples) {
    c.validate();
    if (effective_samples < 0) throw validation_error("computation_delay: negative sample count");
    return c.cycles_per_sample * c.local_epochs * effective_samples / c.frequency;
}

// gamma_cop = zeta * L * E * n_eff * f^2
inline double computation_energy(const ComputeParams& c, double effective_samples) {
    c.validate();
    if (effective_samples < 0) throw validation_error("computation_energy: negative sample count");
    return c.energy_coeff * c.cycles_per_sample * c.local_epochs * effective_samples * c.frequency * c.frequency;
}

// One federation round: slowest download, then slowest local-compute-plus-upload.
inline double round_delay(const std::vector<double>& download_delays,
                          const std::vector<double>& compute_delays,
                          const std::vector<double>& upload_delays) {
    if (download_delays.empty() || download_delays.size() != compute_delays.size() ||
        compute_delays.size() != upload_delays.size()) {
        throw dimension_error("round_delay: per-client vectors must be equal non-empty size");
    }
    double dl = 0.0;
    double work = 0.0;
    for (std::size_t k = 0; k < download_delays.size(); ++k) {
        dl = std::max(dl, download_delays[k]);
        work = std::max(work, compute_delays[k] + upload_delays[k]);
    }
    return dl + work;
}

inline double round_energy(double computation, double upload) {
    return computation + upload;
}

} // namespace fedshare::wireless

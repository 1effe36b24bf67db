#pragma once

#include "activeris/channel.hpp"
#include "activeris/linalg.hpp"

#include <string>
#include <vector>

namespace activeris {

/// BS precoder (N x K, column k serves user k) and RIS reflection vector (M entries).
/// An empty reflection vector means the RIS is absent.
struct Beamformers {
    CMat precoder;
    CVec reflection;
};

struct NoiseModel {
    double ris_noise = 0.0;         // watts, thermal noise amplified by the RIS
    std::vector<double> user_noise;  // watts, per user

    /// User noise must be positive, RIS noise non-negative.
    void validate(std::size_t num_users) const;
};

struct PowerModel {
    double bs_budget = 0.0;       // BS transmit budget
    double ris_budget = 0.0;      // RIS average transmit budget
    double max_gain = 1.0;        // linear amplitude-squared cap per element
    double element_circuit = 0.0;  // per-element switch/control power
    double element_dc = 0.0;       // per-element amplifier DC bias
    double rf_chain = 0.0;         // per-antenna RF chain

    void validate() const;
};

enum class RisMode { active, passive, none };

RisMode parse_ris_mode(const std::string& name);
std::string to_string(RisMode mode);

/// [w; 1].
CVec stacked_reflection(const CVec& reflection);

/// Stacked channel per user: rows are the cascaded channel followed by h_k^H.
CMat effective_channel(const CMat& cascaded, const CVec& direct);
std::vector<CMat> effective_channels(const ChannelRealization& r);

/// Per-user rates in bits/s/Hz from the physical signal model with the true channels.
std::vector<double> instantaneous_rate(const Beamformers& bf, const ChannelRealization& r, const NoiseModel& noise);

/// Per-user rates from stacked channels with an explicit extra noise power per user.
std::vector<double> stacked_rate(const Beamformers& bf, const std::vector<CMat>& channels,
                                 const std::vector<double>& extra_noise, const NoiseModel& noise);

/// RIS noise power seen by a user: sigma_z^2 * sum_m |w_m|^2 |h_m|^2.
double ris_noise_power(const CVec& reflection, const CVec& ris_user, double ris_noise);

/// Expected RIS-noise covariance in the reflection domain (diagonal).
CMat psi_matrix(const ChannelStatistics& stats, std::size_t k, const NoiseModel& noise);

/// Lower bound on the conditional average rate (bits/s/Hz), one value per user.
std::vector<double> average_rate_lb(const Beamformers& bf, const std::vector<CMat>& channels,
                                    const std::vector<CMat>& psi, const NoiseModel& noise);

/// E{H X H^H} for H = mean + R^{1/2} E T^{1/2}, E i.i.d. CN(0,1).
CMat lemma1_expectation(const CMat& mean, const CMat& rx_correlation, const CMat& tx_correlation, const CMat& x);

/// Average RIS transmit power over the BS-RIS fading.
double average_ris_power(const Beamformers& bf, const ChannelStatistics& stats, const NoiseModel& noise);

double total_power_consumption(const Beamformers& bf, const ChannelStatistics& stats, const NoiseModel& noise,
                               const PowerModel& power, RisMode mode);

/// Circuit power for the mode: M (P_c + P_DC) + N P_RF, M P_c + N P_RF or N P_RF.
double circuit_power(std::size_t n, std::size_t m, const PowerModel& power, RisMode mode);

/// RIS transmit power as a quadratic in either block:
///   P(F, w) = sum_m |w_m|^2 (||mean_m F||^2 + scatter Tr(F^H Sigma_B F) [Sigma_R]_mm) + sigma_z^2 ||w||^2,
/// where mean_m is row m of `mean`.
struct RisPowerModel {
    CMat mean;                   // M x N
    double scatter = 0.0;
    CMat bs_correlation;          // N x N
    RVec ris_correlation_diag;    // M
    double ris_noise = 0.0;

    double evaluate(const CMat& precoder, const CVec& reflection) const;
    /// D_F: P = Tr(F^H D_F F) + sigma_z^2 ||w||^2.
    CMat precoder_form(const CVec& reflection) const;
    double precoder_offset(const CVec& reflection) const;
    /// diag(D_w): P = sum_m d_m |w_m|^2.
    RVec reflection_form(const CMat& precoder) const;
};

/// Statistical model over the Rician BS-RIS link.
RisPowerModel statistical_ris_power(const ChannelStatistics& stats, const NoiseModel& noise);
/// LoS component only, NLoS ignored.
RisPowerModel los_ris_power(const ChannelStatistics& stats, const NoiseModel& noise);
/// Exact power for a known BS-RIS channel.
RisPowerModel exact_ris_power(const CMat& bs_ris, const NoiseModel& noise);

}  // namespace activeris

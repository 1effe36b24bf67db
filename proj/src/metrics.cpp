#include "activeris/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace activeris {

void NoiseModel::validate(std::size_t num_users) const {
    if (user_noise.size() != num_users) throw std::invalid_argument("noise model: one noise power per user is required");
    if (!(ris_noise >= 0.0) || !std::isfinite(ris_noise)) throw std::invalid_argument("noise model: RIS noise must be finite and non-negative");
    for (double s : user_noise)
        if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("noise model: user noise must be positive");
}

void PowerModel::validate() const {
    if (!(bs_budget >= 0.0) || !(ris_budget >= 0.0) || !(element_circuit >= 0.0) || !(element_dc >= 0.0) ||
        !(rf_chain >= 0.0))
        throw std::invalid_argument("power model: powers must be non-negative");
    if (!(max_gain >= 1.0)) throw std::invalid_argument("power model: maximum gain must be at least 1");
}

RisMode parse_ris_mode(const std::string& name) {
    if (name == "active") return RisMode::active;
    if (name == "passive") return RisMode::passive;
    if (name == "none") return RisMode::none;
    throw std::invalid_argument("unknown RIS mode '" + name + "'");
}

std::string to_string(RisMode mode) {
    switch (mode) {
        case RisMode::active: return "active";
        case RisMode::passive: return "passive";
        case RisMode::none: return "none";
    }
    return "unknown";
}

CVec stacked_reflection(const CVec& reflection) {
    CVec s(reflection.size() + 1);
    s.head(reflection.size()) = reflection;
    s(reflection.size()) = 1.0;
    return s;
}

CMat effective_channel(const CMat& cascaded, const CVec& direct) {
    CMat h(cascaded.rows() + 1, direct.size());
    if (cascaded.rows() > 0) h.topRows(cascaded.rows()) = cascaded;
    h.row(cascaded.rows()) = direct.adjoint();
    return h;
}

std::vector<CMat> effective_channels(const ChannelRealization& r) {
    std::vector<CMat> out;
    for (std::size_t k = 0; k < r.direct.size(); ++k) out.push_back(effective_channel(r.cascaded[k], r.direct[k]));
    return out;
}

std::vector<double> instantaneous_rate(const Beamformers& bf, const ChannelRealization& r, const NoiseModel& noise) {
    const std::size_t k_users = r.direct.size();
    const auto n = bf.precoder.rows();
    const auto m = r.bs_ris.rows();
    const bool ris_on = bf.reflection.size() > 0;
    if (ris_on && bf.reflection.size() != m) throw std::invalid_argument("instantaneous_rate: reflection length mismatch");
    std::vector<double> rates(k_users);
    for (std::size_t k = 0; k < k_users; ++k) {
        // Row vector h_k^H + h_r^H Diag(conj(w)) H_dr, one entry at a time.
        Eigen::RowVectorXcd row(n);
        double ris_noise = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            cd acc = std::conj(r.direct[k](j));
            if (ris_on)
                for (Eigen::Index i = 0; i < m; ++i)
                    acc += std::conj(r.ris_user[k](i)) * std::conj(bf.reflection(i)) * r.bs_ris(i, j);
            row(j) = acc;
        }
        if (ris_on)
            for (Eigen::Index i = 0; i < m; ++i) ris_noise += std::norm(r.ris_user[k](i) * bf.reflection(i));
        double signal = 0.0;
        double interference = 0.0;
        for (Eigen::Index i = 0; i < bf.precoder.cols(); ++i) {
            const double g = std::norm((row * bf.precoder.col(i))(0));
            if (static_cast<std::size_t>(i) == k) signal = g;
            else interference += g;
        }
        const double denom = interference + noise.ris_noise * ris_noise + noise.user_noise[k];
        rates[k] = std::log2(1.0 + signal / denom);
    }
    return rates;
}

std::vector<double> stacked_rate(const Beamformers& bf, const std::vector<CMat>& channels,
                                 const std::vector<double>& extra_noise, const NoiseModel& noise) {
    const CVec ws = stacked_reflection(bf.reflection);
    std::vector<double> rates(channels.size());
    for (std::size_t k = 0; k < channels.size(); ++k) {
        const Eigen::RowVectorXcd gains = ws.adjoint() * channels[k] * bf.precoder;
        const double signal = std::norm(gains(static_cast<Eigen::Index>(k)));
        const double interference = gains.squaredNorm() - signal;
        rates[k] = std::log2(1.0 + signal / (interference + extra_noise[k] + noise.user_noise[k]));
    }
    return rates;
}

double ris_noise_power(const CVec& reflection, const CVec& ris_user, double ris_noise) {
    if (reflection.size() == 0) return 0.0;
    return ris_noise * reflection.cwiseProduct(ris_user).squaredNorm();
}

CMat psi_matrix(const ChannelStatistics& stats, std::size_t k, const NoiseModel& noise) {
    const double beta = stats.beta[k + 1];
    const double delta = stats.delta[k + 1];
    const RVec los_power = stats.ris_user_los[k].cwiseAbs2();
    const RVec d = (beta * noise.ris_noise / (delta + 1.0)) * (delta * los_power.array() + 1.0).matrix();
    return d.cast<cd>().asDiagonal();
}

std::vector<double> average_rate_lb(const Beamformers& bf, const std::vector<CMat>& channels,
                                    const std::vector<CMat>& psi, const NoiseModel& noise) {
    std::vector<double> extra(channels.size(), 0.0);
    if (bf.reflection.size() > 0)
        for (std::size_t k = 0; k < channels.size(); ++k)
            extra[k] = (bf.reflection.adjoint() * psi[k] * bf.reflection)(0).real();
    return stacked_rate(bf, channels, extra, noise);
}

CMat lemma1_expectation(const CMat& mean, const CMat& rx_correlation, const CMat& tx_correlation, const CMat& x) {
    if (x.rows() != x.cols() || mean.cols() != x.rows() || tx_correlation.rows() != x.rows() ||
        tx_correlation.cols() != x.cols() || rx_correlation.rows() != mean.rows() ||
        rx_correlation.cols() != mean.rows())
        throw std::invalid_argument("lemma1_expectation: dimension mismatch");
    return mean * x * mean.adjoint() + (x * tx_correlation).trace() * rx_correlation;
}

double average_ris_power(const Beamformers& bf, const ChannelStatistics& stats, const NoiseModel& noise) {
    if (bf.reflection.size() == 0) return 0.0;
    const double beta = stats.beta[0];
    const double delta = stats.delta[0];
    const CMat cov = bf.precoder * bf.precoder.adjoint();
    const CMat q = (beta * delta / (delta + 1.0)) * stats.bs_ris_los * cov * stats.bs_ris_los.adjoint() +
                   (beta / (delta + 1.0)) * (cov * stats.bs_correlation).trace() * stats.ris_correlation;
    const RVec gain = bf.reflection.cwiseAbs2();
    return (gain.cast<cd>().asDiagonal() * q).trace().real() + gain.sum() * noise.ris_noise;
}

double circuit_power(std::size_t n, std::size_t m, const PowerModel& power, RisMode mode) {
    const double bs = static_cast<double>(n) * power.rf_chain;
    switch (mode) {
        case RisMode::active: return bs + static_cast<double>(m) * (power.element_circuit + power.element_dc);
        case RisMode::passive: return bs + static_cast<double>(m) * power.element_circuit;
        case RisMode::none: return bs;
    }
    throw std::invalid_argument("circuit_power: unknown mode");
}

double total_power_consumption(const Beamformers& bf, const ChannelStatistics& stats, const NoiseModel& noise,
                               const PowerModel& power, RisMode mode) {
    const double transmit = bf.precoder.squaredNorm();
    const double circuits = circuit_power(stats.num_bs_antennas(), stats.num_ris_elements(), power, mode);
    if (mode == RisMode::active) return transmit + average_ris_power(bf, stats, noise) + circuits;
    return transmit + circuits;
}

double RisPowerModel::evaluate(const CMat& precoder, const CVec& reflection) const {
    if (reflection.size() == 0) return 0.0;
    return reflection_form(precoder).dot(reflection.cwiseAbs2());
}

CMat RisPowerModel::precoder_form(const CVec& reflection) const {
    const RVec gain = reflection.cwiseAbs2();
    CMat d = mean.adjoint() * gain.cast<cd>().asDiagonal() * mean;
    if (scatter != 0.0) d += (scatter * gain.dot(ris_correlation_diag)) * bs_correlation;
    return 0.5 * (d + d.adjoint());
}

double RisPowerModel::precoder_offset(const CVec& reflection) const { return ris_noise * reflection.squaredNorm(); }

RVec RisPowerModel::reflection_form(const CMat& precoder) const {
    RVec d = (mean * precoder).rowwise().squaredNorm();
    if (scatter != 0.0) {
        const double spread = (precoder.adjoint() * bs_correlation * precoder).trace().real();
        d += (scatter * spread) * ris_correlation_diag;
    }
    d.array() += ris_noise;
    return d;
}

RisPowerModel statistical_ris_power(const ChannelStatistics& stats, const NoiseModel& noise) {
    const double beta = stats.beta[0];
    const double delta = stats.delta[0];
    RisPowerModel p;
    p.mean = std::sqrt(beta * delta / (delta + 1.0)) * stats.bs_ris_los;
    p.scatter = beta / (delta + 1.0);
    p.bs_correlation = stats.bs_correlation;
    p.ris_correlation_diag = stats.ris_correlation.diagonal().real();
    p.ris_noise = noise.ris_noise;
    return p;
}

RisPowerModel los_ris_power(const ChannelStatistics& stats, const NoiseModel& noise) {
    RisPowerModel p = statistical_ris_power(stats, noise);
    p.scatter = 0.0;
    return p;
}

RisPowerModel exact_ris_power(const CMat& bs_ris, const NoiseModel& noise) {
    RisPowerModel p;
    p.mean = bs_ris;
    p.scatter = 0.0;
    p.bs_correlation = CMat::Identity(bs_ris.cols(), bs_ris.cols());
    p.ris_correlation_diag = RVec::Ones(bs_ris.rows());
    p.ris_noise = noise.ris_noise;
    return p;
}

}  // namespace activeris

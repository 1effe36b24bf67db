#include "activeris/channel.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace activeris {

double distance(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

void Geometry::validate() const {
    if (bs_array.elements < 1) throw std::invalid_argument("geometry: BS array needs at least one antenna");
    if (ris_array.elements() < 1) throw std::invalid_argument("geometry: RIS needs at least one element");
    if (user_positions.empty()) throw std::invalid_argument("geometry: at least one user is required");
    if (!(bs_array.spacing > 0.0) || !(ris_array.spacing > 0.0))
        throw std::invalid_argument("geometry: element spacing must be positive");
    if (!(distance(bs_position, ris_position) > 0.0)) throw std::invalid_argument("geometry: BS and RIS coincide");
    for (std::size_t k = 0; k < user_positions.size(); ++k) {
        if (!(distance(bs_position, user_positions[k]) > 0.0) || !(distance(ris_position, user_positions[k]) > 0.0))
            throw std::invalid_argument("geometry: user " + std::to_string(k) + " coincides with the BS or RIS");
    }
}

double pathloss_db(double distance_m, double exponent, double pl0_db) {
    if (!(distance_m > 0.0)) throw std::domain_error("pathloss_db: distance must be positive");
    return -pl0_db - 10.0 * exponent * std::log10(distance_m);
}

CVec ula_steering(std::size_t elements, double spacing, double angle_rad) {
    CVec a(static_cast<Eigen::Index>(elements));
    const double step = 2.0 * std::numbers::pi * spacing * std::sin(angle_rad);
    for (std::size_t n = 0; n < elements; ++n) a(static_cast<Eigen::Index>(n)) = std::polar(1.0, step * static_cast<double>(n));
    return a;
}

CVec upa_steering(const PlanarArray& array, double azimuth_rad) {
    const CVec row = ula_steering(array.columns, array.spacing, azimuth_rad);
    CVec a(static_cast<Eigen::Index>(array.elements()));
    for (std::size_t r = 0; r < array.rows; ++r)
        a.segment(static_cast<Eigen::Index>(r * array.columns), static_cast<Eigen::Index>(array.columns)) = row;
    return a;
}

double bs_angle(const Geometry& g, const Point2& target) {
    return std::asin((target.y - g.bs_position.y) / distance(g.bs_position, target));
}

double ris_angle(const Geometry& g, const Point2& target) {
    return std::asin((target.x - g.ris_position.x) / distance(g.ris_position, target));
}

LosComponents build_los_components(const Geometry& g) {
    g.validate();
    LosComponents los;
    const CVec a_ris = upa_steering(g.ris_array, ris_angle(g, g.bs_position));
    const CVec a_bs = ula_steering(g.bs_array.elements, g.bs_array.spacing, bs_angle(g, g.ris_position));
    los.bs_ris = a_ris * a_bs.adjoint();
    for (const auto& u : g.user_positions) los.ris_user.push_back(upa_steering(g.ris_array, ris_angle(g, u)));
    return los;
}

CMat exponential_correlation(std::size_t size, double coefficient) {
    if (!(coefficient >= 0.0 && coefficient < 1.0))
        throw std::domain_error("exponential_correlation: coefficient must lie in [0, 1)");
    const auto n = static_cast<Eigen::Index>(size);
    CMat c(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) c(i, j) = std::pow(coefficient, static_cast<double>(std::abs(i - j)));
    return c;
}

namespace {

void check_correlation(const CMat& c, Eigen::Index size, const std::string& name) {
    if (c.rows() != size || c.cols() != size) throw std::invalid_argument(name + ": wrong dimensions");
    if (!is_hermitian(c, 1e-12)) throw std::invalid_argument(name + ": not Hermitian");
    for (Eigen::Index i = 0; i < size; ++i)
        if (std::abs(c(i, i) - 1.0) > 1e-12) throw std::invalid_argument(name + ": diagonal must be 1");
    if (size > 0 && min_eigenvalue(c) < -1e-10) throw std::invalid_argument(name + ": not positive semidefinite");
}

}  // namespace

void ChannelStatistics::validate() const {
    const std::size_t k_users = beta_direct.size();
    const auto n = bs_ris_los.cols();
    const auto m = bs_ris_los.rows();
    if (k_users == 0 || n == 0 || m == 0) throw std::invalid_argument("statistics: empty system");
    if (beta.size() != k_users + 1 || delta.size() != k_users + 1 || ris_user_los.size() != k_users ||
        ris_user_correlation.size() != k_users)
        throw std::invalid_argument("statistics: per-user vectors have inconsistent lengths");
    for (double b : beta)
        if (!(b >= 0.0)) throw std::invalid_argument("statistics: pathloss gains must be non-negative");
    for (double b : beta_direct)
        if (!(b >= 0.0)) throw std::invalid_argument("statistics: pathloss gains must be non-negative");
    for (double d : delta)
        if (!(d >= 0.0) || !std::isfinite(d)) throw std::invalid_argument("statistics: Rician factors must be finite and non-negative");
    check_correlation(bs_correlation, n, "BS correlation");
    check_correlation(ris_correlation, m, "RIS correlation");
    for (std::size_t k = 0; k < k_users; ++k) {
        if (ris_user_los[k].size() != m) throw std::invalid_argument("statistics: LoS vector has wrong length");
        check_correlation(ris_user_correlation[k], m, "RIS-user correlation");
    }
}

ChannelStatistics build_statistics(const Geometry& g, const ChannelModelParams& p) {
    g.validate();
    const LosComponents los = build_los_components(g);
    const std::size_t n = g.num_bs_antennas();
    const std::size_t m = g.num_ris_elements();
    ChannelStatistics s;
    s.bs_ris_los = los.bs_ris;
    s.ris_user_los = los.ris_user;
    s.beta.push_back(db_to_linear(pathloss_db(distance(g.bs_position, g.ris_position), p.exponent_ris, p.pl0_db)));
    s.delta.push_back(p.rician_factor);
    for (const auto& u : g.user_positions) {
        s.beta.push_back(db_to_linear(pathloss_db(distance(g.ris_position, u), p.exponent_ris, p.pl0_db)));
        s.delta.push_back(p.rician_factor);
        s.beta_direct.push_back(db_to_linear(pathloss_db(distance(g.bs_position, u), p.exponent_direct, p.pl0_db)));
        s.ris_user_correlation.push_back(exponential_correlation(m, p.ris_correlation));
    }
    s.bs_correlation = exponential_correlation(n, p.bs_correlation);
    s.ris_correlation = exponential_correlation(m, p.ris_correlation);
    s.validate();
    return s;
}

CMat cascaded_channel(const CVec& ris_user, const CMat& bs_ris) {
    return ris_user.conjugate().asDiagonal() * bs_ris;
}

ChannelSampler::ChannelSampler(const ChannelStatistics& stats) : stats_(stats) {
    stats_.validate();
    bs_half_ = hermitian_sqrt(stats_.bs_correlation);
    ris_half_ = hermitian_sqrt(stats_.ris_correlation);
    for (const auto& c : stats_.ris_user_correlation) ris_user_half_.push_back(hermitian_sqrt(c));
}

CMat ChannelSampler::sample_bs_ris(Rng& rng) const {
    const double beta = stats_.beta[0];
    const double delta = stats_.delta[0];
    const CMat e = complex_normal(rng, stats_.bs_ris_los.rows(), stats_.bs_ris_los.cols());
    if (beta == 0.0) return CMat::Zero(e.rows(), e.cols());
    return std::sqrt(beta / (delta + 1.0)) * (std::sqrt(delta) * stats_.bs_ris_los + ris_half_ * e * bs_half_);
}

CVec ChannelSampler::sample_ris_user(std::size_t k, Rng& rng) const {
    const double beta = stats_.beta[k + 1];
    const double delta = stats_.delta[k + 1];
    const CVec e = complex_normal(rng, stats_.ris_user_los[k].size(), 1);
    if (beta == 0.0) return CVec::Zero(e.size());
    return std::sqrt(beta / (delta + 1.0)) * (std::sqrt(delta) * stats_.ris_user_los[k] + ris_user_half_[k] * e);
}

CVec ChannelSampler::sample_direct(std::size_t k, Rng& rng) const {
    const CVec e = complex_normal(rng, static_cast<Eigen::Index>(stats_.num_bs_antennas()), 1);
    return std::sqrt(stats_.beta_direct[k]) * e;
}

ChannelRealization ChannelSampler::sample(std::uint64_t seed) const {
    Rng rng(seed);
    ChannelRealization r;
    const std::size_t k_users = stats_.num_users();
    r.bs_ris = sample_bs_ris(rng);
    for (std::size_t k = 0; k < k_users; ++k) r.ris_user.push_back(sample_ris_user(k, rng));
    for (std::size_t k = 0; k < k_users; ++k) r.direct.push_back(sample_direct(k, rng));
    for (std::size_t k = 0; k < k_users; ++k) r.cascaded.push_back(cascaded_channel(r.ris_user[k], r.bs_ris));
    return r;
}

ChannelRealization sample_realization(const ChannelStatistics& stats, std::uint64_t seed) {
    return ChannelSampler(stats).sample(seed);
}

}  // namespace activeris

#pragma once

#include "activeris/linalg.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

namespace activeris {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

double distance(const Point2& a, const Point2& b);

/// Uniform linear array along the y axis, broadside towards +x.
struct LinearArray {
    std::size_t elements = 1;
    double spacing = 0.5;  // wavelengths
};

/// Uniform planar array in the x-z plane facing -y. Element m sits at column m % columns, row m / columns.
/// With all nodes in the horizontal plane only the column index carries phase.
struct PlanarArray {
    std::size_t columns = 1;
    std::size_t rows = 1;
    double spacing = 0.5;  // wavelengths
    std::size_t elements() const { return columns * rows; }
};

struct Geometry {
    Point2 bs_position;
    Point2 ris_position;
    std::vector<Point2> user_positions;
    LinearArray bs_array;
    PlanarArray ris_array;

    std::size_t num_bs_antennas() const { return bs_array.elements; }
    std::size_t num_ris_elements() const { return ris_array.elements(); }
    std::size_t num_users() const { return user_positions.size(); }

    /// Throws std::invalid_argument on empty arrays, no users or coincident nodes.
    void validate() const;
};

/// -pl0_db - 10 * exponent * log10(distance). Throws std::domain_error for distance <= 0.
double pathloss_db(double distance_m, double exponent, double pl0_db);

/// Steering vector with the first element as phase reference: entry n = exp(j 2 pi spacing n sin(angle)).
CVec ula_steering(std::size_t elements, double spacing, double angle_rad);
CVec upa_steering(const PlanarArray& array, double azimuth_rad);

/// Angle from broadside of `target` as seen by the BS array / the RIS panel.
double bs_angle(const Geometry& g, const Point2& target);
double ris_angle(const Geometry& g, const Point2& target);

struct LosComponents {
    CMat bs_ris;               // M x N
    std::vector<CVec> ris_user;  // K vectors of length M
};

LosComponents build_los_components(const Geometry& g);

/// Entry (i, j) = coefficient^|i - j|. Throws std::domain_error unless 0 <= coefficient < 1.
CMat exponential_correlation(std::size_t size, double coefficient);

struct ChannelStatistics {
    std::vector<double> beta;         // [0]: BS-RIS, [k+1]: RIS-user k (linear)
    std::vector<double> delta;        // Rician factors, same indexing
    std::vector<double> beta_direct;  // BS-user k (linear, per-entry variance)
    CMat bs_ris_los;                  // M x N
    std::vector<CVec> ris_user_los;   // K x M
    CMat bs_correlation;              // N x N
    CMat ris_correlation;             // M x M, RIS side of the BS-RIS link
    std::vector<CMat> ris_user_correlation;  // K x (M x M)

    std::size_t num_bs_antennas() const { return static_cast<std::size_t>(bs_ris_los.cols()); }
    std::size_t num_ris_elements() const { return static_cast<std::size_t>(bs_ris_los.rows()); }
    std::size_t num_users() const { return beta_direct.size(); }

    /// Checks dimensions, non-negativity and the correlation-matrix invariants.
    void validate() const;
};

struct ChannelModelParams {
    double pl0_db = 40.0;
    double exponent_direct = 3.5;
    double exponent_ris = 2.0;
    double rician_factor = 10.0;
    double bs_correlation = 0.0;   // exponential-model coefficients
    double ris_correlation = 0.0;
};

ChannelStatistics build_statistics(const Geometry& g, const ChannelModelParams& params);

struct ChannelRealization {
    std::vector<CVec> direct;   // K x N
    CMat bs_ris;                // M x N, hidden truth
    std::vector<CVec> ris_user;  // K x M, hidden truth
    std::vector<CMat> cascaded;  // K x (M x N) = Diag(conj(ris_user[k])) * bs_ris
};

/// Draws realizations from fixed statistics. Square roots are factored once at construction.
class ChannelSampler {
public:
    explicit ChannelSampler(const ChannelStatistics& stats);

    ChannelRealization sample(std::uint64_t seed) const;

    CMat sample_bs_ris(Rng& rng) const;
    CVec sample_ris_user(std::size_t k, Rng& rng) const;
    CVec sample_direct(std::size_t k, Rng& rng) const;

    const ChannelStatistics& statistics() const { return stats_; }

private:
    ChannelStatistics stats_;
    CMat bs_half_;
    CMat ris_half_;
    std::vector<CMat> ris_user_half_;
};

ChannelRealization sample_realization(const ChannelStatistics& stats, std::uint64_t seed);

CMat cascaded_channel(const CVec& ris_user, const CMat& bs_ris);

}  // namespace activeris

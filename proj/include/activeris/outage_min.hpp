#pragma once

#include "activeris/metrics.hpp"
#include "activeris/sdp_solver.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace activeris {

/// Per-user QoS target: Pr{rate_k >= target_rate[k]} >= 1 - outage_eps[k].
struct OutageSpec {
    std::vector<double> target_rate;  // bits/s/Hz
    std::vector<double> outage_eps;   // in (0, 1]

    void validate(std::size_t num_users) const;
};

/// Outage-constrained power minimization for one conditioned channel draw.
/// channels[k] stacks the known cascaded channel rows and h_k^H; the RIS-user statistics
/// model the unknown channel that carries the amplified RIS noise.
struct OutageProblem {
    std::vector<CMat> channels;
    ChannelStatistics stats;
    OutageSpec spec;
    NoiseModel noise;
    RisPowerModel power;
    double max_gain = 1.0;
    bool robust = true;  // false drops the scattered RIS-user component from the constraint

    std::size_t num_users() const { return channels.size(); }
    Eigen::Index num_antennas() const { return channels.empty() ? 0 : channels[0].cols(); }
    Eigen::Index num_elements() const { return channels.empty() ? 0 : channels[0].rows() - 1; }

    void validate() const;
};

/// f_k f_k^H / (2^r - 1) - sum_{i != k} f_i f_i^H.
CMat phi_matrix(const CMat& precoder, std::size_t k, double target_rate);

/// (Tr{A Diag(b) C Diag(b)}, b^T (A^T .* C) b).
std::pair<cd, cd> hadamard_trace_identity(const CMat& a, const CVec& b, const CMat& c);

/// Reflection-independent pieces of one user's Bernstein-type constraint.
struct BtiBlock {
    double scatter = 0.0;     // beta/(delta+1), zero for the non-robust design
    double los_weight = 0.0;  // beta*delta/(delta+1)
    CVec los;                 // RIS-user LoS vector
    RVec correlation_diag;
    CMat correlation_half;    // Hermitian square root of the RIS-user correlation
    RMat coupling_half;       // real square root of Re C, C = (Sigma^T + 2 delta conj(h) h^T) .* Sigma
    double x_weight = 0.0;    // sqrt(2 ln(1/rho))
    double y_weight = 0.0;    // -ln(rho)
};

/// Throws std::domain_error when rho = 0 and when C is not PSD.
BtiBlock make_bti_block(const ChannelStatistics& stats, std::size_t k, double outage_eps, bool robust = true);

/// Hermitian-PSD coupling matrix C for user k (full complex form).
CMat coupling_matrix(const ChannelStatistics& stats, std::size_t k);

struct BtiTerms {
    double trace_term = 0.0;  // Tr U
    double soc_norm = 0.0;    // sqrt(||U||_F^2 + 2||u||^2)
    CMat lmi_matrix;          // U (its eigenvalues are those of scatter * Sigma Lambda)
    double los_term = 0.0;    // beta delta/(delta+1) h^H Lambda h
    double signal_margin = 0.0;  // w~^H H Phi H^H w~ - sigma_k^2
    double x_weight = 0.0;
    double y_weight = 0.0;

    /// u_k with the 1/sigma_z^2 factor; infinite when sigma_z^2 = 0.
    double constant(double ris_noise) const;
    /// sigma_z^2 (Tr U + x_w x + y_w y + u) at the smallest admissible x, y.
    double scaled_lhs(double ris_noise) const;
};

BtiTerms bti_terms(const CMat& precoder, const CVec& reflection, const OutageProblem& problem, std::size_t k);

/// Relative constraint violation per user (<= 0 when satisfied).
std::vector<double> bti_violation(const CMat& precoder, const CVec& reflection, const OutageProblem& problem);

/// ||F||^2 + P(F, w).
double outage_total_power(const CMat& precoder, const CVec& reflection, const OutageProblem& problem);

/// Hermitian n x n variable stored as n diagonal entries then (re, im) pairs for i < j.
struct HermitianBlock {
    std::size_t offset = 0;
    Eigen::Index order = 0;

    std::size_t size() const { return static_cast<std::size_t>(order * order); }
    std::size_t diag(Eigen::Index i) const { return offset + static_cast<std::size_t>(i); }
    /// Coefficients c with Tr{A X} = c^T x for Hermitian A, added into `row`.
    void add_trace(const CMat& a, double scale, RVec& row) const;
    void add_lmi_terms(conic::LmiBlock& block) const;
    CMat extract(const RVec& x) const;
};

struct PrecoderSdr {
    conic::ConicProblem problem;
    std::vector<HermitianBlock> covariances;  // Gamma_k / scale
    std::vector<std::size_t> x_vars, y_vars;  // SIZE_MAX for users without slack terms (rho = 1)
    double scale = 1.0;       // Gamma_k = scale * variable
    double cost_scale = 1.0;  // true objective = cost_scale * cost^T x

    std::vector<CMat> covariance_values(const RVec& x) const;
};

/// Rank-relaxed precoder subproblem for a fixed reflection. scale = 0 picks sum sigma_k^2 / sum ||g_k||^2.
PrecoderSdr build_precoder_sdr(const CVec& reflection, const OutageProblem& problem, double scale = 0.0);

struct ReflectionSdr {
    conic::ConicProblem problem;
    HermitianBlock stacked;  // W~ = [w; 1][w; 1]^H relaxed
    std::vector<std::size_t> x_vars, y_vars;
    double cost_scale = 1.0;

    CMat stacked_value(const RVec& x) const;
};

/// Rank-relaxed reflection subproblem for a fixed precoder.
ReflectionSdr build_reflection_sdr(const CMat& precoder, const OutageProblem& problem);

struct RankOneResult {
    CVec vector;          // sqrt(lambda_1) * principal eigenvector
    RVec eigenvalues;     // descending
    bool rank_one = false;
};

RankOneResult recover_rank_one(const CMat& covariance, double ratio_tol = 1e-6);

/// Smallest per-user powers meeting every constraint with equality for fixed beam directions
/// (columns of `directions`). Empty when no positive allocation exists.
std::optional<RVec> min_power_allocation(const CMat& directions, const CVec& reflection, const OutageProblem& problem,
                                         double margin = 1e-9);

class OutageInfeasibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class RecoveryError : public std::runtime_error {
public:
    RecoveryError(const std::string& what, std::vector<RVec> spectra)
        : std::runtime_error(what), spectra_(std::move(spectra)) {}
    const std::vector<RVec>& spectra() const { return spectra_; }

private:
    std::vector<RVec> spectra_;
};

class RandomizationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PrecoderRecovery {
    CMat precoder;
    std::vector<RVec> spectra;
    bool rank_one = false;
};

/// Principal-eigenvector recovery when every Gamma_k is near rank one, Gaussian randomization over
/// the Gamma_k otherwise; powers are reset by min_power_allocation in both cases.
PrecoderRecovery recover_precoder(const std::vector<CMat>& covariances, const CVec& reflection,
                                  const OutageProblem& problem, int candidates, std::uint64_t seed,
                                  double ratio_tol = 1e-6);

/// Returns the total power of a feasible candidate reflection, nothing otherwise.
using CandidateCheck = std::function<std::optional<double>(const CVec&)>;

struct RandomizationResult {
    CVec reflection;
    double objective = 0.0;
    int feasible = 0;
};

/// Gaussian randomization of a relaxed W~: candidates E Y^{1/2} e normalized by their last entry,
/// modulus-clamped to [1, sqrt(max_gain)]; the feasible candidate with the least objective wins.
RandomizationResult gaussian_randomization(const CMat& stacked, int candidates, double max_gain, std::uint64_t seed,
                                           const CandidateCheck& check);

struct OutageConfig {
    int max_iters = 30;
    double rel_tol = 1e-4;
    int candidates = 1000;
    int escalation = 10;
    double rank_tol = 1e-6;
    double feasibility_tol = 1e-6;
    std::uint64_t seed = 1;
    conic::SolverOptions solver;

    void validate() const;
};

struct OutageRecord {
    int iteration = 0;
    double total_power = 0.0;
    double bs_power = 0.0;
    double ris_power = 0.0;
    double max_violation = 0.0;
    bool reflection_accepted = false;
    bool precoder_accepted = false;
    bool rank_one = false;
    double seconds = 0.0;
};

struct OutageResult {
    Beamformers beamformers;
    std::vector<OutageRecord> trace;  // entry 0 is the initial feasible point
    bool converged = false;
};

/// Phases that maximize sum_k ||H_k^H w~||^2 over the principal eigenvector, at a common modulus.
CVec aligned_reflection(const std::vector<CMat>& channels, double modulus);

/// Alternating SDR iterations. Starts from aligned phases at the cheapest feasible modulus of a halving
/// ladder from full gain to unit gain; throws OutageInfeasibleError when none admits a feasible precoder.
OutageResult run_outage_ao(const OutageProblem& problem, const OutageConfig& cfg);

enum class DrawLaw {
    conditional,     // redraw only the RIS-user channel in the RIS-noise term, known signal channels fixed
    joint_marginal,  // redraw BS-RIS and RIS-user channels everywhere, direct links fixed
};

DrawLaw parse_draw_law(const std::string& name);

/// Fraction of draws in which at least one user's rate falls below its target.
double empirical_outage(const Beamformers& bf, const OutageProblem& problem, int n_draws, std::uint64_t seed,
                        DrawLaw law = DrawLaw::conditional);

}  // namespace activeris

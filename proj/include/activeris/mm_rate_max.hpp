#pragma once

#include "activeris/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace activeris {

/// Average sum-rate maximization with a partially known RIS channel.
/// Channels are stacked per user (cascaded rows then the direct row); with no RIS each is 1 x N.
struct RateProblem {
    std::vector<CMat> channels;
    std::vector<CMat> psi;  // M x M per user, expected RIS-noise covariance
    NoiseModel noise;
    RisPowerModel power;
    double bs_budget = 0.0;                                        // P_N
    double ris_budget = std::numeric_limits<double>::infinity();  // P_M
    double max_gain = 1.0;                                         // a_max

    std::size_t num_users() const { return channels.size(); }
    Eigen::Index num_antennas() const { return channels.empty() ? 0 : channels[0].cols(); }
    Eigen::Index num_elements() const { return channels.empty() ? 0 : channels[0].rows() - 1; }
    bool ris_power_limited() const { return num_elements() > 0 && std::isfinite(ris_budget); }

    void validate() const;
};

/// Sum of the per-user average-rate lower bounds, bits/s/Hz.
double sum_rate_objective(const Beamformers& bf, const RateProblem& problem);

/// Constraint residuals: positive entries are violations.
struct ConstraintResiduals {
    double bs_power = 0.0;    // ||F||^2 - P_N
    double ris_power = 0.0;   // P(F, w) - P_M
    double min_gain = 0.0;    // max_m (1 - |w_m|^2)
    double max_gain = 0.0;    // max_m (|w_m|^2 - a_max)

    /// Largest violation relative to the matching budget (0 when feasible).
    double worst(const RateProblem& problem) const;
};

ConstraintResiduals constraint_residuals(const Beamformers& bf, const RateProblem& problem);

/// Minorizer of the sum rate around an expansion point, together with both block subproblems.
struct SurrogateState {
    std::vector<cd> a;
    std::vector<double> b;
    std::vector<double> constant;  // nats
    std::vector<cd> t;
    std::vector<double> r;

    // Precoder block: maximize 2 Re Tr(C_F^H F) - Tr(F^H A_F F) s.t. ||F||^2 <= P_N, Tr(F^H D_F F) <= P_M - offset.
    CMat precoder_quadratic;    // A_F
    CMat precoder_linear;       // C_F
    CMat precoder_power;        // D_F
    double precoder_power_offset = 0.0;

    // Reflection block: maximize 2 Re(w^H c_w) - w^H A_w w s.t. sum_m d_m |w_m|^2 <= P_M, 1 <= |w_m|^2 <= a_max.
    CMat reflection_quadratic;  // A_w
    CVec reflection_linear;     // c_w
    RVec reflection_power;      // diag(D_w)
};

/// Throws std::domain_error naming the user if an expansion point is degenerate.
SurrogateState surrogate_coeffs(const Beamformers& expansion, const RateProblem& problem);

/// Surrogate sum rate at bf, bits/s/Hz.
double surrogate_value(const SurrogateState& s, const Beamformers& bf, const RateProblem& problem);

enum class DualStepRule {
    bisection,     // nested bisection on the two multipliers
    backtracking,  // projected gradient on the dual with backtracking
};

DualStepRule parse_dual_step_rule(const std::string& name);

struct MmConfig {
    double outer_tol = 1e-5;
    int max_outer_iters = 1000;
    DualStepRule dual_step_rule = DualStepRule::bisection;
    double dual_tol = 1e-10;
    int max_dual_iters = 20000;
    double admm_penalty = 0.0;  // 0 selects mean diag(A_w); starting value when adaptive
    bool admm_adaptive = true;  // residual balancing of the penalty every 20 iterations
    double admm_tol = 1e-6;
    int admm_max_iters = 5000;
    double bisection_tol = 1e-8;
    bool squarem = true;

    void validate() const;
};

class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, std::vector<double> residuals)
        : std::runtime_error(what), residuals_(std::move(residuals)) {}
    const std::vector<double>& residuals() const { return residuals_; }

private:
    std::vector<double> residuals_;
};

struct PrecoderSolution {
    CMat precoder;
    double bs_multiplier = 0.0;   // gamma_F
    double ris_multiplier = 0.0;  // mu_F
    int iterations = 0;
};

/// maximize 2 Re Tr(C^H F) - Tr(F^H A F) s.t. ||F||^2 <= bs_budget, Tr(F^H D F) <= ris_budget.
/// ris_budget = +inf drops the second constraint.
PrecoderSolution solve_precoder(const CMat& quadratic, const CMat& linear, const CMat& power, double bs_budget,
                                double ris_budget, const MmConfig& cfg);

/// Nearest F to x in Frobenius norm within the same two constraints.
CMat project_precoder(const CMat& x, const CMat& power, double bs_budget, double ris_budget, const MmConfig& cfg);

/// Nearest w to x with sum_m d_m |w_m|^2 <= ris_budget and 1 <= |w_m|^2 <= max_gain.
/// Throws std::invalid_argument when the set is empty.
CVec project_reflection(const CVec& x, const RVec& power, double ris_budget, double max_gain);

/// Per-element modulus clamp to [1, sqrt(max_gain)] keeping the phase.
CVec clamp_modulus(const CVec& x, double max_gain);

/// Solution of the w-step for a fixed multiplier: (A + gamma D + zeta I)^{-1} v.
struct ReflectionStep {
    /// Precomputes the whitened eigen-decomposition for A + zeta I against diag(power).
    ReflectionStep(const CMat& quadratic, const RVec& power, double penalty);

    CVec solve(const CVec& rhs, double multiplier) const;
    /// Power w^H D w of the solution for the given right-hand side and multiplier.
    double power(const CVec& rhs, double multiplier) const;
    /// Solution within the power budget; multiplier found by bisection on (0, gamma_1].
    CVec solve_constrained(const CVec& rhs, double ris_budget, double tol, double* multiplier = nullptr) const;

private:
    RVec inv_sqrt_power_;
    CMat basis_;
    RVec eigenvalues_;
};

struct AdmmResult {
    CVec reflection;
    bool converged = false;
    int iterations = 0;
    std::vector<double> residuals;  // ||w - u|| per iteration
};

/// ADMM for the reflection block without throwing on non-convergence.
AdmmResult run_reflection_admm(const CMat& quadratic, const CVec& linear, const RVec& power, double ris_budget,
                               double max_gain, const CVec& init, const MmConfig& cfg);

/// As above; throws std::invalid_argument on an infeasible start and ConvergenceError when ADMM stalls.
CVec solve_reflection_admm(const CMat& quadratic, const CVec& linear, const RVec& power, double ris_budget,
                           double max_gain, const CVec& init, const MmConfig& cfg);

struct TraceRecord {
    int iteration = 0;
    double objective = 0.0;
    double bs_power_residual = 0.0;
    double ris_power_residual = 0.0;
    double gain_residual = 0.0;
    double seconds = 0.0;
};

struct MmResult {
    Beamformers beamformers;
    std::vector<TraceRecord> trace;  // entry 0 is the initial point
    bool converged = false;
};

/// Feasible starting point: matched filter at 0.9 P_N and LoS phase-aligned reflection with the
/// largest common modulus the RIS budget allows. los_cascaded holds the LoS cascaded channel per user.
Beamformers default_initialization(const RateProblem& problem, const std::vector<CMat>& los_cascaded);

/// Alternating MM iterations with SQUAREM extrapolation and a monotone safeguard.
MmResult maximize_sum_rate(const RateProblem& problem, const MmConfig& cfg, const Beamformers& init);

}  // namespace activeris

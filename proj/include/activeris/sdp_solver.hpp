#pragma once

#include "activeris/linalg.hpp"

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace activeris::conic {

struct LmiTerm {
    std::size_t variable = 0;
    CMat coefficient;  // Hermitian
};

/// constant + sum_i x_i * coefficient_i  must be positive semidefinite.
/// Complex blocks are solved through the real embedding [Re, -Im; Im, Re] of twice the order.
struct LmiBlock {
    std::string label;
    CMat constant;
    std::vector<LmiTerm> terms;

    Eigen::Index order() const { return constant.rows(); }
    bool is_real() const;
};

/// || a x + b ||_2 <= d^T x + e.
struct SocBlock {
    std::string label;
    RMat a;
    RVec b;
    RVec d;
    double e = 0.0;
};

/// coeffs^T x + constant >= 0 (inequality) or == 0 (equality).
struct LinearRow {
    RVec coeffs;
    double constant = 0.0;
};

/// minimize cost^T x subject to the listed cone memberships.
struct ConicProblem {
    std::size_t num_variables = 0;
    RVec cost;
    std::vector<LmiBlock> lmis;
    std::vector<SocBlock> socs;
    std::vector<LinearRow> inequalities;
    std::vector<LinearRow> equalities;

    /// Throws std::invalid_argument on inconsistent dimensions or non-Hermitian LMI data.
    void validate() const;
    /// Sum of the (real-embedded) orders of all LMI blocks.
    Eigen::Index psd_dimension() const;
};

enum class Status { optimal, primal_infeasible, dual_infeasible, max_iters };

std::string to_string(Status s);

struct IterationRecord {
    int iteration = 0;
    double primal_objective = 0.0;
    double dual_objective = 0.0;
    double gap = 0.0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double step = 0.0;
    double tau = 0.0;
    double kappa = 0.0;
};

struct ConeSolution {
    Status status = Status::max_iters;
    RVec x;
    RVec equality_duals;
    RVec inequality_duals;
    std::vector<RVec> soc_duals;
    std::vector<RMat> lmi_duals;  // real-embedded form for complex blocks
    double primal_objective = 0.0;
    double dual_objective = 0.0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double gap = 0.0;
    double relative_gap = 0.0;
    int iterations = 0;
    std::vector<IterationRecord> log;
};

struct SolverOptions {
    int max_iterations = 100;
    double feasibility_tol = 1e-9;
    double relative_gap_tol = 1e-9;
    double absolute_gap_tol = 1e-12;
    double step_fraction = 0.98;
    Eigen::Index max_psd_dimension = 256;
    int refinement_steps = 1;
};

class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, std::vector<IterationRecord> log)
        : std::runtime_error(what), log_(std::move(log)) {}
    const std::vector<IterationRecord>& log() const { return log_; }

private:
    std::vector<IterationRecord> log_;
};

/// Homogeneous self-dual embedding with Nesterov-Todd scaling and a Mehrotra predictor-corrector.
/// Deterministic for a given problem. Throws SolverError on numerical breakdown away from a solution
/// and std::invalid_argument when the PSD dimension exceeds options.max_psd_dimension.
ConeSolution solve(const ConicProblem& problem, const SolverOptions& options = {});

/// Value of an LMI block at x (complex Hermitian form).
CMat lmi_value(const LmiBlock& block, const RVec& x);

/// Plain-text dump: dimensions, cost, then labeled constraint blocks. Lossless for finite doubles.
void write_problem(std::ostream& os, const ConicProblem& problem);
ConicProblem read_problem(std::istream& is);

}  // namespace activeris::conic

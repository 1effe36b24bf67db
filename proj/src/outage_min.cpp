#include "activeris/outage_min.hpp"

#include "activeris/mm_rate_max.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace activeris {

using Eigen::Index;

void OutageSpec::validate(std::size_t num_users) const {
    if (target_rate.size() != num_users || outage_eps.size() != num_users)
        throw std::invalid_argument("OutageSpec: expected one target and one outage level per user");
    for (std::size_t k = 0; k < num_users; ++k) {
        if (!(target_rate[k] > 0.0) || !std::isfinite(target_rate[k]))
            throw std::invalid_argument("OutageSpec: target rate of user " + std::to_string(k) + " must be positive");
        if (!(outage_eps[k] > 0.0 && outage_eps[k] <= 1.0))
            throw std::invalid_argument("OutageSpec: outage level of user " + std::to_string(k) + " must lie in (0, 1]");
    }
}

void OutageProblem::validate() const {
    const std::size_t k_users = num_users();
    if (k_users == 0) throw std::invalid_argument("OutageProblem: no users");
    const Index n = num_antennas();
    const Index m = num_elements();
    if (n == 0 || m < 0) throw std::invalid_argument("OutageProblem: empty channels");
    for (const CMat& h : channels)
        if (h.rows() != m + 1 || h.cols() != n) throw std::invalid_argument("OutageProblem: channel dimension mismatch");
    noise.validate(k_users);
    spec.validate(k_users);
    if (!(max_gain >= 1.0)) throw std::invalid_argument("OutageProblem: max_gain must be >= 1");
    if (m > 0) {
        stats.validate();
        if (stats.num_users() != k_users || static_cast<Index>(stats.num_ris_elements()) != m)
            throw std::invalid_argument("OutageProblem: statistics do not match the channels");
        if (power.mean.rows() != m || power.mean.cols() != n)
            throw std::invalid_argument("OutageProblem: RIS power model dimension mismatch");
    }
}

CMat phi_matrix(const CMat& precoder, std::size_t k, double target_rate) {
    if (!(target_rate > 0.0)) throw std::domain_error("phi_matrix: target rate must be positive");
    const Index kk = static_cast<Index>(k);
    if (kk >= precoder.cols()) throw std::out_of_range("phi_matrix: user index");
    const CVec f = precoder.col(kk);
    CMat phi = f * f.adjoint() / (std::exp2(target_rate) - 1.0);
    for (Index i = 0; i < precoder.cols(); ++i)
        if (i != kk) phi -= precoder.col(i) * precoder.col(i).adjoint();
    return phi;
}

std::pair<cd, cd> hadamard_trace_identity(const CMat& a, const CVec& b, const CMat& c) {
    const Index n = b.size();
    if (a.rows() != n || a.cols() != n || c.rows() != n || c.cols() != n)
        throw std::invalid_argument("hadamard_trace_identity: dimension mismatch");
    const CMat diag_b = b.asDiagonal();
    const cd lhs = (a * diag_b * c * diag_b).trace();
    const CMat had = a.transpose().cwiseProduct(c);
    const cd rhs = (b.transpose() * had * b)(0);
    return {lhs, rhs};
}

CMat coupling_matrix(const ChannelStatistics& stats, std::size_t k) {
    const CMat& sigma = stats.ris_user_correlation[k];
    const CVec& h = stats.ris_user_los[k];
    const double delta = stats.delta[k + 1];
    const CMat outer = h.conjugate() * h.transpose();
    return (sigma.transpose() + 2.0 * delta * outer).cwiseProduct(sigma);
}

BtiBlock make_bti_block(const ChannelStatistics& stats, std::size_t k, double outage_eps, bool robust) {
    if (!(outage_eps > 0.0 && outage_eps <= 1.0)) throw std::domain_error("bti: outage level must lie in (0, 1]");
    const double beta = stats.beta[k + 1];
    const double delta = stats.delta[k + 1];
    BtiBlock b;
    b.scatter = robust ? beta / (delta + 1.0) : 0.0;
    b.los_weight = beta * delta / (delta + 1.0);
    b.los = stats.ris_user_los[k];
    const CMat& sigma = stats.ris_user_correlation[k];
    b.correlation_diag = sigma.diagonal().real();
    b.correlation_half = hermitian_sqrt(sigma);
    const CMat c = coupling_matrix(stats, k);
    const double scale = std::max(1.0, c.norm());
    if (!is_hermitian(c, 1e-10 * scale) || min_eigenvalue(c) < -1e-10 * scale)
        throw std::domain_error("bti: coupling matrix of user " + std::to_string(k) + " is not Hermitian PSD");
    b.coupling_half = symmetric_sqrt(c.real(), 1e-10);
    b.x_weight = std::sqrt(2.0 * std::log(1.0 / outage_eps));
    b.y_weight = -std::log(outage_eps);
    return b;
}

namespace {

struct ReflectionTerms {
    double trace = 0.0;
    double soc = 0.0;
    CMat lmi;
    double lmi_top = 0.0;  // max(lambda_max(U), 0)
    double los = 0.0;
};

ReflectionTerms reflection_terms(const BtiBlock& b, const RVec& p) {
    ReflectionTerms t;
    if (p.size() == 0) return t;
    t.trace = b.scatter * b.correlation_diag.dot(p);
    t.soc = b.scatter * (b.coupling_half * p).norm();
    t.lmi = b.scatter * (b.correlation_half * p.cast<cd>().asDiagonal() * b.correlation_half);
    t.lmi = 0.5 * (t.lmi + t.lmi.adjoint()).eval();
    t.lmi_top = b.scatter > 0.0 ? std::max(0.0, max_eigenvalue(t.lmi)) : 0.0;
    t.los = b.los_weight * b.los.cwiseAbs2().dot(p);
    return t;
}

double noise_terms(const BtiBlock& b, const ReflectionTerms& t) {
    return t.trace + b.x_weight * t.soc + b.y_weight * t.lmi_top + t.los;
}

std::vector<BtiBlock> bti_blocks(const OutageProblem& problem) {
    std::vector<BtiBlock> blocks;
    const bool has_ris = problem.num_elements() > 0;
    for (std::size_t k = 0; k < problem.num_users(); ++k) {
        if (has_ris) {
            blocks.push_back(make_bti_block(problem.stats, k, problem.spec.outage_eps[k], problem.robust));
        } else {
            BtiBlock b;
            const double rho = problem.spec.outage_eps[k];
            b.x_weight = std::sqrt(2.0 * std::log(1.0 / rho));
            b.y_weight = -std::log(rho);
            blocks.push_back(b);
        }
    }
    return blocks;
}

CVec effective_gain(const CMat& channel, const CVec& reflection) {
    return channel.adjoint() * stacked_reflection(reflection);
}

// sigma_k^2 plus the scaled RIS-noise terms at the smallest admissible slacks.
double required_signal(const BtiBlock& b, const RVec& p, const OutageProblem& problem, std::size_t k) {
    const ReflectionTerms t = reflection_terms(b, p);
    return problem.noise.user_noise[k] + problem.noise.ris_noise * noise_terms(b, t);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

double BtiTerms::constant(double ris_noise) const {
    if (ris_noise == 0.0) return signal_margin > 0.0 ? -std::numeric_limits<double>::infinity()
                                                     : std::numeric_limits<double>::infinity();
    return los_term - signal_margin / ris_noise;
}

double BtiTerms::scaled_lhs(double ris_noise) const {
    const double top = lmi_matrix.size() ? std::max(0.0, max_eigenvalue(lmi_matrix)) : 0.0;
    return ris_noise * (trace_term + x_weight * soc_norm + y_weight * top + los_term) - signal_margin;
}

BtiTerms bti_terms(const CMat& precoder, const CVec& reflection, const OutageProblem& problem, std::size_t k) {
    if (k >= problem.num_users()) throw std::out_of_range("bti_terms: user index");
    if (reflection.size() != problem.num_elements()) throw std::invalid_argument("bti_terms: reflection size");
    const BtiBlock b = problem.num_elements() > 0
                           ? make_bti_block(problem.stats, k, problem.spec.outage_eps[k], problem.robust)
                           : bti_blocks(problem)[k];
    const RVec p = reflection.cwiseAbs2();
    const ReflectionTerms t = reflection_terms(b, p);
    BtiTerms out;
    out.trace_term = t.trace;
    out.soc_norm = t.soc;
    out.lmi_matrix = t.lmi;
    out.los_term = t.los;
    out.x_weight = b.x_weight;
    out.y_weight = b.y_weight;
    const CVec g = effective_gain(problem.channels[k], reflection);
    const CMat phi = phi_matrix(precoder, k, problem.spec.target_rate[k]);
    out.signal_margin = (g.adjoint() * phi * g)(0).real() - problem.noise.user_noise[k];
    return out;
}

namespace {

std::vector<double> violation_with(const std::vector<BtiBlock>& blocks, const CMat& precoder, const CVec& reflection,
                                   const OutageProblem& problem) {
    const RVec p = reflection.cwiseAbs2();
    std::vector<double> v(problem.num_users());
    for (std::size_t k = 0; k < v.size(); ++k) {
        const double required = required_signal(blocks[k], p, problem, k);
        const CVec g = effective_gain(problem.channels[k], reflection);
        const double useful = (g.adjoint() * phi_matrix(precoder, k, problem.spec.target_rate[k]) * g)(0).real();
        v[k] = (required - useful) / required;
    }
    return v;
}

}  // namespace

std::vector<double> bti_violation(const CMat& precoder, const CVec& reflection, const OutageProblem& problem) {
    return violation_with(bti_blocks(problem), precoder, reflection, problem);
}

double outage_total_power(const CMat& precoder, const CVec& reflection, const OutageProblem& problem) {
    double total = precoder.squaredNorm();
    if (reflection.size() > 0) total += problem.power.evaluate(precoder, reflection);
    return total;
}

// ---------------------------------------------------------------------------------------------
// Hermitian variable blocks

namespace {

std::size_t pair_slot(Index n, Index i, Index j) {
    // rank of (i, j), i < j, in row-major order over the strict upper triangle
    const Index before = i * n - i * (i + 1) / 2;
    return static_cast<std::size_t>(n + 2 * (before + (j - i - 1)));
}

}  // namespace

void HermitianBlock::add_trace(const CMat& a, double scale, RVec& row) const {
    for (Index i = 0; i < order; ++i) {
        row(static_cast<Index>(diag(i))) += scale * a(i, i).real();
        for (Index j = i + 1; j < order; ++j) {
            const std::size_t s = offset + pair_slot(order, i, j);
            row(static_cast<Index>(s)) += scale * 2.0 * a(i, j).real();
            row(static_cast<Index>(s + 1)) += scale * 2.0 * a(i, j).imag();
        }
    }
}

void HermitianBlock::add_lmi_terms(conic::LmiBlock& block) const {
    for (Index i = 0; i < order; ++i) {
        CMat e = CMat::Zero(order, order);
        e(i, i) = 1.0;
        block.terms.push_back({diag(i), e});
        for (Index j = i + 1; j < order; ++j) {
            const std::size_t s = offset + pair_slot(order, i, j);
            CMat re = CMat::Zero(order, order);
            re(i, j) = 1.0;
            re(j, i) = 1.0;
            block.terms.push_back({s, re});
            CMat im = CMat::Zero(order, order);
            im(i, j) = cd(0.0, 1.0);
            im(j, i) = cd(0.0, -1.0);
            block.terms.push_back({s + 1, im});
        }
    }
}

CMat HermitianBlock::extract(const RVec& x) const {
    CMat out(order, order);
    for (Index i = 0; i < order; ++i) {
        out(i, i) = x(static_cast<Index>(diag(i)));
        for (Index j = i + 1; j < order; ++j) {
            const std::size_t s = offset + pair_slot(order, i, j);
            const cd v(x(static_cast<Index>(s)), x(static_cast<Index>(s + 1)));
            out(i, j) = v;
            out(j, i) = std::conj(v);
        }
    }
    return out;
}

std::vector<CMat> PrecoderSdr::covariance_values(const RVec& x) const {
    std::vector<CMat> out;
    for (const HermitianBlock& b : covariances) out.push_back(scale * b.extract(x));
    return out;
}

CMat ReflectionSdr::stacked_value(const RVec& x) const { return stacked.extract(x); }

namespace {

bool has_slack(const BtiBlock& b) { return b.x_weight > 0.0 || b.y_weight > 0.0; }

constexpr std::size_t kNoSlack = static_cast<std::size_t>(-1);

// BTI slack constraints for one user: ||ratio * (a x + b)|| <= x_k, y_k I - U >= 0, y_k >= 0.
// `lmi_constant` is -ratio * U when U is fixed; `lmi_terms` carry the reflection-dependent part.
void add_slack_constraints(conic::ConicProblem& prob, const BtiBlock& b, std::size_t x_var, std::size_t y_var,
                           const RMat& soc_a, const RVec& soc_b, const CMat& lmi_constant,
                           const std::vector<conic::LmiTerm>& lmi_terms, const std::string& tag) {
    const std::size_t nv = prob.num_variables;
    auto unit_row = [&](std::size_t var, double constant) {
        conic::LinearRow r;
        r.coeffs = RVec::Zero(static_cast<Index>(nv));
        r.coeffs(static_cast<Index>(var)) = 1.0;
        r.constant = constant;
        return r;
    };
    if (!has_slack(b)) return;
    if (soc_b.size() > 0 && b.scatter > 0.0) {
        conic::SocBlock soc;
        soc.label = "soc_" + tag;
        soc.a = soc_a;
        soc.b = soc_b;
        soc.d = RVec::Zero(static_cast<Index>(nv));
        soc.d(static_cast<Index>(x_var)) = 1.0;
        prob.socs.push_back(std::move(soc));
    } else {
        prob.inequalities.push_back(unit_row(x_var, 0.0));
    }
    prob.inequalities.push_back(unit_row(y_var, 0.0));
    if (lmi_constant.size() > 0 && b.scatter > 0.0) {
        conic::LmiBlock lmi;
        lmi.label = "lmi_" + tag;
        lmi.constant = lmi_constant;
        lmi.terms = lmi_terms;
        lmi.terms.push_back({y_var, CMat::Identity(lmi_constant.rows(), lmi_constant.cols())});
        prob.lmis.push_back(std::move(lmi));
    }
}

}  // namespace

PrecoderSdr build_precoder_sdr(const CVec& reflection, const OutageProblem& problem, double scale) {
    problem.validate();
    const std::size_t k_users = problem.num_users();
    const Index n = problem.num_antennas();
    const Index m = problem.num_elements();
    if (reflection.size() != m) throw std::invalid_argument("build_precoder_sdr: reflection size");
    const std::vector<BtiBlock> blocks = bti_blocks(problem);
    const RVec p = reflection.cwiseAbs2();

    std::vector<CVec> gains;
    double gain_sum = 0.0;
    double noise_sum = 0.0;
    for (std::size_t k = 0; k < k_users; ++k) {
        gains.push_back(effective_gain(problem.channels[k], reflection));
        gain_sum += gains.back().squaredNorm();
        noise_sum += problem.noise.user_noise[k];
    }

    PrecoderSdr sdr;
    if (!(scale >= 0.0) || !std::isfinite(scale)) throw std::invalid_argument("build_precoder_sdr: scale must be >= 0");
    sdr.scale = scale > 0.0 ? scale : (gain_sum > 0.0 ? noise_sum / gain_sum : 1.0);
    sdr.cost_scale = sdr.scale;
    std::size_t next = 0;
    for (std::size_t k = 0; k < k_users; ++k) {
        HermitianBlock blk{next, n};
        sdr.covariances.push_back(blk);
        next += blk.size();
    }
    for (std::size_t k = 0; k < k_users; ++k) {
        const bool slack = has_slack(blocks[k]);
        sdr.x_vars.push_back(slack ? next++ : kNoSlack);
        sdr.y_vars.push_back(slack ? next++ : kNoSlack);
    }
    conic::ConicProblem& prob = sdr.problem;
    prob.num_variables = next;
    prob.cost = RVec::Zero(static_cast<Index>(next));

    CMat weight = CMat::Identity(n, n);
    if (m > 0) weight += problem.power.precoder_form(reflection);
    for (const HermitianBlock& blk : sdr.covariances) blk.add_trace(weight, 1.0, prob.cost);

    for (std::size_t k = 0; k < k_users; ++k) {
        const BtiBlock& b = blocks[k];
        const double sigma = problem.noise.user_noise[k];
        const double ratio = problem.noise.ris_noise / sigma;
        const ReflectionTerms t = reflection_terms(b, p);
        const CMat outer = gains[k] * gains[k].adjoint();
        const double divisor = std::exp2(problem.spec.target_rate[k]) - 1.0;

        conic::LinearRow row;
        row.coeffs = RVec::Zero(static_cast<Index>(next));
        for (std::size_t i = 0; i < k_users; ++i) {
            const double c = i == k ? sdr.scale / (sigma * divisor) : -sdr.scale / sigma;
            sdr.covariances[i].add_trace(outer, c, row.coeffs);
        }
        if (has_slack(b)) {
            row.coeffs(static_cast<Index>(sdr.x_vars[k])) = -b.x_weight;
            row.coeffs(static_cast<Index>(sdr.y_vars[k])) = -b.y_weight;
        }
        row.constant = -1.0 - ratio * (t.trace + t.los);
        prob.inequalities.push_back(std::move(row));

        const RVec soc_b = m > 0 ? RVec(ratio * b.scatter * (b.coupling_half * p)) : RVec();
        const RMat soc_a = RMat::Zero(soc_b.size(), static_cast<Index>(next));
        const CMat lmi_constant = m > 0 ? CMat(-ratio * t.lmi) : CMat();
        add_slack_constraints(prob, b, sdr.x_vars[k], sdr.y_vars[k], soc_a, soc_b, lmi_constant, {},
                              "user" + std::to_string(k));
    }
    for (std::size_t k = 0; k < k_users; ++k) {
        conic::LmiBlock psd;
        psd.label = "gamma" + std::to_string(k);
        psd.constant = CMat::Zero(n, n);
        sdr.covariances[k].add_lmi_terms(psd);
        prob.lmis.push_back(std::move(psd));
    }
    return sdr;
}

ReflectionSdr build_reflection_sdr(const CMat& precoder, const OutageProblem& problem) {
    problem.validate();
    const std::size_t k_users = problem.num_users();
    const Index m = problem.num_elements();
    if (m == 0) throw std::invalid_argument("build_reflection_sdr: no RIS elements");
    if (precoder.rows() != problem.num_antennas() || precoder.cols() != static_cast<Index>(k_users))
        throw std::invalid_argument("build_reflection_sdr: precoder dimension mismatch");
    const std::vector<BtiBlock> blocks = bti_blocks(problem);

    ReflectionSdr sdr;
    sdr.stacked = HermitianBlock{0, m + 1};
    std::size_t next = sdr.stacked.size();
    for (std::size_t k = 0; k < k_users; ++k) {
        const bool slack = has_slack(blocks[k]);
        sdr.x_vars.push_back(slack ? next++ : kNoSlack);
        sdr.y_vars.push_back(slack ? next++ : kNoSlack);
    }
    conic::ConicProblem& prob = sdr.problem;
    prob.num_variables = next;
    prob.cost = RVec::Zero(static_cast<Index>(next));

    const RVec weights = problem.power.reflection_form(precoder);
    const double mean_weight = weights.mean();
    sdr.cost_scale = mean_weight > 0.0 ? mean_weight : 1.0;
    for (Index i = 0; i < m; ++i) prob.cost(static_cast<Index>(sdr.stacked.diag(i))) = weights(i) / sdr.cost_scale;

    for (std::size_t k = 0; k < k_users; ++k) {
        const BtiBlock& b = blocks[k];
        const double sigma = problem.noise.user_noise[k];
        const double ratio = problem.noise.ris_noise / sigma;
        const CMat& h = problem.channels[k];
        const CMat quad = h * phi_matrix(precoder, k, problem.spec.target_rate[k]) * h.adjoint();

        conic::LinearRow row;
        row.coeffs = RVec::Zero(static_cast<Index>(next));
        sdr.stacked.add_trace(quad, 1.0 / sigma, row.coeffs);
        for (Index i = 0; i < m; ++i)
            row.coeffs(static_cast<Index>(sdr.stacked.diag(i))) -=
                ratio * (b.scatter * b.correlation_diag(i) + b.los_weight * std::norm(b.los(i)));
        if (has_slack(b)) {
            row.coeffs(static_cast<Index>(sdr.x_vars[k])) = -b.x_weight;
            row.coeffs(static_cast<Index>(sdr.y_vars[k])) = -b.y_weight;
        }
        row.constant = -1.0;
        prob.inequalities.push_back(std::move(row));

        RMat soc_a = RMat::Zero(m, static_cast<Index>(next));
        for (Index i = 0; i < m; ++i)
            soc_a.col(static_cast<Index>(sdr.stacked.diag(i))) = ratio * b.scatter * b.coupling_half.col(i);
        std::vector<conic::LmiTerm> terms;
        for (Index i = 0; i < m; ++i) {
            const CVec s = b.correlation_half.col(i);
            CMat coeff = -ratio * b.scatter * (s * s.adjoint());
            coeff = 0.5 * (coeff + coeff.adjoint()).eval();
            terms.push_back({sdr.stacked.diag(i), coeff});
        }
        add_slack_constraints(prob, b, sdr.x_vars[k], sdr.y_vars[k], soc_a, RVec::Zero(m), CMat::Zero(m, m), terms,
                              "user" + std::to_string(k));
    }

    auto diag_row = [&](Index i, double sign, double constant) {
        conic::LinearRow r;
        r.coeffs = RVec::Zero(static_cast<Index>(next));
        r.coeffs(static_cast<Index>(sdr.stacked.diag(i))) = sign;
        r.constant = constant;
        return r;
    };
    prob.equalities.push_back(diag_row(m, 1.0, -1.0));
    const bool fixed_modulus = problem.max_gain <= 1.0 + 1e-12;
    for (Index i = 0; i < m; ++i) {
        if (fixed_modulus) {
            prob.equalities.push_back(diag_row(i, 1.0, -1.0));
        } else {
            prob.inequalities.push_back(diag_row(i, 1.0, -1.0));
            prob.inequalities.push_back(diag_row(i, -1.0, problem.max_gain));
        }
    }
    conic::LmiBlock psd;
    psd.label = "stacked";
    psd.constant = CMat::Zero(m + 1, m + 1);
    sdr.stacked.add_lmi_terms(psd);
    prob.lmis.push_back(std::move(psd));
    return sdr;
}

// ---------------------------------------------------------------------------------------------
// Recovery

RankOneResult recover_rank_one(const CMat& covariance, double ratio_tol) {
    if (covariance.rows() != covariance.cols() || covariance.rows() == 0)
        throw std::invalid_argument("recover_rank_one: square non-empty matrix required");
    const CMat herm = 0.5 * (covariance + covariance.adjoint());
    Eigen::SelfAdjointEigenSolver<CMat> es(herm);
    const Index n = herm.rows();
    RankOneResult r;
    r.eigenvalues = es.eigenvalues().reverse();
    const double top = r.eigenvalues(0);
    if (!(top > 0.0)) {
        r.vector = CVec::Zero(n);
        return r;
    }
    const double second = n > 1 ? std::max(0.0, r.eigenvalues(1)) : 0.0;
    r.rank_one = second / top <= ratio_tol;
    r.vector = std::sqrt(top) * es.eigenvectors().col(n - 1);
    return r;
}

namespace {

constexpr double kAllocationMargin = 1e-9;

std::optional<RVec> allocation_with(const std::vector<BtiBlock>& blocks, const CMat& directions,
                                    const CVec& reflection, const OutageProblem& problem, double margin) {
    const Index k_users = static_cast<Index>(problem.num_users());
    if (directions.cols() != k_users || directions.rows() != problem.num_antennas())
        throw std::invalid_argument("min_power_allocation: direction dimension mismatch");
    const RVec p = reflection.cwiseAbs2();
    RMat a(k_users, k_users);
    RVec rhs(k_users);
    for (Index k = 0; k < k_users; ++k) {
        const std::size_t ku = static_cast<std::size_t>(k);
        const CVec g = effective_gain(problem.channels[ku], reflection);
        const Eigen::RowVectorXcd gv = g.adjoint() * directions;
        for (Index i = 0; i < k_users; ++i) a(k, i) = -std::norm(gv(i));
        a(k, k) = std::norm(gv(k)) / (std::exp2(problem.spec.target_rate[ku]) - 1.0);
        rhs(k) = required_signal(blocks[ku], p, problem, ku) * (1.0 + margin);
    }
    Eigen::FullPivLU<RMat> lu(a);
    if (!lu.isInvertible()) return std::nullopt;
    const RVec sol = lu.solve(rhs);
    if (!sol.allFinite() || (sol.array() <= 0.0).any()) return std::nullopt;
    if ((a * sol - rhs).norm() > 1e-8 * rhs.norm()) return std::nullopt;
    return sol;
}

}  // namespace

std::optional<RVec> min_power_allocation(const CMat& directions, const CVec& reflection, const OutageProblem& problem,
                                         double margin) {
    return allocation_with(bti_blocks(problem), directions, reflection, problem, margin);
}

namespace {

CMat normalized_columns(const CMat& x) {
    CMat out = x;
    for (Index j = 0; j < x.cols(); ++j) {
        const double nrm = x.col(j).norm();
        if (nrm > 0.0) out.col(j) /= nrm;
    }
    return out;
}

CMat scale_columns(const CMat& directions, const RVec& power) {
    CMat f = directions;
    for (Index j = 0; j < f.cols(); ++j) f.col(j) *= std::sqrt(power(j));
    return f;
}

// E Y^{1/2} with negligible eigenvalues removed.
CMat gaussian_factor(const CMat& covariance) {
    const CMat herm = 0.5 * (covariance + covariance.adjoint());
    Eigen::SelfAdjointEigenSolver<CMat> es(herm);
    RVec ev = es.eigenvalues();
    const double top = std::max(0.0, ev.maxCoeff());
    for (Index i = 0; i < ev.size(); ++i) ev(i) = ev(i) > 1e-12 * top ? std::sqrt(ev(i)) : 0.0;
    return es.eigenvectors() * ev.cast<cd>().asDiagonal();
}

std::string spectrum_text(const std::vector<RVec>& spectra) {
    std::ostringstream os;
    os.precision(6);
    for (std::size_t k = 0; k < spectra.size(); ++k) {
        os << (k ? "; " : "") << "user " << k << ":";
        for (Index i = 0; i < spectra[k].size(); ++i) os << ' ' << spectra[k](i);
    }
    return os.str();
}

}  // namespace

PrecoderRecovery recover_precoder(const std::vector<CMat>& covariances, const CVec& reflection,
                                  const OutageProblem& problem, int candidates, std::uint64_t seed,
                                  double ratio_tol) {
    const std::size_t k_users = problem.num_users();
    if (covariances.size() != k_users) throw std::invalid_argument("recover_precoder: one covariance per user");
    const Index n = problem.num_antennas();
    PrecoderRecovery out;
    CMat principal(n, static_cast<Index>(k_users));
    bool all_rank_one = true;
    for (std::size_t k = 0; k < k_users; ++k) {
        const RankOneResult r = recover_rank_one(covariances[k], ratio_tol);
        out.spectra.push_back(r.eigenvalues);
        principal.col(static_cast<Index>(k)) = r.vector;
        all_rank_one = all_rank_one && r.rank_one;
    }
    const CMat principal_dirs = normalized_columns(principal);
    const std::vector<BtiBlock> blocks = bti_blocks(problem);

    auto accept = [&](const CMat& f) {
        for (double v : violation_with(blocks, f, reflection, problem))
            if (v > 1e-6) return false;
        return true;
    };

    if (all_rank_one) {
        if (auto power = allocation_with(blocks, principal_dirs, reflection, problem, kAllocationMargin)) {
            CMat f = scale_columns(principal_dirs, *power);
            if (accept(f)) {
                out.precoder = std::move(f);
                out.rank_one = true;
                return out;
            }
        }
    }

    std::vector<CMat> factors;
    for (std::size_t k = 0; k < k_users; ++k) factors.push_back(gaussian_factor(covariances[k]));
    Rng rng(seed);
    double best = std::numeric_limits<double>::infinity();
    CMat best_f;
    for (int c = 0; c <= candidates; ++c) {
        CMat dirs = principal_dirs;
        if (c > 0)
            for (std::size_t k = 0; k < k_users; ++k) {
                const CVec v = factors[k] * complex_normal(rng, n, 1);
                if (v.norm() > 0.0) dirs.col(static_cast<Index>(k)) = v.normalized();
            }
        const auto power = allocation_with(blocks, dirs, reflection, problem, kAllocationMargin);
        if (!power) continue;
        CMat f = scale_columns(dirs, *power);
        const double total = outage_total_power(f, reflection, problem);
        if (total < best && accept(f)) {
            best = total;
            best_f = std::move(f);
        }
    }
    if (!std::isfinite(best))
        throw RecoveryError("recover_precoder: no feasible precoder recovered; eigenvalues " + spectrum_text(out.spectra),
                            out.spectra);
    out.precoder = std::move(best_f);
    return out;
}

RandomizationResult gaussian_randomization(const CMat& stacked, int candidates, double max_gain, std::uint64_t seed,
                                           const CandidateCheck& check) {
    if (stacked.rows() != stacked.cols() || stacked.rows() < 2)
        throw std::invalid_argument("gaussian_randomization: square matrix of order >= 2 required");
    if (candidates < 1) throw std::invalid_argument("gaussian_randomization: at least one candidate");
    const Index order = stacked.rows();
    const Index m = order - 1;
    const CMat factor = gaussian_factor(stacked);
    Rng rng(seed);
    RandomizationResult best;
    best.objective = std::numeric_limits<double>::infinity();
    for (int c = 0; c < candidates; ++c) {
        const CVec v = factor * complex_normal(rng, order, 1);
        const cd last = v(m);
        if (std::abs(last) <= 1e-300) continue;
        const CVec w = clamp_modulus(v.head(m) / last, max_gain);
        const std::optional<double> value = check(w);
        if (!value) continue;
        ++best.feasible;
        if (*value < best.objective) {
            best.objective = *value;
            best.reflection = w;
        }
    }
    if (best.feasible == 0)
        throw RandomizationError("gaussian_randomization: no feasible candidate among " + std::to_string(candidates) +
                                 "; retry with more candidates");
    return best;
}

// ---------------------------------------------------------------------------------------------
// Alternating loop

void OutageConfig::validate() const {
    if (max_iters < 0) throw std::invalid_argument("OutageConfig: max_iters must be >= 0");
    if (!(rel_tol > 0.0)) throw std::invalid_argument("OutageConfig: rel_tol must be positive");
    if (candidates < 1) throw std::invalid_argument("OutageConfig: candidates must be >= 1");
    if (escalation < 1) throw std::invalid_argument("OutageConfig: escalation must be >= 1");
    if (!(rank_tol > 0.0 && rank_tol < 1.0)) throw std::invalid_argument("OutageConfig: rank_tol must lie in (0, 1)");
    if (!(feasibility_tol > 0.0)) throw std::invalid_argument("OutageConfig: feasibility_tol must be positive");
}

CVec aligned_reflection(const std::vector<CMat>& channels, double modulus) {
    if (channels.empty()) throw std::invalid_argument("aligned_reflection: no channels");
    const Index m = channels[0].rows() - 1;
    CMat gram = CMat::Zero(m + 1, m + 1);
    for (const CMat& h : channels) gram += h * h.adjoint();
    Eigen::SelfAdjointEigenSolver<CMat> es(gram);
    const CVec v = es.eigenvectors().col(m);
    const cd ref = std::abs(v(m)) > 1e-12 * v.norm() ? v(m) / std::abs(v(m)) : cd(1.0, 0.0);
    CVec w(m);
    for (Index i = 0; i < m; ++i) {
        const cd z = v(i) / ref;
        w(i) = std::abs(z) > 0.0 ? modulus * z / std::abs(z) : cd(modulus, 0.0);
    }
    return w;
}

namespace {

struct PrecoderStep {
    CMat precoder;
    bool rank_one = false;
};

std::optional<PrecoderStep> precoder_step(const CVec& reflection, const OutageProblem& problem,
                                          const OutageConfig& cfg, std::uint64_t seed) {
    PrecoderSdr sdr = build_precoder_sdr(reflection, problem);
    conic::ConeSolution sol;
    std::vector<conic::IterationRecord> log;
    try {
        sol = conic::solve(sdr.problem, cfg.solver);
        log = sol.log;
    } catch (const conic::SolverError& e) {
        sol.status = conic::Status::max_iters;
        log = e.log();
    }
    if (sol.status == conic::Status::max_iters) {
        // Retry once with the variable rescaled by the objective of the most accurate iterate.
        const auto best = std::min_element(log.begin(), log.end(), [](const auto& a, const auto& b) {
            return std::max(a.primal_residual, a.dual_residual) < std::max(b.primal_residual, b.dual_residual);
        });
        if (best == log.end() || !(best->primal_objective > 0.0) || !std::isfinite(best->primal_objective))
            return std::nullopt;
        sdr = build_precoder_sdr(reflection, problem,
                                 sdr.scale * best->primal_objective / static_cast<double>(problem.num_users()));
        try {
            sol = conic::solve(sdr.problem, cfg.solver);
        } catch (const conic::SolverError&) {
            return std::nullopt;
        }
    }
    if (sol.status != conic::Status::optimal) return std::nullopt;
    try {
        const PrecoderRecovery rec = recover_precoder(sdr.covariance_values(sol.x), reflection, problem,
                                                      cfg.candidates, seed, cfg.rank_tol);
        return PrecoderStep{rec.precoder, rec.rank_one};
    } catch (const RecoveryError&) {
        return std::nullopt;
    }
}

struct ReflectionStepResult {
    CVec reflection;
    CMat precoder;
    double total = 0.0;
};

std::optional<ReflectionStepResult> reflection_step(const CMat& precoder, const OutageProblem& problem,
                                                    const OutageConfig& cfg, std::uint64_t seed) {
    const ReflectionSdr sdr = build_reflection_sdr(precoder, problem);
    conic::ConeSolution sol;
    try {
        sol = conic::solve(sdr.problem, cfg.solver);
    } catch (const conic::SolverError&) {
        return std::nullopt;
    }
    if (sol.status != conic::Status::optimal) return std::nullopt;
    const CMat stacked = sdr.stacked_value(sol.x);
    const CMat dirs = normalized_columns(precoder);
    const std::vector<BtiBlock> blocks = bti_blocks(problem);
    CandidateCheck check = [&](const CVec& w) -> std::optional<double> {
        const auto power = allocation_with(blocks, dirs, w, problem, kAllocationMargin);
        if (!power) return std::nullopt;
        return outage_total_power(scale_columns(dirs, *power), w, problem);
    };
    RandomizationResult r;
    try {
        r = gaussian_randomization(stacked, cfg.candidates, problem.max_gain, seed, check);
    } catch (const RandomizationError&) {
        if (cfg.escalation <= 1) return std::nullopt;
        try {
            r = gaussian_randomization(stacked, cfg.candidates * cfg.escalation, problem.max_gain, mix_seed(seed, 1),
                                       check);
        } catch (const RandomizationError&) {
            return std::nullopt;
        }
    }
    const auto power = min_power_allocation(dirs, r.reflection, problem);
    ReflectionStepResult out{r.reflection, scale_columns(dirs, *power), 0.0};
    out.total = outage_total_power(out.precoder, out.reflection, problem);
    return out;
}

}  // namespace

OutageResult run_outage_ao(const OutageProblem& problem, const OutageConfig& cfg) {
    problem.validate();
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    const Index m = problem.num_elements();

    OutageResult res;
    Beamformers& bf = res.beamformers;
    bool rank_one = false;
    std::vector<double> moduli;
    if (m == 0) {
        moduli.push_back(0.0);
    } else {
        // Halving ladder from full gain down to unit modulus.
        for (double a = std::sqrt(problem.max_gain); a > 1.0; a *= 0.5) moduli.push_back(a);
        moduli.push_back(1.0);
    }
    bool found = false;
    double best = std::numeric_limits<double>::infinity();
    for (double modulus : moduli) {
        const CVec w = m > 0 ? aligned_reflection(problem.channels, modulus) : CVec();
        if (auto step = precoder_step(w, problem, cfg, mix_seed(cfg.seed, 0))) {
            const double total = outage_total_power(step->precoder, w, problem);
            if (total < best) {
                best = total;
                bf.reflection = w;
                bf.precoder = step->precoder;
                rank_one = step->rank_one;
                found = true;
            }
        }
    }
    if (!found) throw OutageInfeasibleError("run_outage_ao: no feasible precoder at the initial reflections");

    auto record = [&](int it, bool w_ok, bool f_ok) {
        OutageRecord r;
        r.iteration = it;
        r.bs_power = bf.precoder.squaredNorm();
        r.total_power = outage_total_power(bf.precoder, bf.reflection, problem);
        r.ris_power = r.total_power - r.bs_power;
        const std::vector<double> v = bti_violation(bf.precoder, bf.reflection, problem);
        r.max_violation = *std::max_element(v.begin(), v.end());
        r.reflection_accepted = w_ok;
        r.precoder_accepted = f_ok;
        r.rank_one = rank_one;
        r.seconds = seconds_since(start);
        res.trace.push_back(r);
    };
    record(0, false, true);
    if (m == 0) {
        res.converged = true;
        return res;
    }

    double current = res.trace.back().total_power;
    for (int it = 1; it <= cfg.max_iters; ++it) {
        const double previous = current;
        bool w_ok = false;
        bool f_ok = false;
        if (auto step = reflection_step(bf.precoder, problem, cfg, mix_seed(cfg.seed, 2 * static_cast<std::uint64_t>(it)))) {
            if (step->total <= current) {
                bf.reflection = step->reflection;
                bf.precoder = step->precoder;
                current = step->total;
                w_ok = true;
            }
        }
        if (auto step = precoder_step(bf.reflection, problem, cfg,
                                      mix_seed(cfg.seed, 2 * static_cast<std::uint64_t>(it) + 1))) {
            const double total = outage_total_power(step->precoder, bf.reflection, problem);
            if (total <= current) {
                bf.precoder = step->precoder;
                rank_one = step->rank_one;
                current = total;
                f_ok = true;
            }
        }
        record(it, w_ok, f_ok);
        if (previous - current <= cfg.rel_tol * current) {
            res.converged = true;
            break;
        }
    }
    return res;
}

DrawLaw parse_draw_law(const std::string& name) {
    if (name == "conditional") return DrawLaw::conditional;
    if (name == "joint_marginal") return DrawLaw::joint_marginal;
    throw std::invalid_argument("unknown draw law '" + name + "' (expected conditional or joint_marginal)");
}

double empirical_outage(const Beamformers& bf, const OutageProblem& problem, int n_draws, std::uint64_t seed,
                        DrawLaw law) {
    if (n_draws < 1) throw std::invalid_argument("empirical_outage: n_draws must be >= 1");
    const std::size_t k_users = problem.num_users();
    const Index m = problem.num_elements();
    const auto& targets = problem.spec.target_rate;
    if (targets.size() != k_users) throw std::invalid_argument("empirical_outage: one target per user");
    for (double r : targets)
        if (!(r >= 0.0)) throw std::invalid_argument("empirical_outage: negative target rate");
    if (m == 0) {
        const std::vector<double> rates = stacked_rate(bf, problem.channels, std::vector<double>(k_users, 0.0),
                                                       problem.noise);
        for (std::size_t k = 0; k < k_users; ++k)
            if (rates[k] < targets[k]) return 1.0;
        return 0.0;
    }
    const ChannelSampler sampler(problem.stats);
    int outages = 0;
    for (int d = 0; d < n_draws; ++d) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(d)));
        std::vector<double> rates;
        if (law == DrawLaw::conditional) {
            std::vector<double> extra(k_users);
            for (std::size_t k = 0; k < k_users; ++k)
                extra[k] = ris_noise_power(bf.reflection, sampler.sample_ris_user(k, rng), problem.noise.ris_noise);
            rates = stacked_rate(bf, problem.channels, extra, problem.noise);
        } else {
            ChannelRealization r;
            r.bs_ris = sampler.sample_bs_ris(rng);
            for (std::size_t k = 0; k < k_users; ++k) {
                r.ris_user.push_back(sampler.sample_ris_user(k, rng));
                r.direct.push_back(problem.channels[k].row(m).adjoint());
                r.cascaded.push_back(cascaded_channel(r.ris_user[k], r.bs_ris));
            }
            rates = instantaneous_rate(bf, r, problem.noise);
        }
        for (std::size_t k = 0; k < k_users; ++k)
            if (rates[k] < targets[k]) {
                ++outages;
                break;
            }
    }
    return static_cast<double>(outages) / n_draws;
}

}  // namespace activeris

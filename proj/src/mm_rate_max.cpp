#include "activeris/mm_rate_max.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

namespace activeris {

using Index = Eigen::Index;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

CVec effective_gain(const CMat& channel, const CVec& reflection) {
    // H_k^H [w; 1]
    return channel.adjoint() * stacked_reflection(reflection);
}

}  // namespace

void RateProblem::validate() const {
    if (channels.empty()) throw std::invalid_argument("rate problem: no users");
    const Index n = num_antennas();
    const Index m = num_elements();
    if (n == 0 || m < 0) throw std::invalid_argument("rate problem: empty channel");
    for (const auto& h : channels)
        if (h.rows() != m + 1 || h.cols() != n) throw std::invalid_argument("rate problem: channel shapes differ");
    if (m > 0 && psi.size() != channels.size()) throw std::invalid_argument("rate problem: one psi matrix per user");
    for (const auto& p : psi)
        if (m > 0 && (p.rows() != m || p.cols() != m)) throw std::invalid_argument("rate problem: psi has wrong size");
    noise.validate(channels.size());
    if (!(bs_budget > 0.0) || !std::isfinite(bs_budget)) throw std::invalid_argument("rate problem: BS budget must be positive");
    if (!(ris_budget > 0.0)) throw std::invalid_argument("rate problem: RIS budget must be positive");
    if (!(max_gain >= 1.0)) throw std::invalid_argument("rate problem: max gain must be at least 1");
    if (ris_power_limited() && (power.mean.rows() != m || power.mean.cols() != n))
        throw std::invalid_argument("rate problem: RIS power model has wrong size");
}

double sum_rate_objective(const Beamformers& bf, const RateProblem& problem) {
    double total = 0.0;
    for (double r : average_rate_lb(bf, problem.channels, problem.psi, problem.noise)) total += r;
    return total;
}

double ConstraintResiduals::worst(const RateProblem& problem) const {
    double v = std::max(0.0, bs_power / problem.bs_budget);
    if (problem.ris_power_limited()) v = std::max(v, ris_power / problem.ris_budget);
    return std::max({v, min_gain, max_gain / problem.max_gain});
}

ConstraintResiduals constraint_residuals(const Beamformers& bf, const RateProblem& problem) {
    ConstraintResiduals r;
    r.bs_power = bf.precoder.squaredNorm() - problem.bs_budget;
    if (problem.ris_power_limited()) r.ris_power = problem.power.evaluate(bf.precoder, bf.reflection) - problem.ris_budget;
    if (bf.reflection.size() > 0) {
        const RVec g = bf.reflection.cwiseAbs2();
        r.min_gain = (1.0 - g.array()).maxCoeff();
        r.max_gain = (g.array() - problem.max_gain).maxCoeff();
    } else {
        r.min_gain = -kInf;
        r.max_gain = -kInf;
    }
    return r;
}

// ---------------------------------------------------------------- surrogate

SurrogateState surrogate_coeffs(const Beamformers& bf, const RateProblem& problem) {
    const std::size_t k_users = problem.num_users();
    const Index n = problem.num_antennas();
    const Index m = problem.num_elements();
    const CMat& f = bf.precoder;
    SurrogateState s;
    s.precoder_quadratic = CMat::Zero(n, n);
    s.precoder_linear = CMat::Zero(n, static_cast<Index>(k_users));
    s.reflection_quadratic = CMat::Zero(m, m);
    s.reflection_linear = CVec::Zero(m);
    const CMat cov = f * f.adjoint();
    for (std::size_t k = 0; k < k_users; ++k) {
        const CMat& h = problem.channels[k];
        const CVec g = effective_gain(h, bf.reflection);
        const CVec ghf = (g.adjoint() * f).transpose();  // g^H f_i
        const double sigma2 = problem.noise.user_noise[k];
        const double ris_noise = m > 0 ? (bf.reflection.adjoint() * problem.psi[k] * bf.reflection)(0).real() : 0.0;
        const cd t = ghf(static_cast<Index>(k));
        const double r = ghf.squaredNorm() + ris_noise + sigma2;
        const double rest = r - std::norm(t);
        if (!(rest > 0.0)) {
            std::ostringstream msg;
            msg << "surrogate: degenerate expansion point for user " << k;
            throw std::domain_error(msg.str());
        }
        const double rate = std::log(r / rest);
        const cd a = std::conj(t) / rest;
        const double b = std::norm(t) / (r * rest);
        s.t.push_back(t);
        s.r.push_back(r);
        s.a.push_back(a);
        s.b.push_back(b);
        s.constant.push_back(rate - b * (sigma2 + r));
        if (b == 0.0 && a == cd(0.0)) continue;

        s.precoder_quadratic += b * g * g.adjoint();
        s.precoder_linear.col(static_cast<Index>(k)) = std::conj(a) * g;
        if (m > 0) {
            const CMat gk = h.topRows(m);
            const CVec hk = h.row(m).adjoint();
            s.reflection_quadratic += b * (gk * cov * gk.adjoint() + problem.psi[k]);
            s.reflection_linear += a * (gk * f.col(static_cast<Index>(k))) - b * (gk * (cov * hk));
        }
    }
    s.precoder_quadratic = 0.5 * (s.precoder_quadratic + s.precoder_quadratic.adjoint()).eval();
    s.reflection_quadratic = 0.5 * (s.reflection_quadratic + s.reflection_quadratic.adjoint()).eval();
    if (problem.ris_power_limited()) {
        s.precoder_power = problem.power.precoder_form(bf.reflection);
        s.precoder_power_offset = problem.power.precoder_offset(bf.reflection);
        s.reflection_power = problem.power.reflection_form(f);
    } else {
        s.precoder_power = CMat::Zero(n, n);
        s.reflection_power = RVec::Ones(m);
    }
    return s;
}

double surrogate_value(const SurrogateState& s, const Beamformers& bf, const RateProblem& problem) {
    const Index m = problem.num_elements();
    double total = 0.0;
    for (std::size_t k = 0; k < problem.num_users(); ++k) {
        const CVec g = effective_gain(problem.channels[k], bf.reflection);
        const CVec ghf = (g.adjoint() * bf.precoder).transpose();
        const double ris_noise = m > 0 ? (bf.reflection.adjoint() * problem.psi[k] * bf.reflection)(0).real() : 0.0;
        total += s.constant[k] + 2.0 * (s.a[k] * ghf(static_cast<Index>(k))).real() -
                 s.b[k] * (ghf.squaredNorm() + ris_noise);
    }
    return total / std::numbers::ln2;
}

// ---------------------------------------------------------------- configuration

DualStepRule parse_dual_step_rule(const std::string& name) {
    if (name == "bisection") return DualStepRule::bisection;
    if (name == "backtracking") return DualStepRule::backtracking;
    throw std::invalid_argument("unknown dual step rule '" + name + "'");
}

void MmConfig::validate() const {
    if (!(outer_tol > 0.0) || !(dual_tol > 0.0) || !(admm_tol > 0.0) || !(bisection_tol > 0.0))
        throw std::invalid_argument("mm config: tolerances must be positive");
    if (max_outer_iters < 1 || max_dual_iters < 1 || admm_max_iters < 1)
        throw std::invalid_argument("mm config: iteration caps must be positive");
    if (admm_penalty < 0.0) throw std::invalid_argument("mm config: ADMM penalty must be positive (0 for default)");
}

// ---------------------------------------------------------------- precoder block

namespace {

/// F(gamma) = U diag(1/(lambda + gamma)) U^H C for the fixed matrix A + mu D = U diag(lambda) U^H.
class PrecoderFamily {
public:
    PrecoderFamily(const CMat& base, const CMat& linear) {
        Eigen::SelfAdjointEigenSolver<CMat> eig(base);
        basis_ = eig.eigenvectors();
        lambda_ = eig.eigenvalues().cwiseMax(0.0);
        projected_ = basis_.adjoint() * linear;
        weights_ = projected_.rowwise().squaredNorm();
        floor_ = 1e-13 * std::max(1.0, lambda_.maxCoeff());
    }

    double norm2(double gamma) const {
        double total = 0.0;
        for (Index i = 0; i < lambda_.size(); ++i) {
            if (weights_(i) == 0.0) continue;
            const double den = lambda_(i) + gamma;
            if (den <= floor_) return kInf;
            total += weights_(i) / (den * den);
        }
        return total;
    }

    CMat precoder(double gamma) const {
        RVec scale(lambda_.size());
        for (Index i = 0; i < lambda_.size(); ++i) {
            const double den = lambda_(i) + gamma;
            scale(i) = weights_(i) == 0.0 ? 0.0 : 1.0 / std::max(den, floor_);
        }
        return basis_ * scale.cast<cd>().asDiagonal() * projected_;
    }

    /// Smallest gamma >= 0 with ||F(gamma)||^2 <= budget.
    double bs_multiplier(double budget, double tol, int& evaluations) const {
        if (norm2(0.0) <= budget) return 0.0;
        double lo = 0.0;
        double hi = std::sqrt(weights_.sum() / budget);
        for (int it = 0; it < 200; ++it) {
            ++evaluations;
            const double mid = 0.5 * (lo + hi);
            if (norm2(mid) > budget) lo = mid;
            else hi = mid;
            if (norm2(hi) >= budget * (1.0 - tol) || hi - lo <= 1e-16 * hi) break;
        }
        return hi;
    }

private:
    CMat basis_;
    RVec lambda_;
    CMat projected_;
    RVec weights_;
    double floor_ = 0.0;
};

double quad_trace(const CMat& f, const CMat& d) { return (f.adjoint() * d * f).trace().real(); }

/// Scales F down so both constraints hold exactly.
CMat enforce_budgets(CMat f, const CMat& power, double bs_budget, double ris_budget) {
    double c = 1.0;
    const double nf = f.squaredNorm();
    if (nf > bs_budget) c = std::min(c, std::sqrt(bs_budget / nf));
    if (std::isfinite(ris_budget)) {
        const double p = quad_trace(f, power);
        if (p > ris_budget) c = std::min(c, std::sqrt(ris_budget / p));
    }
    if (c < 1.0) f *= c;
    return f;
}

PrecoderSolution precoder_bisection(const CMat& a, const CMat& c, const CMat& d, double bs_budget, double ris_budget,
                                    const MmConfig& cfg) {
    PrecoderSolution out;
    int evals = 0;
    auto at_mu = [&](double mu, double& gamma) {
        const PrecoderFamily fam(a + mu * d, c);
        gamma = fam.bs_multiplier(bs_budget, cfg.bisection_tol, evals);
        return fam.precoder(gamma);
    };
    double gamma = 0.0;
    CMat f = at_mu(0.0, gamma);
    if (!std::isfinite(ris_budget) || quad_trace(f, d) <= ris_budget) {
        out.precoder = f;
        out.bs_multiplier = gamma;
        out.iterations = evals;
        return out;
    }
    // Power slack is non-increasing in mu; bracket then bisect.
    double lo = 0.0;
    double hi = 1.0 / std::max(1e-300, d.norm()) * std::max(1.0, a.norm());
    double gamma_hi = 0.0;
    CMat f_hi = at_mu(hi, gamma_hi);
    int guard = 0;
    while (quad_trace(f_hi, d) > ris_budget) {
        lo = hi;
        hi *= 4.0;
        f_hi = at_mu(hi, gamma_hi);
        if (++guard > 400) throw ConvergenceError("precoder dual: could not bracket the RIS multiplier", {lo, hi});
    }
    for (int it = 0; it < cfg.max_dual_iters; ++it) {
        if (quad_trace(f_hi, d) >= ris_budget * (1.0 - cfg.bisection_tol) || hi - lo <= 1e-15 * hi) break;
        const double mid = 0.5 * (lo + hi);
        double gamma_mid = 0.0;
        const CMat f_mid = at_mu(mid, gamma_mid);
        if (quad_trace(f_mid, d) > ris_budget) lo = mid;
        else {
            hi = mid;
            f_hi = f_mid;
            gamma_hi = gamma_mid;
        }
    }
    out.precoder = f_hi;
    out.bs_multiplier = gamma_hi;
    out.ris_multiplier = hi;
    out.iterations = evals;
    return out;
}

CMat solve_regularized(const CMat& m, const CMat& rhs) {
    Eigen::LLT<CMat> llt(m);
    if (llt.info() == Eigen::Success) return llt.solve(rhs);
    Eigen::SelfAdjointEigenSolver<CMat> eig(m);
    const RVec inv = eig.eigenvalues().cwiseMax(1e-12).cwiseInverse();
    return eig.eigenvectors() * inv.cast<cd>().asDiagonal() * eig.eigenvectors().adjoint() * rhs;
}

PrecoderSolution precoder_gradient(const CMat& a, const CMat& c, const CMat& d, double bs_budget, double ris_budget,
                                   const MmConfig& cfg) {
    const Index n = a.rows();
    const bool ris = std::isfinite(ris_budget);
    const CMat eye = CMat::Identity(n, n);
    Eigen::SelfAdjointEigenSolver<CMat> eig_d(d, Eigen::EigenvaluesOnly);
    const double step0 = 1.0 / (1.0 + std::max(0.0, eig_d.eigenvalues().maxCoeff()));

    struct Point {
        double gamma, mu;
        CMat f;
        double value, norm2, power;
    };
    auto evaluate = [&](double gamma, double mu) {
        Point p{gamma, mu, solve_regularized(a + gamma * eye + mu * d, c), 0.0, 0.0, 0.0};
        p.norm2 = p.f.squaredNorm();
        p.power = ris ? quad_trace(p.f, d) : 0.0;
        // Dual function: Tr(C^H F) + gamma P_N + mu P_M at the maximizing F.
        p.value = (c.adjoint() * p.f).trace().real() + gamma * bs_budget + (ris ? mu * ris_budget : 0.0);
        return p;
    };
    Point cur = evaluate(0.0, 0.0);
    const double scale = ris ? std::max(bs_budget, ris_budget) : bs_budget;
    std::vector<double> history;
    double step = step0;
    for (int it = 0; it < cfg.max_dual_iters; ++it) {
        // Gradient of the dual (to be minimized): (P_N - ||F||^2, P_M - P).
        const double g_gamma = bs_budget - cur.norm2;
        const double g_mu = ris ? ris_budget - cur.power : 0.0;
        const double pg_gamma = cur.gamma - std::max(0.0, cur.gamma - g_gamma);
        const double pg_mu = cur.mu - std::max(0.0, cur.mu - g_mu);
        const double pg = std::hypot(pg_gamma, pg_mu);
        history.push_back(pg);
        if (pg < cfg.dual_tol * scale) {
            PrecoderSolution out;
            out.precoder = cur.f;
            out.bs_multiplier = cur.gamma;
            out.ris_multiplier = cur.mu;
            out.iterations = it;
            return out;
        }
        // Trial step restarts from twice the last accepted one, never below the base step.
        step = std::max(step0, 2.0 * step);
        Point next = cur;
        bool moved = false;
        for (int bt = 0; bt < 200; ++bt) {
            next = evaluate(std::max(0.0, cur.gamma - step * g_gamma), std::max(0.0, cur.mu - step * g_mu));
            // Convexity: a non-positive slope at the trial point along the move also certifies no increase.
            const double slope = (bs_budget - next.norm2) * (next.gamma - cur.gamma) +
                                 (ris ? (ris_budget - next.power) * (next.mu - cur.mu) : 0.0);
            const double rounding = 8.0 * std::numeric_limits<double>::epsilon() * std::abs(cur.value);
            if (slope <= 0.0 || next.value < cur.value - rounding) {
                moved = next.gamma != cur.gamma || next.mu != cur.mu;
                break;
            }
            step *= 0.5;
        }
        if (!moved) break;
        cur = next;
    }
    std::ostringstream msg;
    msg << "precoder dual: projected gradient did not converge, last residual " << history.back();
    throw ConvergenceError(msg.str(), history);
}

}  // namespace

PrecoderSolution solve_precoder(const CMat& quadratic, const CMat& linear, const CMat& power, double bs_budget,
                                double ris_budget, const MmConfig& cfg) {
    const Index n = quadratic.rows();
    if (quadratic.cols() != n || linear.rows() != n || power.rows() != n || power.cols() != n)
        throw std::invalid_argument("solve_precoder: dimension mismatch");
    if (!(bs_budget > 0.0)) throw std::invalid_argument("solve_precoder: BS budget must be positive");
    if (ris_budget < 0.0) throw std::invalid_argument("solve_precoder: RIS budget is negative (noise alone exceeds it)");
    if (ris_budget == 0.0) return {CMat::Zero(n, linear.cols()), 0.0, 0.0, 0};
    PrecoderSolution out = cfg.dual_step_rule == DualStepRule::bisection
                               ? precoder_bisection(quadratic, linear, power, bs_budget, ris_budget, cfg)
                               : precoder_gradient(quadratic, linear, power, bs_budget, ris_budget, cfg);
    out.precoder = enforce_budgets(out.precoder, power, bs_budget, ris_budget);
    return out;
}

CMat project_precoder(const CMat& x, const CMat& power, double bs_budget, double ris_budget, const MmConfig& cfg) {
    if (x.squaredNorm() <= bs_budget && (!std::isfinite(ris_budget) || quad_trace(x, power) <= ris_budget)) return x;
    const Index n = x.rows();
    return solve_precoder(CMat::Identity(n, n), x, power, bs_budget, ris_budget, cfg).precoder;
}

// ---------------------------------------------------------------- reflection block

CVec clamp_modulus(const CVec& x, double max_gain) {
    const double top = std::sqrt(max_gain);
    CVec u(x.size());
    for (Index i = 0; i < x.size(); ++i) {
        const double mag = std::abs(x(i));
        const double target = std::clamp(mag, 1.0, top);
        u(i) = mag > 0.0 ? x(i) * (target / mag) : cd(target, 0.0);
    }
    return u;
}

CVec project_reflection(const CVec& x, const RVec& power, double ris_budget, double max_gain) {
    if (!std::isfinite(ris_budget)) return clamp_modulus(x, max_gain);
    if (power.size() != x.size()) throw std::invalid_argument("project_reflection: dimension mismatch");
    if ((power.array() < 0.0).any()) throw std::invalid_argument("project_reflection: negative power weights");
    if (power.sum() > ris_budget * (1.0 + 1e-12))
        throw std::invalid_argument("project_reflection: unit-gain reflection already exceeds the RIS budget");
    const double top = std::sqrt(max_gain);
    const RVec mag = x.cwiseAbs();
    auto moduli = [&](double gamma) {
        RVec r(mag.size());
        for (Index i = 0; i < mag.size(); ++i) r(i) = std::clamp(mag(i) / (1.0 + gamma * power(i)), 1.0, top);
        return r;
    };
    auto used = [&](const RVec& r) { return power.dot(r.cwiseAbs2()); };
    RVec rho = moduli(0.0);
    if (used(rho) > ris_budget) {
        double hi = 0.0;
        for (Index i = 0; i < mag.size(); ++i)
            if (power(i) > 0.0) hi = std::max(hi, (std::min(mag(i), top) - 1.0) / power(i));
        hi = std::max(hi, 1e-300);
        while (used(moduli(hi)) > ris_budget) hi *= 2.0;
        double lo = 0.0;
        for (int it = 0; it < 300 && hi - lo > 1e-16 * hi; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (used(moduli(mid)) > ris_budget) lo = mid;
            else hi = mid;
        }
        rho = moduli(hi);
    }
    CVec w(x.size());
    for (Index i = 0; i < x.size(); ++i) w(i) = mag(i) > 0.0 ? x(i) * (rho(i) / mag(i)) : cd(rho(i), 0.0);
    return w;
}

ReflectionStep::ReflectionStep(const CMat& quadratic, const RVec& power, double penalty) {
    const Index m = quadratic.rows();
    const double floor = 1e-12 * std::max(1e-300, power.cwiseAbs().maxCoeff());
    inv_sqrt_power_ = power.cwiseMax(floor).cwiseSqrt().cwiseInverse();
    const CMat whitened = inv_sqrt_power_.cast<cd>().asDiagonal() * (quadratic + penalty * CMat::Identity(m, m)) *
                          inv_sqrt_power_.cast<cd>().asDiagonal();
    Eigen::SelfAdjointEigenSolver<CMat> eig(0.5 * (whitened + whitened.adjoint()));
    basis_ = eig.eigenvectors();
    eigenvalues_ = eig.eigenvalues();
}

CVec ReflectionStep::solve(const CVec& rhs, double multiplier) const {
    const CVec y = basis_.adjoint() * (inv_sqrt_power_.cast<cd>().asDiagonal() * rhs);
    const RVec scale = (eigenvalues_.array() + multiplier).inverse();
    return inv_sqrt_power_.cast<cd>().asDiagonal() * (basis_ * (scale.cast<cd>().asDiagonal() * y));
}

double ReflectionStep::power(const CVec& rhs, double multiplier) const {
    const CVec y = basis_.adjoint() * (inv_sqrt_power_.cast<cd>().asDiagonal() * rhs);
    return (y.cwiseAbs2().array() / (eigenvalues_.array() + multiplier).square()).sum();
}

CVec ReflectionStep::solve_constrained(const CVec& rhs, double ris_budget, double tol, double* multiplier) const {
    double gamma = 0.0;
    if (std::isfinite(ris_budget)) {
        const CVec y = basis_.adjoint() * (inv_sqrt_power_.cast<cd>().asDiagonal() * rhs);
        const RVec y2 = y.cwiseAbs2();
        auto g = [&](double x) { return (y2.array() / (eigenvalues_.array() + x).square()).sum(); };
        if (g(0.0) > ris_budget) {
            double lo = 0.0;
            double hi = std::sqrt(y2.sum() / ris_budget);
            for (int it = 0; it < 300; ++it) {
                const double mid = 0.5 * (lo + hi);
                if (g(mid) > ris_budget) lo = mid;
                else hi = mid;
                if (g(hi) >= ris_budget * (1.0 - tol) || hi - lo <= 1e-16 * hi) break;
            }
            gamma = hi;
        }
    }
    if (multiplier) *multiplier = gamma;
    return solve(rhs, gamma);
}

namespace {

double admm_penalty(const CMat& quadratic, const MmConfig& cfg) {
    if (cfg.admm_penalty > 0.0) return cfg.admm_penalty;
    const double curvature = quadratic.rows() > 0 ? quadratic.diagonal().real().mean() : 0.0;
    return curvature > 0.0 ? curvature : 1.0;
}

bool reflection_feasible(const CVec& w, const RVec& power, double ris_budget, double max_gain, double tol) {
    const RVec g = w.cwiseAbs2();
    if ((g.array() < 1.0 - tol).any() || (g.array() > max_gain * (1.0 + tol)).any()) return false;
    return !std::isfinite(ris_budget) || power.dot(g) <= ris_budget * (1.0 + tol);
}

}  // namespace

constexpr int kBalanceEvery = 20;
constexpr double kBalanceRatio = 10.0;

AdmmResult run_reflection_admm(const CMat& quadratic, const CVec& linear, const RVec& power, double ris_budget,
                               double max_gain, const CVec& init, const MmConfig& cfg) {
    const Index m = quadratic.rows();
    double zeta = admm_penalty(quadratic, cfg);
    const RVec weights = std::isfinite(ris_budget) ? power : RVec::Ones(m);
    ReflectionStep step(quadratic, weights, zeta);
    AdmmResult out;
    CVec u = init;
    CVec eta = CVec::Zero(m);  // scaled dual
    const double threshold = cfg.admm_tol * std::sqrt(static_cast<double>(m));
    for (int it = 0; it < cfg.admm_max_iters; ++it) {
        const CVec w = step.solve_constrained(linear - zeta * (eta - u), ris_budget, cfg.bisection_tol);
        const CVec u_prev = u;
        u = clamp_modulus(w + eta, max_gain);
        eta += w - u;
        const double res = (w - u).norm();
        const double change = (u - u_prev).norm();
        out.residuals.push_back(res);
        out.iterations = it + 1;
        if (res <= threshold && change <= threshold) {
            out.converged = true;
            break;
        }
        // Residual balancing; the scaled dual is rescaled with the penalty.
        if (cfg.admm_adaptive && it % kBalanceEvery == kBalanceEvery - 1) {
            double next = zeta;
            if (res > kBalanceRatio * change) next = 2.0 * zeta;
            else if (change > kBalanceRatio * res) next = 0.5 * zeta;
            if (next != zeta) {
                eta *= zeta / next;
                zeta = next;
                step = ReflectionStep(quadratic, weights, zeta);
            }
        }
    }
    if (std::isfinite(ris_budget) && power.dot(u.cwiseAbs2()) > ris_budget * (1.0 + 1e-8))
        u = project_reflection(u, power, ris_budget, max_gain);
    out.reflection = u;
    return out;
}

CVec solve_reflection_admm(const CMat& quadratic, const CVec& linear, const RVec& power, double ris_budget,
                           double max_gain, const CVec& init, const MmConfig& cfg) {
    if (!reflection_feasible(init, power, ris_budget, max_gain, 1e-9))
        throw std::invalid_argument("solve_reflection_admm: infeasible starting point");
    AdmmResult r = run_reflection_admm(quadratic, linear, power, ris_budget, max_gain, init, cfg);
    if (!r.converged) {
        std::ostringstream msg;
        msg << "reflection ADMM did not converge in " << r.iterations << " iterations, last residual "
            << (r.residuals.empty() ? 0.0 : r.residuals.back());
        throw ConvergenceError(msg.str(), r.residuals);
    }
    return r.reflection;
}

// ---------------------------------------------------------------- outer loop

Beamformers default_initialization(const RateProblem& problem, const std::vector<CMat>& los_cascaded) {
    problem.validate();
    const Index m = problem.num_elements();
    const Index n = problem.num_antennas();
    const auto k_users = static_cast<Index>(problem.num_users());
    Beamformers bf;
    if (m > 0) {
        if (los_cascaded.size() != problem.num_users())
            throw std::invalid_argument("default_initialization: one LoS cascaded channel per user");
        // Element phases follow the LoS cascade, referenced to element 0 for every user.
        CVec acc = CVec::Zero(m);
        for (const auto& l : los_cascaded) {
            const CVec col = l * l.row(0).adjoint();
            if (col.norm() > 0.0) acc += col / col.norm();
        }
        bf.reflection.resize(m);
        for (Index i = 0; i < m; ++i) bf.reflection(i) = std::abs(acc(i)) > 0.0 ? acc(i) / std::abs(acc(i)) : cd(1.0);
    }
    bf.precoder.resize(n, k_users);
    for (Index k = 0; k < k_users; ++k) {
        const CVec g = effective_gain(problem.channels[static_cast<std::size_t>(k)], bf.reflection);
        bf.precoder.col(k) = g.norm() > 0.0 ? CVec(g / g.norm()) : CVec(CVec::Unit(n, 0));
    }
    bf.precoder *= std::sqrt(0.9 * problem.bs_budget / bf.precoder.squaredNorm());
    if (m == 0) return bf;

    double gain = problem.max_gain;
    if (problem.ris_power_limited()) {
        const RVec d = problem.power.reflection_form(bf.precoder);
        gain = std::min(gain, problem.ris_budget / d.sum());
        if (gain < 1.0) {
            const double noise_floor = problem.noise.ris_noise * static_cast<double>(m);
            const double signal = d.sum() - noise_floor;
            if (problem.ris_budget <= noise_floor || signal <= 0.0)
                throw std::invalid_argument("default_initialization: RIS budget cannot support unit gain");
            bf.precoder *= std::sqrt((problem.ris_budget - noise_floor) / signal * (1.0 - 1e-9));
            gain = 1.0;
        }
    }
    bf.reflection *= std::sqrt(gain);
    return bf;
}

namespace {

struct Extrapolation {
    double omega;
    bool usable;
};

Extrapolation squarem_step(double r1, double r2, double scale) {
    if (!(r2 > 1e-14 * std::max(1.0, scale))) return {0.0, false};
    return {-r1 / r2, true};
}

}  // namespace

MmResult maximize_sum_rate(const RateProblem& problem, const MmConfig& cfg, const Beamformers& init) {
    problem.validate();
    cfg.validate();
    const Index m = problem.num_elements();
    if (init.precoder.rows() != problem.num_antennas() || init.precoder.cols() != static_cast<Index>(problem.num_users()) ||
        init.reflection.size() != m)
        throw std::invalid_argument("maximize_sum_rate: initial point has wrong dimensions");
    if (constraint_residuals(init, problem).worst(problem) > 1e-8)
        throw std::invalid_argument("maximize_sum_rate: infeasible initial point");

    const auto start = std::chrono::steady_clock::now();
    auto seconds = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
    auto record = [&](int iter, const Beamformers& bf, double objective) {
        const auto res = constraint_residuals(bf, problem);
        return TraceRecord{iter, objective, res.bs_power, res.ris_power, std::max(res.min_gain, res.max_gain), seconds()};
    };

    MmResult out;
    Beamformers cur = init;
    double f_cur = sum_rate_objective(cur, problem);
    out.trace.push_back(record(0, cur, f_cur));
    auto objective_with = [&](const CMat& f, const CVec& w) { return sum_rate_objective({f, w}, problem); };

    for (int iter = 1; iter <= cfg.max_outer_iters; ++iter) {
        // Gain of the plain double MM step in either block; an accepted extrapolation can gain less.
        double mm_gain = 0.0;
        // Precoder block at fixed reflection.
        auto precoder_step = [&](const CMat& f) {
            const SurrogateState s = surrogate_coeffs({f, cur.reflection}, problem);
            return solve_precoder(s.precoder_quadratic, s.precoder_linear, s.precoder_power, problem.bs_budget,
                                  problem.ris_budget - s.precoder_power_offset, cfg)
                .precoder;
        };
        const CMat f1 = precoder_step(cur.precoder);
        CMat f_next = f1;
        if (cfg.squarem) {
            const CMat f2 = precoder_step(f1);
            const CMat r1 = f1 - cur.precoder;
            const CMat r2 = f2 - f1 - r1;
            const Extrapolation ex = squarem_step(r1.norm(), r2.norm(), cur.precoder.norm());
            f_next = f2;
            const double f_prev = objective_with(cur.precoder, cur.reflection);
            mm_gain = std::max(mm_gain, objective_with(f2, cur.reflection) - f_prev);
            if (ex.usable) {
                const SurrogateState s = surrogate_coeffs(cur, problem);
                const double budget = problem.ris_budget - s.precoder_power_offset;
                double omega = ex.omega;
                bool accepted = false;
                for (int bt = 0; bt < 60; ++bt) {
                    const CMat cand = project_precoder(cur.precoder - 2.0 * omega * r1 + omega * omega * r2,
                                                       s.precoder_power, problem.bs_budget, budget, cfg);
                    if (objective_with(cand, cur.reflection) >= f_prev) {
                        f_next = cand;
                        accepted = true;
                        break;
                    }
                    omega = (omega - 1.0) / 2.0;
                }
                if (!accepted) f_next = f2;
            }
        }
        cur.precoder = f_next;

        // Reflection block at fixed precoder.
        if (m > 0) {
            auto reflection_step = [&](const CVec& w) {
                const SurrogateState s = surrogate_coeffs({cur.precoder, w}, problem);
                return run_reflection_admm(s.reflection_quadratic, s.reflection_linear, s.reflection_power,
                                           problem.ris_budget, problem.max_gain, w, cfg)
                    .reflection;
            };
            const double f_prev = objective_with(cur.precoder, cur.reflection);
            const CVec w1 = reflection_step(cur.reflection);
            CVec w_next = cur.reflection;
            double f_best = f_prev;
            auto consider = [&](const CVec& w) {
                const double v = objective_with(cur.precoder, w);
                if (v > f_best) {
                    f_best = v;
                    w_next = w;
                }
            };
            if (cfg.squarem) {
                const CVec w2 = reflection_step(w1);
                mm_gain = std::max(mm_gain, objective_with(cur.precoder, w2) - f_prev);
                const CVec r1 = w1 - cur.reflection;
                const CVec r2 = w2 - w1 - r1;
                const Extrapolation ex = squarem_step(r1.norm(), r2.norm(), cur.reflection.norm());
                bool accepted = false;
                if (ex.usable) {
                    const RVec d = problem.ris_power_limited() ? problem.power.reflection_form(cur.precoder)
                                                               : RVec::Ones(m);
                    double omega = ex.omega;
                    for (int bt = 0; bt < 60; ++bt) {
                        const CVec cand = project_reflection(cur.reflection - 2.0 * omega * r1 + omega * omega * r2, d,
                                                             problem.ris_budget, problem.max_gain);
                        const double v = objective_with(cur.precoder, cand);
                        if (v >= f_prev) {
                            w_next = cand;
                            f_best = v;
                            accepted = true;
                            break;
                        }
                        omega = (omega - 1.0) / 2.0;
                    }
                }
                if (!accepted) {
                    consider(w2);
                    consider(w1);
                }
            } else {
                consider(w1);
            }
            cur.reflection = w_next;
        }

        const double f_new = sum_rate_objective(cur, problem);
        out.trace.push_back(record(iter, cur, f_new));
        const double scale = cfg.outer_tol * std::max(std::abs(f_new), 1e-12);
        const bool small_change = std::abs(f_new - f_cur) <= scale && mm_gain <= scale;
        f_cur = f_new;
        if (small_change) {
            out.converged = true;
            break;
        }
    }
    out.beamformers = cur;
    return out;
}

}  // namespace activeris

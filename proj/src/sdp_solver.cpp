#include "activeris/sdp_solver.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>

namespace activeris::conic {

using Index = Eigen::Index;

bool LmiBlock::is_real() const {
    if (constant.imag().cwiseAbs().maxCoeff() > 0.0) return false;
    for (const auto& t : terms)
        if (t.coefficient.size() > 0 && t.coefficient.imag().cwiseAbs().maxCoeff() > 0.0) return false;
    return true;
}

std::string to_string(Status s) {
    switch (s) {
        case Status::optimal: return "optimal";
        case Status::primal_infeasible: return "primal_infeasible";
        case Status::dual_infeasible: return "dual_infeasible";
        case Status::max_iters: return "max_iters";
    }
    return "unknown";
}

namespace {

bool hermitian_within(const CMat& m) {
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.adjoint()).cwiseAbs().maxCoeff() <= 1e-12 * scale;
}

}  // namespace

void ConicProblem::validate() const {
    const auto n = static_cast<Index>(num_variables);
    if (n == 0) throw std::invalid_argument("conic problem: no variables");
    if (cost.size() != n) throw std::invalid_argument("conic problem: cost has wrong length");
    if (!cost.allFinite()) throw std::invalid_argument("conic problem: non-finite cost");
    for (const auto& b : lmis) {
        if (b.constant.rows() != b.constant.cols() || b.constant.rows() == 0)
            throw std::invalid_argument("LMI '" + b.label + "': constant must be square and non-empty");
        if (!hermitian_within(b.constant)) throw std::invalid_argument("LMI '" + b.label + "': constant not Hermitian");
        for (const auto& t : b.terms) {
            if (t.variable >= num_variables) throw std::invalid_argument("LMI '" + b.label + "': variable index out of range");
            if (t.coefficient.rows() != b.order() || t.coefficient.cols() != b.order())
                throw std::invalid_argument("LMI '" + b.label + "': coefficient has wrong size");
            if (!hermitian_within(t.coefficient)) throw std::invalid_argument("LMI '" + b.label + "': coefficient not Hermitian");
            if (!t.coefficient.allFinite()) throw std::invalid_argument("LMI '" + b.label + "': non-finite data");
        }
    }
    for (const auto& s : socs) {
        if (s.a.cols() != n || s.d.size() != n || s.b.size() != s.a.rows())
            throw std::invalid_argument("SOC '" + s.label + "': inconsistent dimensions");
    }
    for (const auto& r : inequalities)
        if (r.coeffs.size() != n) throw std::invalid_argument("conic problem: inequality row has wrong length");
    for (const auto& r : equalities)
        if (r.coeffs.size() != n) throw std::invalid_argument("conic problem: equality row has wrong length");
}

Index ConicProblem::psd_dimension() const {
    Index total = 0;
    for (const auto& b : lmis) total += b.is_real() ? b.order() : 2 * b.order();
    return total;
}

CMat lmi_value(const LmiBlock& block, const RVec& x) {
    CMat v = block.constant;
    for (const auto& t : block.terms) v += x(static_cast<Index>(t.variable)) * t.coefficient;
    return v;
}

namespace {

// ---------------------------------------------------------------- problem data

struct Entry {
    Index row;
    Index col;
    double value;
};

struct PsdTerm {
    Index var = 0;
    std::vector<Entry> entries;  // both triangles listed
    bool dense = false;
    RMat matrix;
};

struct PsdData {
    Index order = 0;
    RMat constant;
    std::vector<PsdTerm> terms;
};

struct SocData {
    RMat rows;  // first row is the scalar part
    RVec constant;
};

struct Data {
    Index n = 0;
    RVec c;
    RMat lin_rows;
    RVec lin_const;
    std::vector<SocData> socs;
    std::vector<PsdData> psds;
    RMat eq_rows;
    RVec eq_rhs;
    Index degree = 0;
};

RMat embed(const CMat& m, bool real) {
    if (real) return 0.5 * (m.real() + m.real().transpose());
    const Index k = m.rows();
    const CMat h = 0.5 * (m + m.adjoint());
    RMat e(2 * k, 2 * k);
    e.topLeftCorner(k, k) = h.real();
    e.bottomRightCorner(k, k) = h.real();
    e.bottomLeftCorner(k, k) = h.imag();
    e.topRightCorner(k, k) = -h.imag();
    return e;
}

Data build_data(const ConicProblem& p) {
    Data d;
    d.n = static_cast<Index>(p.num_variables);
    d.c = p.cost;
    const Index nl = static_cast<Index>(p.inequalities.size());
    d.lin_rows.resize(nl, d.n);
    d.lin_const.resize(nl);
    for (Index i = 0; i < nl; ++i) {
        d.lin_rows.row(i) = p.inequalities[static_cast<std::size_t>(i)].coeffs.transpose();
        d.lin_const(i) = p.inequalities[static_cast<std::size_t>(i)].constant;
    }
    for (const auto& s : p.socs) {
        SocData q;
        q.rows.resize(s.a.rows() + 1, d.n);
        q.rows.row(0) = s.d.transpose();
        q.rows.bottomRows(s.a.rows()) = s.a;
        q.constant.resize(s.a.rows() + 1);
        q.constant(0) = s.e;
        q.constant.tail(s.a.rows()) = s.b;
        d.socs.push_back(std::move(q));
    }
    for (const auto& b : p.lmis) {
        const bool real = b.is_real();
        PsdData blk;
        blk.constant = embed(b.constant, real);
        blk.order = blk.constant.rows();
        for (const auto& t : b.terms) {
            PsdTerm term;
            term.var = static_cast<Index>(t.variable);
            const RMat e = embed(t.coefficient, real);
            for (Index j = 0; j < e.cols(); ++j)
                for (Index i = 0; i < e.rows(); ++i)
                    if (e(i, j) != 0.0) term.entries.push_back({i, j, e(i, j)});
            if (term.entries.empty()) continue;
            term.dense = static_cast<Index>(term.entries.size()) > 2 * blk.order;
            if (term.dense) {
                term.matrix = e;
                term.entries.clear();
            }
            blk.terms.push_back(std::move(term));
        }
        d.psds.push_back(std::move(blk));
    }
    const Index ne = static_cast<Index>(p.equalities.size());
    d.eq_rows.resize(ne, d.n);
    d.eq_rhs.resize(ne);
    for (Index i = 0; i < ne; ++i) {
        d.eq_rows.row(i) = p.equalities[static_cast<std::size_t>(i)].coeffs.transpose();
        d.eq_rhs(i) = -p.equalities[static_cast<std::size_t>(i)].constant;
    }
    d.degree = nl + static_cast<Index>(d.socs.size());
    for (const auto& b : d.psds) d.degree += b.order;
    return d;
}

// ---------------------------------------------------------------- cone vectors

struct ConeVec {
    RVec l;
    std::vector<RVec> q;
    std::vector<RMat> s;
};

ConeVec zeros_like(const Data& d) {
    ConeVec v;
    v.l = RVec::Zero(d.lin_rows.rows());
    for (const auto& q : d.socs) v.q.push_back(RVec::Zero(q.rows.rows()));
    for (const auto& b : d.psds) v.s.push_back(RMat::Zero(b.order, b.order));
    return v;
}

ConeVec identity_like(const Data& d) {
    ConeVec v = zeros_like(d);
    v.l.setOnes();
    for (auto& q : v.q) q(0) = 1.0;
    for (auto& s : v.s) s.setIdentity();
    return v;
}

double dot(const ConeVec& a, const ConeVec& b) {
    double r = a.l.dot(b.l);
    for (std::size_t i = 0; i < a.q.size(); ++i) r += a.q[i].dot(b.q[i]);
    for (std::size_t i = 0; i < a.s.size(); ++i) r += (a.s[i].array() * b.s[i].array()).sum();
    return r;
}

double norm(const ConeVec& a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, const ConeVec& x, ConeVec& y) {
    y.l += alpha * x.l;
    for (std::size_t i = 0; i < x.q.size(); ++i) y.q[i] += alpha * x.q[i];
    for (std::size_t i = 0; i < x.s.size(); ++i) y.s[i] += alpha * x.s[i];
}

ConeVec scaled(double alpha, const ConeVec& x) {
    ConeVec y = x;
    y.l *= alpha;
    for (auto& q : y.q) q *= alpha;
    for (auto& s : y.s) s *= alpha;
    return y;
}

ConeVec sum(const ConeVec& a, const ConeVec& b) {
    ConeVec r = a;
    axpy(1.0, b, r);
    return r;
}

bool finite(const ConeVec& a) {
    if (!a.l.allFinite()) return false;
    for (const auto& q : a.q)
        if (!q.allFinite()) return false;
    for (const auto& s : a.s)
        if (!s.allFinite()) return false;
    return true;
}

ConeVec constant_part(const Data& d) {
    ConeVec h;
    h.l = d.lin_const;
    for (const auto& q : d.socs) h.q.push_back(q.constant);
    for (const auto& b : d.psds) h.s.push_back(b.constant);
    return h;
}

/// Linear part of the affine cone map: x -> sum_i x_i F_i.
ConeVec apply_op(const Data& d, const RVec& x) {
    ConeVec v;
    v.l = d.lin_rows * x;
    for (const auto& q : d.socs) v.q.push_back(q.rows * x);
    for (const auto& b : d.psds) {
        RMat m = RMat::Zero(b.order, b.order);
        for (const auto& t : b.terms) {
            const double xv = x(t.var);
            if (xv == 0.0) continue;
            if (t.dense) m += xv * t.matrix;
            else
                for (const auto& e : t.entries) m(e.row, e.col) += xv * e.value;
        }
        v.s.push_back(std::move(m));
    }
    return v;
}

RVec apply_adjoint(const Data& d, const ConeVec& z) {
    RVec r = d.lin_rows.transpose() * z.l;
    for (std::size_t i = 0; i < d.socs.size(); ++i) r += d.socs[i].rows.transpose() * z.q[i];
    for (std::size_t i = 0; i < d.psds.size(); ++i) {
        const RMat& zm = z.s[i];
        for (const auto& t : d.psds[i].terms) {
            double acc = 0.0;
            if (t.dense) acc = (t.matrix.array() * zm.array()).sum();
            else
                for (const auto& e : t.entries) acc += e.value * zm(e.row, e.col);
            r(t.var) += acc;
        }
    }
    return r;
}

// ---------------------------------------------------------------- Jordan algebra

ConeVec jordan_product(const ConeVec& u, const ConeVec& v) {
    ConeVec r;
    r.l = u.l.cwiseProduct(v.l);
    for (std::size_t i = 0; i < u.q.size(); ++i) {
        const RVec& a = u.q[i];
        const RVec& b = v.q[i];
        RVec p(a.size());
        p(0) = a.dot(b);
        const Index k = a.size() - 1;
        if (k > 0) p.tail(k) = a(0) * b.tail(k) + b(0) * a.tail(k);
        r.q.push_back(std::move(p));
    }
    for (std::size_t i = 0; i < u.s.size(); ++i) r.s.push_back(0.5 * (u.s[i] * v.s[i] + v.s[i] * u.s[i]));
    return r;
}

/// Solves lambda o x = r where lambda is the scaled point (diagonal in the PSD blocks).
ConeVec jordan_divide(const ConeVec& lambda, const std::vector<RVec>& lambda_eigs, const ConeVec& r) {
    ConeVec x;
    x.l = r.l.cwiseQuotient(lambda.l);
    for (std::size_t i = 0; i < r.q.size(); ++i) {
        const RVec& l = lambda.q[i];
        const RVec& b = r.q[i];
        const Index k = l.size() - 1;
        RVec out(l.size());
        const double l1b1 = k > 0 ? l.tail(k).dot(b.tail(k)) : 0.0;
        const double l1sq = k > 0 ? l.tail(k).squaredNorm() : 0.0;
        out(0) = (l(0) * b(0) - l1b1) / (l(0) * l(0) - l1sq);
        if (k > 0) out.tail(k) = (b.tail(k) - out(0) * l.tail(k)) / l(0);
        x.q.push_back(std::move(out));
    }
    for (std::size_t i = 0; i < r.s.size(); ++i) {
        const RVec& e = lambda_eigs[i];
        RMat m(r.s[i].rows(), r.s[i].cols());
        for (Index a = 0; a < m.rows(); ++a)
            for (Index b = 0; b < m.cols(); ++b) m(a, b) = 2.0 * r.s[i](a, b) / (e(a) + e(b));
        x.s.push_back(std::move(m));
    }
    return x;
}

/// Largest t with x + t*dir in the cone (x interior); +inf when unbounded.
double soc_step(const RVec& x, const RVec& dir) {
    const Index k = x.size() - 1;
    const double a = dir(0) * dir(0) - (k > 0 ? dir.tail(k).squaredNorm() : 0.0);
    const double b = x(0) * dir(0) - (k > 0 ? x.tail(k).dot(dir.tail(k)) : 0.0);
    const double c = x(0) * x(0) - (k > 0 ? x.tail(k).squaredNorm() : 0.0);
    const double inf = std::numeric_limits<double>::infinity();
    if (a == 0.0) {
        if (b < 0.0) return -c / (2.0 * b);
        return dir(0) < 0.0 ? -x(0) / dir(0) : inf;
    }
    const double disc = b * b - a * c;
    if (disc < 0.0) return inf;
    const double q = -(b + std::copysign(std::sqrt(disc), b));
    double best = inf;
    for (double root : {q / a, q != 0.0 ? c / q : inf})
        if (root > 0.0 && root < best) best = root;
    if (dir(0) < 0.0) best = std::min(best, -x(0) / dir(0));
    return best;
}

double max_step(const ConeVec& lambda, const std::vector<RVec>& lambda_eigs, const ConeVec& dir) {
    double t = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < dir.l.size(); ++i)
        if (dir.l(i) < 0.0) t = std::min(t, -lambda.l(i) / dir.l(i));
    for (std::size_t i = 0; i < dir.q.size(); ++i) t = std::min(t, soc_step(lambda.q[i], dir.q[i]));
    for (std::size_t i = 0; i < dir.s.size(); ++i) {
        const RVec inv_half = lambda_eigs[i].cwiseSqrt().cwiseInverse();
        const RMat m = inv_half.asDiagonal() * dir.s[i] * inv_half.asDiagonal();
        Eigen::SelfAdjointEigenSolver<RMat> eig(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
        const double lo = eig.eigenvalues().minCoeff();
        if (lo < 0.0) t = std::min(t, -1.0 / lo);
    }
    return t;
}

/// Largest violation of cone membership: -min eigenvalue over all blocks.
double cone_violation(const ConeVec& v) {
    double t = -std::numeric_limits<double>::infinity();
    if (v.l.size() > 0) t = std::max(t, -v.l.minCoeff());
    for (const auto& q : v.q) {
        const Index k = q.size() - 1;
        t = std::max(t, (k > 0 ? q.tail(k).norm() : 0.0) - q(0));
    }
    for (const auto& s : v.s) {
        Eigen::SelfAdjointEigenSolver<RMat> eig(s, Eigen::EigenvaluesOnly);
        t = std::max(t, -eig.eigenvalues().minCoeff());
    }
    return t;
}

// ---------------------------------------------------------------- Nesterov-Todd scaling

struct Scaling {
    RVec d;
    std::vector<RMat> soc_w;
    std::vector<RMat> soc_winv;
    std::vector<RMat> psd_r;
    std::vector<RMat> psd_rti;  // inverse transpose of psd_r
    std::vector<RMat> psd_inv;  // psd_rti psd_rti^T
};

void refresh_products(Scaling& w) {
    w.psd_inv.resize(w.psd_rti.size());
    for (std::size_t i = 0; i < w.psd_rti.size(); ++i) w.psd_inv[i].noalias() = w.psd_rti[i] * w.psd_rti[i].transpose();
}

struct Breakdown {};

Scaling identity_scaling(const Data& data) {
    Scaling w;
    w.d = RVec::Ones(data.lin_rows.rows());
    for (const auto& q : data.socs) {
        w.soc_w.push_back(RMat::Identity(q.rows.rows(), q.rows.rows()));
        w.soc_winv.push_back(RMat::Identity(q.rows.rows(), q.rows.rows()));
    }
    for (const auto& b : data.psds) {
        w.psd_r.push_back(RMat::Identity(b.order, b.order));
        w.psd_rti.push_back(RMat::Identity(b.order, b.order));
    }
    refresh_products(w);
    return w;
}

double jnorm(const RVec& x) {
    const Index k = x.size() - 1;
    const double v = x(0) * x(0) - (k > 0 ? x.tail(k).squaredNorm() : 0.0);
    if (!(v > 0.0)) throw Breakdown{};
    return std::sqrt(v);
}

void scale_linear_and_soc(const ConeVec& s, const ConeVec& z, Scaling& w, ConeVec& lambda) {
    if ((s.l.array() <= 0.0).any() || (z.l.array() <= 0.0).any()) throw Breakdown{};
    w.d = (s.l.array() / z.l.array()).sqrt();
    lambda.l = (s.l.array() * z.l.array()).sqrt();
    w.soc_w.clear();
    w.soc_winv.clear();
    lambda.q.clear();
    for (std::size_t i = 0; i < s.q.size(); ++i) {
        const RVec& sq = s.q[i];
        const RVec& zq = z.q[i];
        const Index m = sq.size();
        const Index k = m - 1;
        const double a = jnorm(sq);
        const double b = jnorm(zq);
        const RVec sn = sq / a;
        const RVec zn = zq / b;
        const double gamma = std::sqrt(0.5 * (1.0 + sn.dot(zn)));
        RVec wbar(m);
        wbar(0) = (sn(0) + zn(0)) / (2.0 * gamma);
        if (k > 0) wbar.tail(k) = (sn.tail(k) - zn.tail(k)) / (2.0 * gamma);
        RVec v = wbar;
        v(0) += 1.0;
        v /= std::sqrt(2.0 * (wbar(0) + 1.0));
        const double beta = std::sqrt(a / b);
        RMat j = RMat::Identity(m, m);
        j.bottomRightCorner(k, k) *= -1.0;
        const RVec jv = j * v;
        w.soc_w.push_back(beta * (2.0 * v * v.transpose() - j));
        w.soc_winv.push_back((2.0 * jv * jv.transpose() - j) / beta);
        RVec lam(m);
        lam(0) = gamma;
        if (k > 0) {
            const double den = sn(0) + zn(0) + 2.0 * gamma;
            lam.tail(k) = ((gamma + zn(0)) / den) * sn.tail(k) + ((gamma + sn(0)) / den) * zn.tail(k);
        }
        lambda.q.push_back(std::sqrt(a * b) * lam);
    }
}

/// For positive definite s and z with Lz^T Ls = U S V^T: left = Ls V S^{-1/2}, right = Lz U S^{-1/2},
/// so that left S left^T = s and right S right^T = z.
void psd_factor(const RMat& s, const RMat& z, RMat& left, RMat& right, RVec& sv) {
    Eigen::LLT<RMat> ls(s);
    Eigen::LLT<RMat> lz(z);
    if (ls.info() != Eigen::Success || lz.info() != Eigen::Success) throw Breakdown{};
    const RMat lsm = ls.matrixL();
    const RMat lzm = lz.matrixL();
    Eigen::JacobiSVD<RMat> svd(lzm.transpose() * lsm, Eigen::ComputeFullU | Eigen::ComputeFullV);
    sv = svd.singularValues();
    if (!(sv.minCoeff() > 0.0) || !sv.allFinite()) throw Breakdown{};
    const RVec inv_half = sv.cwiseSqrt().cwiseInverse();
    left = lsm * svd.matrixV() * inv_half.asDiagonal();
    right = lzm * svd.matrixU() * inv_half.asDiagonal();
}

/// Scaling W with W z = W^{-T} s = lambda; lambda_eigs holds the diagonal of the PSD parts.
Scaling compute_scaling(const ConeVec& s, const ConeVec& z, ConeVec& lambda, std::vector<RVec>& lambda_eigs) {
    Scaling w;
    scale_linear_and_soc(s, z, w, lambda);
    lambda.s.clear();
    lambda_eigs.clear();
    for (std::size_t i = 0; i < s.s.size(); ++i) {
        RMat r, rti;
        RVec sv;
        psd_factor(s.s[i], z.s[i], r, rti, sv);
        w.psd_r.push_back(r);
        w.psd_rti.push_back(rti);
        lambda.s.push_back(RMat(sv.asDiagonal()));
        lambda_eigs.push_back(sv);
    }
    refresh_products(w);
    return w;
}

/// Moves the scaling to the new iterate. The linear and SOC parts of s and z must already be updated;
/// the PSD parts are updated in the scaled space and written back to s and z.
void update_scaling(Scaling& w, ConeVec& lambda, std::vector<RVec>& lambda_eigs, ConeVec& s, ConeVec& z,
                    const ConeVec& ds_scaled, const ConeVec& dz_scaled, double alpha) {
    scale_linear_and_soc(s, z, w, lambda);
    for (std::size_t i = 0; i < s.s.size(); ++i) {
        RMat st = lambda.s[i] + alpha * ds_scaled.s[i];
        RMat zt = lambda.s[i] + alpha * dz_scaled.s[i];
        st = 0.5 * (st + st.transpose()).eval();
        zt = 0.5 * (zt + zt.transpose()).eval();
        RMat left, right;
        RVec sv;
        psd_factor(st, zt, left, right, sv);
        w.psd_r[i] = (w.psd_r[i] * left).eval();
        w.psd_rti[i] = (w.psd_rti[i] * right).eval();
        lambda.s[i] = sv.asDiagonal();
        lambda_eigs[i] = sv;
        s.s[i] = w.psd_r[i] * sv.asDiagonal() * w.psd_r[i].transpose();
        z.s[i] = w.psd_rti[i] * sv.asDiagonal() * w.psd_rti[i].transpose();
    }
    refresh_products(w);
}

ConeVec apply_w(const Scaling& w, const ConeVec& z) {
    ConeVec r;
    r.l = w.d.cwiseProduct(z.l);
    for (std::size_t i = 0; i < z.q.size(); ++i) r.q.push_back(w.soc_w[i] * z.q[i]);
    for (std::size_t i = 0; i < z.s.size(); ++i) r.s.push_back(w.psd_r[i].transpose() * z.s[i] * w.psd_r[i]);
    return r;
}

ConeVec apply_wt(const Scaling& w, const ConeVec& v) {
    ConeVec r;
    r.l = w.d.cwiseProduct(v.l);
    for (std::size_t i = 0; i < v.q.size(); ++i) r.q.push_back(w.soc_w[i] * v.q[i]);
    for (std::size_t i = 0; i < v.s.size(); ++i) r.s.push_back(w.psd_r[i] * v.s[i] * w.psd_r[i].transpose());
    return r;
}

ConeVec apply_wtw(const Scaling& w, const ConeVec& z) { return apply_wt(w, apply_w(w, z)); }

ConeVec apply_wtw_inverse(const Scaling& w, const ConeVec& v) {
    ConeVec r;
    r.l = v.l.cwiseQuotient(w.d.cwiseAbs2());
    for (std::size_t i = 0; i < v.q.size(); ++i) r.q.push_back(w.soc_winv[i] * (w.soc_winv[i] * v.q[i]));
    for (std::size_t i = 0; i < v.s.size(); ++i) {
        const RMat& t = w.psd_rti[i];
        r.s.push_back(t * (t.transpose() * v.s[i] * t) * t.transpose());
    }
    return r;
}

// ---------------------------------------------------------------- KKT system

/// Solves [0 E^T G^T; E 0 0; G 0 -W^T W] [dx; dy; dz] = [bx; by; bz] with G = -(linear cone map).
class KktSolver {
public:
    KktSolver(const Data& d, const Scaling& w, int refinement) : d_(d), w_(w), refinement_(refinement) {
        const RMat h = reduced_matrix();
        llt_.compute(h);
        use_llt_ = llt_.info() == Eigen::Success;
        if (!use_llt_) {
            ldlt_.compute(h);
            if (ldlt_.info() != Eigen::Success) throw Breakdown{};
        }
        if (d_.eq_rows.rows() > 0) {
            h_inv_et_ = solve_h(RMat(d_.eq_rows.transpose()));
            schur_.compute(d_.eq_rows * h_inv_et_);
            if (schur_.info() != Eigen::Success) throw Breakdown{};
        }
    }

    void solve(const RVec& bx, const RVec& by, const ConeVec& bz, RVec& dx, RVec& dy, ConeVec& dz) const {
        solve_once(bx, by, bz, dx, dy, dz);
        for (int it = 0; it < refinement_; ++it) {
            RVec rx, ry;
            ConeVec rz;
            residual(bx, by, bz, dx, dy, dz, rx, ry, rz);
            RVec cx, cy;
            ConeVec cz;
            solve_once(rx, ry, rz, cx, cy, cz);
            dx += cx;
            dy += cy;
            axpy(1.0, cz, dz);
        }
        if (!dx.allFinite() || !dy.allFinite() || !finite(dz)) throw Breakdown{};
    }

private:
    RMat reduced_matrix() const {
        const Index n = d_.n;
        RMat h = RMat::Zero(n, n);
        if (d_.lin_rows.rows() > 0) {
            const RMat scaled_rows = w_.d.cwiseInverse().asDiagonal() * d_.lin_rows;
            h.noalias() += scaled_rows.transpose() * scaled_rows;
        }
        for (std::size_t i = 0; i < d_.socs.size(); ++i) {
            const RMat scaled_rows = w_.soc_winv[i] * d_.socs[i].rows;
            h.noalias() += scaled_rows.transpose() * scaled_rows;
        }
        for (std::size_t b = 0; b < d_.psds.size(); ++b) add_psd_block(b, h);
        return 0.5 * (h + h.transpose());
    }

    void add_psd_block(std::size_t b, RMat& h) const {
        const PsdData& blk = d_.psds[b];
        const RMat& q = w_.psd_inv[b];
        const std::size_t nt = blk.terms.size();
        RMat t(blk.order, blk.order);
        for (std::size_t j = 0; j < nt; ++j) {
            const PsdTerm& tj = blk.terms[j];
            if (tj.dense) t.noalias() = q * tj.matrix * q;
            else {
                t.setZero();
                for (const auto& e : tj.entries) t.noalias() += e.value * q.col(e.row) * q.row(e.col);
            }
            for (std::size_t i = 0; i <= j; ++i) {
                const PsdTerm& ti = blk.terms[i];
                double v = 0.0;
                if (ti.dense) v = (ti.matrix.array() * t.array()).sum();
                else
                    for (const auto& e : ti.entries) v += e.value * t(e.row, e.col);
                if (i == j) h(ti.var, tj.var) += v;
                else {
                    h(ti.var, tj.var) += v;
                    h(tj.var, ti.var) += v;
                }
            }
        }
    }

    RMat solve_h(const RMat& rhs) const { return use_llt_ ? RMat(llt_.solve(rhs)) : RMat(ldlt_.solve(rhs)); }
    RVec solve_h(const RVec& rhs) const { return use_llt_ ? RVec(llt_.solve(rhs)) : RVec(ldlt_.solve(rhs)); }

    void solve_once(const RVec& bx, const RVec& by, const ConeVec& bz, RVec& dx, RVec& dy, ConeVec& dz) const {
        const RVec r = bx - apply_adjoint(d_, apply_wtw_inverse(w_, bz));
        const RVec h_inv_r = solve_h(r);
        if (d_.eq_rows.rows() > 0) {
            dy = schur_.solve(d_.eq_rows * h_inv_r - by);
            dx = h_inv_r - h_inv_et_ * dy;
        } else {
            dy = RVec::Zero(0);
            dx = h_inv_r;
        }
        ConeVec t = apply_op(d_, dx);
        axpy(1.0, bz, t);
        dz = scaled(-1.0, apply_wtw_inverse(w_, t));
    }

    void residual(const RVec& bx, const RVec& by, const ConeVec& bz, const RVec& dx, const RVec& dy, const ConeVec& dz,
                  RVec& rx, RVec& ry, ConeVec& rz) const {
        rx = bx + apply_adjoint(d_, dz);
        if (d_.eq_rows.rows() > 0) rx -= d_.eq_rows.transpose() * dy;
        ry = by - d_.eq_rows * dx;
        rz = sum(bz, apply_op(d_, dx));
        axpy(1.0, apply_wtw(w_, dz), rz);
    }

    const Data& d_;
    const Scaling& w_;
    int refinement_;
    Eigen::LLT<RMat> llt_;
    Eigen::LDLT<RMat> ldlt_;
    bool use_llt_ = true;
    RMat h_inv_et_;
    Eigen::LLT<RMat> schur_;
};

// ---------------------------------------------------------------- main loop

struct Metrics {
    double pcost, dcost, gap, relgap, pres, dres;
    std::optional<double> pinfres, dinfres;
};

}  // namespace

ConeSolution solve(const ConicProblem& problem, const SolverOptions& opt) {
    problem.validate();
    if (problem.psd_dimension() > opt.max_psd_dimension)
        throw std::invalid_argument("conic solver: total PSD dimension " + std::to_string(problem.psd_dimension()) +
                                    " exceeds the cap of " + std::to_string(opt.max_psd_dimension));
    const Data d = build_data(problem);
    if (d.degree == 0) throw std::invalid_argument("conic solver: problem has no cone constraints");

    const ConeVec h = constant_part(d);
    const RVec& c = d.c;
    const RVec& g = d.eq_rhs;
    const double resx0 = std::max(1.0, c.norm());
    const double resy0 = std::max(1.0, g.norm());
    const double resz0 = std::max(1.0, norm(h));
    const ConeVec e = identity_like(d);

    std::vector<IterationRecord> log;
    RVec x, y;
    ConeVec s, z;
    double tau = 1.0, kappa = 1.0;

    try {
        const Scaling id = identity_scaling(d);
        const KktSolver kkt(d, id, opt.refinement_steps);
        ConeVec zs;
        kkt.solve(RVec::Zero(d.n), g, h, x, y, zs);
        s = scaled(-1.0, zs);
        RVec xd;
        kkt.solve(-c, RVec::Zero(g.size()), zeros_like(d), xd, y, z);
    } catch (const Breakdown&) {
        throw SolverError("conic solver: singular system at initialization (a variable may appear in no cone)", log);
    }
    const double ts = cone_violation(s);
    if (ts >= -1e-8 * std::max(1.0, norm(s))) axpy(1.0 + ts, e, s);
    const double tz = cone_violation(z);
    if (tz >= -1e-8 * std::max(1.0, norm(z))) axpy(1.0 + tz, e, z);

    auto evaluate = [&](Metrics& m) {
        const ConeVec ax = apply_op(d, x);
        const RVec adj_z = apply_adjoint(d, z);
        const RVec et_y = d.eq_rows.transpose() * y;
        const double cx = c.dot(x);
        const double hz_gy = dot(h, z) + g.dot(y);
        m.pcost = cx / tau;
        m.dcost = -hz_gy / tau;
        m.gap = dot(s, z) / (tau * tau);
        ConeVec rz = sum(ax, scaled(tau, h));
        axpy(-1.0, s, rz);
        const double ry = (d.eq_rows * x - g * tau).norm();
        m.pres = std::max(ry / resy0, norm(rz) / resz0) / tau;
        m.dres = (et_y - adj_z + c * tau).norm() / tau / resx0;
        if (m.pcost < 0.0) m.relgap = m.gap / -m.pcost;
        else if (m.dcost > 0.0) m.relgap = m.gap / m.dcost;
        else m.relgap = std::numeric_limits<double>::infinity();
        m.pinfres.reset();
        m.dinfres.reset();
        if (hz_gy < 0.0) m.pinfres = (et_y - adj_z).norm() / resx0 / -hz_gy;
        if (cx < 0.0) {
            ConeVec t = scaled(-1.0, ax);
            axpy(1.0, s, t);
            m.dinfres = std::max((d.eq_rows * x).norm() / resy0, norm(t) / resz0) / -cx;
        }
    };

    auto finish = [&](Status st, const Metrics& m, int iters) {
        ConeSolution sol;
        sol.status = st;
        sol.iterations = iters;
        sol.log = log;
        // Infeasibility certificates are normalized to unit objective.
        double scale = 1.0 / tau;
        double dual_scale = 1.0 / tau;
        if (st == Status::primal_infeasible) {
            scale = 0.0;
            dual_scale = 1.0 / -(dot(h, z) + g.dot(y));
        } else if (st == Status::dual_infeasible) {
            scale = 1.0 / -c.dot(x);
            dual_scale = 0.0;
        }
        sol.x = x * scale;
        const ConeVec zz = scaled(dual_scale, z);
        sol.equality_duals = y * dual_scale;
        sol.inequality_duals = zz.l;
        sol.soc_duals = zz.q;
        sol.lmi_duals = zz.s;
        sol.primal_objective = m.pcost;
        sol.dual_objective = m.dcost;
        sol.primal_residual = m.pres;
        sol.dual_residual = m.dres;
        sol.gap = m.gap;
        sol.relative_gap = m.relgap;
        return sol;
    };

    // Best reduced-accuracy iterate, returned if the iteration later stalls or breaks down.
    struct Snapshot {
        RVec x, y;
        ConeVec s, z;
        double tau = 0.0, kappa = 0.0;
        Metrics m{};
        int iter = -1;
    } best;
    auto acceptable = [&](const Metrics& mm) {
        return mm.pres <= 1e-7 && mm.dres <= 1e-7 && (mm.relgap <= 1e-6 || mm.gap <= opt.absolute_gap_tol);
    };
    auto finish_best = [&]() {
        x = best.x;
        y = best.y;
        s = best.s;
        z = best.z;
        tau = best.tau;
        kappa = best.kappa;
        return finish(Status::optimal, best.m, best.iter);
    };
    int stalled = 0;

    const double nu = static_cast<double>(d.degree);
    Metrics m{};
    Scaling w;
    ConeVec lambda;
    std::vector<RVec> lambda_eigs;
    for (int iter = 0;; ++iter) {
        evaluate(m);
        IterationRecord rec{iter, m.pcost, m.dcost, m.gap, m.pres, m.dres, 0.0, tau, kappa};
        if (!log.empty()) rec.step = log.back().step;
        log.push_back(rec);

        const bool feasible = m.pres <= opt.feasibility_tol && m.dres <= opt.feasibility_tol;
        const bool ordered = m.dcost - m.pcost <= opt.relative_gap_tol * std::max(1.0, std::abs(m.pcost));
        if (feasible && ordered && (m.gap <= opt.absolute_gap_tol || m.relgap <= opt.relative_gap_tol))
            return finish(Status::optimal, m, iter);
        if (m.pinfres && *m.pinfres <= opt.feasibility_tol) return finish(Status::primal_infeasible, m, iter);
        if (m.dinfres && *m.dinfres <= opt.feasibility_tol) return finish(Status::dual_infeasible, m, iter);
        if (acceptable(m) && (best.iter < 0 || std::max(m.pres, m.dres) < std::max(best.m.pres, best.m.dres)))
            best = Snapshot{x, y, s, z, tau, kappa, m, iter};
        if (iter >= opt.max_iterations) return best.iter >= 0 ? finish_best() : finish(Status::max_iters, m, iter);
        if (best.iter >= 0 && stalled >= 3) return finish_best();

        try {
            if (iter == 0) w = compute_scaling(s, z, lambda, lambda_eigs);
            const KktSolver kkt(d, w, opt.refinement_steps);

            RVec x2, y2;
            ConeVec z2;
            kkt.solve(-c, g, h, x2, y2, z2);
            const double denom_base = c.dot(x2) + g.dot(y2) + dot(h, z2);

            ConeVec ax = apply_op(d, x);
            const RVec rx = d.eq_rows.transpose() * y - apply_adjoint(d, z) + c * tau;
            const RVec ry = -(d.eq_rows * x) + g * tau;
            ConeVec rz = sum(ax, scaled(tau, h));
            axpy(-1.0, s, rz);
            const double rt = -c.dot(x) - g.dot(y) - dot(h, z) - kappa;
            const double gap_total = dot(s, z) + tau * kappa;
            const double mu = gap_total / (nu + 1.0);
            const ConeVec lambda_sq = jordan_product(lambda, lambda);

            struct Direction {
                RVec dx, dy;
                ConeVec dz, ds_scaled, dz_scaled;
                double dtau, dkappa;
            };
            auto direction = [&](double eta, const ConeVec& rc, double rk) {
                Direction dir;
                const ConeVec lrc = jordan_divide(lambda, lambda_eigs, rc);
                ConeVec bz = scaled(1.0 - eta, rz);
                axpy(-1.0, apply_wt(w, lrc), bz);
                RVec x1, y1;
                ConeVec z1;
                kkt.solve(-(1.0 - eta) * rx, (1.0 - eta) * ry, bz, x1, y1, z1);
                const double btau = -(1.0 - eta) * rt;
                dir.dtau = (-btau - rk / tau - (c.dot(x1) + g.dot(y1) + dot(h, z1))) / (denom_base - kappa / tau);
                dir.dx = x1 + dir.dtau * x2;
                dir.dy = y1 + dir.dtau * y2;
                dir.dz = sum(z1, scaled(dir.dtau, z2));
                dir.dkappa = (rk - kappa * dir.dtau) / tau;
                dir.dz_scaled = apply_w(w, dir.dz);
                dir.ds_scaled = lrc;
                axpy(-1.0, dir.dz_scaled, dir.ds_scaled);
                return dir;
            };
            auto step_limit = [&](const Direction& dir) {
                double t = std::min(max_step(lambda, lambda_eigs, dir.ds_scaled), max_step(lambda, lambda_eigs, dir.dz_scaled));
                if (dir.dtau < 0.0) t = std::min(t, -tau / dir.dtau);
                if (dir.dkappa < 0.0) t = std::min(t, -kappa / dir.dkappa);
                return t;
            };

            const Direction aff = direction(0.0, scaled(-1.0, lambda_sq), -tau * kappa);
            const double alpha_aff = std::min(1.0, step_limit(aff));
            const double dsdz = dot(aff.ds_scaled, aff.dz_scaled) + aff.dtau * aff.dkappa;
            const double sigma =
                std::pow(std::clamp(1.0 - alpha_aff + dsdz / gap_total * alpha_aff * alpha_aff, 0.0, 1.0), 3.0);

            ConeVec rc = scaled(-1.0, lambda_sq);
            axpy(-1.0, jordan_product(aff.ds_scaled, aff.dz_scaled), rc);
            axpy(sigma * mu, e, rc);
            const double rk = -tau * kappa - aff.dtau * aff.dkappa + sigma * mu;
            const Direction dir = direction(sigma, rc, rk);
            const double alpha = std::min(1.0, opt.step_fraction * step_limit(dir));
            if (!(alpha > 0.0) || !std::isfinite(alpha)) throw Breakdown{};

            const ConeVec ds = apply_wt(w, dir.ds_scaled);
            x += alpha * dir.dx;
            y += alpha * dir.dy;
            s.l += alpha * ds.l;
            z.l += alpha * dir.dz.l;
            for (std::size_t i = 0; i < s.q.size(); ++i) {
                s.q[i] += alpha * ds.q[i];
                z.q[i] += alpha * dir.dz.q[i];
            }
            update_scaling(w, lambda, lambda_eigs, s, z, dir.ds_scaled, dir.dz_scaled, alpha);
            tau += alpha * dir.dtau;
            kappa += alpha * dir.dkappa;
            log.back().step = alpha;
            stalled = alpha < 1e-2 ? stalled + 1 : 0;
        } catch (const Breakdown&) {
            if (acceptable(m)) return finish(Status::optimal, m, iter);
            if (best.iter >= 0) return finish_best();
            std::ostringstream msg;
            msg << "conic solver: numerical breakdown at iteration " << iter << " (pres " << m.pres << ", dres " << m.dres
                << ", gap " << m.gap << ")";
            throw SolverError(msg.str(), log);
        }
    }
}

// ---------------------------------------------------------------- text format

namespace {

std::string clean_label(const std::string& s) {
    std::string out = s.empty() ? "_" : s;
    for (char& ch : out)
        if (std::isspace(static_cast<unsigned char>(ch))) ch = '_';
    return out;
}

void write_cmat(std::ostream& os, const CMat& m) {
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) os << (j ? " " : "") << m(i, j).real() << ' ' << m(i, j).imag();
        os << '\n';
    }
}

void write_rvec(std::ostream& os, const RVec& v) {
    for (Index i = 0; i < v.size(); ++i) os << (i ? " " : "") << v(i);
    os << '\n';
}

void expect_word(std::istream& is, const std::string& word) {
    std::string got;
    if (!(is >> got) || got != word) throw std::runtime_error("read_problem: expected '" + word + "', got '" + got + "'");
}

template <typename T>
T read_value(std::istream& is) {
    T v{};
    if (!(is >> v)) throw std::runtime_error("read_problem: malformed number");
    return v;
}

CMat read_cmat(std::istream& is, Index rows, Index cols) {
    CMat m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) {
            const double re = read_value<double>(is);
            const double im = read_value<double>(is);
            m(i, j) = {re, im};
        }
    return m;
}

RVec read_rvec(std::istream& is, Index n) {
    RVec v(n);
    for (Index i = 0; i < n; ++i) v(i) = read_value<double>(is);
    return v;
}

}  // namespace

void write_problem(std::ostream& os, const ConicProblem& p) {
    const auto old_precision = os.precision(17);
    const Index n = static_cast<Index>(p.num_variables);
    os << "conic-problem 1\n";
    os << "variables " << n << '\n';
    os << "cost ";
    write_rvec(os, p.cost);
    for (const auto& b : p.lmis) {
        os << "lmi " << clean_label(b.label) << " order " << b.order() << " terms " << b.terms.size() << '\n';
        os << "constant\n";
        write_cmat(os, b.constant);
        for (const auto& t : b.terms) {
            os << "term " << t.variable << '\n';
            write_cmat(os, t.coefficient);
        }
    }
    for (const auto& s : p.socs) {
        os << "soc " << clean_label(s.label) << " rows " << s.a.rows() << '\n';
        os << "a\n";
        for (Index i = 0; i < s.a.rows(); ++i) write_rvec(os, s.a.row(i).transpose());
        os << "b ";
        write_rvec(os, s.b);
        os << "d ";
        write_rvec(os, s.d);
        os << "e " << s.e << '\n';
    }
    for (const auto& r : p.inequalities) {
        os << "ineq " << r.constant << ' ';
        write_rvec(os, r.coeffs);
    }
    for (const auto& r : p.equalities) {
        os << "eq " << r.constant << ' ';
        write_rvec(os, r.coeffs);
    }
    os << "end\n";
    os.precision(old_precision);
}

ConicProblem read_problem(std::istream& is) {
    ConicProblem p;
    expect_word(is, "conic-problem");
    if (read_value<int>(is) != 1) throw std::runtime_error("read_problem: unsupported format version");
    expect_word(is, "variables");
    const auto n = read_value<Index>(is);
    if (n <= 0) throw std::runtime_error("read_problem: bad variable count");
    p.num_variables = static_cast<std::size_t>(n);
    expect_word(is, "cost");
    p.cost = read_rvec(is, n);
    std::string word;
    while (is >> word) {
        if (word == "end") {
            p.validate();
            return p;
        }
        if (word == "lmi") {
            LmiBlock b;
            b.label = read_value<std::string>(is);
            expect_word(is, "order");
            const auto order = read_value<Index>(is);
            expect_word(is, "terms");
            const auto count = read_value<std::size_t>(is);
            expect_word(is, "constant");
            b.constant = read_cmat(is, order, order);
            for (std::size_t t = 0; t < count; ++t) {
                expect_word(is, "term");
                LmiTerm term;
                term.variable = read_value<std::size_t>(is);
                term.coefficient = read_cmat(is, order, order);
                b.terms.push_back(std::move(term));
            }
            p.lmis.push_back(std::move(b));
        } else if (word == "soc") {
            SocBlock s;
            s.label = read_value<std::string>(is);
            expect_word(is, "rows");
            const auto rows = read_value<Index>(is);
            expect_word(is, "a");
            s.a.resize(rows, n);
            for (Index i = 0; i < rows; ++i) s.a.row(i) = read_rvec(is, n).transpose();
            expect_word(is, "b");
            s.b = read_rvec(is, rows);
            expect_word(is, "d");
            s.d = read_rvec(is, n);
            expect_word(is, "e");
            s.e = read_value<double>(is);
            p.socs.push_back(std::move(s));
        } else if (word == "ineq" || word == "eq") {
            LinearRow r;
            r.constant = read_value<double>(is);
            r.coeffs = read_rvec(is, n);
            (word == "ineq" ? p.inequalities : p.equalities).push_back(std::move(r));
        } else {
            throw std::runtime_error("read_problem: unknown block '" + word + "'");
        }
    }
    throw std::runtime_error("read_problem: missing 'end'");
}

}  // namespace activeris::conic

#include "sdp_oracles.hpp"

#include "activeris/outage_min.hpp"
#include "activeris/sdp_solver.hpp"

#include <doctest.h>

#include <sstream>

using namespace activeris;
using namespace activeris::conic;
using namespace testing_support;

TEST_CASE("scalar LMI bound") {
    ConicProblem p;
    p.num_variables = 1;
    p.cost = RVec::Constant(1, 1.0);
    LmiBlock b;
    b.constant = CMat::Constant(1, 1, -1.0);
    b.terms.push_back({0, CMat::Constant(1, 1, 1.0)});
    p.lmis.push_back(b);
    const auto s = solve(p);
    REQUIRE(s.status == Status::optimal);
    CHECK(s.x(0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(s.primal_objective == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("trace-normalized SDP attains the smallest eigenvalue at its eigenvector") {
    Rng rng(22);
    for (const bool complex : {false, true}) {
        const Eigen::Index n = 4;
        CMat c = random_cmat(rng, n, n);
        if (!complex) c = CMat(c.real().cast<cd>());
        c = 0.5 * (c + c.adjoint()).eval();
        const auto basis = hermitian_basis(n, complex);
        ConicProblem p;
        p.num_variables = basis.size();
        p.cost.resize(static_cast<Eigen::Index>(basis.size()));
        RVec trace_row(static_cast<Eigen::Index>(basis.size()));
        LmiBlock blk;
        blk.constant = CMat::Zero(n, n);
        for (std::size_t i = 0; i < basis.size(); ++i) {
            p.cost(static_cast<Eigen::Index>(i)) = real_trace(c, basis[i]);
            trace_row(static_cast<Eigen::Index>(i)) = basis[i].trace().real();
            blk.terms.push_back({i, basis[i]});
        }
        p.lmis.push_back(blk);
        p.equalities.push_back({trace_row, -1.0});
        const auto s = solve(p);
        REQUIRE(s.status == Status::optimal);
        Eigen::SelfAdjointEigenSolver<CMat> eig(c);
        CHECK(std::abs(s.primal_objective - eig.eigenvalues()(0)) <= 1e-7);
        const CVec v = eig.eigenvectors().col(0);
        CHECK((assemble(basis, s.x) - v * v.adjoint()).norm() <= 1e-4);
    }
}

TEST_CASE("extreme eigenvalues of random Hermitian matrices") {
    Rng rng(21);
    for (int trial = 0; trial < 6; ++trial) {
        const Eigen::Index n = 2 + trial;
        CMat a = random_cmat(rng, n, n);
        a = 0.5 * (a + a.adjoint()).eval();
        if (trial % 2 == 0) a = CMat(a.real().cast<cd>());
        Eigen::SelfAdjointEigenSolver<CMat> eig(a);
        const auto lo = solve(min_eig_problem(a));
        REQUIRE(lo.status == Status::optimal);
        CHECK(std::abs(lo.x(0) - eig.eigenvalues().minCoeff()) <= 1e-7);
        const auto hi = solve(min_eig_problem(-a));
        REQUIRE(hi.status == Status::optimal);
        CHECK(std::abs(-hi.x(0) - eig.eigenvalues().maxCoeff()) <= 1e-7);
    }
}

TEST_CASE("linear program") {
    // minimize x + 2y s.t. x >= 0, y >= 0, x + y >= 1
    ConicProblem p;
    p.num_variables = 2;
    p.cost = RVec(2);
    p.cost << 1.0, 2.0;
    RVec r0(2), r1(2), r2(2);
    r0 << 1, 0;
    r1 << 0, 1;
    r2 << 1, 1;
    p.inequalities = {{r0, 0.0}, {r1, 0.0}, {r2, -1.0}};
    const auto s = solve(p);
    REQUIRE(s.status == Status::optimal);
    CHECK(s.x(0) == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(std::abs(s.x(1)) < 1e-7);
    CHECK(dual_residual_from_data(p, s).norm() < 1e-8);
    CHECK((s.inequality_duals.array() >= -1e-12).all());
}

TEST_CASE("second-order cone problems") {
    SUBCASE("maximize a linear function over the unit disc") {
        ConicProblem p;
        p.num_variables = 2;
        p.cost = RVec::Constant(2, -1.0);
        SocBlock q;
        q.a = RMat::Identity(2, 2);
        q.b = RVec::Zero(2);
        q.d = RVec::Zero(2);
        q.e = 1.0;
        p.socs.push_back(q);
        const auto s = solve(p);
        REQUIRE(s.status == Status::optimal);
        CHECK(s.primal_objective == doctest::Approx(-std::sqrt(2.0)).epsilon(1e-8));
        CHECK(s.x(0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-7));
        CHECK(dual_residual_from_data(p, s).norm() < 1e-8);
    }
    SUBCASE("minimum-norm point on a hyperplane") {
        const Eigen::Index n = 5;
        ConicProblem p;
        p.num_variables = n + 1;  // x then t
        p.cost = RVec::Zero(n + 1);
        p.cost(n) = 1.0;
        SocBlock q;
        q.a = RMat::Zero(n, n + 1);
        q.a.leftCols(n) = RMat::Identity(n, n);
        q.b = RVec::Zero(n);
        q.d = RVec::Zero(n + 1);
        q.d(n) = 1.0;
        p.socs.push_back(q);
        RVec eq = RVec::Zero(n + 1);
        eq.head(n).setOnes();
        p.equalities.push_back({eq, -1.0});
        const auto s = solve(p);
        REQUIRE(s.status == Status::optimal);
        CHECK(s.primal_objective == doctest::Approx(1.0 / std::sqrt(5.0)).epsilon(1e-8));
        for (Eigen::Index i = 0; i < n; ++i) CHECK(s.x(i) == doctest::Approx(0.2).epsilon(1e-7));
        CHECK(dual_residual_from_data(p, s).norm() < 1e-8);
    }
}

TEST_CASE("infeasibility and unboundedness are reported") {
    SUBCASE("contradictory LMI") {
        ConicProblem p;
        p.num_variables = 1;
        p.cost = RVec::Constant(1, 1.0);
        LmiBlock b;
        b.constant = CMat::Zero(2, 2);
        b.constant(0, 0) = -1.0;
        CMat f = CMat::Zero(2, 2);
        f(0, 0) = 1.0;
        f(1, 1) = -1.0;
        b.terms.push_back({0, f});
        p.lmis.push_back(b);
        CHECK(solve(p).status == Status::primal_infeasible);
    }
    SUBCASE("contradictory inequalities") {
        ConicProblem p;
        p.num_variables = 1;
        p.cost = RVec::Constant(1, 0.0);
        p.inequalities = {{RVec::Constant(1, 1.0), -1.0}, {RVec::Constant(1, -1.0), 0.0}};
        const auto s = solve(p);
        REQUIRE(s.status == Status::primal_infeasible);
        // Certificate: nonnegative multipliers combining to 0 >= positive.
        CHECK((s.inequality_duals.array() >= -1e-9).all());
    }
    SUBCASE("unbounded objective") {
        ConicProblem p;
        p.num_variables = 1;
        p.cost = RVec::Constant(1, -1.0);
        p.inequalities = {{RVec::Constant(1, 1.0), 0.0}};
        const auto s = solve(p);
        REQUIRE(s.status == Status::dual_infeasible);
        CHECK(s.x(0) > 0.0);
    }
}

TEST_CASE("invalid problems are rejected") {
    ConicProblem p;
    p.num_variables = 1;
    p.cost = RVec::Constant(1, 1.0);
    LmiBlock b;
    b.constant = CMat::Zero(2, 2);
    b.constant(0, 1) = 1.0;  // not Hermitian
    b.terms.push_back({0, CMat::Identity(2, 2)});
    p.lmis.push_back(b);
    CHECK_THROWS_AS(solve(p), std::invalid_argument);
    p.lmis[0].constant(1, 0) = 1.0;
    p.lmis[0].terms[0].variable = 3;
    CHECK_THROWS_AS(solve(p), std::invalid_argument);
    SolverOptions tight;
    tight.max_psd_dimension = 1;
    p.lmis[0].terms[0].variable = 0;
    CHECK_THROWS_AS(solve(p, tight), std::invalid_argument);
}

TEST_CASE("optimal value scales with cost and constraint data") {
    Rng rng(31);
    const Eigen::Index n = 3;
    for (const double factor : {1e-3, 7.0, 1e3}) {
        const CMat c = random_psd(rng, n);
        const CVec a = random_cvec(rng, n), b = random_cvec(rng, n);
        const std::vector<CMat> rows = {a * a.adjoint(), b * b.adjoint()};
        const auto base = solve(trace_sdp(c, rows, {1.0, 2.0}));
        const auto scaled_sol = solve(trace_sdp(factor * c, {factor * rows[0], factor * rows[1]}, {factor, 2.0 * factor}));
        REQUIRE(base.status == Status::optimal);
        REQUIRE(scaled_sol.status == Status::optimal);
        CHECK(std::abs(scaled_sol.primal_objective - factor * base.primal_objective) <=
              1e-8 * factor * std::abs(base.primal_objective));
    }
}

TEST_CASE("weak duality holds at the returned solution") {
    Rng rng(41);
    for (int trial = 0; trial < 5; ++trial) {
        const Eigen::Index n = 3;
        const CMat c = random_psd(rng, n);
        std::vector<CMat> rows;
        for (int k = 0; k < 3; ++k) {
            const CVec v = random_cvec(rng, n);
            rows.push_back(v * v.adjoint());
        }
        const auto p = trace_sdp(c, rows, {1.0, 1.0, 1.0});
        const auto s = solve(p);
        REQUIRE(s.status == Status::optimal);
        CHECK(s.log.size() == static_cast<std::size_t>(s.iterations + 1));
        for (const auto& rec : s.log) CHECK(rec.gap >= 0.0);
        CHECK(s.dual_objective <= s.primal_objective + 1e-9 * std::max(1.0, std::abs(s.primal_objective)));
        CHECK(s.primal_residual < 1e-7);
        CHECK(s.dual_residual < 1e-7);
        CHECK(s.relative_gap < 1e-6);
    }
}

TEST_CASE("problem dump round-trips") {
    Rng rng(51);
    const CMat c = random_psd(rng, 2);
    const CVec a = random_cvec(rng, 2);
    ConicProblem p = trace_sdp(c, {a * a.adjoint()}, {1.0});
    SocBlock q;
    q.label = "norm bound";
    q.a = RMat::Identity(2, p.num_variables);
    q.b = RVec::Constant(2, 0.1);
    q.d = RVec::Zero(static_cast<Eigen::Index>(p.num_variables));
    q.e = 100.0;
    p.socs.push_back(q);
    p.equalities.push_back({RVec::Unit(static_cast<Eigen::Index>(p.num_variables), 2), -0.1 / 3.0});

    std::stringstream first;
    write_problem(first, p);
    const ConicProblem back = read_problem(first);
    std::stringstream second;
    write_problem(second, back);
    CHECK(first.str() == second.str());
    CHECK(back.lmis[0].terms[3].coefficient == p.lmis[0].terms[3].coefficient);
    CHECK(back.equalities[0].constant == p.equalities[0].constant);
    CHECK(back.socs[0].label == "norm_bound");

    const auto s1 = solve(p);
    const auto s2 = solve(back);
    CHECK(s1.x == s2.x);

    std::stringstream bad("conic-problem 1\nvariables 1\ncost 1\nbogus\n");
    CHECK_THROWS(read_problem(bad));
}

TEST_CASE("random trace-constrained SDP corpus") {
    Rng rng(61);
    int solved = 0;
    for (int trial = 0; trial < 30; ++trial) {
        const Eigen::Index n = 2 + trial % 5;
        const auto basis = hermitian_basis(n);
        CAPTURE(trial);
        if (trial < 10) {
            // Closed form: min Tr X s.t. Tr(A X) >= 1 is 1 / lambda_max(A).
            const CMat a = random_psd(rng, n);
            const auto s = solve(trace_sdp(CMat::Identity(n, n), {a}, {1.0}));
            REQUIRE(s.status == Status::optimal);
            Eigen::SelfAdjointEigenSolver<CMat> eig(a);
            CHECK(std::abs(s.primal_objective - 1.0 / eig.eigenvalues().maxCoeff()) <=
                  1e-7 / eig.eigenvalues().maxCoeff());
            ++solved;
            continue;
        }
        if (trial >= 20) {
            // Outage subproblem shapes: precoder SDR (trials 20-24), reflection SDR (25-29).
            const std::size_t users = 1 + static_cast<std::size_t>(trial % 2);
            OutageProblem op;
            op.stats = build_statistics(small_geometry(3, 3, users), ChannelModelParams{});
            op.channels = effective_channels(sample_realization(op.stats, static_cast<std::uint64_t>(trial)));
            op.noise = unit_noise(users, 1e-11, 1e-11);
            op.power = statistical_ris_power(op.stats, op.noise);
            op.max_gain = 1e4;
            op.spec.target_rate.assign(users, 1.0);
            op.spec.outage_eps.assign(users, 0.05);
            const CVec w = aligned_reflection(op.channels, 1.0);
            ConicProblem shape;
            if (trial < 25) {
                shape = build_precoder_sdr(w, op).problem;
            } else {
                const PrecoderSdr fs = build_precoder_sdr(w, op);
                const auto fsol = solve(fs.problem);
                REQUIRE(fsol.status == Status::optimal);
                const CMat f = recover_precoder(fs.covariance_values(fsol.x), w, op, 1000, 7).precoder;
                shape = build_reflection_sdr(f, op).problem;
            }
            const auto s = solve(shape);
            REQUIRE(s.status == Status::optimal);
            CHECK(s.primal_residual < 1e-7);
            CHECK(s.dual_residual < 1e-7);
            CHECK(s.relative_gap < 1e-6);
            ++solved;
            continue;
        }
        // Multi-user power-minimization shape: min Tr(X) s.t. Tr(R_k X) - g sum_{i != k} ... folded into one
        // block per user via Tr((R_k) X) >= 1, plus a per-entry cap through a second LMI.
        const CMat c = random_psd(rng, n);
        std::vector<CMat> rows;
        std::vector<double> rhs;
        for (int k = 0; k < 1 + trial % 3; ++k) {
            const CVec v = random_cvec(rng, n);
            rows.push_back(v * v.adjoint());
            rhs.push_back(0.5 + 0.25 * k);
        }
        auto p = trace_sdp(c, rows, rhs);
        LmiBlock cap;
        cap.label = "cap";
        cap.constant = 50.0 * CMat::Identity(n, n);
        for (std::size_t i = 0; i < basis.size(); ++i) cap.terms.push_back({i, -basis[i]});
        p.lmis.push_back(cap);
        const auto s = solve(p);
        REQUIRE(s.status == Status::optimal);
        const CMat x = assemble(basis, s.x);
        Eigen::SelfAdjointEigenSolver<CMat> ex(x);
        CHECK(ex.eigenvalues().minCoeff() >= -1e-7);
        CHECK(ex.eigenvalues().maxCoeff() <= 50.0 + 1e-7);
        for (std::size_t k = 0; k < rows.size(); ++k) CHECK(real_trace(rows[k], x) >= rhs[k] - 1e-7);
        CHECK(std::abs(s.primal_objective - s.dual_objective) <= 1e-6 * std::max(1.0, std::abs(s.primal_objective)));
        CHECK(std::abs(real_trace(c, x) - s.primal_objective) <= 1e-8 * std::max(1.0, std::abs(s.primal_objective)));
        ++solved;
    }
    CHECK(solved == 30);
}
